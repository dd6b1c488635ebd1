//! Uniform phase-space grids and the discrete approximation of continuous
//! Fourier transforms between conjugate axes.
//!
//! A continuous transform `g(u) = ∫ da e^{i s u a} f(a)` is evaluated as a
//! midpoint Riemann sum on a uniform grid. With `a_i = a0 + i·da` and
//! `u_p = u0 + p·du`, `du·da = 2π/n`, the sum becomes a DFT wrapped in two
//! phase ramps, so arbitrary offsets are handled exactly. Periodic aliasing
//! is inherent; [`boundary_ratio`] measures how much mass sits on the edge.

use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{QstError, Result};

pub type C64 = Complex64;

/// Relative tolerance used when matching grid nodes and dual spacings.
const NODE_TOL: f64 = 1e-9;

/// Boundary-to-peak magnitude ratio above which aliasing is reported.
pub const BOUNDARY_WARN_RATIO: f64 = 1e-6;

/// Uniformly spaced sample points `offset + i·spacing`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGrid {
    n: usize,
    spacing: f64,
    offset: f64,
}

impl AxisGrid {
    pub fn new(n: usize, spacing: f64, offset: f64) -> Result<Self> {
        if n < 2 {
            return Err(QstError::InvalidParameter(format!("axis needs n >= 2, got {n}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(QstError::InvalidParameter(format!("axis spacing must be positive and finite, got {spacing}")));
        }
        if !offset.is_finite() {
            return Err(QstError::InvalidParameter("axis offset must be finite".into()));
        }
        Ok(Self { n, spacing, offset })
    }

    /// Zero-centred axis: index `n/2` sits exactly on the origin, so for odd
    /// `n` the grid is symmetric and for even `n` it has one extra negative
    /// point.
    pub fn centered(n: usize, spacing: f64) -> Result<Self> {
        Self::new(n, spacing, -((n / 2) as f64) * spacing)
    }

    /// Centred axis with `n` points covering `[-half_span, half_span)`.
    pub fn from_half_span(n: usize, half_span: f64) -> Result<Self> {
        if !(half_span > 0.0) {
            return Err(QstError::InvalidParameter(format!("half span must be positive, got {half_span}")));
        }
        Self::centered(n, 2.0 * half_span / n as f64)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn point(&self, i: usize) -> f64 {
        self.offset + i as f64 * self.spacing
    }

    pub fn first(&self) -> f64 {
        self.offset
    }

    pub fn last(&self) -> f64 {
        self.point(self.n - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.point(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = NODE_TOL * self.spacing;
        x >= self.first() - tol && x <= self.last() + tol
    }

    /// Fractional index of `x`.
    pub fn position(&self, x: f64) -> f64 {
        (x - self.offset) / self.spacing
    }

    /// Index of the node at `x`, if `x` is (to rounding) a node.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let t = self.position(x);
        let r = t.round();
        if (t - r).abs() <= 1e-7 && r >= 0.0 && (r as usize) < self.n {
            Some(r as usize)
        } else {
            None
        }
    }

    pub fn zero_index(&self) -> Option<usize> {
        self.node_index(0.0)
    }

    /// Same node count, spacing and offset multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.n, self.spacing * factor, self.offset * factor)
    }

    /// Spacing of the conjugate axis, `2π/(n·spacing)`.
    pub fn dual_spacing(&self) -> f64 {
        2.0 * PI / (self.n as f64 * self.spacing)
    }

    /// True if `other` has the same node count and dual spacing.
    pub fn is_dual_of(&self, other: &AxisGrid) -> bool {
        self.n == other.n && rel_eq(self.spacing, other.dual_spacing())
    }

    pub fn same_nodes(&self, other: &AxisGrid) -> bool {
        self.n == other.n && rel_eq(self.spacing, other.spacing) && (self.offset - other.offset).abs() <= NODE_TOL * self.spacing.max(1.0)
    }
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= NODE_TOL * a.abs().max(b.abs())
}

/// Conjugate-variable axis: `n` points, spacing `2π/(n·spacing)`, centred.
pub fn dual_axis(axis: &AxisGrid) -> AxisGrid {
    AxisGrid::centered(axis.n, axis.dual_spacing()).expect("dual of a valid axis is valid")
}

/// Sign of the exponent `e^{± i u a}` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    fn direction(self) -> FftDirection {
        // rustfft's inverse direction carries e^{+2πi pk/n}
        match self {
            Sign::Plus => FftDirection::Inverse,
            Sign::Minus => FftDirection::Forward,
        }
    }
}

/// Complex samples on a 2D product grid, row-major over `axes[0] × axes[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    axes: [AxisGrid; 2],
    values: Vec<C64>,
}

impl ComplexField2D {
    pub fn new(axes: [AxisGrid; 2], values: Vec<C64>) -> Result<Self> {
        let len = axes[0].n() * axes[1].n();
        if values.len() != len {
            return Err(QstError::InvalidParameter(format!("field has {} values, axes require {len}", values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(QstError::NonFinite(format!("entry ({}, {})", pos / axes[1].n(), pos % axes[1].n())));
        }
        Ok(Self { axes, values })
    }

    pub fn zeros(axes: [AxisGrid; 2]) -> Self {
        let len = axes[0].n() * axes[1].n();
        Self { axes, values: vec![C64::new(0.0, 0.0); len] }
    }

    pub fn from_fn(axes: [AxisGrid; 2], f: impl Fn(f64, f64) -> C64 + Sync) -> Result<Self> {
        let n1 = axes[1].n();
        let values = (0..axes[0].n() * n1).into_par_iter().map(|idx| f(axes[0].point(idx / n1), axes[1].point(idx % n1))).collect();
        Self::new(axes, values)
    }

    pub fn axes(&self) -> &[AxisGrid; 2] {
        &self.axes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axes[0].n(), self.axes[1].n())
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[i * self.axes[1].n() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        let n1 = self.axes[1].n();
        self.values[i * n1 + j] = v;
    }

    /// Value at the node `(a, b)`, if both coordinates are nodes.
    pub fn at(&self, a: f64, b: f64) -> Option<C64> {
        let i = self.axes[0].node_index(a)?;
        let j = self.axes[1].node_index(b)?;
        Some(self.get(i, j))
    }

    pub fn cell_area(&self) -> f64 {
        self.axes[0].spacing() * self.axes[1].spacing()
    }

    /// Riemann-sum integral over the grid.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.cell_area()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ComplexField2D) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, factor: C64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Largest magnitude on the grid edge relative to the largest overall.
pub fn boundary_ratio(f: &ComplexField2D) -> f64 {
    let (n0, n1) = f.shape();
    let peak = f.max_abs();
    if peak == 0.0 {
        return 0.0;
    }
    let mut edge = 0.0f64;
    for i in 0..n0 {
        edge = edge.max(f.get(i, 0).norm()).max(f.get(i, n1 - 1).norm());
    }
    for j in 0..n1 {
        edge = edge.max(f.get(0, j).norm()).max(f.get(n0 - 1, j).norm());
    }
    edge / peak
}

/// Logs a warning and returns `true` when the edge carries more than
/// [`BOUNDARY_WARN_RATIO`] of the peak magnitude.
pub fn warn_if_aliased(f: &ComplexField2D, what: &str) -> bool {
    let r = boundary_ratio(f);
    if r > BOUNDARY_WARN_RATIO {
        warn!("{what}: boundary magnitude is {r:.2e} of peak; periodic aliasing likely");
        true
    } else {
        false
    }
}

/// One-axis continuous transform plan: `out[p] = scale·Σ_i in[i]·e^{i s u_p a_i}`.
pub struct Cft1d {
    fft: Arc<dyn Fft<f64>>,
    pre: Vec<C64>,
    post: Vec<C64>,
}

impl Cft1d {
    pub fn new(from: &AxisGrid, to: &AxisGrid, sign: Sign, scale: f64) -> Result<Self> {
        if !to.is_dual_of(from) {
            return Err(QstError::AxisMismatch(format!(
                "target axis (n={}, spacing={}) is not dual to source (n={}, spacing={})",
                to.n(),
                to.spacing(),
                from.n(),
                from.spacing()
            )));
        }
        let s = sign.value();
        let n = from.n();
        let (a0, da) = (from.offset(), from.spacing());
        let u0 = to.offset();
        let du = 2.0 * PI / (n as f64 * da);
        let pre = (0..n).map(|i| C64::cis(s * u0 * da * i as f64)).collect();
        let post = (0..n).map(|p| C64::cis(s * (u0 + p as f64 * du) * a0) * scale).collect();
        let fft = FftPlanner::new().plan_fft(n, sign.direction());
        Ok(Self { fft, pre, post })
    }

    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    /// Transforms `buf` in place.
    pub fn apply(&self, buf: &mut [C64]) {
        buf.iter_mut().zip(&self.pre).for_each(|(v, p)| *v *= p);
        self.fft.process(buf);
        buf.iter_mut().zip(&self.post).for_each(|(v, p)| *v *= p);
    }
}

/// Continuous transform of a 1D sample vector from `from` onto `to`.
/// `inverse` adds the `1/(2π)` measure of the conjugate integral.
pub fn cft_1d(values: &[C64], from: &AxisGrid, to: &AxisGrid, sign: Sign, inverse: bool) -> Result<Vec<C64>> {
    if values.len() != from.n() {
        return Err(QstError::InvalidParameter("sample count does not match axis".into()));
    }
    let scale = if inverse { from.spacing() / (2.0 * PI) } else { from.spacing() };
    let plan = Cft1d::new(from, to, sign, scale)?;
    let mut buf = values.to_vec();
    plan.apply(&mut buf);
    Ok(buf)
}

fn transform_2d(f: &ComplexField2D, signs: [Sign; 2], to: [AxisGrid; 2], inverse: bool) -> Result<ComplexField2D> {
    let [a0, a1] = *f.axes();
    let measure = |a: &AxisGrid| if inverse { a.spacing() / (2.0 * PI) } else { a.spacing() };
    let row_plan = Cft1d::new(&a1, &to[1], signs[1], measure(&a1))?;
    let col_plan = Cft1d::new(&a0, &to[0], signs[0], measure(&a0))?;
    let (n0, n1) = (a0.n(), a1.n());

    let mut data = f.values().to_vec();
    data.par_chunks_mut(n1).for_each(|row| row_plan.apply(row));

    let mut cols = transpose(&data, n0, n1);
    cols.par_chunks_mut(n0).for_each(|col| col_plan.apply(col));
    let out = transpose(&cols, n1, n0);
    ComplexField2D::new(to, out)
}

fn transpose(data: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// `g(u,v) = ∫∫ da db e^{i(s0·u·a + s1·v·b)} f(a,b)` on the centred dual axes.
pub fn cft_forward(f: &ComplexField2D, signs: [Sign; 2]) -> Result<ComplexField2D> {
    let to = [dual_axis(&f.axes()[0]), dual_axis(&f.axes()[1])];
    transform_2d(f, signs, to, false)
}

/// As [`cft_forward`] onto explicitly chosen dual axes (any offsets).
pub fn cft_forward_onto(f: &ComplexField2D, signs: [Sign; 2], to: [AxisGrid; 2]) -> Result<ComplexField2D> {
    transform_2d(f, signs, to, false)
}

/// `f(a,b) = ∫∫ du dv/(2π)² e^{i(s0·u·a + s1·v·b)} g(u,v)` on the centred
/// dual axes. Pass the opposite signs of the forward call to invert it.
pub fn cft_inverse(g: &ComplexField2D, signs: [Sign; 2]) -> Result<ComplexField2D> {
    let to = [dual_axis(&g.axes()[0]), dual_axis(&g.axes()[1])];
    transform_2d(g, signs, to, true)
}

pub fn cft_inverse_onto(g: &ComplexField2D, signs: [Sign; 2], to: [AxisGrid; 2]) -> Result<ComplexField2D> {
    transform_2d(g, signs, to, true)
}

/// Normalised sinc, `sin(πt)/(πt)`.
pub fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let pt = PI * t;
        pt.sin() / pt
    }
}
