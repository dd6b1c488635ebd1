//! System states on a position grid and their phase-space representations.
//!
//! Test states use harmonic-oscillator conventions with `σ` the ground-state
//! position width (`Var X = σ²`, `Var K = 1/(4σ²)`, ħ = 1):
//!
//! * `gaussian-pure`: `ψ(X) = (2πσ²)^{-1/4} exp(-(X-X₀)²/4σ² + iK₀X)`.
//! * `gaussian-thermal`: Gaussian with `Var X = σ²(2n̄+1)` and
//!   `Var K = (2n̄+1)/(4σ²)`, so
//!   `ρ(X,X') = (2πV)^{-1/2} exp(-(X̄-X₀)²/2V - (X-X')²P/2 + iK₀(X-X'))`.
//! * `cat`: normalised `g(X-X₀-d/2) + e^{iθ} g(X-X₀+d/2)` times `e^{iK₀X}`,
//!   `g` the pure Gaussian above.
//! * `mixture`: convex combination of the above.
//!
//! The Moyal function `M(x,k) = ∫dX e^{ikX} ρ(X+x/2, X-x/2)` is sampled on
//! `x = m·h` for every integer offset `|m| < n` between grid points, so
//! centres `X` sit on the grid for even `m` and on midpoints for odd `m`.
//! Each row is then an exact Riemann sum over its own (shifted) centre
//! nodes and the inverse is exact, with no interpolation of `ρ`.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{QstError, Result};
use crate::grid::{cft_1d, cft_forward, cft_inverse_onto, dual_axis, sinc, AxisGrid, ComplexField2D, Sign, C64};

/// Number of widths that must fit between every centre and the grid edge.
pub const SPAN_WIDTHS: f64 = 8.0;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const RESIDUE_LIMIT: f64 = 1e-6;
const RESIDUE_QUIET: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum StateSpec {
    GaussianPure { x0: f64, k0: f64, sigma: f64 },
    GaussianThermal { x0: f64, k0: f64, sigma: f64, nbar: f64 },
    Cat { x0: f64, k0: f64, sigma: f64, separation: f64, phase: f64 },
    Mixture(Vec<(f64, StateSpec)>),
}

impl StateSpec {
    pub fn gaussian(sigma: f64) -> Self {
        StateSpec::GaussianPure { x0: 0.0, k0: 0.0, sigma }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StateSpec::GaussianPure { .. } => "gaussian-pure",
            StateSpec::GaussianThermal { .. } => "gaussian-thermal",
            StateSpec::Cat { .. } => "cat",
            StateSpec::Mixture(_) => "mixture",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QstError::InvalidParameter(m));
        match self {
            StateSpec::GaussianPure { x0, k0, sigma } => {
                check_finite(&[*x0, *k0])?;
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return bad(format!("sigma must be positive, got {sigma}"));
                }
            }
            StateSpec::GaussianThermal { x0, k0, sigma, nbar } => {
                check_finite(&[*x0, *k0])?;
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return bad(format!("sigma must be positive, got {sigma}"));
                }
                if !(*nbar >= 0.0 && nbar.is_finite()) {
                    return bad(format!("thermal occupation must be >= 0, got {nbar}"));
                }
            }
            StateSpec::Cat { x0, k0, sigma, separation, phase } => {
                check_finite(&[*x0, *k0, *separation, *phase])?;
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return bad(format!("sigma must be positive, got {sigma}"));
                }
                if cat_norm_sq(*sigma, *separation, *phase) < 1e-12 {
                    return bad("cat components cancel (zero norm)".into());
                }
            }
            StateSpec::Mixture(parts) => {
                if parts.is_empty() {
                    return bad("mixture has no components".into());
                }
                let mut total = 0.0;
                for (w, s) in parts {
                    if !(*w >= 0.0 && w.is_finite()) {
                        return bad(format!("mixture weight must be >= 0, got {w}"));
                    }
                    total += w;
                    s.validate()?;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights sum to {total}, expected 1"));
                }
            }
        }
        Ok(())
    }

    /// `(centre, position width, momentum centre, momentum width)` per lobe.
    fn lobes(&self) -> Vec<(f64, f64, f64, f64)> {
        match self {
            StateSpec::GaussianPure { x0, k0, sigma } => vec![(*x0, *sigma, *k0, 0.5 / sigma)],
            StateSpec::GaussianThermal { x0, k0, sigma, nbar } => {
                let g = (2.0 * nbar + 1.0).sqrt();
                vec![(*x0, sigma * g, *k0, 0.5 * g / sigma)]
            }
            StateSpec::Cat { x0, k0, sigma, separation, .. } => {
                vec![(x0 - separation / 2.0, *sigma, *k0, 0.5 / sigma), (x0 + separation / 2.0, *sigma, *k0, 0.5 / sigma)]
            }
            StateSpec::Mixture(parts) => parts.iter().flat_map(|(_, s)| s.lobes()).collect(),
        }
    }

    fn check_span(&self, axis: &AxisGrid) -> Result<()> {
        let k_max = PI / axis.spacing();
        for (c, w, kc, kw) in self.lobes() {
            let (lo, hi) = (c - SPAN_WIDTHS * w, c + SPAN_WIDTHS * w);
            if lo < axis.first() || hi > axis.last() {
                return Err(QstError::SpanTooSmall(format!(
                    "state lobe at X={c} with width {w} needs [{lo}, {hi}], grid covers [{}, {}]",
                    axis.first(),
                    axis.last()
                )));
            }
            if (kc.abs() + SPAN_WIDTHS * kw) > k_max {
                return Err(QstError::SpanTooSmall(format!(
                    "momentum content up to {} exceeds grid Nyquist {k_max}; refine the grid",
                    kc.abs() + SPAN_WIDTHS * kw
                )));
            }
        }
        Ok(())
    }

    /// Closed-form `ρ(X, X')`.
    pub fn density_at(&self, x: f64, xp: f64) -> C64 {
        match self {
            StateSpec::GaussianPure { x0, k0, sigma } => gaussian_kernel(x, xp, *x0, *k0, sigma * sigma, 0.25 / (sigma * sigma)),
            StateSpec::GaussianThermal { x0, k0, sigma, nbar } => {
                let g = 2.0 * nbar + 1.0;
                gaussian_kernel(x, xp, *x0, *k0, sigma * sigma * g, 0.25 * g / (sigma * sigma))
            }
            StateSpec::Cat { .. } => {
                let (a, b) = (self.wavefunction_at(x), self.wavefunction_at(xp));
                a * b.conj()
            }
            StateSpec::Mixture(parts) => parts.iter().map(|(w, s)| s.density_at(x, xp) * *w).sum(),
        }
    }

    fn wavefunction_at(&self, x: f64) -> C64 {
        match self {
            StateSpec::Cat { x0, k0, sigma, separation, phase } => {
                let g = |u: f64| (2.0 * PI * sigma * sigma).powf(-0.25) * (-u * u / (4.0 * sigma * sigma)).exp();
                let norm = cat_norm_sq(*sigma, *separation, *phase).sqrt();
                let amp = C64::new(g(x - x0 - separation / 2.0), 0.0) + C64::cis(*phase) * g(x - x0 + separation / 2.0);
                amp * C64::cis(k0 * x) / norm
            }
            _ => unreachable!("only cat states are built from a wavefunction"),
        }
    }
}

fn check_finite(vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(QstError::InvalidParameter("state parameters must be finite".into()))
    }
}

fn cat_norm_sq(sigma: f64, d: f64, phase: f64) -> f64 {
    2.0 + 2.0 * phase.cos() * (-d * d / (8.0 * sigma * sigma)).exp()
}

fn gaussian_kernel(x: f64, xp: f64, x0: f64, k0: f64, var_x: f64, var_k: f64) -> C64 {
    let c = 0.5 * (x + xp) - x0;
    let y = x - xp;
    let mag = (-c * c / (2.0 * var_x) - y * y * var_k / 2.0).exp() / (2.0 * PI * var_x).sqrt();
    C64::from_polar(mag, k0 * y)
}

/// `ρ(X_i, X_j)` on a uniform position grid (continuum normalisation,
/// `Σ_i ρ(X_i,X_i)·h = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    axis: AxisGrid,
    rho: DMatrix<C64>,
}

impl DensityMatrix {
    /// Checks every density-matrix invariant.
    pub fn new(axis: AxisGrid, rho: DMatrix<C64>) -> Result<Self> {
        let dm = Self::from_raw(axis, rho)?;
        dm.validate()?;
        Ok(dm)
    }

    /// Shape and finiteness checks only.
    pub fn from_raw(axis: AxisGrid, rho: DMatrix<C64>) -> Result<Self> {
        if rho.nrows() != axis.n() || rho.ncols() != axis.n() {
            return Err(QstError::AxisMismatch(format!("matrix is {}x{}, axis has {} points", rho.nrows(), rho.ncols(), axis.n())));
        }
        if rho.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(QstError::NonFinite("density matrix".into()));
        }
        Ok(Self { axis, rho })
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL * self.rho.iter().map(|v| v.norm()).fold(1.0, f64::max) {
            return Err(QstError::NotPhysical(format!("not Hermitian (deviation {herm:.2e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(QstError::NotPhysical(format!("trace {tr} differs from 1")));
        }
        let min_eig = self.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL {
            return Err(QstError::NotPhysical(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }

    pub fn axis(&self) -> &AxisGrid {
        &self.axis
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.rho
    }

    pub fn n(&self) -> usize {
        self.axis.n()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.rho[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.rho.diagonal().iter().map(|v| v.re).sum::<f64>() * self.axis.spacing()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Cell-scaled matrix `ρ·h`, the operator with unit trace.
    pub fn operator(&self) -> DMatrix<C64> {
        &self.rho * C64::new(self.axis.spacing(), 0.0)
    }

    /// Eigenvalues of the cell-scaled (unit-trace) operator.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.operator()).iter().cloned().collect()
    }

    /// Position probability density `ρ(X,X)`.
    pub fn position_distribution(&self) -> Vec<f64> {
        self.rho.diagonal().iter().map(|v| v.re).collect()
    }

    /// Momentum-basis matrix `ρ̌(K,K') = (1/2π)∫∫ e^{-iKX+iK'X'} ρ(X,X')`
    /// on the axis dual to X.
    pub fn momentum_representation(&self) -> ComplexField2D {
        let n = self.n();
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(self.rho[(i, j)]);
            }
        }
        let f = ComplexField2D::new([self.axis, self.axis], values).expect("finite entries");
        let mut g = cft_forward(&f, [Sign::Minus, Sign::Plus]).expect("dual axes");
        g.scale(C64::new(1.0 / (2.0 * PI), 0.0));
        g
    }

    /// Momentum probability density `ρ̌(K,K)` on the axis dual to X.
    pub fn momentum_distribution(&self) -> (AxisGrid, Vec<f64>) {
        let g = self.momentum_representation();
        let n = self.n();
        (g.axes()[0], (0..n).map(|i| g.get(i, i).re).collect())
    }

    pub fn scaled_sum(parts: &[(f64, &DensityMatrix)]) -> Result<DensityMatrix> {
        let first = parts.first().ok_or_else(|| QstError::InvalidParameter("empty sum".into()))?.1;
        let mut acc = DMatrix::<C64>::zeros(first.n(), first.n());
        for (w, dm) in parts {
            if !dm.axis.same_nodes(&first.axis) {
                return Err(QstError::AxisMismatch("density matrices on different axes".into()));
            }
            acc += &dm.rho * C64::new(*w, 0.0);
        }
        DensityMatrix::from_raw(first.axis, acc)
    }
}

pub(crate) fn hermitize(m: DMatrix<C64>) -> DMatrix<C64> {
    let adj = m.adjoint();
    (m + adj) * C64::new(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix. The solver is run on
/// `M + sI` (`s` of the order of the Frobenius norm); rank-deficient inputs
/// with large exactly-zero blocks otherwise come back as NaN.
pub(crate) fn hermitian_eigen(m: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let n = m.nrows();
    let shift = 1.0 + m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let shifted = hermitize(m.clone()) + DMatrix::<C64>::identity(n, n) * C64::new(shift, 0.0);
    let eig = shifted.symmetric_eigen();
    (eig.eigenvalues.map(|l| l - shift), eig.eigenvectors)
}

/// Eigenvalues only; skips accumulating the eigenvectors.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> DVector<f64> {
    let n = m.nrows();
    let shift = 1.0 + m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let shifted = hermitize(m.clone()) + DMatrix::<C64>::identity(n, n) * C64::new(shift, 0.0);
    shifted.symmetric_eigenvalues().map(|l| l - shift)
}

pub fn build_state(spec: &StateSpec, axis: &AxisGrid) -> Result<DensityMatrix> {
    spec.validate()?;
    spec.check_span(axis)?;
    let n = axis.n();
    let rho = DMatrix::from_fn(n, n, |i, j| spec.density_at(axis.point(i), axis.point(j)));
    DensityMatrix::new(*axis, rho)
}

/// `M(x,k)` sampled on `x = m·h` (`2n` rows, `m = -n..n`) and `k` on the
/// axis dual to X.
#[derive(Debug, Clone, PartialEq)]
pub struct MoyalGrid {
    field: ComplexField2D,
}

impl MoyalGrid {
    pub fn new(field: ComplexField2D) -> Self {
        Self { field }
    }

    /// Standard `(x, k)` axes for a position axis.
    pub fn axes_for(x_axis: &AxisGrid) -> [AxisGrid; 2] {
        let n = x_axis.n();
        let h = x_axis.spacing();
        [AxisGrid::new(2 * n, h, -(n as f64) * h).expect("valid axis"), dual_axis(x_axis)]
    }

    pub fn field(&self) -> &ComplexField2D {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut ComplexField2D {
        &mut self.field
    }

    pub fn into_field(self) -> ComplexField2D {
        self.field
    }

    pub fn x_axis(&self) -> &AxisGrid {
        &self.field.axes()[0]
    }

    pub fn k_axis(&self) -> &AxisGrid {
        &self.field.axes()[1]
    }

    /// `M(x,k)` at a grid node.
    pub fn at(&self, x: f64, k: f64) -> Option<C64> {
        self.field.at(x, k)
    }

    pub fn origin_value(&self) -> Option<C64> {
        self.at(0.0, 0.0)
    }

    /// Largest `|M(-x,-k) - conj M(x,k)|` over paired nodes.
    pub fn hermiticity_error(&self) -> f64 {
        let [xa, ka] = *self.field.axes();
        let mut worst = 0.0f64;
        for i in 0..xa.n() {
            let Some(ip) = xa.node_index(-xa.point(i)) else { continue };
            for j in 0..ka.n() {
                let Some(jp) = ka.node_index(-ka.point(j)) else { continue };
                worst = worst.max((self.field.get(ip, jp) - self.field.get(i, j).conj()).norm());
            }
        }
        worst
    }

    /// Exact evaluation on row nodes with trigonometric interpolation in `k`,
    /// and band-limited (sinc) interpolation between rows.
    pub fn interpolator(&self, x_axis: &AxisGrid) -> Result<MoyalInterpolator> {
        MoyalInterpolator::new(self, x_axis)
    }
}

/// Row-wise diagonal coefficients of a [`MoyalGrid`], used to evaluate `M`
/// off the grid nodes.
pub struct MoyalInterpolator {
    x_rows: AxisGrid,
    k_span: (f64, f64),
    centres: Vec<AxisGrid>,
    coeffs: Vec<Vec<C64>>,
}

impl MoyalInterpolator {
    fn new(m: &MoyalGrid, x_axis: &AxisGrid) -> Result<Self> {
        let rows = diagonals_from_moyal(m, x_axis)?;
        let ka = *m.k_axis();
        let mut centres = Vec::with_capacity(rows.len());
        let mut coeffs = Vec::with_capacity(rows.len());
        for (centre, c) in rows {
            centres.push(centre);
            coeffs.push(c);
        }
        Ok(Self { x_rows: *m.x_axis(), k_span: (ka.first(), ka.last()), centres, coeffs })
    }

    fn row_value(&self, r: usize, k: f64) -> C64 {
        let centre = &self.centres[r];
        let h = centre.spacing();
        self.coeffs[r]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
            .map(|(b, c)| c * C64::cis(k * centre.point(b)) * h)
            .sum()
    }

    pub fn eval(&self, x: f64, k: f64) -> Result<C64> {
        if !self.x_rows.contains(x) || k < self.k_span.0 - 1e-9 || k > -self.k_span.0 + 1e-9 {
            return Err(QstError::OutOfSpan(format!("Moyal point ({x}, {k}) outside grid")));
        }
        if let Some(r) = self.x_rows.node_index(x) {
            return Ok(self.row_value(r, k));
        }
        let t = self.x_rows.position(x);
        Ok((0..self.x_rows.n()).map(|r| self.row_value(r, k) * sinc(t - r as f64)).sum())
    }
}

/// Axis of centres `X = (X_a + X_b)/2` for row offset `m = a - b`.
fn centre_axis(x_axis: &AxisGrid, m: i64) -> AxisGrid {
    let h = x_axis.spacing();
    AxisGrid::new(x_axis.n(), h, x_axis.offset() + 0.5 * m as f64 * h).expect("valid axis")
}

fn row_offset(x_rows: &AxisGrid, r: usize, h: f64) -> Option<i64> {
    let m = x_rows.point(r) / h;
    let mr = m.round();
    ((m - mr).abs() < 1e-7).then_some(mr as i64)
}

pub fn moyal_from_density(rho: &DensityMatrix) -> MoyalGrid {
    let x_axis = *rho.axis();
    let n = x_axis.n();
    let [xa, ka] = MoyalGrid::axes_for(&x_axis);
    let mut values = vec![C64::new(0.0, 0.0); xa.n() * ka.n()];
    for r in 0..xa.n() {
        let m = r as i64 - n as i64;
        if m.unsigned_abs() as usize >= n {
            continue;
        }
        let mut c = vec![C64::new(0.0, 0.0); n];
        for (b, slot) in c.iter_mut().enumerate() {
            let a = b as i64 + m;
            if (0..n as i64).contains(&a) {
                *slot = rho.get(a as usize, b);
            }
        }
        let row = cft_1d(&c, &centre_axis(&x_axis, m), &ka, Sign::Plus, false).expect("dual axes");
        values[r * ka.n()..(r + 1) * ka.n()].copy_from_slice(&row);
    }
    MoyalGrid::new(ComplexField2D::new([xa, ka], values).expect("finite"))
}

/// Per-row diagonal sequences `ρ(b+m, b)` recovered from `M(x_m, ·)`.
fn diagonals_from_moyal(m: &MoyalGrid, x_axis: &AxisGrid) -> Result<Vec<(AxisGrid, Vec<C64>)>> {
    let [xa, ka] = *m.field().axes();
    let h = x_axis.spacing();
    if !(xa.spacing() - h).abs().le(&(1e-9 * h)) {
        return Err(QstError::AxisMismatch(format!("Moyal x spacing {} must equal the X spacing {h}", xa.spacing())));
    }
    if !ka.is_dual_of(x_axis) {
        return Err(QstError::AxisMismatch("Moyal k axis is not dual to the X axis".into()));
    }
    let mut out = Vec::with_capacity(xa.n());
    for r in 0..xa.n() {
        let mo = row_offset(&xa, r, h).ok_or_else(|| QstError::AxisMismatch("Moyal x nodes must be multiples of the X spacing".into()))?;
        let centre = centre_axis(x_axis, mo);
        let row = &m.field().values()[r * ka.n()..(r + 1) * ka.n()];
        let c = cft_1d(row, &ka, &centre, Sign::Minus, true)?;
        out.push((centre, c));
    }
    Ok(out)
}

/// Inverts [`moyal_from_density`] onto the centred position axis dual to `k`.
pub fn density_from_moyal(m: &MoyalGrid) -> Result<DensityMatrix> {
    let x_axis = dual_axis(m.k_axis());
    density_from_moyal_onto(m, &x_axis)
}

/// `ρ(X+x/2, X-x/2) = ∫dk/2π e^{-iXk} M(x,k)` evaluated onto `x_axis`.
/// Offsets with no Moyal row are left at zero.
pub fn density_from_moyal_onto(m: &MoyalGrid, x_axis: &AxisGrid) -> Result<DensityMatrix> {
    let n = x_axis.n();
    let h = x_axis.spacing();
    let rows = diagonals_from_moyal(m, x_axis)?;
    let mut rho = DMatrix::<C64>::zeros(n, n);
    for (r, (_, c)) in rows.iter().enumerate() {
        let mo = row_offset(m.x_axis(), r, h).expect("checked");
        if mo.unsigned_abs() as usize >= n {
            continue;
        }
        for (b, v) in c.iter().enumerate() {
            let a = b as i64 + mo;
            if (0..n as i64).contains(&a) {
                rho[(a as usize, b)] = *v;
            }
        }
    }
    DensityMatrix::from_raw(*x_axis, rho)
}

/// Real Wigner function `W(K, X)`, rows over K.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    axes: [AxisGrid; 2],
    values: Vec<f64>,
}

impl WignerGrid {
    pub fn new(axes: [AxisGrid; 2], values: Vec<f64>) -> Result<Self> {
        if values.len() != axes[0].n() * axes[1].n() {
            return Err(QstError::InvalidParameter("Wigner value count mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QstError::NonFinite("Wigner function".into()));
        }
        Ok(Self { axes, values })
    }

    pub fn axes(&self) -> &[AxisGrid; 2] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axes[1].n() + j]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.axes[0].spacing() * self.axes[1].spacing()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `∫ W dK` on the X axis.
    pub fn position_marginal(&self) -> Vec<f64> {
        let (nk, nx) = (self.axes[0].n(), self.axes[1].n());
        let dk = self.axes[0].spacing();
        (0..nx).map(|j| (0..nk).map(|i| self.get(i, j)).sum::<f64>() * dk).collect()
    }

    /// `∫ W dX` on the K axis.
    pub fn momentum_marginal(&self) -> Vec<f64> {
        let nx = self.axes[1].n();
        let dx = self.axes[1].spacing();
        self.values.chunks(nx).map(|row| row.iter().sum::<f64>() * dx).collect()
    }

    pub fn to_field(&self) -> ComplexField2D {
        ComplexField2D::new(self.axes, self.values.iter().map(|v| C64::new(*v, 0.0)).collect()).expect("finite")
    }
}

/// Wigner function on `(K, X)` with X the centred axis dual to `k`.
pub fn wigner_from_moyal(m: &MoyalGrid) -> Result<WignerGrid> {
    let x_axis = dual_axis(m.k_axis());
    wigner_from_moyal_onto(m, &x_axis)
}

/// `W(K,X) = ∫∫ dk dx/(2π)² e^{-i(Kx+Xk)} M(x,k)`.
pub fn wigner_from_moyal_onto(m: &MoyalGrid, x_axis: &AxisGrid) -> Result<WignerGrid> {
    let k_axis = dual_axis(m.x_axis());
    let w = cft_inverse_onto(m.field(), [Sign::Minus, Sign::Minus], [k_axis, *x_axis])?;
    real_part_checked(&w)
}

pub(crate) fn real_part_checked(w: &ComplexField2D) -> Result<WignerGrid> {
    let residue = w.values().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if residue > RESIDUE_LIMIT {
        return Err(QstError::ImaginaryResidue { residue, limit: RESIDUE_LIMIT });
    }
    if residue > RESIDUE_QUIET {
        warn!("Wigner imaginary residue {residue:.2e} discarded");
    }
    WignerGrid::new(*w.axes(), w.values().iter().map(|v| v.re).collect())
}

/// `Tr{ρ e^{ixK̂+ikX̂}} = Σ_a h e^{ik(X_a - x/2)} ρ(X_a, X_a - x)`, summed
/// directly over matrix entries. Off-node `x` uses sinc interpolation of
/// `ρ` in its second argument.
pub fn weyl_expectation(rho: &DensityMatrix, x: f64, k: f64) -> Result<C64> {
    let axis = rho.axis();
    let n = axis.n();
    let h = axis.spacing();
    let x_max = (n - 1) as f64 * h;
    let k_max = PI / h;
    if !(x.abs() <= x_max * (1.0 + 1e-12) && k.abs() <= k_max * (1.0 + 1e-12)) {
        return Err(QstError::OutOfSpan(format!("Weyl point ({x}, {k}) outside |x| <= {x_max}, |k| <= {k_max}")));
    }
    let t = x / h;
    let tr = t.round();
    let mut acc = C64::new(0.0, 0.0);
    if (t - tr).abs() < 1e-9 {
        let m = tr as i64;
        for a in 0..n as i64 {
            let b = a - m;
            if (0..n as i64).contains(&b) {
                let xa = axis.point(a as usize);
                acc += C64::cis(k * (xa - x / 2.0)) * rho.get(a as usize, b as usize);
            }
        }
    } else {
        for a in 0..n {
            let xa = axis.point(a);
            let target = axis.position(xa - x);
            let interp: C64 = (0..n).map(|b| rho.get(a, b) * sinc(target - b as f64)).sum();
            acc += C64::cis(k * (xa - x / 2.0)) * interp;
        }
    }
    Ok(acc * h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDistance {
    pub fidelity: f64,
    pub trace_distance: f64,
    pub hs_distance: f64,
}

/// Eigenvalues below this are solver noise on a unit-trace operator; their
/// square roots would otherwise accumulate into the fidelity.
const EIGEN_NOISE: f64 = 1e-13;

fn clipped_sqrt(l: f64) -> f64 {
    if l > EIGEN_NOISE {
        l.sqrt()
    } else {
        0.0
    }
}

/// Root Uhlmann fidelity `Tr√(√a b √a)` of two cell-scaled operators.
///
/// `√a b √a` is compressed onto the support of `a` first, so only one full
/// eigendecomposition is needed.
fn uhlmann_fidelity(oa: &DMatrix<C64>, ob: &DMatrix<C64>) -> Result<f64> {
    let (values, vectors) = hermitian_eigen(oa);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(QstError::NotPhysical(format!("negative eigenvalue {min:.3e} in fidelity")));
    }
    let support: Vec<usize> = (0..values.len()).filter(|&i| values[i] > EIGEN_NOISE).collect();
    let v = vectors.select_columns(&support);
    let roots = DVector::from_iterator(support.len(), support.iter().map(|&i| C64::new(values[i].sqrt(), 0.0)));
    let mut inner = v.adjoint() * ob * &v;
    for r in 0..support.len() {
        for c in 0..support.len() {
            inner[(r, c)] *= roots[r] * roots[c];
        }
    }
    let eig = hermitian_eigenvalues(&inner);
    let min_b = eig.iter().cloned().fold(0.0, f64::min);
    if min_b < -PSD_TOL {
        return Err(QstError::NotPhysical(format!("negative eigenvalue {min_b:.3e} in fidelity")));
    }
    Ok(eig.iter().map(|l| clipped_sqrt(*l)).sum())
}

/// Root Uhlmann fidelity of two states on the same axis. For pure states
/// this is the overlap `|⟨ψ_a|ψ_b⟩|`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if !a.axis.same_nodes(&b.axis) {
        return Err(QstError::AxisMismatch("states live on different axes".into()));
    }
    uhlmann_fidelity(&hermitize(a.operator()), &hermitize(b.operator()))
}

/// Uhlmann (root) fidelity `Tr√(√a b √a)`, trace distance and
/// Hilbert-Schmidt distance of the cell-scaled operators.
pub fn state_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<StateDistance> {
    if !a.axis.same_nodes(&b.axis) {
        return Err(QstError::AxisMismatch("states live on different axes".into()));
    }
    let (oa, ob) = (hermitize(a.operator()), hermitize(b.operator()));
    let fidelity = uhlmann_fidelity(&oa, &ob)?;
    let diff = &oa - &ob;
    let trace_distance = 0.5 * hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum::<f64>();
    let hs_distance = diff.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    Ok(StateDistance { fidelity, trace_distance, hs_distance })
}
