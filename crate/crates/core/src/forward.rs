//! Analytic forward model: joint quasi-characteristic function, the
//! readout characteristic function `Z_f(φ) = M_S(Λφ)·M_i(φ, Λα_εΛφ)` and
//! the joint readout density `Π_f(J_K, J_X)`.

use std::f64::consts::PI;

use log::{debug, warn};

use crate::error::{QstError, Result};
use crate::grid::{cft_1d, cft_inverse, dual_axis, warn_if_aliased, AxisGrid, ComplexField2D, Sign, C64};
use crate::probes::{mat_vec, order_matrix, CouplingConfig, MeasurementOrder, Pair, ProbeModel, ProbeMqc};
use crate::states::{weyl_expectation, DensityMatrix, MoyalGrid, MoyalInterpolator};

/// A system Moyal function `M_S(x, k)` that can be evaluated pointwise.
pub trait MoyalFn: Sync {
    fn moyal(&self, s: Pair) -> Result<C64>;
}

impl MoyalFn for MoyalInterpolator {
    fn moyal(&self, s: Pair) -> Result<C64> {
        self.eval(s[0], s[1])
    }
}

/// Direct Weyl-operator evaluation on a density matrix.
impl MoyalFn for DensityMatrix {
    fn moyal(&self, s: Pair) -> Result<C64> {
        weyl_expectation(self, s[0], s[1])
    }
}

/// Closed-form Moyal function.
pub struct AnalyticMoyal<F>(pub F);

impl<F: Fn(Pair) -> C64 + Sync> MoyalFn for AnalyticMoyal<F> {
    fn moyal(&self, s: Pair) -> Result<C64> {
        Ok((self.0)(s))
    }
}

/// `M_{S,f}(s; φ, j) = M_i[φ, j + Λ(2α_0 s + α_εΛφ)] · M_S(s + Λφ)`.
pub fn joint_mqc(
    ms: &dyn MoyalFn,
    probe: &dyn ProbeMqc,
    config: &CouplingConfig,
    order: MeasurementOrder,
    s: Pair,
    phi: Pair,
    j: Pair,
) -> Result<C64> {
    let lphi = config.apply(phi);
    let a0 = order_matrix(MeasurementOrder::Zero);
    let ae = order_matrix(order);
    let two_a0_s = mat_vec(&a0, s).map(|v| 2.0 * v);
    let ae_lphi = mat_vec(&ae, lphi);
    let shift = config.apply([two_a0_s[0] + ae_lphi[0], two_a0_s[1] + ae_lphi[1]]);
    let system = ms.moyal([s[0] + lphi[0], s[1] + lphi[1]])?;
    Ok(probe.mqc(phi, [j[0] + shift[0], j[1] + shift[1]]) * system)
}

/// `Z_f(φ_K, φ_X)`, rows over `φ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicGrid {
    field: ComplexField2D,
}

impl CharacteristicGrid {
    pub fn new(field: ComplexField2D) -> Self {
        Self { field }
    }

    pub fn field(&self) -> &ComplexField2D {
        &self.field
    }

    pub fn into_field(self) -> ComplexField2D {
        self.field
    }

    pub fn axes(&self) -> &[AxisGrid; 2] {
        self.field.axes()
    }

    pub fn at(&self, phi: Pair) -> Option<C64> {
        self.field.at(phi[0], phi[1])
    }

    /// Normalisation, Hermiticity and `|Z| ≤ 1`, all at `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let origin = self.at([0.0, 0.0]).ok_or_else(|| QstError::AxisMismatch("characteristic grid lacks the origin".into()))?;
        if (origin - 1.0).norm() > tol {
            return Err(QstError::NotPhysical(format!("Z(0) = {origin}, expected 1")));
        }
        let [a, b] = *self.axes();
        for i in 0..a.n() {
            for j in 0..b.n() {
                let v = self.field.get(i, j);
                if v.norm() > 1.0 + tol {
                    return Err(QstError::NotPhysical(format!("|Z| = {} > 1", v.norm())));
                }
                if let (Some(ip), Some(jp)) = (a.node_index(-a.point(i)), b.node_index(-b.point(j))) {
                    if (self.field.get(ip, jp) - v.conj()).norm() > tol {
                        return Err(QstError::NotPhysical("Z is not Hermitian-symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `φ` axes that land exactly on the Moyal nodes, `φ = V s`.
pub fn default_phi_axes(moyal_axes: &[AxisGrid; 2], config: &CouplingConfig) -> Result<[AxisGrid; 2]> {
    Ok([moyal_axes[0].scaled(1.0 / config.lambda_k())?, moyal_axes[1].scaled(1.0 / config.lambda_x())?])
}

/// `Z_f(φ) = M_S(Λφ)·M_i(φ, Λα_εΛφ)` on `phi_axes` (defaults to the Moyal
/// nodes). Off-node points are evaluated by band-limited interpolation.
pub fn char_function(ms: &MoyalGrid, x_axis: &AxisGrid, model: &ProbeModel, phi_axes: Option<[AxisGrid; 2]>) -> Result<CharacteristicGrid> {
    let maxes = *ms.field().axes();
    let axes = match phi_axes {
        Some(a) => a,
        None => default_phi_axes(&maxes, &model.config)?,
    };
    let cfg = model.config;
    let (lk, lx) = (cfg.lambda_k(), cfg.lambda_x());
    for (name, ax, lam, target) in [("phi_K", axes[0], lk, maxes[0]), ("phi_X", axes[1], lx, maxes[1])] {
        let tol = 1e-9 * target.spacing();
        if ax.first() * lam < target.first() - tol || ax.last() * lam > target.last() + tol {
            return Err(QstError::AxisMismatch(format!(
                "{name} grid scaled by lambda spans [{}, {}], Moyal grid only [{}, {}]",
                ax.first() * lam,
                ax.last() * lam,
                target.first(),
                target.last()
            )));
        }
    }
    let aligned = axes[0].scaled(lk)?.same_nodes(&maxes[0]) && axes[1].scaled(lx)?.same_nodes(&maxes[1]);
    let field = if aligned {
        let mut f = ms.field().clone();
        let n1 = axes[1].n();
        for (idx, v) in f.values_mut().iter_mut().enumerate() {
            *v *= model.char_factor([axes[0].point(idx / n1), axes[1].point(idx % n1)]);
        }
        ComplexField2D::new(axes, f.into_values())?
    } else {
        debug!("phi grid is off the Moyal nodes; interpolating");
        let interp = ms.interpolator(x_axis)?;
        let mut values = Vec::with_capacity(axes[0].n() * axes[1].n());
        for pk in axes[0].points() {
            for px in axes[1].points() {
                values.push(interp.eval(lk * pk, lx * px)? * model.char_factor([pk, px]));
            }
        }
        ComplexField2D::new(axes, values)?
    };
    Ok(CharacteristicGrid::new(field))
}

/// Joint readout density `Π_f(J_K, J_X)`, rows over `J_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProbabilityGrid {
    axes: [AxisGrid; 2],
    values: Vec<f64>,
    /// Total probability mass removed by clipping negative residues.
    pub clip_total: f64,
    /// Most negative value before clipping (0 if none).
    pub max_violation: f64,
}

/// Largest tolerated negative residue relative to the peak.
const NEGATIVITY_TOL: f64 = 1e-9;

impl JointProbabilityGrid {
    pub fn new(axes: [AxisGrid; 2], values: Vec<f64>) -> Result<Self> {
        if values.len() != axes[0].n() * axes[1].n() {
            return Err(QstError::InvalidParameter("probability value count mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(QstError::NotPhysical("probability grid must be finite and non-negative".into()));
        }
        Ok(Self { axes, values, clip_total: 0.0, max_violation: 0.0 })
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

    pub fn cell_area(&self) -> f64 {
        self.axes[0].spacing() * self.axes[1].spacing()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// `∫ Π dJ_X` over the `J_K` axis.
    pub fn marginal_k(&self) -> Vec<f64> {
        let n1 = self.axes[1].n();
        let d = self.axes[1].spacing();
        self.values.chunks(n1).map(|r| r.iter().sum::<f64>() * d).collect()
    }

    /// `∫ Π dJ_K` over the `J_X` axis.
    pub fn marginal_x(&self) -> Vec<f64> {
        let (n0, n1) = (self.axes[0].n(), self.axes[1].n());
        let d = self.axes[0].spacing();
        (0..n1).map(|j| (0..n0).map(|i| self.get(i, j)).sum::<f64>() * d).collect()
    }

    pub fn to_field(&self) -> ComplexField2D {
        ComplexField2D::new(self.axes, self.values.iter().map(|v| C64::new(*v, 0.0)).collect()).expect("finite")
    }

    /// Mean of `(J_K, J_X)`.
    pub fn mean(&self) -> Pair {
        let mut m = [0.0, 0.0];
        let area = self.cell_area();
        for i in 0..self.axes[0].n() {
            for j in 0..self.axes[1].n() {
                let p = self.get(i, j) * area;
                m[0] += p * self.axes[0].point(i);
                m[1] += p * self.axes[1].point(j);
            }
        }
        m
    }
}

/// `Π_f(J) = ∫∫ dφ/(2π)² e^{-iJ·φ} Z_f(φ)`, negative residues clipped.
pub fn joint_prob(z: &CharacteristicGrid) -> Result<JointProbabilityGrid> {
    warn_if_aliased(z.field(), "characteristic function");
    let raw = cft_inverse(z.field(), [Sign::Minus, Sign::Minus])?;
    real_probability(&raw)
}

/// As [`joint_prob`] after zero-padding `Z_f` by `factor` on both axes,
/// giving readout cells `factor` times finer.
pub fn joint_prob_oversampled(z: &CharacteristicGrid, factor: usize) -> Result<JointProbabilityGrid> {
    if factor <= 1 {
        return joint_prob(z);
    }
    warn_if_aliased(z.field(), "characteristic function");
    let [a, b] = *z.axes();
    let pad = |ax: &AxisGrid| AxisGrid::centered(ax.n() * factor, ax.spacing());
    let (pa, pb) = (pad(&a)?, pad(&b)?);
    let (oa, ob) = (
        pa.node_index(a.first()).ok_or_else(|| QstError::AxisMismatch("phi_K axis not centred".into()))?,
        pb.node_index(b.first()).ok_or_else(|| QstError::AxisMismatch("phi_X axis not centred".into()))?,
    );
    let mut padded = ComplexField2D::zeros([pa, pb]);
    for i in 0..a.n() {
        for j in 0..b.n() {
            padded.set(i + oa, j + ob, z.field().get(i, j));
        }
    }
    let raw = cft_inverse(&padded, [Sign::Minus, Sign::Minus])?;
    real_probability(&raw)
}

fn real_probability(raw: &ComplexField2D) -> Result<JointProbabilityGrid> {
    let peak = raw.values().iter().map(|v| v.re).fold(0.0, f64::max);
    let imag = raw.values().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if imag > 1e-6 * peak.max(1e-300) {
        return Err(QstError::NotPhysical(format!(
            "readout density has imaginary residue {imag:.2e}; characteristic function is not Hermitian"
        )));
    }
    let min = raw.values().iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    if min < -NEGATIVITY_TOL * peak {
        return Err(QstError::NotPhysical(format!("readout density has negative value {min:.3e} (peak {peak:.3e})")));
    }
    let mut clip = 0.0;
    let values: Vec<f64> = raw
        .values()
        .iter()
        .map(|v| {
            if v.re < 0.0 {
                clip -= v.re;
                0.0
            } else {
                v.re
            }
        })
        .collect();
    let mut grid = JointProbabilityGrid::new(*raw.axes(), values)?;
    grid.clip_total = clip * grid.cell_area();
    grid.max_violation = min.min(0.0);
    if grid.clip_total > 0.0 {
        debug!("clipped {:.3e} of negative readout mass (worst {min:.3e})", grid.clip_total);
    }
    Ok(grid)
}

/// Which system observable a single probe couples to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Position,
    Momentum,
}

/// Readout density of a single Gaussian probe and its characteristic function.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutPdf {
    pub axis: AxisGrid,
    pub pdf: Vec<f64>,
    pub char_axis: AxisGrid,
    pub char_fn: Vec<C64>,
}

impl ReadoutPdf {
    pub fn mass(&self) -> f64 {
        self.pdf.iter().sum::<f64>() * self.axis.spacing()
    }

    /// First four cumulants of the readout.
    pub fn cumulants(&self) -> [f64; 4] {
        cumulants(&self.axis, &self.pdf)
    }
}

/// Cumulants 1..4 of a density sampled on `axis`.
pub fn cumulants(axis: &AxisGrid, pdf: &[f64]) -> [f64; 4] {
    let h = axis.spacing();
    let mass: f64 = pdf.iter().sum::<f64>() * h;
    let mean = axis.points().zip(pdf).map(|(x, p)| x * p).sum::<f64>() * h / mass;
    let central = |k: i32| axis.points().zip(pdf).map(|(x, p)| (x - mean).powi(k) * p).sum::<f64>() * h / mass;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    [mean, m2, m3, m4 - 3.0 * m2 * m2]
}

/// `Π_f(J) = ∫dX p(X) Π_i(J - λX)` for a single unbiased Gaussian probe of
/// readout spread `delta`, with `p` the position (or momentum) distribution.
pub fn single_readout_pdf(rho: &DensityMatrix, delta: f64, lambda: f64, axis: &AxisGrid, observable: Observable) -> Result<ReadoutPdf> {
    if !(delta > 0.0 && lambda > 0.0) {
        return Err(QstError::InvalidParameter("delta and lambda must be positive".into()));
    }
    let (src_axis, p) = match observable {
        Observable::Position => (*rho.axis(), rho.position_distribution()),
        Observable::Momentum => rho.momentum_distribution(),
    };
    let peak = p.iter().cloned().fold(0.0, f64::max);
    let support: Vec<f64> = src_axis.points().zip(&p).filter(|(_, v)| **v > 1e-12 * peak).map(|(x, _)| x).collect();
    let (lo, hi) =
        (support.first().copied().unwrap_or(0.0) * lambda - 6.0 * delta, support.last().copied().unwrap_or(0.0) * lambda + 6.0 * delta);
    if lo < axis.first() || hi > axis.last() {
        return Err(QstError::SpanTooSmall(format!("readout axis [{}, {}] must cover [{lo}, {hi}]", axis.first(), axis.last())));
    }
    let h = src_axis.spacing();
    let norm = 1.0 / ((2.0 * PI).sqrt() * delta);
    let pdf: Vec<f64> = axis
        .points()
        .map(|jv| {
            src_axis
                .points()
                .zip(&p)
                .map(|(x, px)| {
                    let u = (jv - lambda * x) / delta;
                    px * (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * h
                * norm
        })
        .collect();
    let char_axis = dual_axis(axis);
    let as_c: Vec<C64> = pdf.iter().map(|v| C64::new(*v, 0.0)).collect();
    let char_fn = cft_1d(&as_c, axis, &char_axis, Sign::Plus, false)?;
    Ok(ReadoutPdf { axis: *axis, pdf, char_axis, char_fn })
}

/// Warns when a characteristic grid still carries weight at its edge.
pub fn check_decay(z: &CharacteristicGrid) -> bool {
    let aliased = warn_if_aliased(z.field(), "Z_f");
    if aliased {
        warn!("Z_f does not decay on the phi grid; widen the grid");
    }
    !aliased
}
