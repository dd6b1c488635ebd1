//! The two-detector apparatus: couplings, measurement order and the probes'
//! quasi-characteristic function `M_i(φ, j)`.
//!
//! Pairs are ordered `(K, X)` throughout: `φ = (φ_K, φ_X)`, `j = (j_K, j_X)`,
//! `s = (x, k)`, `Λ = diag(λ_K, λ_X)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{QstError, Result};
use crate::grid::{AxisGrid, ComplexField2D, C64};

pub type Pair = [f64; 2];

/// Default magnitude floor below which `M_i` is not divided by.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConfig {
    lambda_k: f64,
    lambda_x: f64,
}

impl CouplingConfig {
    pub fn new(lambda_k: f64, lambda_x: f64) -> Result<Self> {
        for (name, v) in [("lambda_K", lambda_k), ("lambda_X", lambda_x)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QstError::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { lambda_k, lambda_x })
    }

    pub fn unit() -> Self {
        Self { lambda_k: 1.0, lambda_x: 1.0 }
    }

    pub fn lambda_k(&self) -> f64 {
        self.lambda_k
    }

    pub fn lambda_x(&self) -> f64 {
        self.lambda_x
    }

    /// `Λφ`
    pub fn apply(&self, phi: Pair) -> Pair {
        [self.lambda_k * phi[0], self.lambda_x * phi[1]]
    }

    /// `V s = Λ⁻¹ s`
    pub fn apply_inverse(&self, s: Pair) -> Pair {
        [s[0] / self.lambda_k, s[1] / self.lambda_x]
    }
}

/// `Plus`: X measured first, then K. `Minus`: K first, then X. `Zero`:
/// simultaneous joint measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementOrder {
    Plus,
    Minus,
    Zero,
}

impl MeasurementOrder {
    pub const ALL: [MeasurementOrder; 3] = [MeasurementOrder::Plus, MeasurementOrder::Minus, MeasurementOrder::Zero];

    /// `+1`, `-1` or `0`.
    pub fn numeric(self) -> f64 {
        match self {
            MeasurementOrder::Plus => 1.0,
            MeasurementOrder::Minus => -1.0,
            MeasurementOrder::Zero => 0.0,
        }
    }
}

impl fmt::Display for MeasurementOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementOrder::Plus => "plus",
            MeasurementOrder::Minus => "minus",
            MeasurementOrder::Zero => "zero",
        })
    }
}

impl FromStr for MeasurementOrder {
    type Err = QstError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plus" | "+" | "x-first" => Ok(MeasurementOrder::Plus),
            "minus" | "-" | "k-first" => Ok(MeasurementOrder::Minus),
            "zero" | "0" | "joint" => Ok(MeasurementOrder::Zero),
            other => Err(QstError::Parse(format!("unknown measurement order '{other}'"))),
        }
    }
}

pub type Mat2 = [[f64; 2]; 2];

pub fn order_matrix(order: MeasurementOrder) -> Mat2 {
    match order {
        MeasurementOrder::Plus => [[0.0, 0.0], [1.0, 0.0]],
        MeasurementOrder::Minus => [[0.0, -1.0], [0.0, 0.0]],
        MeasurementOrder::Zero => [[0.0, -0.5], [0.5, 0.0]],
    }
}

pub fn mat_vec(m: &Mat2, v: Pair) -> Pair {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// `Λ α_ε s`, the coherence argument of `M_i` in the deconvolution.
pub fn probe_argument(config: &CouplingConfig, order: MeasurementOrder, s: Pair) -> Pair {
    config.apply(mat_vec(&order_matrix(order), s))
}

/// Quasi-characteristic function of the (possibly correlated) probe pair,
/// `M_i(φ, j) = ∫dJ̄ e^{iφ·J̄} ρ_i(J̄ - j/2, J̄ + j/2)`.
pub trait ProbeMqc: Send + Sync {
    fn mqc(&self, phi: Pair, j: Pair) -> C64;

    /// Bounding half-widths `(φ, j)` outside of which `|M_i| < floor`, if known.
    fn support(&self, _floor: f64) -> Option<(Pair, Pair)> {
        None
    }
}

impl<F> ProbeMqc for F
where
    F: Fn(Pair, Pair) -> C64 + Send + Sync,
{
    fn mqc(&self, phi: Pair, j: Pair) -> C64 {
        self(phi, j)
    }
}

/// Two independent, unbiased Gaussian probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianProbePair {
    pub delta_k: f64,
    pub delta_x: f64,
    pub kappa_k: f64,
    pub kappa_x: f64,
}

impl GaussianProbePair {
    pub fn new(delta_k: f64, delta_x: f64, kappa_k: f64, kappa_x: f64) -> Result<Self> {
        for (name, v) in [("delta_K", delta_k), ("delta_X", delta_x), ("kappa_K", kappa_k), ("kappa_X", kappa_x)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QstError::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, kappa, delta) in [("K", kappa_k, delta_k), ("X", kappa_x, delta_x)] {
            if kappa > 2.0 * delta * (1.0 + 1e-12) {
                return Err(QstError::InvalidParameter(format!(
                    "probe {name} violates the uncertainty bound: kappa {kappa} > 2*delta {}",
                    2.0 * delta
                )));
            }
        }
        Ok(Self { delta_k, delta_x, kappa_k, kappa_x })
    }

    /// Same readout spread and coherence scale on both probes.
    pub fn symmetric(delta: f64, kappa: f64) -> Result<Self> {
        Self::new(delta, delta, kappa, kappa)
    }

    pub fn deltas(&self) -> Pair {
        [self.delta_k, self.delta_x]
    }

    pub fn kappas(&self) -> Pair {
        [self.kappa_k, self.kappa_x]
    }

    /// `-log M_i(φ, j)`.
    pub fn log_decay(&self, phi: Pair, j: Pair) -> f64 {
        let d = self.deltas();
        let k = self.kappas();
        (0..2).map(|a| phi[a] * phi[a] * d[a] * d[a] / 2.0 + j[a] * j[a] / (2.0 * k[a] * k[a])).sum()
    }

    /// `ρ_i(J, J')` in the readout basis.
    pub fn density(&self, big_j: Pair, big_jp: Pair) -> C64 {
        let d = self.deltas();
        let k = self.kappas();
        let exponent: f64 = (0..2)
            .map(|a| {
                let mean = 0.5 * (big_j[a] + big_jp[a]);
                let diff = big_j[a] - big_jp[a];
                mean * mean / (2.0 * d[a] * d[a]) + diff * diff / (2.0 * k[a] * k[a])
            })
            .sum();
        C64::new((-exponent).exp() / (2.0 * std::f64::consts::PI * d[0] * d[1]), 0.0)
    }

    /// Single-probe density in the conjugate (Φ) basis,
    /// `ρ̌_a(Φ̄+φ/2, Φ̄-φ/2) = e^{-φ²Δ²/2} κ/√(2π) e^{-κ²Φ̄²/2}`.
    pub fn conjugate_density(&self, probe: usize, phi: f64, phi_p: f64) -> C64 {
        let (d, k) = (self.deltas()[probe], self.kappas()[probe]);
        let diff = phi - phi_p;
        let mean = 0.5 * (phi + phi_p);
        let v = (-diff * diff * d * d / 2.0 - k * k * mean * mean / 2.0).exp() * k / (2.0 * std::f64::consts::PI).sqrt();
        C64::new(v, 0.0)
    }
}

impl ProbeMqc for GaussianProbePair {
    fn mqc(&self, phi: Pair, j: Pair) -> C64 {
        C64::new((-self.log_decay(phi, j)).exp(), 0.0)
    }

    fn support(&self, floor: f64) -> Option<(Pair, Pair)> {
        let r = (2.0 * (1.0 / floor).ln()).sqrt();
        Some(([r / self.delta_k, r / self.delta_x], [r * self.kappa_k, r * self.kappa_x]))
    }
}

pub fn gaussian_mqc(probe: &GaussianProbePair, phi: Pair, j: Pair) -> C64 {
    probe.mqc(phi, j)
}

pub fn gaussian_probe_density(probe: &GaussianProbePair, big_j: Pair, big_jp: Pair) -> C64 {
    probe.density(big_j, big_jp)
}

/// The known divisor `D(s) = M_i(Vs, Λα_ε s)` of the reconstruction.
pub trait ProbeResponse: Send + Sync {
    fn denominator(&self, s: Pair) -> Result<C64>;
    fn config(&self) -> &CouplingConfig;
}

/// Probe quasi-characteristic function together with couplings and order.
#[derive(Clone)]
pub struct ProbeModel {
    pub probe: Arc<dyn ProbeMqc>,
    pub config: CouplingConfig,
    pub order: MeasurementOrder,
}

impl ProbeModel {
    pub fn new(probe: Arc<dyn ProbeMqc>, config: CouplingConfig, order: MeasurementOrder) -> Self {
        Self { probe, config, order }
    }

    pub fn gaussian(probe: GaussianProbePair, config: CouplingConfig, order: MeasurementOrder) -> Self {
        Self::new(Arc::new(probe), config, order)
    }

    /// `M_i(φ, Λα_εΛφ)`, the probe factor of the characteristic function.
    pub fn char_factor(&self, phi: Pair) -> C64 {
        let s = self.config.apply(phi);
        self.probe.mqc(phi, probe_argument(&self.config, self.order, s))
    }
}

impl ProbeResponse for ProbeModel {
    fn denominator(&self, s: Pair) -> Result<C64> {
        let phi = self.config.apply_inverse(s);
        Ok(self.probe.mqc(phi, probe_argument(&self.config, self.order, s)))
    }

    fn config(&self) -> &CouplingConfig {
        &self.config
    }
}

/// Externally measured `M_i(φ, Λα_εΛφ)` tabulated over `(φ_K, φ_X)` nodes.
#[derive(Debug, Clone)]
pub struct TabulatedProbe {
    pub table: ComplexField2D,
    pub config: CouplingConfig,
}

impl ProbeResponse for TabulatedProbe {
    fn denominator(&self, s: Pair) -> Result<C64> {
        let phi = self.config.apply_inverse(s);
        self.table
            .at(phi[0], phi[1])
            .ok_or_else(|| QstError::OutOfSpan(format!("probe table has no node at phi = ({}, {})", phi[0], phi[1])))
    }

    fn config(&self) -> &CouplingConfig {
        &self.config
    }
}

/// Nodes of an `(x, k)` grid where `|M_i(Vs, Λα_ε s)| ≥ floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorRegion {
    pub axes: [AxisGrid; 2],
    pub mask: Vec<bool>,
    pub covered_fraction: f64,
}

impl FloorRegion {
    pub fn is_covered(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.axes[1].n() + j]
    }

    /// Covered fraction of the nodes inside the box `|x|, |k| ≤ roi`.
    pub fn fraction_within(&self, roi: f64) -> f64 {
        let [a, b] = self.axes;
        let (mut inside, mut covered) = (0usize, 0usize);
        for i in 0..a.n() {
            if a.point(i).abs() > roi {
                continue;
            }
            for j in 0..b.n() {
                if b.point(j).abs() <= roi {
                    inside += 1;
                    covered += self.is_covered(i, j) as usize;
                }
            }
        }
        if inside == 0 {
            0.0
        } else {
            covered as f64 / inside as f64
        }
    }
}

pub fn mqc_floor_region(response: &dyn ProbeResponse, axes: [AxisGrid; 2], floor: f64) -> Result<FloorRegion> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(QstError::InvalidParameter(format!("floor must be positive, got {floor}")));
    }
    let mut mask = Vec::with_capacity(axes[0].n() * axes[1].n());
    for x in axes[0].points() {
        for k in axes[1].points() {
            mask.push(response.denominator([x, k])?.norm() >= floor);
        }
    }
    let covered_fraction = mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64;
    Ok(FloorRegion { axes, mask, covered_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Pair, b: Pair) -> bool {
        (a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15
    }

    #[test]
    fn order_matrices() {
        assert_eq!(order_matrix(MeasurementOrder::Plus), [[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(order_matrix(MeasurementOrder::Minus), [[0.0, -1.0], [0.0, 0.0]]);
        assert_eq!(order_matrix(MeasurementOrder::Zero), [[0.0, -0.5], [0.5, 0.0]]);
        let (p, m, z) = (order_matrix(MeasurementOrder::Plus), order_matrix(MeasurementOrder::Minus), order_matrix(MeasurementOrder::Zero));
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(z[a][b], (p[a][b] + m[a][b]) / 2.0);
            }
        }
    }

    #[test]
    fn gaussian_mqc_examples() {
        let p = GaussianProbePair::new(1.0, 0.3, 0.5, 0.2).unwrap();
        assert_eq!(gaussian_mqc(&p, [0.0, 0.0], [0.0, 0.0]), C64::new(1.0, 0.0));
        assert!((gaussian_mqc(&p, [1.0, 0.0], [0.0, 0.0]).re - (-0.5f64).exp()).abs() < 1e-15);
        let q = GaussianProbePair::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((gaussian_mqc(&q, [0.0, 0.0], [0.0, 1.0]).re - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn probe_density_at_origin() {
        let p = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let v = gaussian_probe_density(&p, [0.0, 0.0], [0.0, 0.0]);
        assert!((v.re - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_bound_enforced() {
        assert!(GaussianProbePair::new(1.0, 1.0, 2.0, 2.0).is_ok());
        assert!(GaussianProbePair::new(1.0, 1.0, 2.1, 1.0).is_err());
        assert!(GaussianProbePair::new(1.0, 0.4, 1.0, 0.9).is_err());
        assert!(GaussianProbePair::new(0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn probe_argument_examples() {
        let unit = CouplingConfig::unit();
        assert!(close(probe_argument(&unit, MeasurementOrder::Plus, [2.0, 3.0]), [0.0, 2.0]));
        assert!(close(probe_argument(&unit, MeasurementOrder::Minus, [2.0, 3.0]), [-3.0, 0.0]));
        let c = CouplingConfig::new(2.0, 1.0).unwrap();
        assert!(close(probe_argument(&c, MeasurementOrder::Zero, [2.0, 3.0]), [-3.0, 1.0]));
    }

    #[test]
    fn floor_region_generous_grid() {
        let model = ProbeModel::gaussian(GaussianProbePair::symmetric(1.0, 1.0).unwrap(), CouplingConfig::unit(), MeasurementOrder::Plus);
        let a = AxisGrid::from_half_span(64, 8.0).unwrap();
        let r = mqc_floor_region(&model, [a, a], DEFAULT_FLOOR).unwrap();
        let z = a.zero_index().unwrap();
        assert!(r.is_covered(z, z));
        assert!(!r.is_covered(0, 0) && !r.is_covered(63, 63));
        assert!(r.covered_fraction > 0.0 && r.covered_fraction < 1.0);
        assert!(mqc_floor_region(&model, [a, a], 0.0).is_err());
    }

    #[test]
    fn floor_region_strong_limit_collapses_to_axis() {
        let strong = GaussianProbePair::symmetric(1e-6, 1e-6).unwrap();
        let model = ProbeModel::gaussian(strong, CouplingConfig::unit(), MeasurementOrder::Plus);
        let a = AxisGrid::from_half_span(64, 8.0).unwrap();
        let r = mqc_floor_region(&model, [a, a], DEFAULT_FLOOR).unwrap();
        let z = a.zero_index().unwrap();
        // ε=+: only x = 0 (φ_K = 0) survives
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(r.is_covered(i, j), i == z);
            }
        }
        assert!((r.covered_fraction - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn order_parses() {
        assert_eq!("plus".parse::<MeasurementOrder>().unwrap(), MeasurementOrder::Plus);
        assert_eq!("-".parse::<MeasurementOrder>().unwrap(), MeasurementOrder::Minus);
        assert_eq!("joint".parse::<MeasurementOrder>().unwrap(), MeasurementOrder::Zero);
        assert!("sideways".parse::<MeasurementOrder>().is_err());
    }
}
