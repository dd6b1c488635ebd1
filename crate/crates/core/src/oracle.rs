//! Brute-force simulation of the two impulsive probe couplings on small
//! grids, used to cross-check the analytic forward model.
//!
//! The joint state after the couplings is kept in factored form: for every
//! probe coordinate pair `Φ = (Φ_K, Φ_X)` the system unitary
//! `U(Φ) = e^{iλ_XΦ_X X̂}`, `e^{iλ_KΦ_K K̂}` products is a monomial matrix
//! (a cyclic grid shift times a diagonal phase), so any element of
//! `R(Φ, X; Φ', X')` is a single product. Contraction order: the system
//! index is traced first, giving the probe-only tensor `ρ̌(Φ; Φ')` of size
//! `n_K² n_X²`; probe pairs are then summed along fixed differences
//! `φ = Φ - Φ'` to give `Z_f(φ)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{QstError, Result};
use crate::forward::JointProbabilityGrid;
use crate::grid::{AxisGrid, ComplexField2D, C64};
use crate::probes::{CouplingConfig, GaussianProbePair, MeasurementOrder, Pair};
use crate::states::DensityMatrix;

/// Largest grid the oracle accepts on any axis.
pub const ORACLE_MAX_POINTS: usize = 64;

const COMMENSURATE_TOL: f64 = 1e-9;

/// One probe in the conjugate (Φ) representation, or no probe at all.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeChannel {
    /// Uncoupled: equivalent to a Φ grid holding the single point 0.
    Inactive,
    Active {
        axis: AxisGrid,
        density: DMatrix<C64>,
    },
}

impl ProbeChannel {
    /// Tabulates `ρ̌(Φ, Φ')` on `axis`, rescaled to unit discrete trace.
    pub fn tabulate(axis: AxisGrid, f: impl Fn(f64, f64) -> C64) -> Result<Self> {
        guard_size("probe", axis.n())?;
        let mut density = DMatrix::from_fn(axis.n(), axis.n(), |i, j| f(axis.point(i), axis.point(j)));
        let trace: C64 = density.diagonal().iter().sum::<C64>() * axis.spacing();
        if !(trace.re > 0.0) || trace.im.abs() > 1e-9 * trace.re {
            return Err(QstError::NotPhysical(format!("probe density has trace {trace}")));
        }
        if density.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(QstError::NonFinite("probe density".into()));
        }
        density /= C64::new(trace.re, 0.0);
        Ok(Self::Active { axis, density })
    }

    /// Gaussian probe `index` (0 = K, 1 = X) of `probe`.
    pub fn gaussian(probe: &GaussianProbePair, index: usize, axis: AxisGrid) -> Result<Self> {
        Self::tabulate(axis, |a, b| probe.conjugate_density(index, a, b))
    }

    fn len(&self) -> usize {
        match self {
            Self::Inactive => 1,
            Self::Active { axis, .. } => axis.n(),
        }
    }

    fn point(&self, i: usize) -> f64 {
        match self {
            Self::Inactive => 0.0,
            Self::Active { axis, .. } => axis.point(i),
        }
    }

    fn weight(&self) -> f64 {
        match self {
            Self::Inactive => 1.0,
            Self::Active { axis, .. } => axis.spacing(),
        }
    }

    fn value(&self, i: usize, j: usize) -> C64 {
        match self {
            Self::Inactive => C64::new(1.0, 0.0),
            Self::Active { density, .. } => density[(i, j)],
        }
    }

    pub fn axis(&self) -> Option<&AxisGrid> {
        match self {
            Self::Inactive => None,
            Self::Active { axis, .. } => Some(axis),
        }
    }

    /// Axis of differences `Φ - Φ'` (`2n - 1` points).
    fn difference_axis(&self) -> Option<AxisGrid> {
        self.axis().map(|a| AxisGrid::new(2 * a.n() - 1, a.spacing(), -((a.n() - 1) as f64) * a.spacing()).expect("valid axis"))
    }
}

fn guard_size(what: &str, n: usize) -> Result<()> {
    if n > ORACLE_MAX_POINTS {
        return Err(QstError::GridTooLarge(format!("{what} axis has {n} points, limit {ORACLE_MAX_POINTS}")));
    }
    Ok(())
}

/// `(Uψ)[i] = phase[i] ψ[perm[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub perm: Vec<usize>,
    pub phase: Vec<C64>,
}

impl Monomial {
    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), phase: vec![C64::new(1.0, 0.0); n] }
    }

    /// `e^{iaK̂}` on a grid: `ψ(X) ↦ ψ(X + a)` with `a = steps·h`, cyclic.
    pub fn shift(n: usize, steps: i64) -> Self {
        let n_i = n as i64;
        Self { perm: (0..n_i).map(|i| (i + steps).rem_euclid(n_i) as usize).collect(), phase: vec![C64::new(1.0, 0.0); n] }
    }

    /// `e^{iqX̂}`.
    pub fn position_phase(axis: &AxisGrid, q: f64) -> Self {
        Self { perm: (0..axis.n()).collect(), phase: axis.points().map(|x| C64::from_polar(1.0, q * x)).collect() }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn after(&self, inner: &Monomial) -> Monomial {
        Monomial {
            perm: self.perm.iter().map(|&p| inner.perm[p]).collect(),
            phase: self.phase.iter().zip(&self.perm).map(|(ph, &p)| ph * inner.phase[p]).collect(),
        }
    }

    pub fn scaled(mut self, c: C64) -> Monomial {
        self.phase.iter_mut().for_each(|p| *p *= c);
        self
    }

    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        self.perm.iter().zip(&self.phase).map(|(&p, ph)| ph * psi[p]).collect()
    }

    pub fn is_unitary(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        self.perm.iter().all(|&p| !std::mem::replace(&mut seen[p], true)) && self.phase.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12)
    }
}

/// System unitary for probe coordinates `(Φ_K, Φ_X)`.
///
/// `ε=−`: K coupling first, `e^{iλ_XΦ_X X̂} e^{iλ_KΦ_K K̂}`; `ε=+` swaps the
/// two factors; `ε=0` is `e^{i(λ_KΦ_K K̂ + λ_XΦ_X X̂)}`, split exactly as
/// `e^{iλ_XΦ_X X̂} e^{iλ_KΦ_K K̂} e^{iλ_Kλ_XΦ_KΦ_X/2}`.
pub fn coupling_unitary(system: &AxisGrid, config: &CouplingConfig, order: MeasurementOrder, phi: Pair, shift_steps: i64) -> Monomial {
    let shift = Monomial::shift(system.n(), shift_steps);
    let phase = Monomial::position_phase(system, config.lambda_x() * phi[1]);
    match order {
        MeasurementOrder::Minus => phase.after(&shift),
        MeasurementOrder::Plus => shift.after(&phase),
        MeasurementOrder::Zero => {
            phase.after(&shift).scaled(C64::from_polar(1.0, 0.5 * config.lambda_k() * config.lambda_x() * phi[0] * phi[1]))
        }
    }
}

/// System plus both probes after the couplings, `R(Φ, X; Φ', X')`, stored
/// as its factors.
#[derive(Debug, Clone)]
pub struct JointState {
    system: DensityMatrix,
    probes: [ProbeChannel; 2],
    /// Row-major over `(Φ_K index, Φ_X index)`.
    unitaries: Vec<Monomial>,
}

/// Applies both couplings to `ρ_S ⊗ ρ̌_K ⊗ ρ̌_X`.
pub fn evolve_sequential(
    rho_s: &DensityMatrix,
    probes: [ProbeChannel; 2],
    config: &CouplingConfig,
    order: MeasurementOrder,
) -> Result<JointState> {
    let sys = *rho_s.axis();
    guard_size("system", sys.n())?;
    let h = sys.spacing();
    let steps_of = |phi_k: f64| -> Result<i64> {
        let steps = config.lambda_k() * phi_k / h;
        let r = steps.round();
        if (steps - r).abs() > COMMENSURATE_TOL * steps.abs().max(1.0) {
            return Err(QstError::ShiftNotOnGrid(format!(
                "lambda_K * Phi_K = {} is not a multiple of the system spacing {h}",
                config.lambda_k() * phi_k
            )));
        }
        Ok(r as i64)
    };
    let (nk, nx) = (probes[0].len(), probes[1].len());
    let mut unitaries = Vec::with_capacity(nk * nx);
    for a in 0..nk {
        let phi_k = probes[0].point(a);
        let steps = steps_of(phi_k)?;
        for b in 0..nx {
            unitaries.push(coupling_unitary(&sys, config, order, [phi_k, probes[1].point(b)], steps));
        }
    }
    Ok(JointState { system: rho_s.clone(), probes, unitaries })
}

impl JointState {
    pub fn system(&self) -> &DensityMatrix {
        &self.system
    }

    pub fn probes(&self) -> &[ProbeChannel; 2] {
        &self.probes
    }

    /// Probe index grid sizes `(n_K, n_X)`.
    pub fn probe_shape(&self) -> (usize, usize) {
        (self.probes[0].len(), self.probes[1].len())
    }

    fn unitary(&self, a: usize, b: usize) -> &Monomial {
        &self.unitaries[a * self.probes[1].len() + b]
    }

    /// `R(Φ, X; Φ', X')` at index tuples `(a_K, a_X, i)` and `(b_K, b_X, i')`.
    pub fn element(&self, ket: (usize, usize, usize), bra: (usize, usize, usize)) -> C64 {
        let u = self.unitary(ket.0, ket.1);
        let v = self.unitary(bra.0, bra.1);
        let probe = self.probes[0].value(ket.0, bra.0) * self.probes[1].value(ket.1, bra.1);
        probe * u.phase[ket.2] * v.phase[bra.2].conj() * self.system.get(u.perm[ket.2], v.perm[bra.2])
    }

    /// `Tr R` with the grid measures.
    pub fn trace(&self) -> C64 {
        let (nk, nx) = self.probe_shape();
        let w = self.probes[0].weight() * self.probes[1].weight() * self.system.axis().spacing();
        let mut t = C64::new(0.0, 0.0);
        for a in 0..nk {
            for b in 0..nx {
                for i in 0..self.system.n() {
                    t += self.element((a, b, i), (a, b, i));
                }
            }
        }
        t * w
    }

    /// Probe-only tensor `ρ̌(Φ; Φ') = ∫dX R(Φ, X; Φ', X)`, indexed
    /// `[((a_K·n_X + a_X)·n_K + b_K)·n_X + b_X]`.
    pub fn reduced_probe(&self) -> Vec<C64> {
        let (nk, nx) = self.probe_shape();
        let m = nk * nx;
        let h = self.system.axis().spacing();
        let n = self.system.n();
        let mut out = vec![C64::new(0.0, 0.0); m * m];
        out.par_chunks_mut(m).enumerate().for_each(|(ket, row)| {
            let (ak, ax) = (ket / nx, ket % nx);
            let u = self.unitary(ak, ax);
            for (bra, slot) in row.iter_mut().enumerate() {
                let (bk, bx) = (bra / nx, bra % nx);
                let v = self.unitary(bk, bx);
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    acc += u.phase[i] * v.phase[i].conj() * self.system.get(u.perm[i], v.perm[i]);
                }
                *slot = acc * h * self.probes[0].value(ak, bk) * self.probes[1].value(ax, bx);
            }
        });
        out
    }

    /// Reduced system state after the couplings (probes traced out).
    pub fn reduced_system(&self) -> DensityMatrix {
        let (nk, nx) = self.probe_shape();
        let n = self.system.n();
        let w = self.probes[0].weight() * self.probes[1].weight();
        let mut m = DMatrix::<C64>::zeros(n, n);
        for a in 0..nk {
            for b in 0..nx {
                let p = self.probes[0].value(a, a) * self.probes[1].value(b, b) * w;
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] += p * self.element_system_only(a, b, i, j);
                    }
                }
            }
        }
        DensityMatrix::from_raw(*self.system.axis(), m).expect("unitary image of a valid state")
    }

    fn element_system_only(&self, a: usize, b: usize, i: usize, j: usize) -> C64 {
        let u = self.unitary(a, b);
        u.phase[i] * u.phase[j].conj() * self.system.get(u.perm[i], u.perm[j])
    }
}

/// `Z_f` from the oracle on the grid of probe-coordinate differences.
/// Both probes must be active.
pub fn oracle_char_function(state: &JointState) -> Result<ComplexField2D> {
    let (ak, ax) = match (state.probes[0].difference_axis(), state.probes[1].difference_axis()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(QstError::InvalidParameter("a 2D characteristic grid needs both probes active".into())),
    };
    let (nk, nx) = state.probe_shape();
    let red = state.reduced_probe();
    let w = state.probes[0].weight() * state.probes[1].weight();
    let mut z = ComplexField2D::zeros([ak, ax]);
    for a in 0..nk {
        for b in 0..nx {
            let row = (a * nx + b) * nk * nx;
            for c in 0..nk {
                for d in 0..nx {
                    let (i, j) = (a + nk - 1 - c, b + nx - 1 - d);
                    let v = z.get(i, j) + red[row + c * nx + d] * w;
                    z.set(i, j, v);
                }
            }
        }
    }
    Ok(z)
}

/// Pointwise `Z_f(φ)`; `φ` components of inactive probes must be 0.
pub fn oracle_z(state: &JointState, phi: Pair) -> Result<C64> {
    oracle_joint_mqc(state, [0.0, 0.0], phi, [0.0, 0.0])
}

fn difference_pairs(ch: &ProbeChannel, phi: f64) -> Result<Vec<(usize, usize)>> {
    match ch {
        ProbeChannel::Inactive => {
            if phi.abs() > 1e-12 {
                return Err(QstError::OutOfSpan(format!("phi = {phi} on an inactive probe")));
            }
            Ok(vec![(0, 0)])
        }
        ProbeChannel::Active { axis, .. } => {
            let m = phi / axis.spacing();
            let mr = m.round();
            if (m - mr).abs() > 1e-7 || mr.abs() >= axis.n() as f64 {
                return Err(QstError::OutOfSpan(format!("phi = {phi} is not a probe-grid difference")));
            }
            let m = mr as i64;
            Ok((0..axis.n() as i64)
                .filter_map(|i| {
                    let j = i - m;
                    (0..axis.n() as i64).contains(&j).then_some((i as usize, j as usize))
                })
                .collect())
        }
    }
}

/// Joint Moyal function of system and probes,
/// `Tr[R e^{i(xK̂ + kX̂)} e^{i(φ·Ĵ + j·Φ̂)}]`, by direct summation.
/// `x` must be a multiple of the system spacing and `φ` a probe-grid
/// difference.
pub fn oracle_joint_mqc(state: &JointState, s: Pair, phi: Pair, j: Pair) -> Result<C64> {
    let sys = state.system.axis();
    let h = sys.spacing();
    let mx = s[0] / h;
    let mr = mx.round();
    if (mx - mr).abs() > 1e-7 || mr.abs() >= sys.n() as f64 {
        return Err(QstError::OutOfSpan(format!("x = {} is not a system-grid difference", s[0])));
    }
    let m = mr as i64;
    let sys_pairs: Vec<(usize, usize, f64)> = (0..sys.n() as i64)
        .filter_map(|i| {
            let ip = i - m;
            (0..sys.n() as i64).contains(&ip).then(|| (i as usize, ip as usize, 0.5 * (sys.point(i as usize) + sys.point(ip as usize))))
        })
        .collect();
    let pk = difference_pairs(&state.probes[0], phi[0])?;
    let px = difference_pairs(&state.probes[1], phi[1])?;
    let w = state.probes[0].weight() * state.probes[1].weight() * h;
    let mut acc = C64::new(0.0, 0.0);
    for &(a, c) in &pk {
        let mean_k = 0.5 * (state.probes[0].point(a) + state.probes[0].point(c));
        for &(b, d) in &px {
            let mean_x = 0.5 * (state.probes[1].point(b) + state.probes[1].point(d));
            let probe_phase = C64::from_polar(1.0, j[0] * mean_k + j[1] * mean_x);
            let mut inner = C64::new(0.0, 0.0);
            for &(i, ip, xc) in &sys_pairs {
                inner += C64::from_polar(1.0, s[1] * xc) * state.element((a, b, i), (c, d, ip));
            }
            acc += probe_phase * inner;
        }
    }
    Ok(acc * w)
}

/// Default readout axes: `2n` points spanning one period `2π/dΦ`.
pub fn default_readout_axes(state: &JointState) -> Result<[AxisGrid; 2]> {
    let make = |ch: &ProbeChannel| -> Result<AxisGrid> {
        let a = ch.axis().ok_or_else(|| QstError::InvalidParameter("readout grid needs both probes active".into()))?;
        AxisGrid::centered(2 * a.n(), PI / (a.n() as f64 * a.spacing()))
    };
    Ok([make(&state.probes[0])?, make(&state.probes[1])?])
}

/// `Π_f(J) = ∫dφ/(2π)² e^{-iJ·φ} Z_f(φ)` from the oracle, evaluated directly
/// on `axes` (default: [`default_readout_axes`]).
pub fn oracle_joint_prob(state: &JointState, axes: Option<[AxisGrid; 2]>) -> Result<JointProbabilityGrid> {
    let axes = match axes {
        Some(a) => a,
        None => default_readout_axes(state)?,
    };
    let z = oracle_char_function(state)?;
    let [fk, fx] = *z.axes();
    let w = fk.spacing() * fx.spacing() / (4.0 * PI * PI);
    // separable sum: first over φ_X, then φ_K
    let ex: Vec<Vec<C64>> = axes[1].points().map(|jx| fx.points().map(|p| C64::from_polar(1.0, -jx * p)).collect()).collect();
    let ek: Vec<Vec<C64>> = axes[0].points().map(|jk| fk.points().map(|p| C64::from_polar(1.0, -jk * p)).collect()).collect();
    let partial: Vec<Vec<C64>> = (0..fk.n()).map(|i| ex.iter().map(|e| (0..fx.n()).map(|j| e[j] * z.get(i, j)).sum()).collect()).collect();
    let mut raw = Vec::with_capacity(axes[0].n() * axes[1].n());
    let mut peak = 0.0f64;
    for e in &ek {
        for l in 0..axes[1].n() {
            let v: C64 = e.iter().zip(&partial).map(|(ei, row)| ei * row[l]).sum::<C64>() * w;
            peak = peak.max(v.re);
            raw.push(v);
        }
    }
    let mut clip = 0.0;
    let mut min = 0.0f64;
    let values: Vec<f64> = raw
        .iter()
        .map(|v| {
            min = min.min(v.re);
            if v.re < 0.0 {
                clip -= v.re;
                0.0
            } else {
                v.re
            }
        })
        .collect();
    if min < -1e-9 * peak {
        log::warn!("oracle readout density dips to {min:.3e} (peak {peak:.3e})");
    }
    let mut grid = JointProbabilityGrid::new(axes, values)?;
    grid.clip_total = clip * grid.cell_area();
    grid.max_violation = min;
    Ok(grid)
}

/// Largest `|Z_oracle − Z_analytic|` for a unit-width Gaussian system and
/// unit Gaussian probes (`Δ = κ = λ = 1`) on `n_probe`-point probe grids.
/// The system grid is 64 points at spacing 0.375.
pub fn oracle_equivalence(n_probe: usize, order: MeasurementOrder) -> Result<f64> {
    let sys = AxisGrid::centered(64, 0.375)?;
    let rho = crate::states::build_state(&crate::states::StateSpec::gaussian(1.0), &sys)?;
    let probe = GaussianProbePair::symmetric(1.0, 1.0)?;
    let pa = AxisGrid::centered(n_probe, 12.0 / n_probe as f64)?;
    let chans = [ProbeChannel::gaussian(&probe, 0, pa)?, ProbeChannel::gaussian(&probe, 1, pa)?];
    let state = evolve_sequential(&rho, chans, &CouplingConfig::unit(), order)?;
    let z = oracle_char_function(&state)?;
    let model = crate::probes::ProbeModel::gaussian(probe, CouplingConfig::unit(), order);
    // M_S of the unit Gaussian: exp(-x²/8 - k²/2)
    let want = ComplexField2D::from_fn(*z.axes(), |a, b| C64::new((-a * a / 8.0 - b * b / 2.0).exp(), 0.0) * model.char_factor([a, b]))?;
    Ok(z.max_abs_diff(&want))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{joint_mqc, AnalyticMoyal, MoyalFn};
    use crate::probes::ProbeMqc;
    use crate::states::{build_state, StateSpec};

    fn gaussian_moyal(s: Pair) -> C64 {
        C64::new((-s[0] * s[0] / 8.0 - s[1] * s[1] / 2.0).exp(), 0.0)
    }

    fn setup(n_probe: usize, order: MeasurementOrder) -> (JointState, GaussianProbePair) {
        let sys = AxisGrid::centered(64, 0.375).unwrap();
        let rho = build_state(&StateSpec::gaussian(1.0), &sys).unwrap();
        let probe = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let dphi = 12.0 / n_probe as f64;
        let pa = AxisGrid::centered(n_probe, dphi).unwrap();
        let chans = [ProbeChannel::gaussian(&probe, 0, pa).unwrap(), ProbeChannel::gaussian(&probe, 1, pa).unwrap()];
        (evolve_sequential(&rho, chans, &CouplingConfig::unit(), order).unwrap(), probe)
    }

    #[test]
    fn monomials_compose_and_stay_unitary() {
        let ax = AxisGrid::centered(8, 0.5).unwrap();
        let u = Monomial::position_phase(&ax, 0.7).after(&Monomial::shift(8, 3));
        assert!(u.is_unitary());
        let psi: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0)).collect();
        let direct = Monomial::position_phase(&ax, 0.7).apply(&Monomial::shift(8, 3).apply(&psi));
        assert_eq!(u.apply(&psi), direct);
    }

    #[test]
    fn plus_swaps_the_factors_of_minus() {
        let sys = AxisGrid::centered(16, 0.5).unwrap();
        let cfg = CouplingConfig::unit();
        let phi = [1.0, -0.75];
        let shift = Monomial::shift(16, 2);
        let phase = Monomial::position_phase(&sys, -0.75);
        assert_eq!(coupling_unitary(&sys, &cfg, MeasurementOrder::Minus, phi, 2), phase.after(&shift));
        assert_eq!(coupling_unitary(&sys, &cfg, MeasurementOrder::Plus, phi, 2), shift.after(&phase));
    }

    #[test]
    fn trace_is_preserved() {
        for order in MeasurementOrder::ALL {
            let (state, _) = setup(16, order);
            assert!((state.trace() - 1.0).norm() < 1e-10);
            let red = state.reduced_system();
            assert!((red.trace() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn joint_state_is_hermitian() {
        let (state, _) = setup(16, MeasurementOrder::Plus);
        for (ket, bra) in [((1, 4, 7), (9, 2, 30)), ((0, 0, 0), (15, 15, 63)), ((5, 8, 31), (5, 8, 31))] {
            assert!((state.element(ket, bra) - state.element(bra, ket).conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn origin_is_normalised() {
        let (state, _) = setup(16, MeasurementOrder::Minus);
        assert!((oracle_z(&state, [0.0, 0.0]).unwrap() - 1.0).norm() < 1e-8);
    }

    #[test]
    fn matches_analytic_char_function() {
        for order in MeasurementOrder::ALL {
            let d = oracle_equivalence(16, order).unwrap();
            assert!(d < 1e-6, "{order}: {d}");
        }
    }

    #[test]
    fn joint_mqc_matches_forward() {
        let ms = AnalyticMoyal(gaussian_moyal);
        let cfg = CouplingConfig::unit();
        for order in MeasurementOrder::ALL {
            let (state, probe) = setup(16, order);
            for (s, phi, j) in
                [([0.0, 0.0], [0.0, 0.0], [0.0, 0.0]), ([0.75, -0.4], [0.75, 1.5], [0.3, -0.2]), ([-1.125, 0.9], [-1.5, 0.0], [-0.5, 0.8])]
            {
                let a = oracle_joint_mqc(&state, s, phi, j).unwrap();
                let b = joint_mqc(&ms, &probe, &cfg, order, s, phi, j).unwrap();
                assert!((a - b).norm() < 1e-6, "{order} {s:?} {phi:?} {j:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn too_large_and_incommensurate_rejected() {
        let sys = AxisGrid::centered(128, 0.15).unwrap();
        let rho = build_state(&StateSpec::gaussian(1.0), &sys).unwrap();
        let cfg = CouplingConfig::unit();
        let r = evolve_sequential(&rho, [ProbeChannel::Inactive, ProbeChannel::Inactive], &cfg, MeasurementOrder::Plus);
        assert!(matches!(r, Err(QstError::GridTooLarge(_))));
        let sys = AxisGrid::centered(64, 0.375).unwrap();
        let rho = build_state(&StateSpec::gaussian(1.0), &sys).unwrap();
        let probe = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let pa = AxisGrid::centered(16, 0.7).unwrap();
        let ch = [ProbeChannel::gaussian(&probe, 0, pa).unwrap(), ProbeChannel::Inactive];
        assert!(matches!(evolve_sequential(&rho, ch, &cfg, MeasurementOrder::Plus), Err(QstError::ShiftNotOnGrid(_))));
    }

    #[test]
    fn no_coupling_leaves_system_unchanged() {
        let sys = AxisGrid::centered(48, 0.375).unwrap();
        let rho = build_state(&StateSpec::gaussian(1.0), &sys).unwrap();
        let st =
            evolve_sequential(&rho, [ProbeChannel::Inactive, ProbeChannel::Inactive], &CouplingConfig::unit(), MeasurementOrder::Minus)
                .unwrap();
        assert!((st.reduced_system().matrix() - rho.matrix()).norm() < 1e-15);
    }

    /// With only the X probe, the readout-basis joint state factorises as
    /// `ρ_S(X, X') ρ_i(J - λX, J' - λX')`.
    #[test]
    fn single_probe_factorisation() {
        let sys = AxisGrid::centered(32, 0.375).unwrap();
        let rho = build_state(&StateSpec::gaussian(0.5), &sys).unwrap();
        let probe = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let pa = AxisGrid::centered(32, 0.375).unwrap();
        let lam = 0.75;
        let cfg = CouplingConfig::new(1.0, lam).unwrap();
        let st = evolve_sequential(
            &rho,
            [ProbeChannel::Inactive, ProbeChannel::gaussian(&probe, 1, pa).unwrap()],
            &cfg,
            MeasurementOrder::Minus,
        )
        .unwrap();
        let rho_i = |j: f64, jp: f64| {
            let (m, d) = (0.5 * (j + jp), j - jp);
            (-m * m / 2.0 - d * d / 2.0).exp() / (2.0 * PI).sqrt()
        };
        let dphi = pa.spacing();
        for (jv, jp, i, ip) in [(0.3, -0.2, 14, 17), (1.0, 0.5, 16, 16), (-0.7, 0.9, 12, 19)] {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..pa.n() {
                for b in 0..pa.n() {
                    let ph = C64::from_polar(1.0, -jv * pa.point(a) + jp * pa.point(b));
                    acc += ph * st.element((0, a, i), (0, b, ip));
                }
            }
            acc *= dphi * dphi / (2.0 * PI);
            let want = rho.get(i, ip) * rho_i(jv - lam * sys.point(i), jp - lam * sys.point(ip));
            assert!((acc - want).norm() < 1e-6, "{acc} vs {want}");
        }
    }

    /// A probe displaced in Φ tells `j + λx` from `j - λx` in the
    /// single-probe joint Moyal function.
    #[test]
    fn single_probe_sign_convention() {
        let sys = AxisGrid::centered(64, 0.375).unwrap();
        let rho = build_state(&StateSpec::gaussian(1.0), &sys).unwrap();
        let probe = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let shift = 0.75;
        let pa = AxisGrid::centered(32, 0.375).unwrap();
        let ch = ProbeChannel::tabulate(pa, |a, b| probe.conjugate_density(1, a - shift, b - shift)).unwrap();
        let st = evolve_sequential(&rho, [ProbeChannel::Inactive, ch], &CouplingConfig::unit(), MeasurementOrder::Minus).unwrap();
        let mi = |phi: f64, j: f64| probe.mqc([0.0, phi], [0.0, j]) * C64::from_polar(1.0, j * shift);
        let (x, k, phi, j) = (1.125, 0.4, 0.75, 0.3);
        let got = oracle_joint_mqc(&st, [x, k], [0.0, phi], [0.0, j]).unwrap();
        let plus = gaussian_moyal([x, k + phi]) * mi(phi, j + x);
        let minus = gaussian_moyal([x, k + phi]) * mi(phi, j - x);
        assert!((got - plus).norm() < 1e-6, "{got} vs {plus}");
        assert!((got - minus).norm() > 1e-2);
    }

    #[test]
    fn readout_centred_on_displaced_position() {
        let sys = AxisGrid::centered(64, 0.375).unwrap();
        let spec = StateSpec::GaussianPure { x0: 1.5, k0: 0.0, sigma: 0.5 };
        let rho = build_state(&spec, &sys).unwrap();
        let probe = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let pa = AxisGrid::centered(32, 0.375).unwrap();
        let lam = 1.5;
        let cfg = CouplingConfig::new(1.0, lam).unwrap();
        let ch = [
            ProbeChannel::gaussian(&probe, 0, AxisGrid::centered(32, 0.375).unwrap()).unwrap(),
            ProbeChannel::gaussian(&probe, 1, pa).unwrap(),
        ];
        let st = evolve_sequential(&rho, ch, &cfg, MeasurementOrder::Minus).unwrap();
        // Gaussian readout: arg Z is linear in φ_X with slope the mean
        let dphi = pa.spacing();
        let z = oracle_z(&st, [0.0, dphi]).unwrap();
        assert!((z.arg() / dphi - lam * 1.5).abs() < 1e-6, "{z}");
    }

    #[test]
    fn oracle_prob_matches_forward_path() {
        use crate::forward::{char_function, joint_prob};
        use crate::probes::ProbeModel;
        use crate::states::moyal_from_density;
        let (state, probe) = setup(32, MeasurementOrder::Minus);
        let ax = AxisGrid::from_half_span(64, 8.5).unwrap();
        let dm = build_state(&StateSpec::gaussian(1.0), &ax).unwrap();
        let z = char_function(
            &moyal_from_density(&dm),
            &ax,
            &ProbeModel::gaussian(probe, CouplingConfig::unit(), MeasurementOrder::Minus),
            None,
        )
        .unwrap();
        let fwd = joint_prob(&z).unwrap();
        let orc = oracle_joint_prob(&state, Some(*fwd.axes())).unwrap();
        // oracle readouts are periodic in J with period 2π/dΦ ≈ 16.8; compare away from the wrap
        let [jk, jx] = *fwd.axes();
        let mut d = 0.0f64;
        for i in 0..jk.n() {
            for j in 0..jx.n() {
                if jk.point(i).abs() <= 6.0 && jx.point(j).abs() <= 6.0 {
                    d = d.max((fwd.get(i, j) - orc.get(i, j)).abs());
                }
            }
        }
        assert!(d < 1e-6, "{d}");
        let _ = MoyalFn::moyal(&dm, [0.0, 0.0]);
    }
}
