//! Reconstruction: divide the readout characteristic function by the known
//! probe factor to recover `M_S`, then transform to `ρ` and `W`.

use std::f64::consts::PI;

use log::{debug, info};
use nalgebra::DMatrix;

use crate::error::{QstError, Result};
use crate::forward::CharacteristicGrid;
use crate::grid::{cft_1d, cft_inverse_onto, dual_axis, AxisGrid, ComplexField2D, Sign, C64};
use crate::probes::{mqc_floor_region, CouplingConfig, GaussianProbePair, MeasurementOrder, Pair, ProbeResponse};
use crate::sampling::EmpiricalChar;
use crate::states::{
    density_from_moyal_onto, hermitian_eigen, hermitize, real_part_checked, wigner_from_moyal_onto, DensityMatrix, MoyalGrid, WignerGrid,
};

/// Floor for noise-free characteristic functions: only guards against
/// division by an underflowed probe factor.
pub const EXACT_FLOOR: f64 = 1e-280;

/// Default half-width of the box in which coverage is measured.
pub const DEFAULT_ROI: f64 = 3.0;

/// Minimum covered fraction of the region of interest.
pub const MIN_COVERAGE: f64 = 0.5;

/// Options for [`moyal_reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    /// `|M_i|` threshold below which points are masked (or damped).
    pub floor: f64,
    /// Divide by `max(|M_i|, floor)·phase` everywhere instead of masking.
    pub damped: bool,
    /// Coverage is measured over `|x|, |k| ≤ roi`.
    pub roi: f64,
    pub projection: Projection,
}

/// How negative eigenvalues of the raw estimate are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    /// Clip negatives to zero, then rescale to unit trace.
    #[default]
    Clip,
    /// Subtract a common shift before clipping so the trace stays one.
    /// This is the closest unit-trace PSD matrix in Frobenius norm.
    TraceShift,
}

impl std::str::FromStr for Projection {
    type Err = QstError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clip" => Ok(Self::Clip),
            "trace-shift" | "trace_shift" | "traceshift" => Ok(Self::TraceShift),
            other => Err(QstError::InvalidParameter(format!("unknown projection '{other}'"))),
        }
    }
}

/// Eigenvalues after projection, summing to one.
fn project_spectrum(values: &[f64], projection: Projection) -> Result<Vec<f64>> {
    let positive: f64 = values.iter().map(|l| l.max(0.0)).sum();
    if !(positive > 0.0) {
        return Err(QstError::NotPhysical("reconstruction has no positive part".into()));
    }
    match projection {
        Projection::Clip => Ok(values.iter().map(|l| l.max(0.0) / positive).collect()),
        Projection::TraceShift => {
            // sum(max(l - mu, 0)) is decreasing in mu; pick mu where it hits 1.
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let mut acc = 0.0;
            let mut mu = sorted[0] - 1.0;
            for (i, l) in sorted.iter().enumerate() {
                acc += l;
                let candidate = (acc - 1.0) / (i + 1) as f64;
                if *l > candidate {
                    mu = candidate;
                } else {
                    break;
                }
            }
            Ok(values.iter().map(|l| (l - mu).max(0.0)).collect())
        }
    }
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { floor: crate::probes::DEFAULT_FLOOR, damped: false, roi: DEFAULT_ROI, projection: Projection::Clip }
    }
}

impl ReconstructOptions {
    pub fn exact() -> Self {
        Self { floor: EXACT_FLOOR, ..Self::default() }
    }
}

/// Recovered `M_S` with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MoyalReconstruction {
    pub moyal: MoyalGrid,
    pub mask: Vec<bool>,
    /// Covered fraction inside the region of interest.
    pub covered_fraction: f64,
    /// Covered fraction of the whole grid.
    pub grid_fraction: f64,
    /// `M_S(0,0)` before renormalisation.
    pub origin_raw: C64,
}

/// `M_S(s) = Z_f(Vs) / M_i(Vs, Λα_ε s)` on the Moyal grid for `x_axis`.
///
/// `z` must sit on the Moyal nodes scaled by `V` (see
/// [`crate::forward::default_phi_axes`]). `origin_stderr` is `δZ(0)`, zero
/// for exact data.
pub fn moyal_reconstruct(
    z: &CharacteristicGrid,
    response: &dyn ProbeResponse,
    x_axis: &AxisGrid,
    opts: &ReconstructOptions,
    origin_stderr: f64,
) -> Result<MoyalReconstruction> {
    let maxes = MoyalGrid::axes_for(x_axis);
    let cfg = *response.config();
    let zaxes = *z.axes();
    if !(zaxes[0].scaled(cfg.lambda_k())?.same_nodes(&maxes[0]) && zaxes[1].scaled(cfg.lambda_x())?.same_nodes(&maxes[1])) {
        return Err(QstError::AxisMismatch("characteristic grid is not the Moyal grid scaled by 1/lambda".into()));
    }
    let region = mqc_floor_region(response, maxes, opts.floor)?;
    let covered = region.fraction_within(opts.roi);
    debug!("probe coverage {covered:.4} in ROI, {:.4} of grid", region.covered_fraction);
    if covered < MIN_COVERAGE {
        return Err(QstError::Coverage { covered, required: MIN_COVERAGE });
    }
    let n1 = maxes[1].n();
    // A point whose mirror -s is off the grid cannot be kept Hermitian.
    let paired = |a: &AxisGrid, i: usize| a.node_index(-a.point(i)).is_some();
    let mut mask = if opts.damped { vec![true; region.mask.len()] } else { region.mask.clone() };
    for (idx, m) in mask.iter_mut().enumerate() {
        *m &= paired(&maxes[0], idx / n1) && paired(&maxes[1], idx % n1);
    }
    let mut values = Vec::with_capacity(maxes[0].n() * n1);
    for (idx, zv) in z.field().values().iter().enumerate() {
        let s = [maxes[0].point(idx / n1), maxes[1].point(idx % n1)];
        let d = response.denominator(s)?;
        let v = if !mask[idx] {
            C64::new(0.0, 0.0)
        } else if region.mask[idx] {
            scaled_div(*zv, d)
        } else if d.norm() > 0.0 {
            zv * (d / d.norm()).conj() / opts.floor
        } else {
            C64::new(0.0, 0.0)
        };
        values.push(v);
    }
    let mut field = ComplexField2D::new(maxes, values)?;
    let origin = field.at(0.0, 0.0).ok_or_else(|| QstError::AxisMismatch("Moyal grid lacks the origin".into()))?;
    let tol = (5.0 * origin_stderr).max(1e-9);
    if (origin - 1.0).norm() > tol {
        return Err(QstError::NotPhysical(format!("M_S(0,0) = {origin}, expected 1 within {tol:.2e}")));
    }
    field.scale(C64::new(1.0, 0.0) / origin);
    Ok(MoyalReconstruction {
        moyal: MoyalGrid::new(field),
        mask,
        covered_fraction: covered,
        grid_fraction: region.covered_fraction,
        origin_raw: origin,
    })
}

/// `a / b` without forming `|b|²`, which underflows for tiny divisors.
fn scaled_div(a: C64, b: C64) -> C64 {
    let r = b.norm();
    a * (b / r).conj() / r
}

/// Physical density matrix with the size of the correction that made it so.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReconstruction {
    pub density: DensityMatrix,
    /// Hermitised estimate before positivity projection.
    pub raw: DensityMatrix,
    /// Trace norm of `projected − raw` (operator units).
    pub projection_distance: f64,
    /// Most negative eigenvalue of the raw estimate (0 if none).
    pub min_eigenvalue: f64,
}

/// `ρ(X+x/2, X−x/2) = ∫dk/2π e^{-iXk} M_S(x, k)`, then Hermitised and
/// projected onto unit-trace PSD matrices.
pub fn density_reconstruct(m: &MoyalReconstruction, x_axis: &AxisGrid, projection: Projection) -> Result<DensityReconstruction> {
    check_coverage(m)?;
    let raw = density_from_moyal_onto(&m.moyal, x_axis)?;
    let h = x_axis.spacing();
    let op = hermitize(raw.matrix() * C64::new(h, 0.0));
    let (values, vectors) = hermitian_eigen(&op);
    let min_eigenvalue = values.iter().cloned().fold(0.0, f64::min);
    let spectrum = project_spectrum(values.as_slice(), projection)?;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(spectrum.len(), spectrum.iter().map(|l| C64::new(*l, 0.0))));
    let projected = hermitize(&vectors * d * vectors.adjoint());
    // same eigenvectors, so the trace norm of the change is the spectral L1 shift
    let projection_distance: f64 = values.iter().zip(&spectrum).map(|(a, b)| (a - b).abs()).sum();
    info!("positivity projection moved the estimate by {projection_distance:.3e} (trace norm)");
    let inv_h = C64::new(1.0 / h, 0.0);
    // PSD with unit trace by construction
    let density = DensityMatrix::from_raw(*x_axis, projected * inv_h)?;
    let raw = DensityMatrix::from_raw(*x_axis, op * inv_h)?;
    Ok(DensityReconstruction { density, raw, projection_distance, min_eigenvalue })
}

/// Momentum-basis density `ρ̌(K−k/2, K+k/2) = ∫dx/2π e^{-ixK} M_S(x, k)`
/// on the axis dual to `x_axis`. Entries with `|K'−K|` beyond the Moyal `k`
/// band are zero.
pub fn momentum_density_reconstruct(m: &MoyalReconstruction, x_axis: &AxisGrid) -> Result<ComplexField2D> {
    check_coverage(m)?;
    let kax = dual_axis(x_axis);
    let [xa, ka] = *m.moyal.field().axes();
    let half = dual_axis(&xa);
    if (half.offset() - kax.offset()).abs() > 1e-9 * kax.spacing() || (2.0 * half.spacing() - kax.spacing()).abs() > 1e-9 * kax.spacing() {
        return Err(QstError::AxisMismatch("Moyal x axis is not the difference axis of x_axis".into()));
    }
    let n = kax.n();
    let mut out = ComplexField2D::zeros([kax, kax]);
    let column: Vec<Vec<C64>> = (0..ka.n()).map(|j| (0..xa.n()).map(|i| m.moyal.field().get(i, j)).collect()).collect();
    for (j, col) in column.iter().enumerate() {
        let mdiff = (ka.point(j) / kax.spacing()).round() as i64;
        let t = cft_1d(col, &xa, &half, Sign::Minus, false)?;
        for a in 0..n as i64 {
            let b = a + mdiff;
            if (0..n as i64).contains(&b) {
                out.set(a as usize, b as usize, t[(a + b) as usize] / (2.0 * PI));
            }
        }
    }
    Ok(out)
}

/// `W(K,X) = ∫∫ dk dx/(2π)² e^{-i(Kx+Xk)} M_S(x, k)` with masked points
/// contributing zero.
pub fn wigner_reconstruct(m: &MoyalReconstruction, x_axis: &AxisGrid) -> Result<WignerGrid> {
    check_coverage(m)?;
    wigner_from_moyal_onto(&m.moyal, x_axis)
}

fn check_coverage(m: &MoyalReconstruction) -> Result<()> {
    if m.covered_fraction < MIN_COVERAGE {
        return Err(QstError::Coverage { covered: m.covered_fraction, required: MIN_COVERAGE });
    }
    Ok(())
}

/// Quadratic growth rates `(g_x, g_k)` of `1/M_i(Vs, Λα_ε s) = e^{g_x x² + g_k k²}`
/// for Gaussian probes, with `ε` the numeric order:
/// `g_x = Δ_K²/2λ_K² + λ_X²(1+ε)²/8κ_X²`, `g_k = Δ_X²/2λ_X² + λ_K²(1−ε)²/8κ_K²`.
pub fn gaussian_growth_rates(probe: &GaussianProbePair, config: &CouplingConfig, order: MeasurementOrder) -> Pair {
    let e = order.numeric();
    let [dk, dx] = probe.deltas();
    let [kk, kx] = probe.kappas();
    let (lk, lx) = (config.lambda_k(), config.lambda_x());
    [
        dk * dk / (2.0 * lk * lk) + lx * lx * (1.0 + e).powi(2) / (8.0 * kx * kx),
        dx * dx / (2.0 * lx * lx) + lk * lk * (1.0 - e).powi(2) / (8.0 * kk * kk),
    ]
}

/// Ratio of the integrand's edge magnitude to its peak above which the
/// direct Gaussian kernel is declared divergent.
pub const DIVERGENCE_RATIO: f64 = 1e-6;

/// Wigner function straight from `Z_f` with the explicit Gaussian kernel,
/// `W = ∫∫ dk dx/(2π)² e^{-i(Kx+Xk)} e^{g_x x² + g_k k²} Z_f(Vs)`.
/// The `(x, k)` integral is done last; the integrand must have decayed at
/// the grid edge.
pub fn wigner_gaussian_direct(
    z: &CharacteristicGrid,
    probe: &GaussianProbePair,
    config: &CouplingConfig,
    order: MeasurementOrder,
    x_axis: &AxisGrid,
) -> Result<WignerGrid> {
    let maxes = MoyalGrid::axes_for(x_axis);
    let zaxes = *z.axes();
    if !(zaxes[0].scaled(config.lambda_k())?.same_nodes(&maxes[0]) && zaxes[1].scaled(config.lambda_x())?.same_nodes(&maxes[1])) {
        return Err(QstError::AxisMismatch("characteristic grid is not the Moyal grid scaled by 1/lambda".into()));
    }
    let [gx, gk] = gaussian_growth_rates(probe, config, order);
    let n1 = maxes[1].n();
    let mut values = Vec::with_capacity(z.field().values().len());
    for (idx, zv) in z.field().values().iter().enumerate() {
        let (x, k) = (maxes[0].point(idx / n1), maxes[1].point(idx % n1));
        let growth = gx * x * x + gk * k * k;
        let v = if zv.norm() == 0.0 { C64::new(0.0, 0.0) } else { zv * growth.exp() };
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(QstError::Divergence(format!("kernel overflows at x = {x}, k = {k}")));
        }
        values.push(v);
    }
    let integrand = ComplexField2D::new(maxes, values)?;
    let peak = integrand.max_abs();
    let edge = crate::grid::boundary_ratio(&integrand) * peak;
    if !(edge <= DIVERGENCE_RATIO * peak) {
        return Err(QstError::Divergence(format!("integrand edge/peak = {:.3e} exceeds {DIVERGENCE_RATIO:.0e}", edge / peak)));
    }
    let w = cft_inverse_onto(&integrand, [Sign::Minus, Sign::Minus], [dual_axis(&maxes[0]), *x_axis])?;
    real_part_checked(&w)
}

/// Relative error field on the Moyal grid,
/// `(δ|M_S|/|M_S|)² ≈ (1−|Z|²)/(N|Z|²) + (δM_i/M_i)² + η²`.
/// Masked points and points where `Z` vanishes carry `f64::INFINITY`.
pub fn error_report(emp: &EmpiricalChar, probe_rel_uncertainty: f64, eta: Option<&[f64]>) -> Result<Vec<f64>> {
    let len = emp.z.field().values().len();
    if let Some(e) = eta {
        if e.len() != len {
            return Err(QstError::InvalidParameter("eta field does not match the characteristic grid".into()));
        }
    }
    if !(probe_rel_uncertainty >= 0.0) {
        return Err(QstError::InvalidParameter("probe uncertainty must be non-negative".into()));
    }
    let n = emp.n as f64;
    Ok((0..len)
        .map(|k| {
            if !emp.mask[k] {
                return f64::INFINITY;
            }
            let z2 = emp.z.field().values()[k].norm_sqr();
            if z2 == 0.0 {
                return f64::INFINITY;
            }
            let stat = (1.0 - z2).max(0.0) / (n * z2);
            let eta2 = eta.map_or(0.0, |e| e[k] * e[k]);
            stat + probe_rel_uncertainty * probe_rel_uncertainty + eta2
        })
        .collect())
}

/// Everything recovered from one characteristic function.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub moyal: MoyalReconstruction,
    pub density: DensityReconstruction,
    pub wigner: WignerGrid,
}

/// `M_S`, then `ρ` and `W`, all on `x_axis`.
pub fn reconstruct(
    z: &CharacteristicGrid,
    response: &dyn ProbeResponse,
    x_axis: &AxisGrid,
    opts: &ReconstructOptions,
    origin_stderr: f64,
) -> Result<ReconstructionResult> {
    let moyal = moyal_reconstruct(z, response, x_axis, opts, origin_stderr)?;
    let density = density_reconstruct(&moyal, x_axis, opts.projection)?;
    let wigner = wigner_reconstruct(&moyal, x_axis)?;
    Ok(ReconstructionResult { moyal, density, wigner })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::char_function;
    use crate::probes::{probe_argument, ProbeModel};
    use crate::states::{build_state, moyal_from_density, state_distance, wigner_from_moyal, StateSpec};

    fn exact_z(spec: &StateSpec, n: usize, half: f64, model: &ProbeModel) -> (AxisGrid, DensityMatrix, CharacteristicGrid) {
        let ax = AxisGrid::from_half_span(n, half).unwrap();
        let dm = build_state(spec, &ax).unwrap();
        let z = char_function(&moyal_from_density(&dm), &ax, model, None).unwrap();
        (ax, dm, z)
    }

    fn default_model(order: MeasurementOrder) -> ProbeModel {
        ProbeModel::gaussian(GaussianProbePair::symmetric(1.0, 1.0).unwrap(), CouplingConfig::unit(), order)
    }

    #[test]
    fn forward_inverse_identity() {
        let model = default_model(MeasurementOrder::Plus);
        let (ax, dm, z) = exact_z(&StateSpec::gaussian(1.0), 128, 10.0, &model);
        let rec = moyal_reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap();
        let truth = moyal_from_density(&dm);
        for (k, (a, b)) in rec.moyal.field().values().iter().zip(truth.field().values()).enumerate() {
            if rec.mask[k] {
                assert!((a - b).norm() < 1e-7);
            }
        }
        let d = density_reconstruct(&rec, &ax, Projection::Clip).unwrap();
        assert!(state_distance(&d.density, &dm).unwrap().fidelity > 0.999999);
        assert!(d.projection_distance < 1e-3);
    }

    #[test]
    fn cat_state_interference_survives() {
        let spec = StateSpec::Cat { x0: 0.0, k0: 0.0, sigma: 1.0, separation: 4.0, phase: 0.0 };
        let model = default_model(MeasurementOrder::Minus);
        let (ax, dm, z) = exact_z(&spec, 128, 12.8, &model);
        let r = reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap();
        assert!(state_distance(&r.density.density, &dm).unwrap().fidelity > 0.995);
        assert!(r.wigner.min() < -0.05);
        // off-diagonal lobe coupling ρ(−2, 2)
        let (i, j) = (ax.node_index(-2.0).unwrap(), ax.node_index(2.0).unwrap());
        let (got, want) = (r.density.density.get(i, j).norm(), dm.get(i, j).norm());
        assert!((got - want).abs() < 0.05 * want);
    }

    #[test]
    fn orders_agree_on_common_region() {
        let spec = StateSpec::gaussian(0.8);
        let recs: Vec<MoyalReconstruction> = [MeasurementOrder::Plus, MeasurementOrder::Minus]
            .iter()
            .map(|o| {
                let model = default_model(*o);
                let (ax, _, z) = exact_z(&spec, 64, 9.0, &model);
                moyal_reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap()
            })
            .collect();
        for k in 0..recs[0].mask.len() {
            if recs[0].mask[k] && recs[1].mask[k] {
                assert!((recs[0].moyal.field().values()[k] - recs[1].moyal.field().values()[k]).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn strong_and_weak_probes_fail_coverage() {
        for (d, order) in [(1e-3, MeasurementOrder::Plus), (1e3, MeasurementOrder::Plus), (1e-3, MeasurementOrder::Zero)] {
            let model = ProbeModel::gaussian(GaussianProbePair::symmetric(d, d).unwrap(), CouplingConfig::unit(), order);
            let ax = AxisGrid::from_half_span(64, 9.0).unwrap();
            let dm = build_state(&StateSpec::gaussian(1.0), &ax).unwrap();
            let z = char_function(&moyal_from_density(&dm), &ax, &model, None).unwrap();
            let r = moyal_reconstruct(&z, &model, &ax, &ReconstructOptions::default(), 0.0);
            assert!(matches!(r, Err(QstError::Coverage { .. })), "{d}: {r:?}");
        }
    }

    #[test]
    fn momentum_route_matches_basis_change() {
        let spec = StateSpec::GaussianPure { x0: 0.5, k0: 0.7, sigma: 1.3 };
        let model = default_model(MeasurementOrder::Zero);
        let (ax, dm, z) = exact_z(&spec, 128, 12.0, &model);
        let rec = moyal_reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap();
        let via_eq = momentum_density_reconstruct(&rec, &ax).unwrap();
        let direct = dm.momentum_representation();
        let [ka, _] = *direct.axes();
        let band = ka.n() as f64 * ka.spacing() / 2.0;
        let mut worst = 0.0f64;
        for a in 0..ka.n() {
            for b in 0..ka.n() {
                if (ka.point(b) - ka.point(a)).abs() < band {
                    worst = worst.max((via_eq.get(a, b) - direct.get(a, b)).norm());
                }
            }
        }
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn wigner_matches_analytic_and_marginals() {
        let model = default_model(MeasurementOrder::Plus);
        let (ax, _, z) = exact_z(&StateSpec::gaussian(1.0), 128, 10.0, &model);
        let r = reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap();
        let [kax, xax] = *r.wigner.axes();
        for i in 0..kax.n() {
            for j in 0..xax.n() {
                let (kv, xv) = (kax.point(i), xax.point(j));
                let want = (-xv * xv / 2.0 - 2.0 * kv * kv).exp() / PI;
                assert!((r.wigner.get(i, j) - want).abs() < 1e-6);
            }
        }
        let p = r.density.density.position_distribution();
        for (a, b) in r.wigner.position_marginal().iter().zip(&p) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_is_a_no_op_outside_the_support() {
        let model = default_model(MeasurementOrder::Plus);
        let (ax, _, z) = exact_z(&StateSpec::gaussian(1.0), 64, 9.0, &model);
        let loose = moyal_reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap();
        let opts = ReconstructOptions { floor: 1e-80, ..ReconstructOptions::default() };
        let tight = moyal_reconstruct(&z, &model, &ax, &opts, 0.0).unwrap();
        assert!(tight.grid_fraction < loose.grid_fraction);
        let (a, b) = (wigner_reconstruct(&loose, &ax).unwrap(), wigner_reconstruct(&tight, &ax).unwrap());
        let d = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn growth_rates_match_probe_decay() {
        let probe = GaussianProbePair::new(0.7, 1.3, 1.1, 0.9).unwrap();
        let cfg = CouplingConfig::new(1.4, 0.6).unwrap();
        for order in MeasurementOrder::ALL {
            let [gx, gk] = gaussian_growth_rates(&probe, &cfg, order);
            let s = [0.9, -1.7];
            let direct = probe.log_decay(cfg.apply_inverse(s), probe_argument(&cfg, order, s));
            assert!((gx * s[0] * s[0] + gk * s[1] * s[1] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_kernel_agrees_and_detects_divergence() {
        let model = default_model(MeasurementOrder::Plus);
        let probe = GaussianProbePair::symmetric(1.0, 1.0).unwrap();
        let (ax, _, z) = exact_z(&StateSpec::gaussian(1.0), 128, 10.0, &model);
        let direct = wigner_gaussian_direct(&z, &probe, &CouplingConfig::unit(), MeasurementOrder::Plus, &ax).unwrap();
        let rec = reconstruct(&z, &model, &ax, &ReconstructOptions::exact(), 0.0).unwrap();
        let d = direct.values().iter().zip(rec.wigner.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6, "{d}");
        // a kernel that grows faster than Z decays
        let big = GaussianProbePair::symmetric(4.0, 0.3).unwrap();
        let r = wigner_gaussian_direct(&z, &big, &CouplingConfig::unit(), MeasurementOrder::Plus, &ax);
        assert!(matches!(r, Err(QstError::Divergence(_))), "{r:?}");
    }

    #[test]
    fn husimi_from_joint_measurement() {
        use crate::forward::joint_prob;
        let probe = GaussianProbePair::symmetric(0.5, 1.0).unwrap();
        let model = ProbeModel::gaussian(probe, CouplingConfig::unit(), MeasurementOrder::Zero);
        let spec = StateSpec::Cat { x0: 0.0, k0: 0.0, sigma: 1.0, separation: 4.0, phase: 0.0 };
        let (ax, dm, z) = exact_z(&spec, 128, 12.0, &model);
        let pi = joint_prob(&z).unwrap();
        let w = wigner_from_moyal(&moyal_from_density(&dm)).unwrap();
        let q = gaussian_smooth(&w, 0.5, 0.5);
        let mut worst = 0.0f64;
        for (a, b) in pi.values().iter().zip(&q) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-6, "{worst}");
        let _ = ax;
    }

    /// `W` convolved with Gaussians of variance `vk` in K and `vx` in X.
    fn gaussian_smooth(w: &WignerGrid, vk: f64, vx: f64) -> Vec<f64> {
        let [ka, xa] = *w.axes();
        let kern = |ax: &AxisGrid, v: f64| -> Vec<f64> {
            (0..ax.n() as i64 * 2 - 1)
                .map(|d| {
                    let t = (d - ax.n() as i64 + 1) as f64 * ax.spacing();
                    (-t * t / (2.0 * v)).exp() / (2.0 * PI * v).sqrt() * ax.spacing()
                })
                .collect()
        };
        let (gk, gx) = (kern(&ka, vk), kern(&xa, vx));
        let (nk, nx) = (ka.n(), xa.n());
        let mut tmp = vec![0.0; nk * nx];
        for i in 0..nk {
            for j in 0..nx {
                tmp[i * nx + j] = (0..nx).map(|l| gx[j + nx - 1 - l] * w.get(i, l)).sum();
            }
        }
        let mut out = vec![0.0; nk * nx];
        for i in 0..nk {
            for j in 0..nx {
                out[i * nx + j] = (0..nk).map(|l| gk[i + nk - 1 - l] * tmp[l * nx + j]).sum();
            }
        }
        out
    }

    #[test]
    fn trace_shift_keeps_unit_trace_and_order() {
        let values = [0.9, 0.2, -0.05, -0.05];
        let clip = project_spectrum(&values, Projection::Clip).unwrap();
        let shift = project_spectrum(&values, Projection::TraceShift).unwrap();
        assert!((clip.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((shift.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // shift by 0.05 keeps both leading values, drops the rest
        assert!((shift[0] - 0.85).abs() < 1e-12 && (shift[1] - 0.15).abs() < 1e-12);
        assert_eq!(&shift[2..], &[0.0, 0.0]);
        // a valid spectrum is a fixed point of both
        let valid = [0.7, 0.3, 0.0];
        assert_eq!(project_spectrum(&valid, Projection::TraceShift).unwrap(), valid.to_vec());
        assert!(project_spectrum(&[-1.0, -0.1], Projection::Clip).is_err());
    }
}
