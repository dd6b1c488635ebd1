//! Monte Carlo emulation of a finite experiment: shots drawn from `Π_f`,
//! the empirical characteristic function with its standard error, readout
//! histograms and a grid-refinement error proxy.
//!
//! RNG contract: shot chunk `c` (fixed size [`SHOT_CHUNK`]) draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `c`, so the record is the
//! same however chunks are scheduled.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{QstError, Result};
use crate::forward::{CharacteristicGrid, JointProbabilityGrid};
use crate::grid::{sinc, AxisGrid, ComplexField2D, C64};
use crate::states::MoyalGrid;

/// Shots per RNG stream.
pub const SHOT_CHUNK: usize = 1 << 16;

/// Shots per partial sum in the characteristic-function estimator.
const SUM_CHUNK: usize = 4096;

/// Recorded readout pairs `(J_K, J_X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub shots: Vec<[f64; 2]>,
    pub seed: u64,
}

impl ShotRecord {
    pub fn new(shots: Vec<[f64; 2]>, seed: u64) -> Result<Self> {
        if shots.is_empty() {
            return Err(QstError::InvalidParameter("a shot record needs at least one shot".into()));
        }
        if shots.iter().flatten().any(|v| !v.is_finite()) {
            return Err(QstError::NonFinite("shot record".into()));
        }
        Ok(Self { shots, seed })
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn mean(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let s = self.shots.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        [s[0] / n, s[1] / n]
    }
}

/// Reusable categorical sampler over the cells of a readout grid.
pub struct ShotSampler {
    axes: [AxisGrid; 2],
    index: WeightedIndex<f64>,
}

impl ShotSampler {
    pub fn new(pi: &JointProbabilityGrid) -> Result<Self> {
        let index = WeightedIndex::new(pi.values().iter().copied())
            .map_err(|e| QstError::NotPhysical(format!("readout grid cannot be sampled: {e}")))?;
        Ok(Self { axes: *pi.axes(), index })
    }

    /// `n` i.i.d. shots: a cell drawn with probability `Π·ΔJ_KΔJ_X`, then a
    /// uniform position inside it.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ShotRecord> {
        if n == 0 {
            return Err(QstError::InvalidParameter("need at least one shot".into()));
        }
        let [a, b] = self.axes;
        let n1 = b.n();
        let chunks = n.div_ceil(SHOT_CHUNK);
        let parts: Vec<Vec<[f64; 2]>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let len = SHOT_CHUNK.min(n - c * SHOT_CHUNK);
                (0..len)
                    .map(|_| {
                        let cell = self.index.sample(&mut rng);
                        let (i, j) = (cell / n1, cell % n1);
                        let u: f64 = rng.gen::<f64>() - 0.5;
                        let v: f64 = rng.gen::<f64>() - 0.5;
                        [a.point(i) + u * a.spacing(), b.point(j) + v * b.spacing()]
                    })
                    .collect()
            })
            .collect();
        ShotRecord::new(parts.concat(), seed)
    }
}

/// Draws `n` shots from `pi`, deterministic in `seed`.
pub fn sample_shots(pi: &JointProbabilityGrid, n: usize, seed: u64) -> Result<ShotRecord> {
    ShotSampler::new(pi)?.sample(n, seed)
}

/// `Z_emp(φ) = (1/N) Σ e^{iJ·φ}` with `δZ = √((1-|Z_emp|²)/N)`.
/// Points outside `mask` are left at 0 and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalChar {
    pub z: CharacteristicGrid,
    pub stderr: Vec<f64>,
    pub mask: Vec<bool>,
    pub n: usize,
}

impl EmpiricalChar {
    pub fn axes(&self) -> &[AxisGrid; 2] {
        self.z.axes()
    }

    pub fn stderr_at(&self, i: usize, j: usize) -> f64 {
        self.stderr[i * self.axes()[1].n() + j]
    }
}

/// `e^{iJφ_a}` for every node of `axis`, by recurrence anchored at φ = 0
/// so the origin is exactly 1.
fn phase_table(axis: &AxisGrid, zero: usize, big_j: f64, out: &mut [C64]) {
    let step = C64::from_polar(1.0, big_j * axis.spacing());
    out[zero] = C64::new(1.0, 0.0);
    for a in zero + 1..axis.n() {
        out[a] = out[a - 1] * step;
    }
    let back = step.conj();
    for a in (0..zero).rev() {
        out[a] = out[a + 1] * back;
    }
}

/// Damping of `Z` at `φ` caused by uniform in-cell jitter on readout bins
/// `bins`: `sinc(φ_K ΔJ_K/2) sinc(φ_X ΔJ_X/2)`. Within 0.2% of 1 while
/// `|φ·ΔJ| < 0.1`.
pub fn jitter_factor(bins: &[AxisGrid; 2], phi: [f64; 2]) -> f64 {
    (0..2).map(|k| sinc(phi[k] * bins[k].spacing() / (2.0 * PI))).product()
}

/// Empirical characteristic function on the full `axes` grid.
pub fn empirical_char(shots: &ShotRecord, axes: [AxisGrid; 2]) -> Result<EmpiricalChar> {
    empirical_char_masked(shots, axes, &vec![true; axes[0].n() * axes[1].n()])
}

/// Empirical characteristic function evaluated only where `mask` is set.
pub fn empirical_char_masked(shots: &ShotRecord, axes: [AxisGrid; 2], mask: &[bool]) -> Result<EmpiricalChar> {
    let (n0, n1) = (axes[0].n(), axes[1].n());
    if mask.len() != n0 * n1 {
        return Err(QstError::InvalidParameter("mask size does not match the phi grid".into()));
    }
    let (z0, z1) = match (axes[0].zero_index(), axes[1].zero_index()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(QstError::AxisMismatch("phi axes must contain the origin".into())),
    };
    // masked columns per row, flattened in row-major order
    let rows: Vec<(usize, Vec<usize>)> =
        (0..n0).map(|i| (i, (0..n1).filter(|&j| mask[i * n1 + j]).collect::<Vec<_>>())).filter(|(_, cols)| !cols.is_empty()).collect();
    let count: usize = rows.iter().map(|(_, c)| c.len()).sum();
    let partials: Vec<Vec<C64>> = shots
        .shots
        .par_chunks(SUM_CHUNK)
        .map(|chunk| {
            let mut acc = vec![C64::new(0.0, 0.0); count];
            let mut ta = vec![C64::new(0.0, 0.0); n0];
            let mut tb = vec![C64::new(0.0, 0.0); n1];
            for s in chunk {
                phase_table(&axes[0], z0, s[0], &mut ta);
                phase_table(&axes[1], z1, s[1], &mut tb);
                let mut k = 0;
                for (i, cols) in &rows {
                    let a = ta[*i];
                    for &j in cols {
                        acc[k] += a * tb[j];
                        k += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![C64::new(0.0, 0.0); count];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = shots.len();
    let inv = 1.0 / n as f64;
    let mut values = vec![C64::new(0.0, 0.0); n0 * n1];
    let mut stderr = vec![0.0; n0 * n1];
    let mut k = 0;
    for (i, cols) in &rows {
        for &j in cols {
            let z = total[k] * inv;
            values[i * n1 + j] = z;
            stderr[i * n1 + j] = ((1.0 - z.norm_sqr()).max(0.0) * inv).sqrt();
            k += 1;
        }
    }
    Ok(EmpiricalChar { z: CharacteristicGrid::new(ComplexField2D::new(axes, values)?), stderr, mask: mask.to_vec(), n })
}

/// Normalised readout histogram with bins centred on the nodes of `axes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub grid: JointProbabilityGrid,
    /// Shots that fell outside every bin.
    pub out_of_range: usize,
}

/// Bins the shots on `axes` (bin size = axis spacing); density is
/// `counts / (N ΔJ_K ΔJ_X)`, so the mass is 1 when every shot lands in a bin.
pub fn histogram(shots: &ShotRecord, axes: [AxisGrid; 2]) -> Result<Histogram> {
    let (n0, n1) = (axes[0].n(), axes[1].n());
    let mut counts = vec![0u64; n0 * n1];
    let mut out = 0;
    let bin = |ax: &AxisGrid, v: f64| -> Option<usize> {
        let p = ax.position(v).round();
        (p >= 0.0 && p < ax.n() as f64).then_some(p as usize)
    };
    for s in &shots.shots {
        match (bin(&axes[0], s[0]), bin(&axes[1], s[1])) {
            (Some(i), Some(j)) => counts[i * n1 + j] += 1,
            _ => out += 1,
        }
    }
    let scale = 1.0 / (shots.len() as f64 * axes[0].spacing() * axes[1].spacing());
    let grid = JointProbabilityGrid::new(axes, counts.iter().map(|&c| c as f64 * scale).collect())?;
    Ok(Histogram { grid, out_of_range: out })
}

/// L1 distance `∫|p - q|` between two readout densities on the same grid.
pub fn l1_distance(p: &JointProbabilityGrid, q: &JointProbabilityGrid) -> Result<f64> {
    if !(p.axes()[0].same_nodes(&q.axes()[0]) && p.axes()[1].same_nodes(&q.axes()[1])) {
        return Err(QstError::AxisMismatch("histograms on different grids".into()));
    }
    Ok(p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() * p.cell_area())
}

/// Grid-refinement error proxy `η_num(s) = |M_fine(s) - M_coarse(s)|` on the
/// coarse nodes. Every coarse node must also be a fine node.
pub fn numerical_error_estimate(coarse: &MoyalGrid, fine: &MoyalGrid) -> Result<Vec<f64>> {
    let [ca, cb] = *coarse.field().axes();
    let [fa, fb] = *fine.field().axes();
    let rows: Option<Vec<usize>> = ca.points().map(|x| fa.node_index(x)).collect();
    let cols: Option<Vec<usize>> = cb.points().map(|k| fb.node_index(k)).collect();
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(QstError::AxisMismatch("coarse Moyal nodes are not a subset of the refined grid".into())),
    };
    let mut eta = Vec::with_capacity(ca.n() * cb.n());
    for (i, &fi) in rows.iter().enumerate() {
        for (j, &fj) in cols.iter().enumerate() {
            eta.push((fine.field().get(fi, fj) - coarse.field().get(i, j)).norm());
        }
    }
    Ok(eta)
}

/// The X axis refined twofold over the same span.
pub fn refined_axis(x_axis: &AxisGrid) -> Result<AxisGrid> {
    AxisGrid::new(2 * x_axis.n(), x_axis.spacing() / 2.0, x_axis.offset())
}
