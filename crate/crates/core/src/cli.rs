//! Batch pipelines behind the `qst` binary.
//!
//! Every command writes its artifacts into the output directory together
//! with `config.ini` (the resolved configuration) and `report.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::config::{ProbeSource, RunConfig};
use crate::error::{QstError, Result};
use crate::forward::{char_function, default_phi_axes, joint_prob_oversampled, CharacteristicGrid, JointProbabilityGrid};
use crate::grid::{AxisGrid, ComplexField2D};
use crate::io::{self, PlotField};
use crate::oracle::oracle_equivalence;
use crate::probes::{mqc_floor_region, MeasurementOrder, ProbeModel, ProbeResponse, TabulatedProbe};
use crate::sampling::{empirical_char_masked, numerical_error_estimate, refined_axis, EmpiricalChar, ShotSampler};
use crate::states::{build_state, moyal_from_density, state_distance, DensityMatrix, MoyalGrid};
use crate::tomography::{error_report, reconstruct, ReconstructOptions, ReconstructionResult};

/// Oracle comparisons in `selftest` must agree to this absolute tolerance.
pub const SELFTEST_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Characteristic function and readout density.
    Simulate,
    /// `simulate`, then draw shots and estimate the characteristic function.
    Sample,
    /// Recover M_S, the density matrix, and the Wigner function.
    Reconstruct,
    /// Everything, plus fidelity against the true state.
    Roundtrip,
    /// Brute-force oracle against the analytic characteristic function.
    Selftest,
}

impl FromStr for Command {
    type Err = QstError;
    fn from_str(s: &str) -> Result<Self> {
        <Self as clap::ValueEnum>::from_str(s, true).map_err(|_| QstError::InvalidParameter(format!("unknown command '{s}'")))
    }
}

/// Ordered `key: value` lines written to `report.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
}

impl Report {
    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn push_num(&mut self, key: &str, value: f64) {
        self.push(key, format!("{value:.9e}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }
}

struct Output {
    dir: PathBuf,
    report: Report,
    plots: Vec<PlotField>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| QstError::InvalidParameter(format!("output directory {} is not writable: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), report: Report::default(), plots: Vec::new() })
    }

    fn grid(&mut self, name: &str, field: &ComplexField2D) -> Result<()> {
        let path = self.dir.join(format!("{name}.cgrid"));
        io::save_cgrid(&path, field)?;
        self.report.files.push(path);
        Ok(())
    }

    fn plot_complex(&mut self, name: &str, field: &ComplexField2D) -> Result<()> {
        self.plots.extend(PlotField::complex(name, field)?);
        Ok(())
    }

    fn plot_real(&mut self, name: &str, axes: [AxisGrid; 2], values: Vec<f64>) -> Result<()> {
        self.plots.push(PlotField::new(name, axes, values)?);
        Ok(())
    }

    fn finish(mut self, config: &RunConfig) -> Result<Report> {
        let plots = std::mem::take(&mut self.plots);
        if !plots.is_empty() {
            self.report.files.extend(io::emit_plot_data(&self.dir.join("plots"), &plots)?);
        }
        let cfg = self.dir.join("config.ini");
        io::write_atomic(&cfg, config.to_ini_string().as_bytes())?;
        self.report.files.push(cfg);
        let rep = self.dir.join("report.txt");
        io::write_atomic(&rep, self.report.to_text().as_bytes())?;
        self.report.files.push(rep);
        Ok(self.report)
    }
}

/// The probe as seen by the reconstruction.
enum Probe {
    Model(ProbeModel),
    Table(TabulatedProbe),
}

impl Probe {
    fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(match &config.probe {
            ProbeSource::Gaussian(p) => Probe::Model(ProbeModel::gaussian(*p, config.coupling, config.order)),
            ProbeSource::Table(path) => Probe::Table(TabulatedProbe { table: io::load_cgrid(path)?, config: config.coupling }),
        })
    }

    fn response(&self) -> &dyn ProbeResponse {
        match self {
            Probe::Model(m) => m,
            Probe::Table(t) => t,
        }
    }
}

/// True state, its Moyal function, and the probe.
struct Setup {
    x_axis: AxisGrid,
    truth: DensityMatrix,
    moyal: MoyalGrid,
    probe: Probe,
}

impl Setup {
    fn new(config: &RunConfig) -> Result<Self> {
        let x_axis = AxisGrid::from_half_span(config.grid.n, config.grid.half_span)?;
        let truth = build_state(&config.state, &x_axis)?;
        let moyal = moyal_from_density(&truth);
        Ok(Self { x_axis, truth, moyal, probe: Probe::from_config(config)? })
    }

    fn char_function(&self, config: &RunConfig) -> Result<CharacteristicGrid> {
        match &self.probe {
            Probe::Model(m) => char_function(&self.moyal, &self.x_axis, m, None),
            Probe::Table(t) => {
                let axes = default_phi_axes(self.moyal.field().axes(), &config.coupling)?;
                let [ta, tb] = *t.table.axes();
                if !(ta.same_nodes(&axes[0]) && tb.same_nodes(&axes[1])) {
                    return Err(QstError::AxisMismatch(
                        "probe table must sit on the Moyal grid scaled by 1/lambda to simulate from it".into(),
                    ));
                }
                let values = self.moyal.field().values().iter().zip(t.table.values()).map(|(m, p)| m * p).collect();
                Ok(CharacteristicGrid::new(ComplexField2D::new(axes, values)?))
            }
        }
    }

    fn floor_mask(&self, config: &RunConfig) -> Result<Vec<bool>> {
        let axes = *self.moyal.field().axes();
        let r = &config.reconstruction;
        Ok(if r.damped { vec![true; axes[0].n() * axes[1].n()] } else { mqc_floor_region(self.probe.response(), axes, r.floor)?.mask })
    }
}

fn simulate(config: &RunConfig, setup: &Setup, out: &mut Output) -> Result<(CharacteristicGrid, JointProbabilityGrid)> {
    let z = setup.char_function(config)?;
    let pi = joint_prob_oversampled(&z, config.sampling.oversample)?;
    out.grid("z", z.field())?;
    out.grid("pi", &pi.to_field())?;
    out.grid("rho_true", &io::density_field(&setup.truth))?;
    out.plot_complex("z", z.field())?;
    out.plot_real("pi", *pi.axes(), pi.values().to_vec())?;
    let mean = pi.mean();
    out.report.push("state", config.state.kind());
    out.report.push("order", config.order);
    out.report.push_num("readout_mass", pi.total_mass());
    out.report.push("readout_mean", format!("{:.9e} {:.9e}", mean[0], mean[1]));
    out.report.push_num("readout_clip_total", pi.clip_total);
    Ok((z, pi))
}

fn sample(config: &RunConfig, setup: &Setup, pi: &JointProbabilityGrid, z: &CharacteristicGrid, out: &mut Output) -> Result<EmpiricalChar> {
    let s = &config.sampling;
    if s.shots == 0 {
        return Err(QstError::InvalidParameter("[sampling] shots must be > 0 to sample".into()));
    }
    let shots = ShotSampler::new(pi)?.sample(s.shots, s.seed)?;
    let path = out.dir.join("shots.txt");
    io::save_shots(&path, &shots)?;
    out.report.files.push(path);
    let emp = empirical_char_masked(&shots, *z.axes(), &setup.floor_mask(config)?)?;
    out.grid("z_emp", emp.z.field())?;
    out.grid("z_emp_stderr", &io::real_field(*emp.axes(), &emp.stderr)?)?;
    out.plot_complex("z_emp", emp.z.field())?;
    out.report.push("shots", s.shots);
    out.report.push("seed", s.seed);
    let m = shots.mean();
    out.report.push("shot_mean", format!("{:.9e} {:.9e}", m[0], m[1]));
    Ok(emp)
}

/// Marker in the error field for points with no estimate.
pub const NO_ESTIMATE: f64 = -1.0;

/// Relative error of the recovered `M_S`; [`NO_ESTIMATE`] where masked or
/// where the estimate vanishes.
fn relative_error(config: &RunConfig, setup: Option<&Setup>, rec: &ReconstructionResult, emp: Option<&EmpiricalChar>) -> Result<Vec<f64>> {
    let m = rec.moyal.moyal.field();
    // η_num from a twofold refinement of the state grid, relative to |M_S|
    let eta: Option<Vec<f64>> = match setup {
        Some(s) => {
            let fine = moyal_from_density(&build_state(&config.state, &refined_axis(&s.x_axis)?)?);
            let abs_err = numerical_error_estimate(&s.moyal, &fine)?;
            Some(abs_err.iter().zip(m.values()).map(|(e, v)| if v.norm() > 0.0 { e / v.norm() } else { f64::INFINITY }).collect())
        }
        None => None,
    };
    let squared = match emp {
        Some(e) => error_report(e, config.reconstruction.probe_uncertainty, eta.as_deref())?,
        None => {
            let p2 = config.reconstruction.probe_uncertainty.powi(2);
            (0..m.values().len())
                .map(|k| if !rec.moyal.mask[k] { f64::INFINITY } else { p2 + eta.as_ref().map_or(0.0, |e| e[k] * e[k]) })
                .collect()
        }
    };
    Ok(squared.iter().map(|v| if v.is_finite() { v.sqrt() } else { NO_ESTIMATE }).collect())
}

fn reconstruct_stage(
    config: &RunConfig,
    setup: Option<&Setup>,
    probe: &Probe,
    x_axis: &AxisGrid,
    z: &CharacteristicGrid,
    emp: Option<&EmpiricalChar>,
    out: &mut Output,
) -> Result<ReconstructionResult> {
    let r = &config.reconstruction;
    let opts = ReconstructOptions { floor: r.floor, damped: r.damped, roi: r.roi, projection: r.projection };
    let origin_stderr = match emp {
        Some(e) => {
            let [a, b] = *e.axes();
            let (i, j) = (a.zero_index(), b.zero_index());
            i.zip(j).map_or(0.0, |(i, j)| e.stderr_at(i, j))
        }
        None if config.is_sampled() => 1.0 / (config.sampling.shots as f64).sqrt(),
        None => 0.0,
    };
    let rec = reconstruct(z, probe.response(), x_axis, &opts, origin_stderr)?;
    let mfield = rec.moyal.moyal.field();
    let axes = *mfield.axes();
    let mask: Vec<f64> = rec.moyal.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let err = relative_error(config, setup, &rec, emp)?;
    out.grid("moyal", mfield)?;
    out.grid("mask", &io::real_field(axes, &mask)?)?;
    out.grid("rho", &io::density_field(&rec.density.density))?;
    out.grid("wigner", &rec.wigner.to_field())?;
    out.grid("error", &io::real_field(axes, &err)?)?;
    out.plot_complex("moyal", mfield)?;
    out.plots.push(PlotField::mask("mask", axes, &rec.moyal.mask)?);
    out.plot_real("wigner", *rec.wigner.axes(), rec.wigner.values().to_vec())?;
    out.plot_complex("rho", &io::density_field(&rec.density.density))?;
    out.plot_real("error", axes, err.clone())?;
    let rep = &mut out.report;
    rep.push_num("floor", r.floor);
    rep.push("damped", r.damped);
    rep.push_num("covered_fraction_roi", rec.moyal.covered_fraction);
    rep.push_num("covered_fraction_grid", rec.moyal.grid_fraction);
    rep.push_num("projection_distance", rec.density.projection_distance);
    rep.push_num("min_raw_eigenvalue", rec.density.min_eigenvalue);
    let worst = err.iter().cloned().filter(|v| *v != NO_ESTIMATE).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
    if let Some(w) = worst {
        rep.push_num("relative_error_max_covered", w);
    }
    Ok(rec)
}

fn fidelity_summary(setup: &Setup, rec: &ReconstructionResult, out: &mut Output) -> Result<()> {
    let d = state_distance(&rec.density.density, &setup.truth)?;
    let diag = setup.truth.position_distribution();
    let marg = rec.wigner.position_marginal();
    let marginal_err = marg.iter().zip(&diag).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rep = &mut out.report;
    rep.push_num("fidelity", d.fidelity);
    rep.push_num("trace_distance", d.trace_distance);
    rep.push_num("hs_distance", d.hs_distance);
    rep.push_num("wigner_marginal_error", marginal_err);
    Ok(())
}

fn selftest(out: &mut Output) -> Result<()> {
    let mut worst = 0.0f64;
    for n in [16, 32] {
        for order in MeasurementOrder::ALL {
            let d = oracle_equivalence(n, order)?;
            info!("oracle n={n} order={order}: {d:.3e}");
            out.report.push_num(&format!("oracle_{order}_{n}"), d);
            worst = worst.max(d);
        }
    }
    out.report.push_num("oracle_max_difference", worst);
    if worst > SELFTEST_TOL {
        return Err(QstError::SelfTest(format!("oracle differs from the analytic path by {worst:.3e} > {SELFTEST_TOL:e}")));
    }
    Ok(())
}

/// True state on the configured grid.
pub fn truth_state(config: &RunConfig) -> Result<DensityMatrix> {
    let x_axis = AxisGrid::from_half_span(config.grid.n, config.grid.half_span)?;
    build_state(&config.state, &x_axis)
}

/// Exact characteristic function for `config`, without writing files.
pub fn simulate_char(config: &RunConfig) -> Result<CharacteristicGrid> {
    Setup::new(config)?.char_function(config)
}

/// Empirical characteristic function from `config.sampling`, in memory.
pub fn sample_char(config: &RunConfig) -> Result<EmpiricalChar> {
    if !config.is_sampled() {
        return Err(QstError::InvalidParameter("[sampling] shots must be > 0 to sample".into()));
    }
    let setup = Setup::new(config)?;
    let z = setup.char_function(config)?;
    let pi = joint_prob_oversampled(&z, config.sampling.oversample)?;
    let shots = ShotSampler::new(&pi)?.sample(config.sampling.shots, config.sampling.seed)?;
    empirical_char_masked(&shots, *z.axes(), &setup.floor_mask(config)?)
}

/// Reconstruction of `z` with the configured probe and options.
pub fn reconstruct_char(config: &RunConfig, z: &CharacteristicGrid, origin_stderr: f64) -> Result<ReconstructionResult> {
    let r = &config.reconstruction;
    let opts = ReconstructOptions { floor: r.floor, damped: r.damped, roi: r.roi, projection: r.projection };
    let x_axis = AxisGrid::from_half_span(config.grid.n, config.grid.half_span)?;
    reconstruct(z, Probe::from_config(config)?.response(), &x_axis, &opts, origin_stderr)
}

/// Run `command`; artifacts go to `config.output_dir`.
pub fn run(command: Command, config: &RunConfig) -> Result<Report> {
    let mut out = Output::new(&config.output_dir)?;
    out.report.push("command", format!("{command:?}").to_lowercase());
    if command == Command::Selftest {
        selftest(&mut out)?;
        return out.finish(config);
    }
    if command == Command::Reconstruct {
        if let Some(input) = &config.reconstruction.input {
            let z = CharacteristicGrid::new(io::load_cgrid(input)?);
            let probe = Probe::from_config(config)?;
            let x_axis = AxisGrid::from_half_span(config.grid.n, config.grid.half_span)?;
            out.report.push("input", input.display());
            reconstruct_stage(config, None, &probe, &x_axis, &z, None, &mut out)?;
            return out.finish(config);
        }
    }
    let setup = Setup::new(config)?;
    let (z, pi) = simulate(config, &setup, &mut out)?;
    let sampled = matches!(command, Command::Sample) || (config.is_sampled() && command != Command::Simulate);
    let emp = if sampled { Some(sample(config, &setup, &pi, &z, &mut out)?) } else { None };
    if matches!(command, Command::Reconstruct | Command::Roundtrip) {
        let zin = emp.as_ref().map_or(&z, |e| &e.z);
        let rec = reconstruct_stage(config, Some(&setup), &setup.probe, &setup.x_axis, zin, emp.as_ref(), &mut out)?;
        if command == Command::Roundtrip {
            fidelity_summary(&setup, &rec, &mut out)?;
        }
    }
    out.finish(config)
}

/// Load the configuration, apply an output override, and run.
pub fn run_from_path(command: Command, config_path: &Path, out_dir: Option<&Path>) -> Result<Report> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(dir) = out_dir {
        config.output_dir = dir.to_path_buf();
    }
    run(command, &config)
}
