//! Run configuration: sectioned `key = value` text.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown sections or keys are rejected. [`RunConfig::to_ini_string`] writes
//! the fully resolved configuration, which parses back to an identical value.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ini::Ini;

use crate::error::{QstError, Result};
use crate::probes::{CouplingConfig, GaussianProbePair, MeasurementOrder};
use crate::states::StateSpec;
use crate::tomography::{Projection, DEFAULT_ROI, EXACT_FLOOR};

/// Grid for the system position axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub n: usize,
    pub half_span: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSource {
    Gaussian(GaussianProbePair),
    /// `M_i(φ, Λα_εΛφ)` tabulated as `cgrid-v1` over `(φ_K, φ_X)`.
    Table(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Zero selects the exact (noise-free) path.
    pub shots: usize,
    pub seed: u64,
    /// Refinement of the readout grid used to draw shots.
    pub oversample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionConfig {
    pub floor: f64,
    pub damped: bool,
    pub projection: Projection,
    pub roi: f64,
    /// Relative uncertainty of the probe table, `δM_i/M_i`.
    pub probe_uncertainty: f64,
    /// Characteristic function to reconstruct from instead of simulating one.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub state: StateSpec,
    pub grid: GridConfig,
    pub probe: ProbeSource,
    pub coupling: CouplingConfig,
    pub order: MeasurementOrder,
    pub sampling: SamplingConfig,
    pub reconstruction: ReconstructionConfig,
    pub output_dir: PathBuf,
}

pub const DEFAULT_N: usize = 128;
pub const DEFAULT_HALF_SPAN: f64 = 12.8;
pub const DEFAULT_OVERSAMPLE: usize = 8;
/// Floor used for sampled data when none is given.
pub const DEFAULT_SAMPLED_FLOOR: f64 = crate::probes::DEFAULT_FLOOR;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state: StateSpec::gaussian(1.0),
            grid: GridConfig { n: DEFAULT_N, half_span: DEFAULT_HALF_SPAN },
            probe: ProbeSource::Gaussian(GaussianProbePair::symmetric(1.0, 1.0).expect("unit probe")),
            coupling: CouplingConfig::unit(),
            order: MeasurementOrder::Plus,
            sampling: SamplingConfig { shots: 0, seed: 0, oversample: DEFAULT_OVERSAMPLE },
            reconstruction: ReconstructionConfig {
                floor: EXACT_FLOOR,
                damped: false,
                projection: Projection::Clip,
                roi: DEFAULT_ROI,
                probe_uncertainty: 0.0,
                input: None,
            },
            output_dir: PathBuf::from("qst-out"),
        }
    }
}

const STATE_KEYS: &[&str] = &["kind", "x0", "k0", "sigma", "nbar", "separation", "phase", "weights"];
const COMPONENT_KEYS: &[&str] = &["kind", "x0", "k0", "sigma", "nbar", "separation", "phase"];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "state" => STATE_KEYS,
        "grid" => &["n", "half_span"],
        "probe" => &["kind", "delta_k", "delta_x", "kappa_k", "kappa_x", "table"],
        "coupling" => &["lambda_k", "lambda_x"],
        "measurement" => &["order"],
        "sampling" => &["shots", "seed", "oversample"],
        "reconstruction" => &["floor", "damped", "projection", "roi", "probe_uncertainty", "input"],
        "output" => &["dir"],
        s if s.strip_prefix("state.").is_some_and(|i| i.parse::<usize>().is_ok()) => COMPONENT_KEYS,
        _ => return None,
    })
}

/// Drop `;` or `#` comments that follow whitespace inside a line.
fn strip_inline_comments(text: &str) -> String {
    text.lines()
        .map(|line| {
            let cut = line
                .char_indices()
                .find(|&(i, c)| (c == ';' || c == '#') && (i == 0 || line[..i].ends_with(char::is_whitespace)))
                .map_or(line.len(), |(i, _)| i);
            &line[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

struct Section<'a> {
    name: String,
    props: Option<&'a ini::Properties>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| QstError::Parse(format!("[{}] {key} = '{v}' is not a valid value", self.name))),
        }
    }

    fn parse_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(QstError::Parse(format!("[{}] {key} = '{v}' is not a boolean", self.name))),
        }
    }
}

fn state_from(sec: &Section, allow_mixture: bool, ini: &Ini) -> Result<StateSpec> {
    let x0 = sec.parse("x0", 0.0)?;
    let k0 = sec.parse("k0", 0.0)?;
    let sigma = sec.parse("sigma", 1.0)?;
    let kind = sec.raw("kind").unwrap_or("gaussian-pure").to_ascii_lowercase();
    let spec = match kind.as_str() {
        "gaussian-pure" | "gaussian" => StateSpec::GaussianPure { x0, k0, sigma },
        "gaussian-thermal" | "thermal" => StateSpec::GaussianThermal { x0, k0, sigma, nbar: sec.parse("nbar", 0.5)? },
        "cat" => StateSpec::Cat { x0, k0, sigma, separation: sec.parse("separation", 4.0 * sigma)?, phase: sec.parse("phase", 0.0)? },
        "mixture" if allow_mixture => {
            let weights = sec
                .raw("weights")
                .ok_or_else(|| QstError::InvalidParameter("[state] mixture needs 'weights'".into()))?
                .split(',')
                .map(|w| w.trim().parse::<f64>().map_err(|_| QstError::Parse(format!("[state] bad weight '{w}'"))))
                .collect::<Result<Vec<_>>>()?;
            let parts = weights
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let name = format!("state.{i}");
                    let props = ini.section(Some(name.as_str()));
                    if props.is_none() {
                        return Err(QstError::InvalidParameter(format!("mixture component [{name}] is missing")));
                    }
                    Ok((*w, state_from(&Section { name, props }, false, ini)?))
                })
                .collect::<Result<Vec<_>>>()?;
            StateSpec::Mixture(parts)
        }
        other => return Err(QstError::InvalidParameter(format!("[{}] unknown state kind '{other}'", sec.name))),
    };
    spec.validate()?;
    Ok(spec)
}

impl RunConfig {
    /// Parse configuration text. Relative paths resolve against `base_dir`.
    pub fn from_ini_str(text: &str, base_dir: &Path) -> Result<Self> {
        let opt = ini::ParseOption { enabled_escape: false, ..Default::default() };
        let ini = Ini::load_from_str_opt(&strip_inline_comments(text), opt).map_err(|e| QstError::Parse(format!("config: {e}")))?;
        for (name, props) in ini.iter() {
            let name = match name {
                Some(n) => n,
                None if props.is_empty() => continue,
                None => return Err(QstError::Parse("config keys must sit inside a [section]".into())),
            };
            let keys = known_keys(name).ok_or_else(|| QstError::Parse(format!("unknown config section [{name}]")))?;
            let mut seen = BTreeSet::new();
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(QstError::Parse(format!("unknown key '{k}' in [{name}]")));
                }
                if !seen.insert(k) {
                    return Err(QstError::Parse(format!("duplicate key '{k}' in [{name}]")));
                }
            }
        }
        let sec = |name: &str| Section { name: name.to_string(), props: ini.section(Some(name)) };
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let d = Self::default();

        let state = state_from(&sec("state"), true, &ini)?;

        let g = sec("grid");
        let grid = GridConfig { n: g.parse("n", d.grid.n)?, half_span: g.parse("half_span", d.grid.half_span)? };
        if grid.n < 4 || !grid.n.is_multiple_of(2) || !(grid.half_span > 0.0 && grid.half_span.is_finite()) {
            return Err(QstError::InvalidParameter(format!(
                "[grid] needs even n >= 4 and positive half_span, got n = {}, half_span = {}",
                grid.n, grid.half_span
            )));
        }

        let p = sec("probe");
        let probe = match p.raw("kind").unwrap_or("gaussian").to_ascii_lowercase().as_str() {
            "gaussian" => ProbeSource::Gaussian(GaussianProbePair::new(
                p.parse("delta_k", 1.0)?,
                p.parse("delta_x", 1.0)?,
                p.parse("kappa_k", 1.0)?,
                p.parse("kappa_x", 1.0)?,
            )?),
            "table" => ProbeSource::Table(resolve(
                p.raw("table").ok_or_else(|| QstError::InvalidParameter("[probe] kind = table needs 'table'".into()))?,
            )),
            other => return Err(QstError::InvalidParameter(format!("[probe] unknown kind '{other}'"))),
        };

        let c = sec("coupling");
        let coupling = CouplingConfig::new(c.parse("lambda_k", 1.0)?, c.parse("lambda_x", 1.0)?)?;
        let order = sec("measurement").parse("order", d.order)?;

        let s = sec("sampling");
        let sampling = SamplingConfig {
            shots: s.parse("shots", 0)?,
            seed: s.parse("seed", 0)?,
            oversample: s.parse("oversample", DEFAULT_OVERSAMPLE)?,
        };
        if sampling.oversample == 0 {
            return Err(QstError::InvalidParameter("[sampling] oversample must be >= 1".into()));
        }

        let r = sec("reconstruction");
        let floor_default = if sampling.shots == 0 { EXACT_FLOOR } else { DEFAULT_SAMPLED_FLOOR };
        let floor = match r.raw("floor") {
            None | Some("auto") => floor_default,
            Some(_) => r.parse("floor", floor_default)?,
        };
        let reconstruction = ReconstructionConfig {
            floor,
            damped: r.parse_bool("damped", false)?,
            projection: r.parse("projection", Projection::Clip)?,
            roi: r.parse("roi", DEFAULT_ROI)?,
            probe_uncertainty: r.parse("probe_uncertainty", 0.0)?,
            input: r.raw("input").filter(|v| !v.is_empty()).map(resolve),
        };
        if !(floor > 0.0 && floor.is_finite()) || !(reconstruction.roi > 0.0) || !(reconstruction.probe_uncertainty >= 0.0) {
            return Err(QstError::InvalidParameter("[reconstruction] floor and roi must be positive, probe_uncertainty >= 0".into()));
        }

        let output_dir = resolve(sec("output").raw("dir").unwrap_or("qst-out"));
        Ok(Self { state, grid, probe, coupling, order, sampling, reconstruction, output_dir })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| QstError::InvalidParameter(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_ini_str(&text, base)
    }

    pub fn is_sampled(&self) -> bool {
        self.sampling.shots > 0
    }

    /// Fully resolved configuration; paths are written absolute when possible.
    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        write_state(&mut ini, "state", &self.state);
        ini.with_section(Some("grid")).set("n", self.grid.n.to_string()).set("half_span", self.grid.half_span.to_string());
        match &self.probe {
            ProbeSource::Gaussian(p) => {
                let [dk, dx] = p.deltas();
                let [kk, kx] = p.kappas();
                ini.with_section(Some("probe"))
                    .set("kind", "gaussian")
                    .set("delta_k", dk.to_string())
                    .set("delta_x", dx.to_string())
                    .set("kappa_k", kk.to_string())
                    .set("kappa_x", kx.to_string());
            }
            ProbeSource::Table(path) => {
                ini.with_section(Some("probe")).set("kind", "table").set("table", absolute(path));
            }
        }
        ini.with_section(Some("coupling"))
            .set("lambda_k", self.coupling.lambda_k().to_string())
            .set("lambda_x", self.coupling.lambda_x().to_string());
        ini.with_section(Some("measurement")).set("order", self.order.to_string());
        ini.with_section(Some("sampling"))
            .set("shots", self.sampling.shots.to_string())
            .set("seed", self.sampling.seed.to_string())
            .set("oversample", self.sampling.oversample.to_string());
        let r = &self.reconstruction;
        ini.with_section(Some("reconstruction"))
            .set("floor", format!("{:e}", r.floor))
            .set("damped", r.damped.to_string())
            .set(
                "projection",
                match r.projection {
                    Projection::Clip => "clip",
                    Projection::TraceShift => "trace-shift",
                },
            )
            .set("roi", r.roi.to_string())
            .set("probe_uncertainty", r.probe_uncertainty.to_string())
            .set("input", r.input.as_deref().map(absolute).unwrap_or_default());
        ini.with_section(Some("output")).set("dir", absolute(&self.output_dir));
        let mut buf = Vec::new();
        ini.write_to_opt(&mut buf, ini::WriteOption { escape_policy: ini::EscapePolicy::Nothing, ..Default::default() })
            .expect("writing to memory");
        String::from_utf8(buf).expect("ini output is UTF-8")
    }
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn write_state(ini: &mut Ini, section: &str, spec: &StateSpec) {
    let mut s = ini.with_section(Some(section));
    s.set("kind", spec.kind());
    match spec {
        StateSpec::GaussianPure { x0, k0, sigma } => {
            s.set("x0", x0.to_string()).set("k0", k0.to_string()).set("sigma", sigma.to_string());
        }
        StateSpec::GaussianThermal { x0, k0, sigma, nbar } => {
            s.set("x0", x0.to_string()).set("k0", k0.to_string()).set("sigma", sigma.to_string()).set("nbar", nbar.to_string());
        }
        StateSpec::Cat { x0, k0, sigma, separation, phase } => {
            s.set("x0", x0.to_string())
                .set("k0", k0.to_string())
                .set("sigma", sigma.to_string())
                .set("separation", separation.to_string())
                .set("phase", phase.to_string());
        }
        StateSpec::Mixture(parts) => {
            let w: Vec<String> = parts.iter().map(|(w, _)| w.to_string()).collect();
            s.set("weights", w.join(", "));
            for (i, (_, part)) in parts.iter().enumerate() {
                write_state(ini, &format!("state.{i}"), part);
            }
        }
    }
}
