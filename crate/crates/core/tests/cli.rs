use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qst")).args(args).output().expect("qst runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report_value(out: &Output, key: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}: "))).unwrap_or_else(|| panic!("no {key} in\n{text}")).parse().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SAMPLED: &str = "
[grid]
n = 64
half_span = 8.5
[probe]
delta_k = 0.5
delta_x = 0.1
kappa_k = 1.0
kappa_x = 0.2
[measurement]
order = minus
[sampling]
shots = 20000
seed = 11
[reconstruction]
floor = 0.05
projection = trace-shift
";

#[test]
fn default_roundtrip_is_faithful() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "empty.ini", "");
    let out_dir = tmp.path().join("run");
    let out = qst(&["roundtrip", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report_value(&out, "fidelity") >= 0.999);
    for f in ["z.cgrid", "pi.cgrid", "moyal.cgrid", "mask.cgrid", "rho.cgrid", "wigner.cgrid", "error.cgrid", "config.ini", "report.txt"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(out_dir.join("plots/manifest.txt")).unwrap();
    for f in ["wigner.dat", "mask.dat", "z_re.dat", "pi.dat", "error.dat"] {
        assert!(manifest.contains(f), "{f} not in manifest");
    }
    let rows = std::fs::read_to_string(out_dir.join("plots/wigner.dat")).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    let meta: Vec<&str> = manifest.lines().find(|l| l.starts_with("wigner.dat ")).unwrap().split_whitespace().collect();
    let (n1, n2): (usize, usize) = (meta[1].parse().unwrap(), meta[4].parse().unwrap());
    assert_eq!(n2, 128);
    assert_eq!(rows, n1 * n2);
    let mask = std::fs::read_to_string(out_dir.join("plots/mask.dat")).unwrap();
    assert!(mask.lines().filter(|l| !l.trim().is_empty()).all(|l| l.ends_with("0e0") || l.ends_with("1.0000000000000000e0")));
}

#[test]
fn probe_regime_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, v) in [("strong", "1e-3"), ("weak", "1e3")] {
        let text = format!("[probe]\ndelta_k = {v}\ndelta_x = {v}\nkappa_k = {v}\nkappa_x = {v}\n");
        let cfg = write_config(tmp.path(), &format!("{name}.ini"), &text);
        let out = qst(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(3), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("coverage"));
    }
}

#[test]
fn invalid_input_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.ini", "[grid]\nn = banana\n");
    let out = qst(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[grid] n"));
    let missing = qst(&["simulate", "--config", tmp.path().join("nope.ini").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(qst(&["frobnicate", "--config", "x"]).status.code(), Some(2));
    let no_shots = write_config(tmp.path(), "exact.ini", "[grid]\nn = 32\nhalf_span = 9\n");
    assert_eq!(
        qst(&["sample", "--config", no_shots.to_str().unwrap(), "--out", tmp.path().join("s").to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "empty.ini", "");
    let out = qst(&["selftest", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("st").to_str().unwrap()]);
    assert!(out.status.success());
    assert!(report_value(&out, "oracle_max_difference") <= 1e-6);
}

#[test]
fn sampled_runs_are_bit_reproducible_and_echo_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sampled.ini", SAMPLED);
    let dir = tmp.path().join("run");
    let run = |c: &Path| {
        let out = qst(&["roundtrip", "--config", c.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out
    };
    let first_out = run(&cfg);
    let first = snapshot(&dir);
    assert!(first.contains_key(Path::new("shots.txt")));
    assert!(report_value(&first_out, "fidelity") > 0.9);
    run(&cfg);
    assert_eq!(snapshot(&dir), first);
    // re-running from the echoed configuration reproduces every artifact
    let echo = tmp.path().join("echo.ini");
    std::fs::copy(dir.join("config.ini"), &echo).unwrap();
    run(&echo);
    assert_eq!(snapshot(&dir), first);
}

#[test]
fn reconstruct_consumes_a_written_characteristic_function() {
    let tmp = tempfile::tempdir().unwrap();
    let sim_cfg = write_config(tmp.path(), "sim.ini", "[grid]\nn = 64\nhalf_span = 9.6\n[measurement]\norder = zero\n");
    let sim_dir = tmp.path().join("sim");
    assert!(qst(&["simulate", "--config", sim_cfg.to_str().unwrap(), "--out", sim_dir.to_str().unwrap()]).status.success());
    let rec_cfg = write_config(
        tmp.path(),
        "rec.ini",
        "[grid]\nn = 64\nhalf_span = 9.6\n[measurement]\norder = zero\n[reconstruction]\ninput = sim/z.cgrid\n",
    );
    let rec_dir = tmp.path().join("rec");
    let out = qst(&["reconstruct", "--config", rec_cfg.to_str().unwrap(), "--out", rec_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth = std::fs::read_to_string(sim_dir.join("rho_true.cgrid")).unwrap();
    let rec = std::fs::read_to_string(rec_dir.join("rho.cgrid")).unwrap();
    let parse = |t: &str| -> Vec<f64> {
        t.lines().skip(3).flat_map(|l| l.split_whitespace().skip(2).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect()
    };
    let d = parse(&truth).iter().zip(parse(&rec)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-6, "max density difference {d}");
}

#[test]
fn tabulated_probe_round_trip() {
    use qst_core::forward::default_phi_axes;
    use qst_core::probes::{CouplingConfig, GaussianProbePair, MeasurementOrder, ProbeModel};
    use qst_core::states::MoyalGrid;
    use qst_core::{AxisGrid, ComplexField2D};

    let tmp = tempfile::tempdir().unwrap();
    let ax = AxisGrid::from_half_span(64, 9.6).unwrap();
    let cfg = CouplingConfig::new(1.0, 1.0).unwrap();
    let model = ProbeModel::gaussian(GaussianProbePair::new(0.8, 1.2, 1.0, 0.9).unwrap(), cfg, MeasurementOrder::Minus);
    let axes = default_phi_axes(&MoyalGrid::axes_for(&ax), &cfg).unwrap();
    let table = ComplexField2D::from_fn(axes, |a, b| model.char_factor([a, b])).unwrap();
    qst_core::io::save_cgrid(&tmp.path().join("mi.cgrid"), &table).unwrap();
    let text = "[grid]\nn = 64\nhalf_span = 9.6\n[probe]\nkind = table\ntable = mi.cgrid\n[measurement]\norder = minus\n";
    let path = write_config(tmp.path(), "table.ini", text);
    let out = qst(&["roundtrip", "--config", path.to_str().unwrap(), "--out", tmp.path().join("t").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report_value(&out, "fidelity") >= 0.999);
}
