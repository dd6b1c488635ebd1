//! C ABI over `qst-core`.
//!
//! Objects are opaque handles (configuration, characteristic function,
//! reconstruction) released with the matching `qst_*_free`. Every fallible call returns a
//! [`QstStatus`]; on failure the message is available from
//! [`qst_last_error_message`] on the same thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qst_core::cli::{self, Command};
use qst_core::config::RunConfig;
use qst_core::forward::CharacteristicGrid;
use qst_core::probes::MeasurementOrder;
use qst_core::states::state_distance;
use qst_core::tomography::ReconstructionResult;
use qst_core::QstError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Coverage = 3,
    Divergence = 4,
    NotPhysical = 5,
    Io = 6,
    BufferTooSmall = 7,
    SelfTestFailed = 8,
    Panic = 9,
}

/// Pipeline selector for [`qst_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QstCommand {
    Simulate = 0,
    Sample = 1,
    Reconstruct = 2,
    Roundtrip = 3,
    Selftest = 4,
}

/// Measurement order `ε`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QstOrder {
    Plus = 0,
    Minus = 1,
    Zero = 2,
}

/// Parsed run configuration.
pub struct QstConfig(RunConfig);

/// Characteristic function on its `(φ_K, φ_X)` grid, plus the standard
/// error at the origin when it was estimated from shots.
pub struct QstCharFn {
    z: CharacteristicGrid,
    origin_stderr: f64,
}

/// Reconstructed Moyal function, density matrix and Wigner function.
pub struct QstReconstruction(ReconstructionResult);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &QstError) -> QstStatus {
    match e {
        QstError::Coverage { .. } => QstStatus::Coverage,
        QstError::Divergence(_) => QstStatus::Divergence,
        QstError::NotPhysical(_) | QstError::ImaginaryResidue { .. } => QstStatus::NotPhysical,
        QstError::Io(_) => QstStatus::Io,
        QstError::SelfTest(_) => QstStatus::SelfTestFailed,
        _ => QstStatus::InvalidInput,
    }
}

/// Runs `f`, converting errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), (QstStatus, String)>) -> QstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            QstStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            QstStatus::Panic
        }
    }
}

fn core<T>(r: qst_core::Result<T>) -> Result<T, (QstStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (QstStatus, String) {
    (QstStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (QstStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (QstStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (QstStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (QstStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn fill(dst: *mut f64, len: usize, src: impl ExactSizeIterator<Item = f64>, what: &str) -> Result<(), (QstStatus, String)> {
    if dst.is_null() {
        return Err(null(what));
    }
    if len < src.len() {
        return Err((QstStatus::BufferTooSmall, format!("{what} holds {len} values, {} needed", src.len())));
    }
    for (i, v) in src.enumerate() {
        *dst.add(i) = v;
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qst_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qst_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses INI text. Relative paths resolve against `base_dir` (may be null
/// for the current directory).
///
/// # Safety
/// `text` and a non-null `base_dir` must be NUL-terminated strings; `out`
/// must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_config_from_str(text: *const c_char, base_dir: *const c_char, out: *mut *mut QstConfig) -> QstStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let cfg = core(RunConfig::from_ini_str(text, Path::new(base)))?;
        *out = Box::into_raw(Box::new(QstConfig(cfg)));
        Ok(())
    })
}

/// Loads an INI file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_config_from_file(path: *const c_char, out: *mut *mut QstConfig) -> QstStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = core(RunConfig::load(Path::new(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(QstConfig(cfg)));
        Ok(())
    })
}

/// Overrides the output directory.
///
/// # Safety
/// `config` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qst_config_set_output_dir(config: *mut QstConfig, dir: *const c_char) -> QstStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.output_dir = str_arg(dir, "dir")?.into();
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qst_config_free(config: *mut QstConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs a full pipeline, writing artifacts to the configured directory.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qst_run(config: *const QstConfig, command: QstCommand) -> QstStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        let cmd = match command {
            QstCommand::Simulate => Command::Simulate,
            QstCommand::Sample => Command::Sample,
            QstCommand::Reconstruct => Command::Reconstruct,
            QstCommand::Roundtrip => Command::Roundtrip,
            QstCommand::Selftest => Command::Selftest,
        };
        core(cli::run(cmd, &cfg.0)).map(|_| ())
    })
}

/// Exact characteristic function `Z_f` for the configuration.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_simulate(config: *const QstConfig, out: *mut *mut QstCharFn) -> QstStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let z = core(cli::simulate_char(&handle(config, "config")?.0))?;
        *out = Box::into_raw(Box::new(QstCharFn { z, origin_stderr: 0.0 }));
        Ok(())
    })
}

/// Empirical characteristic function from `[sampling] shots` draws.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_sample(config: *const QstConfig, out: *mut *mut QstCharFn) -> QstStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let emp = core(cli::sample_char(&handle(config, "config")?.0))?;
        let [a, b] = *emp.axes();
        let origin_stderr = a.zero_index().zip(b.zero_index()).map_or(0.0, |(i, j)| emp.stderr_at(i, j));
        *out = Box::into_raw(Box::new(QstCharFn { z: emp.z, origin_stderr }));
        Ok(())
    })
}

/// Grid sizes of a characteristic function.
///
/// # Safety
/// `z` must be a live handle; `n1`, `n2` valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn qst_charfn_shape(z: *const QstCharFn, n1: *mut usize, n2: *mut usize) -> QstStatus {
    guard(|| {
        let (a, b) = handle(z, "z")?.z.field().shape();
        *out_arg(n1, "n1")? = a;
        *out_arg(n2, "n2")? = b;
        Ok(())
    })
}

/// Copies `Z_f` in row-major order into `re` and `im` (each of length `len`).
///
/// # Safety
/// `z` must be a live handle; `re`, `im` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qst_charfn_values(z: *const QstCharFn, re: *mut f64, im: *mut f64, len: usize) -> QstStatus {
    guard(|| {
        let v = handle(z, "z")?.z.field().values();
        fill(re, len, v.iter().map(|c| c.re), "re")?;
        fill(im, len, v.iter().map(|c| c.im), "im")
    })
}

/// # Safety
/// `z` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qst_charfn_free(z: *mut QstCharFn) {
    if !z.is_null() {
        drop(Box::from_raw(z));
    }
}

/// Reconstructs the state from `z` with the configured probe and options.
///
/// # Safety
/// `config` and `z` must be live handles; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_reconstruct(config: *const QstConfig, z: *const QstCharFn, out: *mut *mut QstReconstruction) -> QstStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let z = handle(z, "z")?;
        let rec = core(cli::reconstruct_char(&handle(config, "config")?.0, &z.z, z.origin_stderr))?;
        *out = Box::into_raw(Box::new(QstReconstruction(rec)));
        Ok(())
    })
}

/// Dimension `n` of the reconstructed `n×n` density matrix.
///
/// # Safety
/// `rec` must be a live handle; `n` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_reconstruction_dim(rec: *const QstReconstruction, n: *mut usize) -> QstStatus {
    guard(|| {
        *out_arg(n, "n")? = handle(rec, "rec")?.0.density.density.axis().n();
        Ok(())
    })
}

/// Copies `ρ(X_i, X_j)` row-major into `re` and `im` (each of length `len`).
///
/// # Safety
/// `rec` must be a live handle; `re`, `im` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qst_reconstruction_density(rec: *const QstReconstruction, re: *mut f64, im: *mut f64, len: usize) -> QstStatus {
    guard(|| {
        let m = handle(rec, "rec")?.0.density.density.matrix();
        let n = m.nrows();
        fill(re, len, (0..n * n).map(|k| m[(k / n, k % n)].re), "re")?;
        fill(im, len, (0..n * n).map(|k| m[(k / n, k % n)].im), "im")
    })
}

/// Covered fraction of the region of interest and the positivity
/// projection distance.
///
/// # Safety
/// `rec` must be a live handle; outputs valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn qst_reconstruction_diagnostics(
    rec: *const QstReconstruction,
    covered_fraction: *mut f64,
    projection_distance: *mut f64,
) -> QstStatus {
    guard(|| {
        let r = &handle(rec, "rec")?.0;
        *out_arg(covered_fraction, "covered_fraction")? = r.moyal.covered_fraction;
        *out_arg(projection_distance, "projection_distance")? = r.density.projection_distance;
        Ok(())
    })
}

/// Uhlmann fidelity between the reconstruction and the configured state.
///
/// # Safety
/// `config` and `rec` must be live handles; `fidelity` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_reconstruction_fidelity(
    config: *const QstConfig,
    rec: *const QstReconstruction,
    fidelity: *mut f64,
) -> QstStatus {
    guard(|| {
        let truth = core(cli::truth_state(&handle(config, "config")?.0))?;
        let d = core(state_distance(&handle(rec, "rec")?.0.density.density, &truth))?;
        *out_arg(fidelity, "fidelity")? = d.fidelity;
        Ok(())
    })
}

/// # Safety
/// `rec` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn qst_reconstruction_free(rec: *mut QstReconstruction) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Largest difference between the brute-force oracle and the analytic
/// characteristic function on `n_probe`-point probe grids.
///
/// # Safety
/// `difference` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qst_oracle_check(n_probe: usize, order: QstOrder, difference: *mut f64) -> QstStatus {
    guard(|| {
        let out = out_arg(difference, "difference")?;
        let order = match order {
            QstOrder::Plus => MeasurementOrder::Plus,
            QstOrder::Minus => MeasurementOrder::Minus,
            QstOrder::Zero => MeasurementOrder::Zero,
        };
        *out = core(qst_core::oracle::oracle_equivalence(n_probe, order))?;
        Ok(())
    })
}
