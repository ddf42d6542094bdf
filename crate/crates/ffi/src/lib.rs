//! C ABI over the fedgauntlet simulator.
//!
//! Every call returns an [`FgStatus`]. Objects are opaque handles created by
//! `fg_*_new`/`fg_*_load`/`fg_run` and released with the matching `fg_*_free`.
//! After a failing call, `fg_last_error` describes the failure on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use fedgauntlet::harness::{apply_override, emit_csv, run_with_data, DataBundle, ExperimentConfig, ExperimentReport};
use fedgauntlet::Error;

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Format = 4,
    Truncation = 5,
    DegenerateData = 6,
    Shape = 7,
    Divergence = 8,
    NoUpdates = 9,
    Io = 10,
    OutOfRange = 11,
    Panic = 12,
}

/// Experiment configuration.
pub struct FgConfig(ExperimentConfig);

/// Loaded MNIST train/test split.
pub struct FgData(DataBundle);

/// Result of one experiment.
pub struct FgReport(ExperimentReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FgStatus {
    match e {
        Error::Format(_) => FgStatus::Format,
        Error::Truncation { .. } => FgStatus::Truncation,
        Error::DegenerateData(_) => FgStatus::DegenerateData,
        Error::Config(_) => FgStatus::Config,
        Error::Shape(_) => FgStatus::Shape,
        Error::Divergence { .. } => FgStatus::Divergence,
        Error::NoUpdates => FgStatus::NoUpdates,
        Error::Client { source, .. } => status_of(source),
        Error::Io { .. } => FgStatus::Io,
    }
}

struct Fail(FgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(FgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FgStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(FgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(FgStatus::NullPointer, format!("{what} is null")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the last failing call on this thread; empty after success.
/// Valid until the next fedgauntlet call on the same thread.
#[no_mangle]
pub extern "C" fn fg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn fg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default desk-scale configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fg_config_new(out: *mut *mut FgConfig) -> FgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(FgConfig(ExperimentConfig::default()));
        Ok(())
    })
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fg_config_from_toml(toml_text: *const c_char, out: *mut *mut FgConfig) -> FgStatus {
    guard(|| {
        let text = str_arg(toml_text, "toml_text")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(FgConfig(ExperimentConfig::from_toml_str(text)?));
        Ok(())
    })
}

/// Sets one dotted key, e.g. `attack.kind` to `"mpaf"`. `value` is a TOML
/// value, so strings need their quotes.
///
/// # Safety
/// `config` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fg_config_set(config: *mut FgConfig, key: *const c_char, value: *const c_char) -> FgStatus {
    guard(|| {
        let cfg = out_ptr(config, "config")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let parsed: toml::Table = format!("v = {value}")
            .parse()
            .map_err(|e| Fail(FgStatus::Config, format!("value for '{key}': {e}")))?;
        let updated = apply_override(&cfg.0, key, &parsed["v"])?;
        updated.validate()?;
        cfg.0 = updated;
        Ok(())
    })
}

/// Writes the configuration as TOML into `buf` (NUL-terminated). `needed`
/// receives the full length including the NUL; a short buffer gives
/// `OutOfRange` and leaves `buf` untouched.
///
/// # Safety
/// `config` must come from this library; `buf` must hold `len` bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn fg_config_to_toml(
    config: *const FgConfig,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FgStatus {
    guard(|| {
        let text = handle(config, "config")?.0.to_toml_string();
        let bytes = text.as_bytes();
        if let Some(n) = needed.as_mut() {
            *n = bytes.len() + 1;
        }
        if len < bytes.len() + 1 {
            return Err(Fail(
                FgStatus::OutOfRange,
                format!("buffer holds {len} bytes, need {}", bytes.len() + 1),
            ));
        }
        if buf.is_null() {
            return Err(Fail(FgStatus::NullPointer, "buf is null".into()));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fg_config_free(config: *mut FgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Loads the four MNIST IDX files from `dir`.
///
/// # Safety
/// `dir` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fg_data_load(dir: *const c_char, out: *mut *mut FgData) -> FgStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(FgData(DataBundle::load(Path::new(dir))?));
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fg_data_free(data: *mut FgData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Runs one experiment. With `data` null the data directory is resolved from
/// the config or `FEDGAUNTLET_DATA_DIR`.
///
/// # Safety
/// `config` must come from this library, `data` likewise or null, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fg_run(config: *const FgConfig, data: *const FgData, out: *mut *mut FgReport) -> FgStatus {
    guard(|| {
        let cfg = &handle(config, "config")?.0;
        let out = out_ptr(out, "out")?;
        let report = match data.as_ref() {
            Some(d) => run_with_data(cfg, &d.0)?,
            None => run_with_data(cfg, &DataBundle::load(&cfg.resolve_data_dir()?)?)?,
        };
        *out = boxed(FgReport(report));
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fg_report_final_accuracy(report: *const FgReport, out: *mut f64) -> FgStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(report, "report")?.0.final_accuracy();
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fg_report_num_rounds(report: *const FgReport, out: *mut usize) -> FgStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(report, "report")?.0.rounds.len();
        Ok(())
    })
}

/// Test accuracy after round `index` (zero-based).
///
/// # Safety
/// `report` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fg_report_round_accuracy(report: *const FgReport, index: usize, out: *mut f64) -> FgStatus {
    guard(|| {
        let rounds = &handle(report, "report")?.0.rounds;
        let round = rounds.get(index).ok_or_else(|| {
            Fail(
                FgStatus::OutOfRange,
                format!("round index {index} out of {}", rounds.len()),
            )
        })?;
        *out_ptr(out, "out")? = round.metrics.accuracy;
        Ok(())
    })
}

/// Number of clients rejected by the defense in round `index` (zero-based).
///
/// # Safety
/// `report` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fg_report_round_rejected(report: *const FgReport, index: usize, out: *mut usize) -> FgStatus {
    guard(|| {
        let rounds = &handle(report, "report")?.0.rounds;
        let round = rounds.get(index).ok_or_else(|| {
            Fail(
                FgStatus::OutOfRange,
                format!("round index {index} out of {}", rounds.len()),
            )
        })?;
        *out_ptr(out, "out")? = round.rejected.len();
        Ok(())
    })
}

/// Writes the per-round CSV report.
///
/// # Safety
/// `report` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fg_report_write_csv(report: *const FgReport, path: *const c_char) -> FgStatus {
    guard(|| {
        let report = &handle(report, "report")?.0;
        emit_csv(report, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fg_report_free(report: *mut FgReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
