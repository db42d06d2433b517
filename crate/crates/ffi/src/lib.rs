//! C ABI over `hqm-core`.
//!
//! Objects cross the boundary as opaque handles created by
//! `hqm_config_reference`, `hqm_config_from_toml`, `hqm_run_trials` or
//! `hqm_scenario_run` and released with the matching `*_free`.
//! Fallible calls return an [`HqmStatus`]; the message of the most recent
//! failure on the calling thread is available from [`hqm_last_error`].
//! Strings returned to the caller are owned by the caller and released with
//! [`hqm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hqm_core::config::{load_config, reference_config, SystemConfig};
use hqm_core::dynamics::{run_trials, ClickDataset, ReadoutMode, TrialPlan};
use hqm_core::error::Error;
use hqm_core::scenario::{
    emit_report, run_scenario, write_artifacts, Format, Scenario, ScenarioName, ScenarioOutput,
};
use hqm_core::stats::{average_fidelity, CountTable};
use hqm_core::storage::ModelParams;

/// Result codes of fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HqmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidInput = 4,
    Inconsistent = 5,
    Numerical = 6,
    InsufficientData = 7,
    Io = 8,
    Panic = 9,
}

/// Validated system configuration.
pub struct HqmConfig(SystemConfig);

/// Simulated trials of one run.
pub struct HqmDataset(ClickDataset);

/// Report and artifacts of one scenario run.
pub struct HqmScenario(ScenarioOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HqmStatus {
    match e {
        Error::Parse(_) | Error::MissingField(_) => HqmStatus::Parse,
        Error::OutOfRange { .. }
        | Error::InvalidInput(_)
        | Error::Empty(_)
        | Error::Unconvertible(_) => HqmStatus::InvalidInput,
        Error::Inconsistent(_) | Error::UnstableResonator(_) => HqmStatus::Inconsistent,
        Error::Insufficient(_) | Error::NonIdentifiable(_) | Error::ResampleFailures { .. } => {
            HqmStatus::InsufficientData
        }
        Error::Io(_) => HqmStatus::Io,
        _ => HqmStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HqmStatus, String)>) -> HqmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HqmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HqmStatus::Panic
        }
    }
}

fn core(e: Error) -> (HqmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HqmStatus, String) {
    (HqmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HqmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HqmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (HqmStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hqm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hqm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in reference configuration.
#[no_mangle]
pub extern "C" fn hqm_config_reference() -> *mut HqmConfig {
    Box::into_raw(Box::new(HqmConfig(reference_config())))
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqm_config_from_toml(
    toml: *const c_char,
    out: *mut *mut HqmConfig,
) -> HqmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let cfg = load_config(text).map_err(core)?;
        *out = Box::into_raw(Box::new(HqmConfig(cfg)));
        Ok(())
    })
}

/// Merges a partial TOML document over `base` into a new configuration.
///
/// # Safety
/// `base` must be a live handle, `overrides` a NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_config_with_overrides(
    base: *const HqmConfig,
    overrides: *const c_char,
    out: *mut *mut HqmConfig,
) -> HqmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let base = base.as_ref().ok_or_else(|| null("base"))?;
        let text = str_arg(overrides, "overrides")?;
        let cfg = base.0.with_overrides(text).map_err(core)?;
        *out = Box::into_raw(Box::new(HqmConfig(cfg)));
        Ok(())
    })
}

/// Canonical TOML form of a configuration.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqm_config_to_toml(cfg: *const HqmConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => to_c_string(c.0.emit()),
        None => {
            set_error("cfg is null".into());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hqm_config_free(cfg: *mut HqmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Field decay rates κ (rad/s) of the qubit and herald cavities.
///
/// # Safety
/// `cfg` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_config_kappas(
    cfg: *const HqmConfig,
    kappa_qubit: *mut f64,
    kappa_herald: *mut f64,
) -> HqmStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        *out_ptr(kappa_qubit, "kappa_qubit")? = c.0.qubit_cavity.kappa;
        *out_ptr(kappa_herald, "kappa_herald")? = c.0.herald_cavity.kappa;
        Ok(())
    })
}

/// Analytic storage and heralding efficiency at a herald-cavity detuning (Hz).
///
/// # Safety
/// `cfg` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_efficiencies_at(
    cfg: *const HqmConfig,
    detuning_hz: f64,
    p_storage: *mut f64,
    p_herald: *mut f64,
) -> HqmStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if !detuning_hz.is_finite() {
            return Err((HqmStatus::InvalidInput, "detuning must be finite".into()));
        }
        let (s, h) = ModelParams::from_config(&c.0).efficiencies_at(detuning_hz);
        *out_ptr(p_storage, "p_storage")? = s;
        *out_ptr(p_herald, "p_herald")? = h;
        Ok(())
    })
}

/// Read-out selection for [`hqm_run_trials`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HqmReadout {
    Off = 0,
    Heralded = 1,
    All = 2,
}

/// Simulates `n_trials` trials over all six inputs and three bases; `readout`
/// is one of the [`HqmReadout`] values.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_run_trials(
    cfg: *const HqmConfig,
    n_trials: u64,
    seed: u64,
    readout: u32,
    out: *mut *mut HqmDataset,
) -> HqmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let plan = TrialPlan {
            readout: match readout {
                r if r == HqmReadout::Off as u32 => ReadoutMode::Off,
                r if r == HqmReadout::Heralded as u32 => ReadoutMode::Heralded,
                r if r == HqmReadout::All as u32 => ReadoutMode::All,
                r => return Err((HqmStatus::InvalidInput, format!("unknown readout mode {r}"))),
            },
            ..TrialPlan::default()
        };
        let ds = run_trials(&c.0, &plan, n_trials, seed).map_err(core)?;
        *out = Box::into_raw(Box::new(HqmDataset(ds)));
        Ok(())
    })
}

/// Number of trials in the dataset (0 for a null handle).
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqm_dataset_len(ds: *const HqmDataset) -> u64 {
    ds.as_ref().map_or(0, |d| d.0.len() as u64)
}

/// Number of trials with a herald click.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqm_dataset_herald_count(ds: *const HqmDataset) -> u64 {
    ds.as_ref().map_or(0, |d| {
        d.0.trials.iter().filter(|t| t.heralded()).count() as u64
    })
}

/// Average state fidelity of the read-out clicks, optionally restricted to heralded trials.
///
/// # Safety
/// `ds` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_dataset_average_fidelity(
    ds: *const HqmDataset,
    heralded_only: bool,
    value: *mut f64,
    sigma: *mut f64,
) -> HqmStatus {
    guard(|| {
        let d = ds.as_ref().ok_or_else(|| null("ds"))?;
        let table =
            CountTable::from_trials(d.0.trials.iter().filter(|t| !heralded_only || t.heralded()));
        let f = average_fidelity(&table).map_err(core)?;
        *out_ptr(value, "value")? = f.value;
        *out_ptr(sigma, "sigma")? = f.sigma;
        Ok(())
    })
}

/// Tab-separated text form of the dataset.
///
/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqm_dataset_to_tsv(ds: *const HqmDataset) -> *mut c_char {
    match ds.as_ref() {
        Some(d) => to_c_string(d.0.to_tsv()),
        None => {
            set_error("ds is null".into());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hqm_dataset_free(ds: *mut HqmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs a named scenario (`spectra`, `write-read-tomo`, `coherence`,
/// `detuning-scan`, `g2`, `truncation`); `n_trials` = 0 selects its default.
///
/// # Safety
/// `cfg` must be a live handle, `name` a NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_scenario_run(
    cfg: *const HqmConfig,
    name: *const c_char,
    n_trials: u64,
    seed: u64,
    out: *mut *mut HqmScenario,
) -> HqmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let label = str_arg(name, "name")?;
        let name = ScenarioName::parse(label).ok_or_else(|| {
            (
                HqmStatus::InvalidInput,
                format!("unknown scenario '{label}'"),
            )
        })?;
        let n = if n_trials == 0 {
            name.default_trials()
        } else {
            n_trials
        };
        let output = run_scenario(&c.0, &Scenario::new(name, n, seed)).map_err(core)?;
        *out = Box::into_raw(Box::new(HqmScenario(output)));
        Ok(())
    })
}

/// Plain-text summary of a scenario run.
///
/// # Safety
/// `sc` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqm_scenario_summary(sc: *const HqmScenario) -> *mut c_char {
    match sc.as_ref() {
        Some(s) => to_c_string(emit_report(&s.0.report)),
        None => {
            set_error("sc is null".into());
            ptr::null_mut()
        }
    }
}

/// Number of failed comparisons in the report.
///
/// # Safety
/// `sc` must be a live handle; `failures` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqm_scenario_failures(
    sc: *const HqmScenario,
    failures: *mut u32,
) -> HqmStatus {
    guard(|| {
        let s = sc.as_ref().ok_or_else(|| null("sc"))?;
        *out_ptr(failures, "failures")? = s.0.report.failures().len() as u32;
        Ok(())
    })
}

/// Writes the artifacts into `dir`; `json` selects JSON instead of CSV scans.
///
/// # Safety
/// `sc` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hqm_scenario_write(
    sc: *const HqmScenario,
    dir: *const c_char,
    json: bool,
) -> HqmStatus {
    guard(|| {
        let s = sc.as_ref().ok_or_else(|| null("sc"))?;
        let dir = str_arg(dir, "dir")?;
        let format = if json { Format::Json } else { Format::Csv };
        write_artifacts(&s.0, Path::new(dir), format).map_err(core)?;
        Ok(())
    })
}

/// # Safety
/// `sc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hqm_scenario_free(sc: *mut HqmScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}
