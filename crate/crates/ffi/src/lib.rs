//! C ABI over the `asac` library.
//!
//! Objects are opaque handles created by `asac_*_load`/`asac_*_generate`/
//! `asac_train` and released with the matching `_free`. Every fallible call
//! returns an [`AsacStatus`]; on failure `asac_last_error` describes the
//! problem until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use asac::harness::csv_io::ingest_csv;
use asac::harness::experiment::{load_models, save_models};
use asac::harness::{measurement_rates, ExperimentConfig};
use asac::sensing::{CostModel, Episode, SensingMode};
use asac::seqmodel::{PredictorModel, SelectorModel};
use asac::synth::generate;
use asac::training::{evaluate, joint_train, DecisionRule};
use asac::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsacStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid configuration or input data.
    Config = 2,
    /// Failure while training or evaluating.
    Runtime = 3,
    /// File could not be read or written.
    Io = 4,
    /// Feature counts or buffer lengths disagree.
    Dimension = 5,
    /// A string argument was not valid UTF-8.
    Utf8 = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// A set of episodes.
pub struct AsacDataset {
    episodes: Vec<Episode>,
}

/// A trained selector/predictor pair with the settings used to run it.
pub struct AsacModel {
    selector: SelectorModel,
    predictor: PredictorModel,
    cost: CostModel,
    mode: SensingMode,
    rule: DecisionRule,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(err: &Error) -> AsacStatus {
    match err {
        Error::Io { .. } => AsacStatus::Io,
        Error::Dimension(_) => AsacStatus::Dimension,
        e if e.is_config_error() => AsacStatus::Config,
        _ => AsacStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), AsacStatus>) -> AsacStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AsacStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            AsacStatus::Panic
        }
    }
}

fn fail(err: Error) -> AsacStatus {
    set_error(err.to_string());
    status_of(&err)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, AsacStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(AsacStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        AsacStatus::Utf8
    })
}

fn parse_config(text: &str) -> Result<ExperimentConfig, AsacStatus> {
    ExperimentConfig::from_text(text).map_err(fail)
}

/// Message for the most recent failure on this thread; empty after success.
/// The pointer stays valid until the next `asac_*` call on this thread.
#[no_mangle]
pub extern "C" fn asac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Read episodes from a CSV file with header `episode_id,t,y,x1,...,xd`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asac_dataset_load_csv(path: *const c_char, out: *mut *mut AsacDataset) -> AsacStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            set_error("out is null");
            return Err(AsacStatus::NullArgument);
        }
        let episodes = ingest_csv(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(AsacDataset {
            episodes: episodes.into_iter().map(|e| e.episode).collect(),
        }));
        Ok(())
    })
}

/// Generate the synthetic dataset described by `config_text` (key/value
/// format) with generation seed `seed`.
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asac_dataset_generate(
    config_text: *const c_char,
    seed: u64,
    out: *mut *mut AsacDataset,
) -> AsacStatus {
    guard(|| {
        let cfg = parse_config(str_arg(config_text, "config_text")?)?;
        if out.is_null() {
            set_error("out is null");
            return Err(AsacStatus::NullArgument);
        }
        let mut spec = match cfg.data {
            asac::harness::DataSource::Synthetic(s) => s,
            _ => return Err(fail(Error::Config("config must describe synthetic data".into()))),
        };
        spec.process.seed = seed;
        let episodes = generate(&spec).map_err(fail)?;
        *out = Box::into_raw(Box::new(AsacDataset { episodes }));
        Ok(())
    })
}

/// Number of episodes, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asac_dataset_len(ds: *const AsacDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.episodes.len())
}

/// Features per step, or 0 for a null or empty dataset.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asac_dataset_features(ds: *const AsacDataset) -> usize {
    ds.as_ref()
        .and_then(|d| d.episodes.first())
        .map_or(0, Episode::features_dim)
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asac_dataset_free(ds: *mut AsacDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Train on every episode of `ds` with the model, cost and training keys of
/// `config_text`. Data keys other than the task are ignored.
///
/// # Safety
/// `ds` must be a live handle, `config_text` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asac_train(
    ds: *const AsacDataset,
    config_text: *const c_char,
    out: *mut *mut AsacModel,
) -> AsacStatus {
    guard(|| {
        let cfg = parse_config(str_arg(config_text, "config_text")?)?;
        let ds = ds.as_ref().ok_or_else(|| {
            set_error("dataset is null");
            AsacStatus::NullArgument
        })?;
        if out.is_null() {
            set_error("out is null");
            return Err(AsacStatus::NullArgument);
        }
        let d = ds.episodes.first().map_or(0, Episode::features_dim);
        let cost = cfg.cost_model(d).map_err(fail)?;
        let trained = joint_train(&ds.episodes, cfg.dims(d), cfg.task(), &cost, &cfg.training).map_err(fail)?;
        *out = Box::into_raw(Box::new(AsacModel {
            selector: trained.selector,
            predictor: trained.predictor,
            cost,
            mode: cfg.training.mode,
            rule: cfg.eval_rule,
        }));
        Ok(())
    })
}

/// Roll the model over every episode of `ds` and write the per-feature
/// measurement rates into `rates[0..len]`; `len` must equal the feature count.
///
/// # Safety
/// `model` and `ds` must be live handles; `rates` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn asac_model_rates(
    model: *const AsacModel,
    ds: *const AsacDataset,
    seed: u64,
    rates: *mut f64,
    len: usize,
) -> AsacStatus {
    guard(|| {
        let (model, ds) = match (model.as_ref(), ds.as_ref()) {
            (Some(m), Some(d)) if !rates.is_null() => (m, d),
            _ => {
                set_error("null argument");
                return Err(AsacStatus::NullArgument);
            }
        };
        let trajs = evaluate(
            &model.selector,
            &model.predictor,
            &ds.episodes,
            &model.cost,
            model.mode,
            model.rule,
            seed,
        )
        .map_err(fail)?;
        let r = measurement_rates(&trajs, None).map_err(fail)?;
        if r.len() != len {
            return Err(fail(Error::Dimension(format!(
                "buffer holds {len} rates, model has {}",
                r.len()
            ))));
        }
        std::slice::from_raw_parts_mut(rates, len).copy_from_slice(&r);
        Ok(())
    })
}

/// Write `selector.json` and `predictor.json` into directory `dir`.
///
/// # Safety
/// `model` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn asac_model_save(model: *const AsacModel, dir: *const c_char) -> AsacStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let model = model.as_ref().ok_or_else(|| {
            set_error("model is null");
            AsacStatus::NullArgument
        })?;
        save_models(Path::new(dir), "", &model.selector, &model.predictor).map_err(fail)
    })
}

/// Load a model saved by `asac_model_save`, running it with the cost and
/// evaluation settings of `config_text`.
///
/// # Safety
/// `dir` and `config_text` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asac_model_load(
    dir: *const c_char,
    config_text: *const c_char,
    out: *mut *mut AsacModel,
) -> AsacStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let cfg = parse_config(str_arg(config_text, "config_text")?)?;
        if out.is_null() {
            set_error("out is null");
            return Err(AsacStatus::NullArgument);
        }
        let (selector, predictor) = load_models(Path::new(dir)).map_err(fail)?;
        let cost = cfg.cost_model(selector.dims.features).map_err(fail)?;
        *out = Box::into_raw(Box::new(AsacModel {
            selector,
            predictor,
            cost,
            mode: cfg.training.mode,
            rule: cfg.eval_rule,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asac_model_free(model: *mut AsacModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
