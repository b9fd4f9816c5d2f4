//! C ABI over `setnet`.
//!
//! Objects are opaque handles created by `*_new`/`*_load` style functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`SetnetStatus`]; on failure [`setnet_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use setnet::data::{generate, read_dataset, write_dataset, GenSpec, SetDataset, Task};
use setnet::diagnostics::{prop1_report, prop1_sweep};
use setnet::model::{Model, ModelConfig};
use setnet::params::Mode;
use setnet::tensor::{SetBatch, Tensor};
use setnet::train::{train, TrainConfig};
use setnet::Error;

/// Result codes shared by every function in this library.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetnetStatus {
    Ok = 0,
    CheckFailed = 1,
    InvalidArgument = 2,
    Io = 3,
    Diverged = 4,
    Dimension = 5,
    Numeric = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Generated set task.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetnetTask {
    NormalVar = 0,
    ToyShapes = 1,
}

/// Opaque dataset handle.
pub struct SetnetDataset(SetDataset);

/// Opaque model handle.
pub struct SetnetModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SetnetStatus {
    match e {
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated { .. }
        | Error::Malformed { .. } => SetnetStatus::Io,
        Error::Divergence { .. } => SetnetStatus::Diverged,
        Error::Dimension(_) => SetnetStatus::Dimension,
        Error::Numeric(_) => SetnetStatus::Numeric,
        _ => SetnetStatus::InvalidArgument,
    }
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<SetnetStatus, Fail>) -> SetnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            SetnetStatus::Panic
        }
    }
}

struct Fail(SetnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SetnetStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SetnetStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn setnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn setnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generate a synthetic dataset; `task` is a [`SetnetTask`] value.
///
/// # Safety
/// `out` must be a valid pointer to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn setnet_dataset_generate(
    task: u32,
    n_sets: usize,
    set_size: usize,
    seed: u64,
    split: u32,
    out: *mut *mut SetnetDataset,
) -> SetnetStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let task = match task {
            t if t == SetnetTask::NormalVar as u32 => Task::NormalVar,
            t if t == SetnetTask::ToyShapes as u32 => Task::ToyShapes,
            t => return Err(Fail(SetnetStatus::InvalidArgument, format!("unknown task {t}"))),
        };
        let ds = generate(&GenSpec::new(task, n_sets, set_size, seed).with_split(split))?;
        *out = Box::into_raw(Box::new(SetnetDataset(ds)));
        Ok(SetnetStatus::Ok)
    })
}

/// Read a SETD file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid handle storage.
#[no_mangle]
pub unsafe extern "C" fn setnet_dataset_read(path: *const c_char, out: *mut *mut SetnetDataset) -> SetnetStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(SetnetDataset(read_dataset(&path)?)));
        Ok(SetnetStatus::Ok)
    })
}

/// Write a dataset as SETD.
///
/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn setnet_dataset_write(ds: *const SetnetDataset, path: *const c_char) -> SetnetStatus {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        write_dataset(&ds.0, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(SetnetStatus::Ok)
    })
}

/// Number of sets, elements per set and features per element.
///
/// # Safety
/// `ds` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn setnet_dataset_shape(
    ds: *const SetnetDataset,
    n_sets: *mut usize,
    set_size: *mut usize,
    features: *mut usize,
) -> SetnetStatus {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        *out_arg(n_sets, "n_sets")? = ds.0.n_sets();
        *out_arg(set_size, "set_size")? = ds.0.set_size();
        *out_arg(features, "features")? = ds.0.features();
        Ok(SetnetStatus::Ok)
    })
}

/// Release a dataset; null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn setnet_dataset_free(ds: *mut SetnetDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Build a freshly initialized model from a JSON model config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` valid handle storage.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_new(config_json: *const c_char, out: *mut *mut SetnetModel) -> SetnetStatus {
    guard(|| {
        let c = ModelConfig::from_json(str_arg(config_json, "config_json")?)?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(SetnetModel(Model::build(&c)?)));
        Ok(SetnetStatus::Ok)
    })
}

/// Load a checkpoint written by [`setnet_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid handle storage.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_load(path: *const c_char, out: *mut *mut SetnetModel) -> SetnetStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(SetnetModel(Model::load(&path)?)));
        Ok(SetnetStatus::Ok)
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_save(model: *const SetnetModel, path: *const c_char) -> SetnetStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        m.0.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(SetnetStatus::Ok)
    })
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_param_count(model: *const SetnetModel, out: *mut usize) -> SetnetStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.0.param_count();
        Ok(SetnetStatus::Ok)
    })
}

/// Eval-mode predictions for a dense `n_sets x set_size x features` batch in
/// row-major order. `out` receives `n_sets * output_dim` values.
///
/// # Safety
/// `inputs` must point to `n_sets * set_size * features` readable doubles
/// and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_predict(
    model: *const SetnetModel,
    inputs: *const f64,
    n_sets: usize,
    set_size: usize,
    features: usize,
    out: *mut f64,
    out_len: usize,
) -> SetnetStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if inputs.is_null() {
            return Err(null("inputs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_sets * set_size * features;
        let x = std::slice::from_raw_parts(inputs, len).to_vec();
        let batch = SetBatch::dense(Tensor::new(&[n_sets, set_size, features], x)?)?;
        let y = m.0.predict(&batch, Mode::Eval)?;
        if y.numel() != out_len {
            return Err(Fail(
                SetnetStatus::Dimension,
                format!("prediction has {} values, buffer holds {out_len}", y.numel()),
            ));
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(y.data());
        Ok(SetnetStatus::Ok)
    })
}

/// Train in place with a JSON train config. `final_test_loss` (may be null)
/// receives the last epoch's test loss; divergence returns `Diverged`.
///
/// # Safety
/// Handles must be live, `train_config_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_train(
    model: *mut SetnetModel,
    train_ds: *const SetnetDataset,
    test_ds: *const SetnetDataset,
    train_config_json: *const c_char,
    final_test_loss: *mut f64,
) -> SetnetStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let tr = ref_arg(train_ds, "train_ds")?;
        let te = ref_arg(test_ds, "test_ds")?;
        let cfg: TrainConfig = serde_json::from_str(str_arg(train_config_json, "train_config_json")?)
            .map_err(|e| Fail(SetnetStatus::InvalidArgument, format!("train config: {e}")))?;
        let history = train(&mut m.0, &tr.0, &te.0, &cfg, None)?;
        if let (Some(l), Some(out)) = (history.final_test_loss(), final_test_loss.as_mut()) {
            *out = l;
        }
        if let Some(d) = history.diverged {
            return Err(Fail(SetnetStatus::Diverged, format!("diverged at epoch {} (loss {})", d.epoch, d.loss)));
        }
        Ok(SetnetStatus::Ok)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn setnet_model_free(model: *mut SetnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Certify every normalization transformation setting; `Ok` when exactly
/// `{}` and `{D}` are both equivariant and batch agnostic.
#[no_mangle]
pub extern "C" fn setnet_check_prop1() -> SetnetStatus {
    guard(|| {
        let report = prop1_report(&prop1_sweep());
        if report.pass {
            Ok(SetnetStatus::Ok)
        } else {
            Err(Fail(SetnetStatus::CheckFailed, format!("unexpected settings: {:?}", report.counterexample)))
        }
    })
}
