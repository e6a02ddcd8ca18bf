//! C ABI over `palmlab`.
//!
//! Every function returns a [`PalmStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be copied
//! out with [`palm_last_error`]. Datasets are opaque handles created by
//! [`palm_dataset_generate`] or [`palm_dataset_load`] and released with
//! [`palm_dataset_free`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use palmlab::embedio::{generate_synthetic, DataError, SyntheticSpec};
use palmlab::harness::{mean, run_experiment, DatasetBundle, ExperimentConfig, HarnessError};
use palmlab::methods::{param_count, zero_shot_predict, MethodKind, ParamShape};
use palmlab::tensorcore::Matrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PalmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque dataset handle.
pub struct PalmDataset {
    bundle: DatasetBundle,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PalmSyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub text_anchor_seed: u64,
    pub audio_seed: u64,
    pub alignment_noise: f64,
    pub modality_gap: f64,
    pub within_class_spread: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PalmShape {
    pub classes: usize,
    pub dim: usize,
    pub context_len: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

/// Training recipe; `seeds` points at `num_seeds` values. `folds` 0 means
/// train/test mode.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PalmRunConfig {
    pub shots: usize,
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seeds: *const u64,
    pub num_seeds: usize,
    pub folds: usize,
    pub jobs: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Failure(PalmStatus, String);

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match &e {
            HarnessError::Config(_) => PalmStatus::InvalidArgument,
            HarnessError::Data(DataError::Io(_)) => PalmStatus::Io,
            HarnessError::Data(_) | HarnessError::EmptyClass(_) | HarnessError::NoFolds | HarnessError::EmptyResults => {
                PalmStatus::Data
            }
            HarnessError::Method { .. } => PalmStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PalmStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(PalmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PalmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PalmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside palmlab");
            PalmStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn method(p: *const c_char) -> Result<MethodKind, Failure> {
    c_str(p, "method")?.parse::<MethodKind>().map_err(invalid)
}

/// Copies the calling thread's last error message, NUL-terminated, into
/// `buf`. `*needed` receives the size including the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null with `cap` 0;
/// `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn palm_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> PalmStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let len = msg.len() + 1;
    if !needed.is_null() {
        *needed = len;
    }
    if buf.is_null() || cap < len {
        return PalmStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, msg.len());
    *buf.add(msg.len()) = 0;
    PalmStatus::Ok
}

/// The reference synthetic configuration.
#[no_mangle]
pub extern "C" fn palm_synthetic_spec_default() -> PalmSyntheticSpec {
    let s = SyntheticSpec::default();
    PalmSyntheticSpec {
        classes: s.classes,
        dim: s.dim,
        samples_per_class: s.samples_per_class,
        text_anchor_seed: s.text_anchor_seed,
        audio_seed: s.audio_seed,
        alignment_noise: s.alignment_noise,
        modality_gap: s.modality_gap,
        within_class_spread: s.within_class_spread,
    }
}

/// Default recipe with no seeds attached; set `seeds`/`num_seeds` before use.
#[no_mangle]
pub extern "C" fn palm_run_config_default() -> PalmRunConfig {
    let c = ExperimentConfig::default();
    PalmRunConfig {
        shots: c.shots,
        epochs: c.epochs,
        lr: c.lr,
        temperature: c.temperature,
        seeds: ptr::null(),
        num_seeds: 0,
        folds: 0,
        jobs: 1,
    }
}

/// Generates a synthetic dataset together with its text anchors.
///
/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn palm_dataset_generate(spec: *const PalmSyntheticSpec, out: *mut *mut PalmDataset) -> PalmStatus {
    guard(|| {
        if spec.is_null() || out.is_null() {
            return Err(null("spec or out"));
        }
        let s = *spec;
        let spec = SyntheticSpec {
            classes: s.classes,
            dim: s.dim,
            samples_per_class: s.samples_per_class,
            text_anchor_seed: s.text_anchor_seed,
            audio_seed: s.audio_seed,
            alignment_noise: s.alignment_noise,
            modality_gap: s.modality_gap,
            within_class_spread: s.within_class_spread,
        };
        let (ds, anchors) = generate_synthetic(&spec).map_err(|e| invalid(e.to_string()))?;
        let bundle = DatasetBundle::new("synthetic", ds, Some(anchors))?;
        *out = Box::into_raw(Box::new(PalmDataset { bundle }));
        Ok(())
    })
}

/// Loads a dataset file; `anchors` may be null.
///
/// # Safety
/// `path` (and `anchors` if non-null) must be NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn palm_dataset_load(
    path: *const c_char,
    anchors: *const c_char,
    out: *mut *mut PalmDataset,
) -> PalmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let anchors = if anchors.is_null() {
            None
        } else {
            Some(Path::new(c_str(anchors, "anchors")?))
        };
        let bundle = DatasetBundle::load(Path::new(path), anchors)?;
        *out = Box::into_raw(Box::new(PalmDataset { bundle }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn palm_dataset_free(ds: *mut PalmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Record count, class count and embedding width; any out pointer may be null.
///
/// # Safety
/// `ds` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn palm_dataset_shape(
    ds: *const PalmDataset,
    records: *mut usize,
    classes: *mut usize,
    dim: *mut usize,
) -> PalmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let d = &ds.bundle.dataset;
        for (p, v) in [(records, d.len()), (classes, d.num_classes()), (dim, d.dim())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Learnable parameters of `method` for `shape`.
///
/// # Safety
/// `method` must be a NUL-terminated string, `shape` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn palm_param_count(method: *const c_char, shape: *const PalmShape, out: *mut usize) -> PalmStatus {
    guard(|| {
        let m = self::method(method)?;
        let s = shape.as_ref().ok_or_else(|| null("shape"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = param_count(
            m,
            ParamShape {
                classes: s.classes,
                dim: s.dim,
                context_len: s.context_len,
                embed_dim: s.embed_dim,
                hidden: s.hidden,
            },
        )
        .total();
        Ok(())
    })
}

/// Most cosine-similar row of the row-major `classes × dim` matrix.
///
/// # Safety
/// `audio` must hold `dim` values, `text_features` `classes * dim`, `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn palm_zero_shot_predict(
    audio: *const f64,
    text_features: *const f64,
    classes: usize,
    dim: usize,
    out: *mut usize,
) -> PalmStatus {
    guard(|| {
        if audio.is_null() || text_features.is_null() || out.is_null() {
            return Err(null("audio, text_features or out"));
        }
        if classes == 0 || dim == 0 {
            return Err(invalid("classes and dim must be >= 1"));
        }
        let x = std::slice::from_raw_parts(audio, dim);
        let t = std::slice::from_raw_parts(text_features, classes * dim).to_vec();
        let feats = Matrix::from_vec(classes, dim, t).map_err(|e| invalid(e.to_string()))?;
        *out = zero_shot_predict(x, &feats).map_err(|e| Failure(PalmStatus::Numerical, e.to_string()))?;
        Ok(())
    })
}

/// Runs `method` over every seed (and fold) and writes one accuracy per
/// run into `accuracies`, in seed-then-fold order, plus their mean.
///
/// # Safety
/// `ds` must be a live handle, `method` a NUL-terminated string, `config`
/// readable with `seeds` pointing at `num_seeds` values, `accuracies`
/// writable for `cap` values (or null with `cap` 0); `written` and `mean`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn palm_run_experiment(
    ds: *const PalmDataset,
    method: *const c_char,
    config: *const PalmRunConfig,
    accuracies: *mut f64,
    cap: usize,
    written: *mut usize,
    mean_accuracy: *mut f64,
) -> PalmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let m = self::method(method)?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if c.seeds.is_null() && c.num_seeds > 0 {
            return Err(null("seeds"));
        }
        let seeds = if c.num_seeds == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(c.seeds, c.num_seeds).to_vec()
        };
        let cfg = ExperimentConfig {
            method: m,
            shots: c.shots,
            epochs: c.epochs,
            lr: c.lr,
            temperature: c.temperature,
            seeds,
            folds: (c.folds > 0).then_some(c.folds),
            ..ExperimentConfig::default()
        };
        let results = run_experiment(&cfg, &ds.bundle, c.jobs.max(1))?;
        let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
        if !written.is_null() {
            *written = accs.len();
        }
        if !mean_accuracy.is_null() {
            *mean_accuracy = mean(&accs).unwrap_or(f64::NAN);
        }
        if !accuracies.is_null() {
            ptr::copy_nonoverlapping(accs.as_ptr(), accuracies, accs.len().min(cap));
        }
        if cap < accs.len() && !accuracies.is_null() {
            return Err(Failure(
                PalmStatus::BufferTooSmall,
                format!("{} results, room for {cap}", accs.len()),
            ));
        }
        Ok(())
    })
}
