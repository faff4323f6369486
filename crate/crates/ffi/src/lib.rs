//! C ABI over the illab library.
//!
//! Every fallible function returns an [`IllabStatus`]; on failure the message
//! is kept per thread and read back with [`illab_last_error_message`].
//! Matrices are dense row-major buffers, labels are bytes (0 or 1).

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use illab::ensemble::{ensemble_average, PredictionSet};
use illab::losses::{compute_class_stats, loss_dispatch, ClassStats, LossConfig, LossKind};
use illab::metrics::{bootstrap_ci, roc_auc, youden_threshold, BootstrapSpec};
use illab::model::{load_checkpoint, predict_proba, ModelParams};
use illab::numcore::{LabelMatrix, Matrix};
use illab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IllabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Shape = 4,
    Contract = 5,
    Config = 6,
    DegenerateClass = 7,
    UndefinedAuc = 8,
    UnstableCi = 9,
    UnsupportedArchitecture = 10,
    Divergence = 11,
    Io = 12,
    Parse = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IllabLossKind {
    Bce = 0,
    WeightedBce = 1,
    Focal = 2,
    Db = 3,
    ModifiedDb = 4,
}

/// Loss hyperparameters; `no_finding_index < 0` means none.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IllabLossParams {
    pub variant: IllabLossKind,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub no_finding_index: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IllabInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub undefined: usize,
}

/// Opaque per-class positive counts.
pub struct IllabClassStats(ClassStats);

/// Opaque loaded model.
pub struct IllabModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn status_of(e: &Error) -> IllabStatus {
    match e {
        Error::Domain(_) => IllabStatus::Domain,
        Error::Shape(_) => IllabStatus::Shape,
        Error::Contract(_) => IllabStatus::Contract,
        Error::Config(_) | Error::MarginUndefined { .. } | Error::Feasibility(_) => IllabStatus::Config,
        Error::DegenerateClass { .. } => IllabStatus::DegenerateClass,
        Error::UndefinedAuc => IllabStatus::UndefinedAuc,
        Error::UnstableCi { .. } => IllabStatus::UnstableCi,
        Error::UnsupportedArchitecture(_) => IllabStatus::UnsupportedArchitecture,
        Error::Divergence { .. } => IllabStatus::Divergence,
        Error::Io { .. } => IllabStatus::Io,
        Error::Parse { .. } | Error::Ingestion(_) => IllabStatus::Parse,
    }
}

enum Failure {
    Status(IllabStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(IllabStatus::NullPointer, "required pointer is null".into())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(IllabStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IllabStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (IllabStatus::Ok, String::new()),
        Ok(Err(Failure::Status(s, m))) => (s, m),
        Ok(Err(Failure::Lib(e))) => (status_of(&e), e.to_string()),
        Err(_) => (IllabStatus::Panic, "internal panic".into()),
    };
    LAST_ERROR.with(|l| *l.borrow_mut() = msg);
    status
}

/// Borrows `len` elements; a null pointer is accepted only when `len == 0`.
unsafe fn view<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn view_mut<'a, T>(ptr: *mut T, len: usize) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn area(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))
}

fn bools(bytes: &[u8]) -> Result<Vec<bool>, Failure> {
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(invalid(format!("label byte {b} is not 0 or 1"))),
        })
        .collect()
}

unsafe fn label_matrix(ptr: *const u8, rows: usize, cols: usize) -> Result<LabelMatrix, Failure> {
    let flags = bools(view(ptr, area(rows, cols)?)?)?;
    let mut m = LabelMatrix::zeros(rows, cols);
    for (i, &f) in flags.iter().enumerate() {
        m.set(i / cols, i % cols, f);
    }
    Ok(m)
}

unsafe fn matrix(ptr: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    Ok(Matrix::from_vec(rows, cols, view(ptr, area(rows, cols)?)?.to_vec())?)
}

impl From<IllabLossKind> for LossKind {
    fn from(k: IllabLossKind) -> Self {
        match k {
            IllabLossKind::Bce => LossKind::Bce,
            IllabLossKind::WeightedBce => LossKind::WeightedBce,
            IllabLossKind::Focal => LossKind::Focal,
            IllabLossKind::Db => LossKind::Db,
            IllabLossKind::ModifiedDb => LossKind::ModifiedDb,
        }
    }
}

impl IllabLossParams {
    fn to_config(self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            mu: self.mu,
            kappa: self.kappa,
            lambda: self.lambda,
            gamma: self.gamma,
            no_finding_index: usize::try_from(self.no_finding_index).ok(),
            variant: self.variant.into(),
        }
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length
/// plus one. An empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn illab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|l| {
        let msg = l.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Default hyperparameters for `variant`, without a "No finding" class.
#[no_mangle]
pub extern "C" fn illab_loss_params_default(variant: IllabLossKind) -> IllabLossParams {
    let d = LossConfig::default();
    IllabLossParams {
        variant,
        alpha: d.alpha,
        beta: d.beta,
        mu: d.mu,
        kappa: d.kappa,
        lambda: d.lambda,
        gamma: d.gamma,
        no_finding_index: -1,
    }
}

/// Counts per-class positives of a `rows x cols` label matrix.
///
/// # Safety
/// `labels` must point to `rows * cols` readable bytes and `out` must be a
/// valid pointer. Release the handle with [`illab_class_stats_free`].
#[no_mangle]
pub unsafe extern "C" fn illab_class_stats_from_labels(
    labels: *const u8,
    rows: usize,
    cols: usize,
    out: *mut *mut IllabClassStats,
) -> IllabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let y = label_matrix(labels, rows, cols)?;
        let stats = compute_class_stats(&y, None)?;
        *out = Box::into_raw(Box::new(IllabClassStats(stats)));
        Ok(())
    })
}

/// Builds statistics from `num_classes` positive counts over `num_samples`.
///
/// # Safety
/// `positives` must point to `num_classes` readable counts and `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn illab_class_stats_from_counts(
    num_samples: usize,
    positives: *const usize,
    num_classes: usize,
    out: *mut *mut IllabClassStats,
) -> IllabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let counts = view(positives, num_classes)?.to_vec();
        *out = Box::into_raw(Box::new(IllabClassStats(ClassStats::from_counts(num_samples, counts)?)));
        Ok(())
    })
}

/// # Safety
/// `stats` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn illab_class_stats_free(stats: *mut IllabClassStats) {
    if !stats.is_null() {
        drop(Box::from_raw(stats));
    }
}

/// Mean loss of `rows x cols` logits against labels; `grad_out`, when not
/// null, receives the gradient with respect to the logits.
///
/// # Safety
/// `params`, `stats` and `loss_out` must be valid; `logits` and `labels`
/// must hold `rows * cols` elements; `grad_out` must be null or hold
/// `rows * cols` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn illab_loss(
    params: *const IllabLossParams,
    stats: *const IllabClassStats,
    logits: *const f64,
    labels: *const u8,
    rows: usize,
    cols: usize,
    loss_out: *mut f64,
    grad_out: *mut f64,
) -> IllabStatus {
    guard(|| {
        if params.is_null() || stats.is_null() || loss_out.is_null() {
            return Err(null());
        }
        let z = matrix(logits, rows, cols)?;
        let y = label_matrix(labels, rows, cols)?;
        let out = loss_dispatch(&z, &y, &(*stats).0, &(*params).to_config())?;
        *loss_out = out.value;
        if !grad_out.is_null() {
            view_mut(grad_out, area(rows, cols)?)?.copy_from_slice(out.grad_logits.as_slice());
        }
        Ok(())
    })
}

/// Exact ROC AUC with ties counted as one half.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `auc_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn illab_auc(scores: *const f64, labels: *const u8, n: usize, auc_out: *mut f64) -> IllabStatus {
    guard(|| {
        if auc_out.is_null() {
            return Err(null());
        }
        *auc_out = roc_auc(view(scores, n)?, &bools(view(labels, n)?)?)?;
        Ok(())
    })
}

/// Cut-off maximizing sensitivity + specificity - 1, and that maximum.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; both outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn illab_youden(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    threshold_out: *mut f64,
    j_out: *mut f64,
) -> IllabStatus {
    guard(|| {
        if threshold_out.is_null() || j_out.is_null() {
            return Err(null());
        }
        let (t, j) = youden_threshold(view(scores, n)?, &bools(view(labels, n)?)?)?;
        *threshold_out = t;
        *j_out = j;
        Ok(())
    })
}

/// Percentile bootstrap interval of the AUC over `(score, label)` pairs.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn illab_bootstrap_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    replications: usize,
    seed: u64,
    confidence: f64,
    out: *mut IllabInterval,
) -> IllabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let spec = BootstrapSpec {
            replications,
            seed,
            confidence,
        };
        let iv = bootstrap_ci(roc_auc, view(scores, n)?, &bools(view(labels, n)?)?, &spec)?;
        *out = IllabInterval {
            point: iv.point,
            lo: iv.lo,
            hi: iv.hi,
            undefined: iv.undefined,
        };
        Ok(())
    })
}

/// Elementwise mean of `count` probability matrices of `rows x cols`.
///
/// # Safety
/// `members` must hold `count` pointers, each to `rows * cols` doubles;
/// `out` must hold `rows * cols` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn illab_ensemble_average(
    members: *const *const f64,
    count: usize,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> IllabStatus {
    guard(|| {
        let mut set = PredictionSet::new();
        for (i, &m) in view(members, count)?.iter().enumerate() {
            set.push(format!("m{i}"), matrix(m, rows, cols)?)?;
        }
        let avg = ensemble_average(&set)?;
        view_mut(out, area(rows, cols)?)?.copy_from_slice(avg.as_slice());
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
/// Release the handle with [`illab_model_free`].
#[no_mangle]
pub unsafe extern "C" fn illab_model_load(path: *const c_char, out: *mut *mut IllabModel) -> IllabStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null());
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        *out = Box::into_raw(Box::new(IllabModel(load_checkpoint(Path::new(p))?)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn illab_model_input_dim(model: *const IllabModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn illab_model_num_classes(model: *const IllabModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_classes())
}

/// Sigmoid probabilities for `rows` feature vectors.
///
/// # Safety
/// `model` must be a live handle; `features` must hold
/// `rows * input_dim` doubles and `probs_out` `rows * num_classes`.
#[no_mangle]
pub unsafe extern "C" fn illab_model_predict(
    model: *const IllabModel,
    features: *const f64,
    rows: usize,
    probs_out: *mut f64,
) -> IllabStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(null)?.0;
        let x = matrix(features, rows, m.input_dim())?;
        let p = predict_proba(m, &x)?;
        view_mut(probs_out, area(rows, m.num_classes())?)?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`illab_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn illab_model_free(model: *mut IllabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
