//! C interface to protocomp.
//!
//! Datasets are opaque `PcDataset` handles owned by the caller and released
//! with `pc_dataset_free`. Every fallible function returns a `PcStatus`;
//! on failure `pc_last_error` describes the problem for the calling
//! thread. Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use protocomp::baselines::Method;
use protocomp::dataset::{stratified_split, CovarianceGenerator, HistogramGenerator, LabeledDataset};
use protocomp::error::ErrorClass;
use protocomp::experiment::{compress, CompressSettings};
use protocomp::knn::{evaluate_dataset, EvalOptions};
use protocomp::metric::{DatasetMetric, MetricKind};
use protocomp::ot::{emd_exact, GroundMetric, Histogram, SinkhornSolver};
use protocomp::spd::{airm, jbld, SpdMatrix};
use protocomp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad arguments or inconsistent input data.
    Validation = 2,
    /// A numerical failure (loss of definiteness, underflow, no convergence).
    Numerical = 3,
    /// File or format problem.
    Io = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcMethod {
    Scc = 0,
    Shc = 1,
    Subsample = 2,
    Cnn = 3,
    Rnn = 4,
    Fcnn = 5,
    Rmhc = 6,
}

impl From<PcMethod> for Method {
    fn from(m: PcMethod) -> Self {
        match m {
            PcMethod::Scc => Method::Scc,
            PcMethod::Shc => Method::Shc,
            PcMethod::Subsample => Method::Subsample,
            PcMethod::Cnn => Method::Cnn,
            PcMethod::Rnn => Method::Rnn,
            PcMethod::Fcnn => Method::Fcnn,
            PcMethod::Rmhc => Method::Rmhc,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcMetric {
    /// JBLD for covariances, Sinkhorn for histograms.
    Auto = 0,
    Jbld = 1,
    Airm = 2,
    Sinkhorn = 3,
    Emd = 4,
}

impl From<PcMetric> for MetricKind {
    fn from(m: PcMetric) -> Self {
        match m {
            PcMetric::Auto => MetricKind::Auto,
            PcMetric::Jbld => MetricKind::Jbld,
            PcMetric::Airm => MetricKind::Airm,
            PcMetric::Sinkhorn => MetricKind::Sinkhorn,
            PcMetric::Emd => MetricKind::Emd,
        }
    }
}

/// Options for `pc_compress`. Non-positive `gamma_sq` and `lambda` and a
/// zero `max_iter` mean "use the default".
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcCompressOptions {
    pub method: PcMethod,
    pub ratio: f64,
    pub seed: u64,
    pub gamma_sq: f64,
    pub lambda: f64,
    pub max_iter: usize,
}

/// Summary of `pc_evaluate`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcEvalReport {
    pub error_rate: f64,
    pub distance_evals: u64,
    /// Median wall time in seconds.
    pub wall_time: f64,
}

/// Opaque labeled dataset.
pub struct PcDataset(LabeledDataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PcStatus {
    match e.class() {
        ErrorClass::Validation => PcStatus::Validation,
        ErrorClass::Numerical => PcStatus::Numerical,
        ErrorClass::Io => PcStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PcStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            PcStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            PcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Lib(Error::BadParameters("path is not UTF-8".into())))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    out.write(v);
    Ok(())
}

unsafe fn write_box(out: *mut *mut PcDataset, ds: LabeledDataset) -> Result<(), Fail> {
    write_out(out, Box::into_raw(Box::new(PcDataset(ds))))
}

/// Message for the last failed call on this thread, or NULL after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_load(path_: *const c_char, out: *mut *mut PcDataset) -> PcStatus {
    guard(|| {
        let ds = LabeledDataset::load(path(path_)?)?;
        write_box(out, ds)
    })
}

/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_save(ds: *const PcDataset, path_: *const c_char) -> PcStatus {
    guard(|| Ok(deref(ds, "dataset")?.0.save(path(path_)?)?))
}

/// Synthetic covariance dataset with `classes * per_class` members.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_gen_covariance(
    classes: usize,
    per_class: usize,
    dim: usize,
    wishart_dof: usize,
    separation: f64,
    seed: u64,
    out: *mut *mut PcDataset,
) -> PcStatus {
    guard(|| {
        let g = CovarianceGenerator { classes, per_class, dim, wishart_dof, separation };
        write_box(out, g.generate(seed)?)
    })
}

/// Synthetic histogram dataset; the ground metric is Euclidean over random
/// codewords in the unit square.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_gen_histogram(
    classes: usize,
    per_class: usize,
    dim: usize,
    concentration: f64,
    seed: u64,
    out: *mut *mut PcDataset,
) -> PcStatus {
    guard(|| {
        let g = HistogramGenerator { classes, per_class, dim, concentration };
        write_box(out, g.generate(seed)?)
    })
}

/// Stratified split into training and test handles.
///
/// # Safety
/// `ds` must be a live handle; `train` and `test` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_split(
    ds: *const PcDataset,
    test_fraction: f64,
    seed: u64,
    train: *mut *mut PcDataset,
    test: *mut *mut PcDataset,
) -> PcStatus {
    guard(|| {
        if train.is_null() || test.is_null() {
            return Err(Fail::Null("out"));
        }
        let (a, b) = stratified_split(&deref(ds, "dataset")?.0, test_fraction, seed)?;
        write_box(train, a)?;
        write_box(test, b)
    })
}

/// Number of members; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_len(ds: *const PcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Matrix side or histogram length; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_dim(ds: *const PcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// Copies the labels into `labels`, which holds `len` entries.
///
/// # Safety
/// `ds` must be a live handle and `labels` writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_labels(ds: *const PcDataset, labels: *mut usize, len: usize) -> PcStatus {
    guard(|| {
        let ds = &deref(ds, "dataset")?.0;
        if labels.is_null() {
            return Err(Fail::Null("labels"));
        }
        if len != ds.len() {
            return Err(Error::DimensionMismatch { expected: ds.len(), got: len }.into());
        }
        ptr::copy_nonoverlapping(ds.labels.as_ptr(), labels, len);
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_free(ds: *mut PcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Compresses `train` into a new prototype dataset.
///
/// # Safety
/// `train` must be a live handle, `opts` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_compress(
    train: *const PcDataset,
    opts: *const PcCompressOptions,
    out: *mut *mut PcDataset,
) -> PcStatus {
    guard(|| {
        let train = &deref(train, "train")?.0;
        let o = *deref(opts, "options")?;
        let mut s = CompressSettings::new(o.method.into(), o.ratio, o.seed);
        s.gamma_sq = (o.gamma_sq > 0.0).then_some(o.gamma_sq);
        s.lambda = (o.lambda > 0.0).then_some(o.lambda);
        if o.max_iter > 0 {
            s.scc.max_iter = o.max_iter;
            s.shc.max_iter = o.max_iter;
        }
        let c = compress(train, &s, MetricKind::Auto)?;
        write_box(out, c.prototypes)
    })
}

/// k-NN classification of `test` against `reference`. A non-positive
/// `lambda` picks the default for Sinkhorn.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_evaluate(
    reference: *const PcDataset,
    test: *const PcDataset,
    k: usize,
    metric: PcMetric,
    lambda: f64,
    out: *mut PcEvalReport,
) -> PcStatus {
    guard(|| {
        let reference = &deref(reference, "reference")?.0;
        let test = &deref(test, "test")?.0;
        let m = DatasetMetric::for_dataset(reference, metric.into(), (lambda > 0.0).then_some(lambda))?;
        let r = evaluate_dataset(test, reference, &m, &EvalOptions { k, workers: 1, repetitions: 1 })?;
        write_out(out, PcEvalReport { error_rate: r.error_rate, distance_evals: r.distance_evals, wall_time: r.wall_time })
    })
}

unsafe fn spd_pair(x: *const f64, y: *const f64, dim: usize) -> Result<(SpdMatrix, SpdMatrix), Fail> {
    let n = dim * dim;
    Ok((SpdMatrix::from_row_slice(dim, slice(x, n, "x")?)?, SpdMatrix::from_row_slice(dim, slice(y, n, "y")?)?))
}

/// Jensen-Bregman LogDet divergence of two `dim x dim` SPD matrices.
///
/// # Safety
/// `x` and `y` must hold `dim * dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_jbld(x: *const f64, y: *const f64, dim: usize, out: *mut f64) -> PcStatus {
    guard(|| {
        let (x, y) = spd_pair(x, y, dim)?;
        write_out(out, jbld(&x, &y)?)
    })
}

/// Affine-invariant Riemannian distance of two SPD matrices.
///
/// # Safety
/// `x` and `y` must hold `dim * dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_airm(x: *const f64, y: *const f64, dim: usize, out: *mut f64) -> PcStatus {
    guard(|| {
        let (x, y) = spd_pair(x, y, dim)?;
        write_out(out, airm(&x, &y)?)
    })
}

unsafe fn histogram_pair(
    a: *const f64,
    b: *const f64,
    cost: *const f64,
    dim: usize,
) -> Result<(Histogram, Histogram, GroundMetric), Fail> {
    let a = Histogram::new(slice(a, dim, "a")?.to_vec())?;
    let b = Histogram::new(slice(b, dim, "b")?.to_vec())?;
    let m = GroundMetric::new(dim, slice(cost, dim * dim, "cost")?.to_vec())?;
    Ok((a, b, m))
}

/// Sinkhorn distance between histograms `a` and `b` under the row-major
/// ground cost `cost`.
///
/// # Safety
/// `a` and `b` must hold `dim` doubles, `cost` `dim * dim`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_sinkhorn(
    a: *const f64,
    b: *const f64,
    cost: *const f64,
    dim: usize,
    lambda: f64,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let (a, b, m) = histogram_pair(a, b, cost, dim)?;
        let sol = SinkhornSolver::with_defaults(&m, lambda)?.solve(&a, &b)?;
        write_out(out, sol.distance)
    })
}

/// Exact earth mover's distance by the transportation simplex.
///
/// # Safety
/// `a` and `b` must hold `dim` doubles, `cost` `dim * dim`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_emd(
    a: *const f64,
    b: *const f64,
    cost: *const f64,
    dim: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let (a, b, m) = histogram_pair(a, b, cost, dim)?;
        write_out(out, emd_exact(&a, &b, &m)?)
    })
}
