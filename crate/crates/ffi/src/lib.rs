//! C interface to `sparsecov`.
//!
//! Samples, covariance models and threshold rules live behind opaque
//! handles created by `*_new` functions and released by the matching
//! `*_free`. Every fallible call returns a [`SparsecovStatus`]; on failure
//! the message is available from [`sparsecov_last_error_message`] on the same
//! thread. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::Array2;
use sparsecov::cvselect::CvConfig;
use sparsecov::estimators::{self, ThresholdSpec};
use sparsecov::matgen::{self, make_model};
use sparsecov::rates::{self, RateQuery};
use sparsecov::twosample::{self, MarginalVariance, Sidedness, TwoSampleMethod, WaldOptions};
use sparsecov::{Centering, CovarianceModel, Error, ModelKind, RngSeed, SampleMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsecovStatus {
    Ok = 0,
    InvalidInput = 1,
    DimensionMismatch = 2,
    NotPositiveSemiDefinite = 3,
    RankDeficient = 4,
    Numerical = 5,
    Config = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

/// Two-sample method selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsecovMethod {
    Bs = 0,
    NewBs = 1,
    Cq = 2,
    NewCq = 3,
    Bonferroni = 4,
    Bh = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SparsecovTestResult {
    pub statistic: f64,
    /// NaN for the marginal methods.
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
    /// NaN for the non-thresholded methods.
    pub tau: f64,
}

pub struct SparsecovSample(SampleMatrix);
pub struct SparsecovModel(CovarianceModel);
pub struct SparsecovThreshold(ThresholdSpec);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SparsecovStatus {
    match e {
        Error::InvalidInput(_) => SparsecovStatus::InvalidInput,
        Error::DimensionMismatch(_) => SparsecovStatus::DimensionMismatch,
        Error::NotPositiveSemiDefinite(_) => SparsecovStatus::NotPositiveSemiDefinite,
        Error::RankDeficient(_) => SparsecovStatus::RankDeficient,
        Error::Numerical(_) => SparsecovStatus::Numerical,
        Error::Config(_) => SparsecovStatus::Config,
        Error::Io(_) | Error::Csv(_) => SparsecovStatus::Io,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SparsecovStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SparsecovStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SparsecovStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            SparsecovStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    let slot = unsafe { p.as_mut() }.ok_or(Failure::Null(what))?;
    *slot = v;
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len − 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let k = msg.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, k);
                *buf.add(k) = 0;
            }
        }
        msg.len()
    })
}

/// Copies an `n × p` row-major matrix into a new sample handle.
///
/// # Safety
/// `data` must be valid for `n·p` reads; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_sample_new(data: *const f64, n: usize, p: usize, zero_mean: bool, out: *mut *mut SparsecovSample) -> SparsecovStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let len = n.checked_mul(p).ok_or_else(|| Error::InvalidInput("n·p overflows".into()))?;
        let v = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let arr = Array2::from_shape_vec((n, p), v).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let centering = if zero_mean { Centering::KnownZeroMean } else { Centering::CenterByColumnMean };
        let s = SampleMatrix::new(arr, centering)?;
        unsafe { write_out(out, boxed(SparsecovSample(s)), "out") }
    })
}

/// # Safety
/// `s` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_sample_free(s: *mut SparsecovSample) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// # Safety
/// `s` must be a live sample handle; `n` and `p` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_sample_dims(s: *const SparsecovSample, n: *mut usize, p: *mut usize) -> SparsecovStatus {
    guard(|| {
        let s = unsafe { deref(s, "sample") }?;
        unsafe {
            write_out(n, s.0.n(), "n")?;
            write_out(p, s.0.p(), "p")
        }
    })
}

/// Built-in model `1..=4` for M1..M4 at dimension `p`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_model_builtin(which: u32, p: usize, out: *mut *mut SparsecovModel) -> SparsecovStatus {
    guard(|| {
        let kind = match which {
            1 => ModelKind::m1(),
            2 => ModelKind::m2(),
            3 => ModelKind::m3(),
            4 => ModelKind::m4(),
            _ => return Err(Error::InvalidInput(format!("unknown built-in model {which}")).into()),
        };
        let m = make_model(kind, p)?;
        unsafe { write_out(out, boxed(SparsecovModel(m)), "out") }
    })
}

/// Custom `p × p` covariance; fails unless symmetric and PSD.
///
/// # Safety
/// `entries` must be valid for `p·p` reads; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_model_custom(entries: *const f64, p: usize, out: *mut *mut SparsecovModel) -> SparsecovStatus {
    guard(|| {
        if entries.is_null() {
            return Err(Failure::Null("entries"));
        }
        let len = p.checked_mul(p).ok_or_else(|| Error::InvalidInput("p² overflows".into()))?;
        let v = unsafe { std::slice::from_raw_parts(entries, len) }.to_vec();
        let arr = Array2::from_shape_vec((p, p), v).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let m = CovarianceModel::custom(arr)?;
        unsafe { write_out(out, boxed(SparsecovModel(m)), "out") }
    })
}

/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_model_free(m: *mut SparsecovModel) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// `‖Σ‖²_F` and its off-diagonal part for a model.
///
/// # Safety
/// `m` must be a live model handle; output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_model_functionals(m: *const SparsecovModel, frobenius_sq: *mut f64, q_offdiag: *mut f64) -> SparsecovStatus {
    guard(|| {
        let m = unsafe { deref(m, "model") }?;
        unsafe {
            write_out(frobenius_sq, m.0.frobenius_sq(), "frobenius_sq")?;
            write_out(q_offdiag, m.0.q_offdiag(), "q_offdiag")
        }
    })
}

/// Draws `n` rows from `N(0, Σ)`.
///
/// # Safety
/// `m` must be a live model handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_model_sample(m: *const SparsecovModel, n: usize, seed: u64, stream: u64, out: *mut *mut SparsecovSample) -> SparsecovStatus {
    guard(|| {
        let m = unsafe { deref(m, "model") }?;
        let s = matgen::sample_gaussian(&m.0, n, None, RngSeed::new(seed).with_stream(stream))?;
        unsafe { write_out(out, boxed(SparsecovSample(s)), "out") }
    })
}

/// Fixed threshold `tau`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_threshold_explicit(tau: f64, out: *mut *mut SparsecovThreshold) -> SparsecovStatus {
    guard(|| {
        if !(tau >= 0.0) {
            return Err(Error::InvalidInput(format!("threshold must be nonnegative, got {tau}")).into());
        }
        unsafe { write_out(out, boxed(SparsecovThreshold(ThresholdSpec::explicit(tau))), "out") }
    })
}

/// `τ = c·√(log p / n)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_threshold_practical(c: f64, out: *mut *mut SparsecovThreshold) -> SparsecovStatus {
    guard(|| {
        if !(c > 0.0) {
            return Err(Error::InvalidInput(format!("constant must be positive, got {c}")).into());
        }
        unsafe { write_out(out, boxed(SparsecovThreshold(ThresholdSpec::practical(c))), "out") }
    })
}

/// Cross-validated threshold with `m` splits and `j` grid points.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_threshold_cv(m: usize, j: usize, seed: u64, out: *mut *mut SparsecovThreshold) -> SparsecovStatus {
    guard(|| {
        let cfg = CvConfig { m, j, seed: RngSeed::new(seed), ..CvConfig::default() };
        unsafe { write_out(out, boxed(SparsecovThreshold(ThresholdSpec::cross_validated(cfg))), "out") }
    })
}

/// # Safety
/// `t` must be null or a live threshold handle.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_threshold_free(t: *mut SparsecovThreshold) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Resolves a threshold rule on a sample.
///
/// # Safety
/// Handles must be live; `tau` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_resolve_threshold(s: *const SparsecovSample, t: *const SparsecovThreshold, tau: *mut f64) -> SparsecovStatus {
    guard(|| {
        let (s, t) = unsafe { (deref(s, "sample")?, deref(t, "threshold")?) };
        let r = estimators::resolve_threshold(&t.0, &s.0)?;
        unsafe { write_out(tau, r.tau, "tau") }
    })
}

/// Writes the `p × p` empirical covariance, row-major, into `out`.
///
/// # Safety
/// `s` must be live; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_empirical_cov(s: *const SparsecovSample, out: *mut f64, len: usize) -> SparsecovStatus {
    guard(|| {
        let s = unsafe { deref(s, "sample") }?;
        let p = s.0.p();
        if len != p * p {
            return Err(Error::DimensionMismatch(format!("buffer holds {len} values, need {}", p * p)).into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let c = estimators::empirical_cov_array(s.0.view(), s.0.centering())?;
        let dst = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (d, v) in dst.iter_mut().zip(c.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// `Q(Σ̃_τ)`, the thresholded off-diagonal sum of squares.
///
/// # Safety
/// `s` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_q_offdiag(s: *const SparsecovSample, tau: f64, out: *mut f64) -> SparsecovStatus {
    guard(|| {
        let s = unsafe { deref(s, "sample") }?;
        let t = estimators::threshold(&estimators::empirical_cov(&s.0)?, tau)?;
        unsafe { write_out(out, estimators::q_offdiag(&t).value, "out") }
    })
}

/// Unbiased estimate of `Σ_i σ_ii²`.
///
/// # Safety
/// `s` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_d_diag(s: *const SparsecovSample, out: *mut f64) -> SparsecovStatus {
    guard(|| {
        let s = unsafe { deref(s, "sample") }?;
        unsafe { write_out(out, estimators::d_diag(&s.0)?.value, "out") }
    })
}

/// `max_i Σ_j |σ̃_ij|^r` of the thresholded covariance.
///
/// # Safety
/// `s` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_lr(s: *const SparsecovSample, tau: f64, r: f64, out: *mut f64) -> SparsecovStatus {
    guard(|| {
        let s = unsafe { deref(s, "sample") }?;
        let t = estimators::threshold(&estimators::empirical_cov(&s.0)?, tau)?;
        unsafe { write_out(out, estimators::lr_functional(&t, r)?.value, "out") }
    })
}

/// Bai–Saranadasa `B²`.
///
/// # Safety
/// `s` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_bs_b2(s: *const SparsecovSample, out: *mut f64) -> SparsecovStatus {
    guard(|| {
        let s = unsafe { deref(s, "sample") }?;
        unsafe { write_out(out, estimators::bs_b2(&s.0)?.value, "out") }
    })
}

/// Runs one two-sample test. `threshold` is required for the thresholded
/// methods and ignored otherwise.
///
/// # Safety
/// Sample handles must be live, `threshold` null or live, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_two_sample(
    x1: *const SparsecovSample,
    x2: *const SparsecovSample,
    method: SparsecovMethod,
    threshold: *const SparsecovThreshold,
    alpha: f64,
    two_sided: bool,
    out: *mut SparsecovTestResult,
) -> SparsecovStatus {
    guard(|| {
        let (x1, x2) = unsafe { (deref(x1, "x1")?, deref(x2, "x2")?) };
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")).into());
        }
        let opts = WaldOptions { alpha, sidedness: if two_sided { Sidedness::TwoSided } else { Sidedness::Upper } };
        let spec = || unsafe { deref(threshold, "threshold") }.map(|t| &t.0);
        let rep = match method {
            SparsecovMethod::Bs => twosample::bs_test(&x1.0, &x2.0, &opts, None)?,
            SparsecovMethod::NewBs => twosample::bs_test(&x1.0, &x2.0, &opts, Some(spec()?))?,
            SparsecovMethod::Cq => twosample::cq_test(&x1.0, &x2.0, &opts, None)?,
            SparsecovMethod::NewCq => twosample::cq_test(&x1.0, &x2.0, &opts, Some(spec()?))?,
            SparsecovMethod::Bonferroni => twosample::marginal_tests(&x1.0, &x2.0, alpha, twosample::Correction::Bonferroni, MarginalVariance::Pooled)?,
            SparsecovMethod::Bh => twosample::marginal_tests(&x1.0, &x2.0, alpha, twosample::Correction::Bh, MarginalVariance::Pooled)?,
        };
        debug_assert!(TwoSampleMethod::ALL.contains(&rep.method));
        let res = SparsecovTestResult {
            statistic: rep.statistic,
            z: rep.z.unwrap_or(f64::NAN),
            p_value: rep.p_value,
            reject: rep.reject,
            tau: rep.tau.unwrap_or(f64::NAN),
        };
        unsafe { write_out(out, res, "out") }
    })
}

/// Upper rates for the quadratic and row functionals.
///
/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sparsecov_rates(n: usize, p: usize, q: f64, radius: f64, r: f64, psi_quad: *mut f64, psi_lr: *mut f64) -> SparsecovStatus {
    guard(|| {
        let qr = RateQuery { n, p, q, radius, r, ..RateQuery::default() };
        let a = rates::psi_quad(&qr)?;
        let b = if q < r { rates::psi_lr(&qr)? } else { f64::NAN };
        unsafe {
            write_out(psi_quad, a, "psi_quad")?;
            write_out(psi_lr, b, "psi_lr")
        }
    })
}
