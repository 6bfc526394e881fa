//! C interface to `rrhte`.
//!
//! Objects are opaque handles created by `*_new` / `rrhte_fit` and released
//! with the matching `*_free`. Every fallible call returns an
//! [`RrhteStatus`]; on failure [`rrhte_last_error_message`] describes the
//! error for the calling thread. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use rrhte::data::center_columns;
use rrhte::effects::{bias_term, corrected_effect, raw_effect, Method};
use rrhte::solver::{fit, SolverOptions};
use rrhte::{Error, FitResult, Strategy, TrialData};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrhteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numeric = 4,
    Convergence = 5,
    IllConditioned = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrhteStrategy {
    WMethod = 0,
    ALearner = 1,
}

/// Trial data: covariates, outcomes, treatment and propensities.
pub struct RrhteData {
    inner: TrialData,
}

/// A fitted reduced-rank model.
pub struct RrhteFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> RrhteStatus {
    match err {
        Error::Dimension(_) => RrhteStatus::Dimension,
        Error::NonFinite(_) | Error::Estimation(_) | Error::UndefinedRate(_) => RrhteStatus::Numeric,
        Error::Convergence { .. } => RrhteStatus::Convergence,
        Error::IllConditioned { .. } => RrhteStatus::IllConditioned,
        Error::Outcome { source, .. } => status_of(source),
        _ => RrhteStatus::InvalidArgument,
    }
}

fn fail(status: RrhteStatus, msg: &str) -> RrhteStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RrhteStatus>) -> RrhteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RrhteStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(RrhteStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: rrhte::Result<T>) -> Result<T, RrhteStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), RrhteStatus> {
    if p.is_null() {
        Err(fail(RrhteStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], RrhteStatus> {
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn dims_product(a: usize, b: usize) -> Result<usize, RrhteStatus> {
    a.checked_mul(b)
        .ok_or_else(|| fail(RrhteStatus::InvalidArgument, "dimensions overflow"))
}

fn copy_row_major(m: &DMatrix<f64>, out: *mut f64, len: usize) -> Result<(), RrhteStatus> {
    non_null(out, "output buffer")?;
    let need = m.len();
    if len < need {
        return Err(fail(
            RrhteStatus::BufferTooSmall,
            &format!("buffer holds {len} values, {need} needed"),
        ));
    }
    let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            dst[i * cols + j] = m[(i, j)];
        }
    }
    Ok(())
}

/// Builds trial data. `x` is `n x p` and `y` is `n x m`, both row-major;
/// `t` holds `-1`/`+1` and `pi` the propensity scores. When `center` is
/// non-zero the covariates are centered first; otherwise they must already
/// be centered.
///
/// # Safety
/// Array arguments must point to the stated number of doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn rrhte_data_new(
    n: usize,
    p: usize,
    m: usize,
    x: *const f64,
    y: *const f64,
    t: *const f64,
    pi: *const f64,
    center: i32,
    out: *mut *mut RrhteData,
) -> RrhteStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let x = DMatrix::from_row_slice(n, p, slice(x, dims_product(n, p)?, "x")?);
        let y = DMatrix::from_row_slice(n, m, slice(y, dims_product(n, m)?, "y")?);
        let t = DVector::from_column_slice(slice(t, n, "t")?);
        let pi = DVector::from_column_slice(slice(pi, n, "pi")?);
        let x = if center != 0 { lift(center_columns(&x))? } else { x };
        let data = lift(TrialData::new(x, y, t, pi))?;
        *out = Box::into_raw(Box::new(RrhteData { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from [`rrhte_data_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrhte_data_free(data: *mut RrhteData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Fits the reduced-rank model. A non-positive `tolerance` or zero
/// `max_iter` selects the defaults (`1e-6`, `1000`).
///
/// # Safety
/// `data` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit(
    data: *const RrhteData,
    strategy: RrhteStrategy,
    rank: usize,
    tolerance: f64,
    max_iter: usize,
    seed: u64,
    ridge: f64,
    out: *mut *mut RrhteFit,
) -> RrhteStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(data, "data")?;
        let mut options = SolverOptions::new(rank);
        if tolerance > 0.0 {
            options.tolerance = tolerance;
        }
        if max_iter > 0 {
            options.max_iter = max_iter;
        }
        options.init_seed = seed;
        options.ridge = ridge;
        let strategy = match strategy {
            RrhteStrategy::WMethod => Strategy::WMethod,
            RrhteStrategy::ALearner => Strategy::ALearner,
        };
        let res = lift(fit(strategy, &(*data).inner, &options))?;
        *out = Box::into_raw(Box::new(RrhteFit { inner: res }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from [`rrhte_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_free(fit: *mut RrhteFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_dims(
    fit: *const RrhteFit,
    p: *mut usize,
    m: *mut usize,
    r: *mut usize,
) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(p, "p")?;
        non_null(m, "m")?;
        non_null(r, "r")?;
        let c = &(*fit).inner.coeffs;
        *p = c.p();
        *m = c.m();
        *r = c.rank();
        Ok(())
    })
}

/// Copies `W` (`p x r`, row-major) into `out`, which holds `len` doubles.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_w(fit: *const RrhteFit, out: *mut f64, len: usize) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        copy_row_major((*fit).inner.coeffs.w(), out, len)
    })
}

/// Copies `V` (`m x r`, row-major) into `out`, which holds `len` doubles.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_v(fit: *const RrhteFit, out: *mut f64, len: usize) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        copy_row_major((*fit).inner.coeffs.v(), out, len)
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_iterations(fit: *const RrhteFit, out: *mut usize) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(out, "out")?;
        *out = (*fit).inner.iterations;
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_converged(fit: *const RrhteFit, out: *mut bool) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(out, "out")?;
        *out = (*fit).inner.converged;
        Ok(())
    })
}

/// Final objective value.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rrhte_fit_objective(fit: *const RrhteFit, out: *mut f64) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(out, "out")?;
        *out = (*fit).inner.objective();
        Ok(())
    })
}

/// Effect matrix `X W V'` for `n x p` covariates `x` (row-major), written
/// row-major into `out` (`n x m`). With `corrected` non-zero the A-learner
/// bias correction is applied using `pi` (length `n`); `pi` is ignored
/// otherwise and may be null.
///
/// # Safety
/// `fit` must be a live handle; `x`, `pi` and `out` must hold the stated
/// number of doubles.
#[no_mangle]
pub unsafe extern "C" fn rrhte_effects(
    fit: *const RrhteFit,
    x: *const f64,
    n: usize,
    p: usize,
    pi: *const f64,
    corrected: i32,
    out: *mut f64,
    len: usize,
) -> RrhteStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let coeffs = &(*fit).inner.coeffs;
        let x = DMatrix::from_row_slice(n, p, slice(x, dims_product(n, p)?, "x")?);
        let h = if corrected != 0 {
            let pi = DVector::from_column_slice(slice(pi, n, "pi")?);
            lift(corrected_effect(coeffs, &x, &pi))?
        } else {
            lift(raw_effect(coeffs, &x, Method::R3w))?
        };
        copy_row_major(&h.h, out, len)
    })
}

/// Additive bias correction for a raw A-learner score `u` at propensity `pi`.
#[no_mangle]
pub extern "C" fn rrhte_bias_term(u: f64, pi: f64) -> f64 {
    bias_term(u, pi)
}

/// Message for the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn rrhte_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
