//! C ABI over the breakline library.
//!
//! Objects are opaque handles created by `bl_*_new` / `bl_*_fit` calls and
//! released with the matching `bl_*_free`. Every fallible call returns a
//! [`BlStatus`]; on failure [`bl_last_error`] describes the cause for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use breakline::area::{band_area, AreaConfig};
use breakline::band::PredictionBand;
use breakline::bootstrap::bootstrap_pool;
use breakline::dataset::{load_dataset, BivariateDataset, LoadSpec};
use breakline::loess::LoessConfig;
use breakline::quantile::{fit_segmented_quantile, QuantileOptions, QuantileSegmentedFit};
use breakline::rng::RngSpec;
use breakline::segmented::{fit_segmented, plrm_prediction_band, SegmentedFit, SegmentedOptions};
use breakline::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InputError = 3,
    InsufficientData = 4,
    FitFailed = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Observations sorted by x.
pub struct BlDataset(BivariateDataset);

/// Two-breakpoint least-squares fit.
pub struct BlSegmentedFit(SegmentedFit);

/// Two-breakpoint quantile fit at one tau.
pub struct BlQuantileFit(QuantileSegmentedFit);

/// Prediction band on a grid of x values.
pub struct BlBand(PredictionBand);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> BlStatus {
    match e {
        Error::InvalidArgument(_) | Error::TooFewReplicates(..) | Error::ExtremeTau { .. } => {
            BlStatus::InvalidArgument
        }
        Error::TooFewPoints { .. } | Error::EmptyDataset | Error::NoFeasibleBreakpoints { .. } => {
            BlStatus::InsufficientData
        }
        e if e.is_input_error() => BlStatus::InputError,
        _ => BlStatus::FitFailed,
    }
}

/// Runs `f`, mapping errors and panics to a status and the thread's message.
fn guard(f: impl FnOnce() -> Result<(), (BlStatus, String)>) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BlStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            BlStatus::Panic
        }
    }
}

fn lift(e: Error) -> (BlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BlStatus, String) {
    (BlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (BlStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (BlStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (BlStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn bl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `n` (x, y) pairs into a new dataset.
///
/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_dataset_new(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut *mut BlDataset,
) -> BlStatus {
    guard(|| {
        let xs = slice(xs, n, "xs")?.to_vec();
        let ys = slice(ys, n, "ys")?.to_vec();
        let ds = BivariateDataset::new(xs, ys).map_err(lift)?;
        put(out, BlDataset(ds))
    })
}

/// Reads columns `x_column` and `y_column` from a CSV file with a header row.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_dataset_load_csv(
    path: *const c_char,
    x_column: *const c_char,
    y_column: *const c_char,
    out: *mut *mut BlDataset,
) -> BlStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let spec = LoadSpec::new(c_str(x_column, "x_column")?, c_str(y_column, "y_column")?);
        let ds = load_dataset(Path::new(path), &spec).map_err(lift)?;
        put(out, BlDataset(ds))
    })
}

/// Number of observations; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn bl_dataset_len(ds: *const BlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Copies the sorted observations into caller buffers of length `cap`.
///
/// # Safety
/// `xs` and `ys` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_dataset_copy(
    ds: *const BlDataset,
    xs: *mut f64,
    ys: *mut f64,
    cap: usize,
) -> BlStatus {
    guard(|| {
        let d = &as_ref(ds, "dataset")?.0;
        let n = d.len();
        if cap < n {
            return Err((BlStatus::BufferTooSmall, format!("need {n} slots, got {cap}")));
        }
        if xs.is_null() || ys.is_null() {
            return Err(null("buffer"));
        }
        std::ptr::copy_nonoverlapping(d.xs().as_ptr(), xs, n);
        std::ptr::copy_nonoverlapping(d.ys().as_ptr(), ys, n);
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bl_dataset_free(ds: *mut BlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Least-squares fit with at least `min_points` observations per segment.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_plrm_fit(
    ds: *const BlDataset,
    min_points: usize,
    out: *mut *mut BlSegmentedFit,
) -> BlStatus {
    guard(|| {
        let d = &as_ref(ds, "dataset")?.0;
        let opts = SegmentedOptions {
            min_points,
            ..Default::default()
        };
        let fit = fit_segmented(d, None, &opts).map_err(lift)?;
        put(out, BlSegmentedFit(fit))
    })
}

/// Writes beta0..beta3 to `beta[4]` and the breakpoints to `alpha[2]`;
/// `rss` may be NULL.
///
/// # Safety
/// `beta` and `alpha` must hold 4 and 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_plrm_params(
    fit: *const BlSegmentedFit,
    beta: *mut f64,
    alpha: *mut f64,
    rss: *mut f64,
) -> BlStatus {
    guard(|| {
        let f = &as_ref(fit, "fit")?.0;
        if beta.is_null() || alpha.is_null() {
            return Err(null("buffer"));
        }
        std::ptr::copy_nonoverlapping(f.model.beta.as_ptr(), beta, 4);
        std::ptr::copy_nonoverlapping(f.model.alpha.as_ptr(), alpha, 2);
        if !rss.is_null() {
            *rss = f.rss;
        }
        Ok(())
    })
}

/// Confidence intervals for both breakpoints at `level`.
///
/// # Safety
/// `lower` and `upper` must hold 2 writable doubles each.
#[no_mangle]
pub unsafe extern "C" fn bl_plrm_breakpoint_ci(
    fit: *const BlSegmentedFit,
    level: f64,
    lower: *mut f64,
    upper: *mut f64,
) -> BlStatus {
    guard(|| {
        let f = &as_ref(fit, "fit")?.0;
        if !(level > 0.0 && level < 1.0) {
            return Err((BlStatus::InvalidArgument, format!("level must lie in (0, 1), got {level}")));
        }
        if lower.is_null() || upper.is_null() {
            return Err(null("buffer"));
        }
        let iv = f.breakpoint_intervals(level);
        for (k, (lo, hi)) in iv.iter().enumerate() {
            *lower.add(k) = *lo;
            *upper.add(k) = *hi;
        }
        Ok(())
    })
}

/// Parametric prediction band for new observations.
///
/// # Safety
/// `fit` must come from `ds`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_plrm_band(
    fit: *const BlSegmentedFit,
    ds: *const BlDataset,
    gamma: f64,
    out: *mut *mut BlBand,
) -> BlStatus {
    guard(|| {
        let f = &as_ref(fit, "fit")?.0;
        let d = &as_ref(ds, "dataset")?.0;
        let band = plrm_prediction_band(f, d, gamma).map_err(lift)?;
        put(out, BlBand(band))
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bl_plrm_free(fit: *mut BlSegmentedFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Quantile fit at `tau` with at least `min_points` observations per segment.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_pqrm_fit(
    ds: *const BlDataset,
    tau: f64,
    min_points: usize,
    out: *mut *mut BlQuantileFit,
) -> BlStatus {
    guard(|| {
        let d = &as_ref(ds, "dataset")?.0;
        let opts = QuantileOptions {
            min_points,
            ..Default::default()
        };
        let fit = fit_segmented_quantile(d, tau, None, &opts).map_err(lift)?;
        put(out, BlQuantileFit(fit))
    })
}

/// Writes beta to `beta[4]`, breakpoints to `alpha[2]`; `objective` may be NULL.
///
/// # Safety
/// `beta` and `alpha` must hold 4 and 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_pqrm_params(
    fit: *const BlQuantileFit,
    beta: *mut f64,
    alpha: *mut f64,
    objective: *mut f64,
) -> BlStatus {
    guard(|| {
        let f = &as_ref(fit, "fit")?.0;
        if beta.is_null() || alpha.is_null() {
            return Err(null("buffer"));
        }
        std::ptr::copy_nonoverlapping(f.model.beta.as_ptr(), beta, 4);
        std::ptr::copy_nonoverlapping(f.model.alpha.as_ptr(), alpha, 2);
        if !objective.is_null() {
            *objective = f.objective;
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bl_pqrm_free(fit: *mut BlQuantileFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Loess fit with a residual-bootstrap band from `replicates` resamples.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_loess_band(
    ds: *const BlDataset,
    span: f64,
    degree: usize,
    robust_iterations: usize,
    replicates: usize,
    gamma: f64,
    seed: u64,
    out: *mut *mut BlBand,
) -> BlStatus {
    guard(|| {
        let d = &as_ref(ds, "dataset")?.0;
        let cfg = LoessConfig {
            span,
            degree,
            robust_iterations,
        };
        cfg.validate(d.len()).map_err(lift)?;
        let pool = bootstrap_pool(d, &cfg, replicates, RngSpec::new(seed)).map_err(lift)?;
        let band = pool.band(gamma).map_err(lift)?;
        put(out, BlBand(band))
    })
}

/// Number of grid points in the band; 0 for NULL.
///
/// # Safety
/// `band` must be NULL or a live band handle.
#[no_mangle]
pub unsafe extern "C" fn bl_band_len(band: *const BlBand) -> usize {
    band.as_ref().map_or(0, |b| b.0.grid_x.len())
}

/// Copies the band into caller buffers of length `cap`. Any buffer may be NULL.
///
/// # Safety
/// Non-NULL buffers must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_band_copy(
    band: *const BlBand,
    x: *mut f64,
    center: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
    cap: usize,
) -> BlStatus {
    guard(|| {
        let b = &as_ref(band, "band")?.0;
        let n = b.grid_x.len();
        if cap < n {
            return Err((BlStatus::BufferTooSmall, format!("need {n} slots, got {cap}")));
        }
        for (dst, src) in [(x, &b.grid_x), (center, &b.center), (lower, &b.lower), (upper, &b.upper)] {
            if !dst.is_null() {
                std::ptr::copy_nonoverlapping(src.as_ptr(), dst, n);
            }
        }
        Ok(())
    })
}

/// Band area by the midpoint rule on `grid_cells` cells.
///
/// # Safety
/// `area` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_band_area(band: *const BlBand, grid_cells: usize, area: *mut f64) -> BlStatus {
    guard(|| {
        let b = &as_ref(band, "band")?.0;
        if area.is_null() {
            return Err(null("area"));
        }
        *area = band_area(b, &AreaConfig { grid_cells }).map_err(lift)?.area;
        Ok(())
    })
}

/// # Safety
/// `band` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bl_band_free(band: *mut BlBand) {
    if !band.is_null() {
        drop(Box::from_raw(band));
    }
}
