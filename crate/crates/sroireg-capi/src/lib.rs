//! C ABI over the matching pipeline: opaque handles, integer status
//! codes, and a thread-local last-error message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sroireg::features::extract_gradhist_opts;
use sroireg::matching::{run_hdm, HybridParams, MatchSet, MatchWarning};
use sroireg::raster::{load_image, load_mask, Image, RegionMask};
use sroireg::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrgStatus {
    SrgOk = 0,
    SrgErrInvalidArgument = 1,
    SrgErrIo = 2,
    SrgErrFormat = 3,
    SrgErrDimension = 4,
    SrgErrDegenerateRegion = 5,
    SrgErrInsufficientMatches = 6,
    SrgErrFit = 7,
    SrgErrPanic = 8,
}

/// Matcher parameters; zero-initialize and call `srg_params_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrgParams {
    pub delta: f64,
    pub omega: f64,
    pub theta: f64,
    pub ransac_iters: usize,
    pub ransac_tol: f64,
    pub ransac_min_inliers: usize,
    pub seed: u64,
}

/// One correspondence between grid points of the two images.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrgMatch {
    pub x_ir: u32,
    pub y_ir: u32,
    pub x_vi: u32,
    pub y_vi: u32,
    pub score: f64,
}

pub struct SrgImage(Image);
pub struct SrgMask(RegionMask);
pub struct SrgMatches(MatchSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SrgStatus {
    match err {
        Error::Io { .. } => SrgStatus::SrgErrIo,
        Error::Format(_) => SrgStatus::SrgErrFormat,
        Error::Dimension(_) => SrgStatus::SrgErrDimension,
        Error::DegenerateRegion(_) => SrgStatus::SrgErrDegenerateRegion,
        Error::InsufficientMatches { .. } => SrgStatus::SrgErrInsufficientMatches,
        Error::Fit(_) => SrgStatus::SrgErrFit,
        Error::Parameter(_) => SrgStatus::SrgErrInvalidArgument,
    }
}

fn fail(err: &Error) -> SrgStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guard(f: impl FnOnce() -> SrgStatus) -> SrgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            SrgStatus::SrgErrPanic
        }
    }
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn srg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fill `params` with the reference defaults.
#[no_mangle]
pub extern "C" fn srg_params_default(params: *mut SrgParams) -> SrgStatus {
    if params.is_null() {
        set_error("params is null");
        return SrgStatus::SrgErrInvalidArgument;
    }
    let d = HybridParams::default();
    unsafe {
        *params = SrgParams {
            delta: d.delta,
            omega: d.omega,
            theta: d.theta,
            ransac_iters: d.ransac_iters,
            ransac_tol: d.ransac_tol,
            ransac_min_inliers: d.ransac_min_inliers,
            seed: d.seed,
        };
    }
    SrgStatus::SrgOk
}

/// Build an image from row-major 8-bit grayscale pixels.
///
/// # Safety
/// `gray` must point to `width * height` readable bytes and `out` must
/// be a valid location for a pointer.
#[no_mangle]
pub unsafe extern "C" fn srg_image_create(
    width: usize,
    height: usize,
    gray: *const u8,
    out: *mut *mut SrgImage,
) -> SrgStatus {
    if gray.is_null() || out.is_null() {
        set_error("null pointer argument");
        return SrgStatus::SrgErrInvalidArgument;
    }
    guard(|| {
        let raw = std::slice::from_raw_parts(gray, width * height);
        let data = raw.iter().map(|&v| v as f64 / 255.0).collect();
        match Image::new(width, height, data) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(SrgImage(img)));
                SrgStatus::SrgOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a PGM or grayscale PNG file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid
/// location for a pointer.
#[no_mangle]
pub unsafe extern "C" fn srg_image_load(path: *const c_char, out: *mut *mut SrgImage) -> SrgStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return SrgStatus::SrgErrInvalidArgument;
    }
    guard(|| {
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid utf-8");
                return SrgStatus::SrgErrInvalidArgument;
            }
        };
        match load_image(path) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(SrgImage(img)));
                SrgStatus::SrgOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `img` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn srg_image_width(img: *const SrgImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width)
}

/// # Safety
/// `img` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn srg_image_height(img: *const SrgImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height)
}

/// # Safety
/// `img` must be a handle from this library, not freed before; null is
/// a no-op.
#[no_mangle]
pub unsafe extern "C" fn srg_image_free(img: *mut SrgImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Build a region mask from `width * height` bytes, nonzero meaning
/// inside the region.
///
/// # Safety
/// `bits` must point to `width * height` readable bytes and `out` must
/// be a valid location for a pointer.
#[no_mangle]
pub unsafe extern "C" fn srg_mask_create(
    width: usize,
    height: usize,
    bits: *const u8,
    out: *mut *mut SrgMask,
) -> SrgStatus {
    if bits.is_null() || out.is_null() {
        set_error("null pointer argument");
        return SrgStatus::SrgErrInvalidArgument;
    }
    guard(|| {
        let raw = std::slice::from_raw_parts(bits, width * height);
        match RegionMask::new(width, height, raw.iter().map(|&v| v != 0).collect()) {
            Ok(mask) => {
                *out = Box::into_raw(Box::new(SrgMask(mask)));
                SrgStatus::SrgOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a mask image for a `width` x `height` raster (full-resolution
/// or cell-resolution file).
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid
/// location for a pointer.
#[no_mangle]
pub unsafe extern "C" fn srg_mask_load(
    path: *const c_char,
    width: usize,
    height: usize,
    out: *mut *mut SrgMask,
) -> SrgStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return SrgStatus::SrgErrInvalidArgument;
    }
    guard(|| {
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid utf-8");
                return SrgStatus::SrgErrInvalidArgument;
            }
        };
        match load_mask(path, (width, height)) {
            Ok(mask) => {
                *out = Box::into_raw(Box::new(SrgMask(mask)));
                SrgStatus::SrgOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `mask` must be a handle from this library, not freed before; null is
/// a no-op.
#[no_mangle]
pub unsafe extern "C" fn srg_mask_free(mask: *mut SrgMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Run the hybrid matcher on two images with their region masks, using
/// the built-in orientation-folded gradient descriptor.
///
/// # Safety
/// All handles must be live handles from this library and `out` a valid
/// location for a pointer.
#[no_mangle]
pub unsafe extern "C" fn srg_match(
    ir: *const SrgImage,
    vi: *const SrgImage,
    mask_ir: *const SrgMask,
    mask_vi: *const SrgMask,
    params: *const SrgParams,
    out: *mut *mut SrgMatches,
) -> SrgStatus {
    if ir.is_null() || vi.is_null() || mask_ir.is_null() || mask_vi.is_null() || out.is_null() {
        set_error("null pointer argument");
        return SrgStatus::SrgErrInvalidArgument;
    }
    guard(|| {
        let p = if params.is_null() {
            HybridParams::default()
        } else {
            let p = &*params;
            HybridParams {
                delta: p.delta,
                omega: p.omega,
                theta: p.theta,
                ransac_iters: p.ransac_iters,
                ransac_tol: p.ransac_tol,
                ransac_min_inliers: p.ransac_min_inliers,
                seed: p.seed,
            }
        };
        let run = || -> sroireg::Result<MatchSet> {
            let f_ir = extract_gradhist_opts(&(*ir).0, true)?;
            let f_vi = extract_gradhist_opts(&(*vi).0, true)?;
            run_hdm(&f_ir, &f_vi, &(*mask_ir).0, &(*mask_vi).0, &p)
        };
        match run() {
            Ok(ms) => {
                *out = Box::into_raw(Box::new(SrgMatches(ms)));
                SrgStatus::SrgOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `matches` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn srg_matches_len(matches: *const SrgMatches) -> usize {
    matches.as_ref().map_or(0, |m| m.0.len())
}

/// Warning attached to the match set: 0 none, 1 too few points for
/// RANSAC, 2 no consensus.
///
/// # Safety
/// `matches` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn srg_matches_warning(matches: *const SrgMatches) -> i32 {
    match matches.as_ref().and_then(|m| m.0.warning) {
        None => 0,
        Some(MatchWarning::TooFewForRansac) => 1,
        Some(MatchWarning::NoConsensus) => 2,
    }
}

/// Copy match `index` into `out`.
///
/// # Safety
/// `matches` must be a live handle from this library and `out` a valid
/// location for an `SrgMatch`.
#[no_mangle]
pub unsafe extern "C" fn srg_matches_get(
    matches: *const SrgMatches,
    index: usize,
    out: *mut SrgMatch,
) -> SrgStatus {
    if matches.is_null() || out.is_null() {
        set_error("null pointer argument");
        return SrgStatus::SrgErrInvalidArgument;
    }
    let ms = &(*matches).0;
    match ms.pairs.get(index) {
        Some(m) => {
            *out = SrgMatch {
                x_ir: m.ir.x as u32,
                y_ir: m.ir.y as u32,
                x_vi: m.vi.x as u32,
                y_vi: m.vi.y as u32,
                score: m.score,
            };
            SrgStatus::SrgOk
        }
        None => {
            set_error(&format!("index {index} out of range {}", ms.len()));
            SrgStatus::SrgErrInvalidArgument
        }
    }
}

/// # Safety
/// `matches` must be a handle from this library, not freed before; null
/// is a no-op.
#[no_mangle]
pub unsafe extern "C" fn srg_matches_free(matches: *mut SrgMatches) {
    if !matches.is_null() {
        drop(Box::from_raw(matches));
    }
}
