//! C ABI over the `paloc` library.
//!
//! Every function returns a [`PalocStatus`]; on failure a message for the
//! calling thread is available from [`paloc_last_error`]. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use paloc::descriptor::{cosine_distance, Descriptor, DescriptorSet};
use paloc::geometry::{
    output_height, AnnularCalibration, AxisConvention, DEFAULT_VERTICAL_FOV_DEG,
};
use paloc::interchange::{read_descriptor_file, write_descriptor_file};
use paloc::matching::{ConeParams, Direction, MatchDecision, OnlineMatcher, Outcome, RejectReason};
use paloc::raster::Raster;
use paloc::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PalocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PalocStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PalocStatus::Io,
            Error::Image { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::LengthMismatch(_)
            | Error::Csv(_) => PalocStatus::Format,
            Error::DimensionMismatch { .. } | Error::CountMismatch { .. } => {
                PalocStatus::DimensionMismatch
            }
            Error::CalibrationParse { .. }
            | Error::Calibration { .. }
            | Error::InvalidParameter { .. }
            | Error::Indivisible { .. }
            | Error::ZeroNorm { .. }
            | Error::GroundTruth(_)
            | Error::Config(_) => PalocStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PalocStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PalocStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PalocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PalocStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            PalocStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message describing the most recent failure on this thread, or null. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn paloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn paloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Descriptor sets

pub struct PalocDescriptorSet {
    inner: DescriptorSet,
}

/// Creates an empty descriptor set.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_new(
    out: *mut *mut PalocDescriptorSet,
) -> PalocStatus {
    guard(|| {
        let set = Box::new(PalocDescriptorSet {
            inner: DescriptorSet::new("ffi"),
        });
        write_out(out, Box::into_raw(set), "out")
    })
}

/// Reads a descriptor interchange file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_read(
    path: *const c_char,
    out: *mut *mut PalocDescriptorSet,
) -> PalocStatus {
    guard(|| {
        let path = path_arg(path)?;
        let inner = read_descriptor_file(&path)?;
        write_out(
            out,
            Box::into_raw(Box::new(PalocDescriptorSet { inner })),
            "out",
        )
    })
}

/// # Safety
/// `set` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_write(
    set: *const PalocDescriptorSet,
    path: *const c_char,
) -> PalocStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let path = path_arg(path)?;
        write_descriptor_file(&set.inner, &path)?;
        Ok(())
    })
}

/// Appends a descriptor. The first push fixes the set's dimension.
///
/// # Safety
/// `values` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_push(
    set: *mut PalocDescriptorSet,
    values: *const f64,
    dim: usize,
) -> PalocStatus {
    guard(|| {
        let set = set.as_mut().ok_or_else(|| null("set"))?;
        let v = slice(values, dim, "values")?;
        set.inner.push(Descriptor::new(v.to_vec())?)?;
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library; `count` and `dim` may be null.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_shape(
    set: *const PalocDescriptorSet,
    count: *mut usize,
    dim: *mut usize,
) -> PalocStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if !count.is_null() {
            count.write(set.inner.len());
        }
        if !dim.is_null() {
            dim.write(set.inner.dim());
        }
        Ok(())
    })
}

/// Copies descriptor `index` into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `out` must be writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_get(
    set: *const PalocDescriptorSet,
    index: usize,
    out: *mut f64,
    capacity: usize,
) -> PalocStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let d = set.inner.get(index).ok_or_else(|| {
            invalid(format!(
                "index {index} out of range for {} descriptors",
                set.inner.len()
            ))
        })?;
        if capacity < d.dim() {
            return Err(Failure(
                PalocStatus::BufferTooSmall,
                format!("need {} doubles, buffer holds {capacity}", d.dim()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(d.values().as_ptr(), out, d.dim());
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn paloc_descriptor_set_free(set: *mut PalocDescriptorSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Cosine distance between two vectors of length `dim`.
///
/// # Safety
/// `a` and `b` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn paloc_cosine_distance(
    a: *const f64,
    b: *const f64,
    dim: usize,
    out: *mut f64,
) -> PalocStatus {
    guard(|| {
        let a = Descriptor::new(slice(a, dim, "a")?.to_vec())?;
        let b = Descriptor::new(slice(b, dim, "b")?.to_vec())?;
        write_out(out, cosine_distance(&a, &b)?, "out")
    })
}

// ---------------------------------------------------------------------------
// Matching

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PalocDirection {
    Both = 0,
    Forward = 1,
    Reverse = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PalocConeParams {
    pub n_q: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub uniqueness_window: usize,
    pub uniqueness_ratio: f64,
    pub min_score: f64,
    pub direction: PalocDirection,
}

impl From<PalocConeParams> for ConeParams {
    fn from(p: PalocConeParams) -> Self {
        ConeParams {
            n_q: p.n_q,
            v_min: p.v_min,
            v_max: p.v_max,
            uniqueness_window: p.uniqueness_window,
            uniqueness_ratio: p.uniqueness_ratio,
            min_score: p.min_score,
            direction: match p.direction {
                PalocDirection::Both => Direction::Both,
                PalocDirection::Forward => Direction::Forward,
                PalocDirection::Reverse => Direction::Reverse,
            },
        }
    }
}

#[no_mangle]
pub extern "C" fn paloc_cone_params_default() -> PalocConeParams {
    let p = ConeParams::default();
    PalocConeParams {
        n_q: p.n_q,
        v_min: p.v_min,
        v_max: p.v_max,
        uniqueness_window: p.uniqueness_window,
        uniqueness_ratio: p.uniqueness_ratio,
        min_score: p.min_score,
        direction: PalocDirection::Both,
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PalocRejectReason {
    None = 0,
    Warmup = 1,
    BelowMinScore = 2,
    NotUnique = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PalocDecision {
    pub query_index: usize,
    pub accepted: bool,
    /// Valid when `accepted`.
    pub db_index: usize,
    pub score: f64,
    /// `None` when `accepted`.
    pub reason: PalocRejectReason,
}

impl From<MatchDecision> for PalocDecision {
    fn from(d: MatchDecision) -> Self {
        let mut out = PalocDecision {
            query_index: d.query_index,
            accepted: false,
            db_index: 0,
            score: 0.0,
            reason: PalocRejectReason::None,
        };
        match d.outcome {
            Outcome::Accepted { db_index, score } => {
                out.accepted = true;
                out.db_index = db_index;
                out.score = score;
            }
            Outcome::Rejected(r) => {
                out.reason = match r {
                    RejectReason::Warmup => PalocRejectReason::Warmup,
                    RejectReason::BelowMinScore => PalocRejectReason::BelowMinScore,
                    RejectReason::NotUnique => PalocRejectReason::NotUnique,
                }
            }
        }
        out
    }
}

pub struct PalocMatcher {
    inner: OnlineMatcher,
}

/// Creates an online matcher over a copy of `database`. A null `params`
/// selects the defaults.
///
/// # Safety
/// Pointers must be valid or null as documented.
#[no_mangle]
pub unsafe extern "C" fn paloc_matcher_new(
    database: *const PalocDescriptorSet,
    params: *const PalocConeParams,
    out: *mut *mut PalocMatcher,
) -> PalocStatus {
    guard(|| {
        let db = database.as_ref().ok_or_else(|| null("database"))?;
        let params = params
            .as_ref()
            .copied()
            .unwrap_or_else(|| paloc_cone_params_default());
        let inner = OnlineMatcher::new(&db.inner, params.into())?;
        write_out(out, Box::into_raw(Box::new(PalocMatcher { inner })), "out")
    })
}

/// Feeds the next query descriptor and returns its decision.
///
/// # Safety
/// `query` must point to `dim` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn paloc_matcher_push(
    matcher: *mut PalocMatcher,
    query: *const f64,
    dim: usize,
    out: *mut PalocDecision,
) -> PalocStatus {
    guard(|| {
        let m = matcher.as_mut().ok_or_else(|| null("matcher"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let q = Descriptor::new(slice(query, dim, "query")?.to_vec())?;
        let decision = m.inner.push(&q)?;
        out.write(decision.into());
        Ok(())
    })
}

/// # Safety
/// `matcher` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn paloc_matcher_free(matcher: *mut PalocMatcher) {
    if !matcher.is_null() {
        drop(Box::from_raw(matcher));
    }
}

// ---------------------------------------------------------------------------
// Unwrapping

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PalocCalibration {
    pub center_col: f64,
    pub center_row: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Zero or negative selects the default of 75 degrees.
    pub vertical_fov_deg: f64,
    pub flip_radial: bool,
    /// Use the conventional (column, row) center instead of the literal mapping.
    pub centered: bool,
}

impl TryFrom<&PalocCalibration> for AnnularCalibration {
    type Error = Error;

    fn try_from(c: &PalocCalibration) -> Result<Self, Error> {
        let calib = AnnularCalibration {
            center_col: c.center_col,
            center_row: c.center_row,
            r_min: c.r_min,
            r_max: c.r_max,
            vertical_fov_deg: if c.vertical_fov_deg > 0.0 {
                c.vertical_fov_deg
            } else {
                DEFAULT_VERTICAL_FOV_DEG
            },
            flip_radial: c.flip_radial,
            axis_convention: if c.centered {
                AxisConvention::Centered
            } else {
                AxisConvention::Literal
            },
        };
        calib.validate()?;
        Ok(calib)
    }
}

/// Height of the panorama produced for `out_width` columns.
///
/// # Safety
/// `calib` and `out_height` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn paloc_unwrap_height(
    calib: *const PalocCalibration,
    out_width: usize,
    out_height: *mut usize,
) -> PalocStatus {
    guard(|| {
        let calib = AnnularCalibration::try_from(calib.as_ref().ok_or_else(|| null("calib"))?)?;
        write_out(
            out_height,
            output_height(out_width, calib.aspect_ratio()),
            "out_height",
        )
    })
}

/// Unwraps an 8-bit grayscale annular image (row-major, `width * height`
/// bytes) into `out`, which must hold `out_width * height` bytes where the
/// height comes from [`paloc_unwrap_height`].
///
/// # Safety
/// Buffers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn paloc_unwrap_gray8(
    pixels: *const u8,
    width: usize,
    height: usize,
    calib: *const PalocCalibration,
    out_width: usize,
    out: *mut u8,
    out_capacity: usize,
) -> PalocStatus {
    guard(|| {
        let calib = AnnularCalibration::try_from(calib.as_ref().ok_or_else(|| null("calib"))?)?;
        let src = slice(pixels, width * height, "pixels")?;
        let data = src.iter().map(|&p| p as f32 / 255.0).collect();
        let img = Raster::new(width, height, 1, data)?;
        let pano = paloc::geometry::unwrap(&img, &calib, out_width)?;
        let n = pano.width() * pano.height();
        if out_capacity < n {
            return Err(Failure(
                PalocStatus::BufferTooSmall,
                format!("need {n} bytes, buffer holds {out_capacity}"),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (d, &v) in dst.iter_mut().zip(pano.raster.data()) {
            *d = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Ok(())
    })
}
