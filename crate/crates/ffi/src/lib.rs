//! C ABI over the `spgan` crate.
//!
//! Every fallible function returns a [`SpganStatus`]. On failure the message
//! is available from [`spgan_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use spgan::dataset::{load_cloud, save_cloud};
use spgan::geometry::{chamfer, PointCloud};
use spgan::manipulation::{correspondence_colors, interp_shape};
use spgan::sphere::{pack_perpoint, pack_uniform, LatentCode, SpherePoints};
use spgan::training::{load_checkpoint, Checkpoint};
use spgan::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpganStatus {
    Ok = 0,
    InvalidArgument = 1,
    CheckpointMismatch = 2,
    NotFound = 3,
    Gone = 4,
    Conflict = 5,
    Parse = 6,
    Io = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A loaded checkpoint together with its fixed prior points.
pub struct SpganModel {
    ckpt: Checkpoint,
    sphere: SpherePoints,
}

/// A generated or loaded point cloud.
pub struct SpganCloud {
    cloud: PointCloud,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SpganStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::InvalidArgument => SpganStatus::InvalidArgument,
            ErrorKind::CheckpointMismatch => SpganStatus::CheckpointMismatch,
            ErrorKind::NotFound => SpganStatus::NotFound,
            ErrorKind::Gone => SpganStatus::Gone,
            ErrorKind::Conflict => SpganStatus::Conflict,
            ErrorKind::Parse => SpganStatus::Parse,
            ErrorKind::Io => SpganStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SpganStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpganStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SpganStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpganStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f32, len: usize, what: &str) -> Result<&'a [f32], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_ref<'a>(m: *const SpganModel) -> Result<&'a SpganModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn cloud_ref<'a>(c: *const SpganCloud) -> Result<&'a SpganCloud, Failure> {
    c.as_ref().ok_or_else(|| null("cloud"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out(src: &[f32], out: *mut f32, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err(Failure(
            SpganStatus::BufferTooSmall,
            format!("buffer holds {len} floats, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spgan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn spgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_load(path: *const c_char, out: *mut *mut SpganModel) -> SpganStatus {
    guard(|| {
        let ckpt = load_checkpoint(&path_arg(path)?)?;
        let sphere = ckpt.sphere()?;
        put(out, SpganModel { ckpt, sphere })
    })
}

/// # Safety
/// `model` must come from [`spgan_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_free(model: *mut SpganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Points per generated shape, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_num_points(model: *const SpganModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.n_points())
}

/// Latent code width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_latent_dim(model: *const SpganModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.latent_dim())
}

/// Write the latent code of shape `index` under `seed` (the same codes the
/// CLI `generate` command uses) into `out[0..latent_dim]`.
///
/// # Safety
/// `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_sample_code(
    model: *const SpganModel,
    seed: u64,
    index: usize,
    out: *mut f32,
    len: usize,
) -> SpganStatus {
    guard(|| {
        let m = model_ref(model)?;
        let z = m.ckpt.shape_code(seed, index)?;
        write_out(&z.to_vec(), out, len)
    })
}

/// Generate from one code shared by every prior point.
///
/// # Safety
/// `z` must hold `dim` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_generate(
    model: *const SpganModel,
    z: *const f32,
    dim: usize,
    out: *mut *mut SpganCloud,
) -> SpganStatus {
    guard(|| {
        let m = model_ref(model)?;
        let z = LatentCode::new(slice_arg(z, dim, "z")?.to_vec())?;
        let cloud = m.ckpt.generator.generate(&pack_uniform(&m.sphere, &z))?;
        put(out, SpganCloud { cloud })
    })
}

/// Generate from a row-major `rows x cols` matrix with one code per prior
/// point.
///
/// # Safety
/// `codes` must hold `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_generate_codes(
    model: *const SpganModel,
    codes: *const f32,
    rows: usize,
    cols: usize,
    out: *mut *mut SpganCloud,
) -> SpganStatus {
    guard(|| {
        let m = model_ref(model)?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(SpganStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let data = slice_arg(codes, len, "codes")?.to_vec();
        let codes = Array2::from_shape_vec((rows, cols), data).map_err(|e| Failure(SpganStatus::InvalidArgument, e.to_string()))?;
        let cloud = m.ckpt.generator.generate(&pack_perpoint(&m.sphere, codes)?)?;
        put(out, SpganCloud { cloud })
    })
}

/// Per-point RGB in `[0, 1]`, row-major `N x 3`.
///
/// # Safety
/// `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn spgan_model_colors(model: *const SpganModel, out: *mut f32, len: usize) -> SpganStatus {
    guard(|| {
        let m = model_ref(model)?;
        let colors: Vec<f32> = correspondence_colors(&m.sphere).iter().copied().collect();
        write_out(&colors, out, len)
    })
}

/// `out = (1 - alpha) * a + alpha * b` with `alpha` in `[0, 1]`; the
/// endpoints are reproduced exactly.
///
/// # Safety
/// `a`, `b` and `out` must each hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn spgan_interp_codes(
    a: *const f32,
    b: *const f32,
    dim: usize,
    alpha: f64,
    out: *mut f32,
) -> SpganStatus {
    guard(|| {
        let za = LatentCode::new(slice_arg(a, dim, "a")?.to_vec())?;
        let zb = LatentCode::new(slice_arg(b, dim, "b")?.to_vec())?;
        write_out(&interp_shape(&za, &zb, alpha)?.to_vec(), out, dim)
    })
}

/// Load an SPPC file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgan_cloud_load(path: *const c_char, out: *mut *mut SpganCloud) -> SpganStatus {
    guard(|| {
        let cloud = load_cloud(&path_arg(path)?)?;
        put(out, SpganCloud { cloud })
    })
}

/// Write an SPPC file.
///
/// # Safety
/// `cloud` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn spgan_cloud_save(cloud: *const SpganCloud, path: *const c_char) -> SpganStatus {
    guard(|| Ok(save_cloud(&cloud_ref(cloud)?.cloud, &path_arg(path)?)?))
}

/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spgan_cloud_num_points(cloud: *const SpganCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.cloud.len())
}

/// Copy the row-major `N x 3` coordinates into `out`.
///
/// # Safety
/// `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn spgan_cloud_copy_points(cloud: *const SpganCloud, out: *mut f32, len: usize) -> SpganStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        let pts: Vec<f32> = c.cloud.points().iter().copied().collect();
        write_out(&pts, out, len)
    })
}

/// # Safety
/// `cloud` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spgan_cloud_free(cloud: *mut SpganCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Symmetric squared Chamfer distance.
///
/// # Safety
/// `a` and `b` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spgan_chamfer(a: *const SpganCloud, b: *const SpganCloud, out: *mut f64) -> SpganStatus {
    guard(|| {
        let d = chamfer(&cloud_ref(a)?.cloud, &cloud_ref(b)?.cloud)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = d;
        Ok(())
    })
}
