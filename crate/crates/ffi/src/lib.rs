//! C ABI over the drivegaze projection, attention-map, metric and masking
//! routines.
//!
//! Objects are passed as opaque handles created by `dg_*_new` functions and
//! released with the matching `dg_*_free`. Every fallible function returns a
//! [`DgStatus`]; on failure, `dg_last_error` describes the most recent error
//! on the calling thread. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use drivegaze::attention::{build_attention_map, AttentionMap, MapConfig};
use drivegaze::geometry::{forward_project, CameraExtrinsics, CameraIntrinsics, Projection, WorldPoint};
use drivegaze::masking::{apply_mask, Image, MaskConfig, MaskMode};
use drivegaze::metrics::{correlation_coefficient, kl_divergence, MetricConfig};
use drivegaze::Error;
use nalgebra::{Matrix3, Vector3};

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptyMap = 4,
    Undefined = 5,
    NonFinite = 6,
    Internal = 7,
}

/// Where a projected point landed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgProjectionStatus {
    InFrame = 0,
    OutOfView = 1,
    BehindCamera = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgMaskMode {
    Hard = 0,
    Soft = 1,
    Baseline = 2,
}

/// A pinhole camera: intrinsics plus world-to-camera extrinsics.
pub struct DgCamera {
    intrinsics: CameraIntrinsics,
    extrinsics: CameraExtrinsics,
}

/// A normalized attention map, or an empty one.
pub struct DgMap(AttentionMap);

/// A row-major, channel-interleaved image with values in [0, 1].
pub struct DgImage(Image);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DgStatus {
    match e {
        Error::InvalidArgument(_) | Error::IndexOutOfRange { .. } => DgStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => DgStatus::DimensionMismatch,
        Error::EmptyMap => DgStatus::EmptyMap,
        Error::Undefined(_) => DgStatus::Undefined,
        Error::NonFinite(_) => DgStatus::NonFinite,
        _ => DgStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            DgStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            DgStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            DgStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Message for the most recent failure on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a camera with the principal point at the image centre.
/// `rotation` holds 9 values, row-major; `translation` holds 3.
///
/// # Safety
/// `rotation` and `translation` must point to 9 and 3 readable doubles, and
/// `out_camera` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_camera_new(
    focal: f64,
    width: u32,
    height: u32,
    rotation: *const f64,
    translation: *const f64,
    out_camera: *mut *mut DgCamera,
) -> DgStatus {
    guard(|| {
        let r = slice(rotation, 9, "rotation")?;
        let t = slice(translation, 3, "translation")?;
        let out_camera = out(out_camera, "out_camera")?;
        let camera = DgCamera {
            intrinsics: CameraIntrinsics::new(focal, width, height)?,
            extrinsics: CameraExtrinsics::new(Matrix3::from_row_slice(r), Vector3::from_column_slice(t))?,
        };
        *out_camera = Box::into_raw(Box::new(camera));
        Ok(())
    })
}

/// # Safety
/// `camera` must be null or a handle from `dg_camera_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dg_camera_free(camera: *mut DgCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Projects a world point. The pixel is written unless the point is behind the camera.
///
/// # Safety
/// `camera` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_camera_project(
    camera: *const DgCamera,
    x: f64,
    y: f64,
    z: f64,
    out_u: *mut f64,
    out_v: *mut f64,
    out_status: *mut DgProjectionStatus,
) -> DgStatus {
    guard(|| {
        let camera = deref(camera, "camera")?;
        let (out_u, out_v) = (out(out_u, "out_u")?, out(out_v, "out_v")?);
        let out_status = out(out_status, "out_status")?;
        let projection = forward_project(WorldPoint::new(x, y, z)?, &camera.extrinsics, &camera.intrinsics);
        *out_status = match projection {
            Projection::InFrame(_) => DgProjectionStatus::InFrame,
            Projection::OutOfView(_) => DgProjectionStatus::OutOfView,
            Projection::BehindCamera => DgProjectionStatus::BehindCamera,
        };
        if let Some(p) = projection.pixel() {
            *out_u = p.x;
            *out_v = p.y;
        }
        Ok(())
    })
}

/// Builds the attention map of `count` world fixations (`xyz`, 3 doubles each)
/// seen from `camera`, with Gaussian width `sigma` pixels. A `sigma` of zero
/// selects the default of one twentieth of the image width.
///
/// # Safety
/// `camera` must be a live handle, `xyz` must hold `3 * count` doubles and
/// `out_map` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_map_from_fixations(
    camera: *const DgCamera,
    xyz: *const f64,
    count: usize,
    sigma: f64,
    out_map: *mut *mut DgMap,
) -> DgStatus {
    guard(|| {
        let camera = deref(camera, "camera")?;
        let coords = slice(
            xyz,
            count
                .checked_mul(3)
                .ok_or(Error::InvalidArgument("count overflows".into()))?,
            "xyz",
        )?;
        let out_map = out(out_map, "out_map")?;
        let cfg = if sigma == 0.0 {
            MapConfig::for_width(camera.intrinsics.width())
        } else {
            MapConfig::new(sigma, MapConfig::DEFAULT_HALF_WINDOW)?
        };
        let points = coords
            .chunks_exact(3)
            .map(|p| WorldPoint::new(p[0], p[1], p[2]))
            .collect::<drivegaze::Result<Vec<_>>>()?;
        let map = build_attention_map(&points, &camera.extrinsics, &camera.intrinsics, &cfg);
        *out_map = Box::into_raw(Box::new(DgMap(map)));
        Ok(())
    })
}

/// Normalizes `width * height` non-negative row-major weights into a map.
/// All-zero weights give an empty map.
///
/// # Safety
/// `weights` must hold `width * height` doubles and `out_map` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_map_from_weights(
    width: usize,
    height: usize,
    weights: *const f64,
    out_map: *mut *mut DgMap,
) -> DgStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or(Error::InvalidArgument("map size overflows".into()))?;
        let values = slice(weights, n, "weights")?.to_vec();
        let out_map = out(out_map, "out_map")?;
        *out_map = Box::into_raw(Box::new(DgMap(AttentionMap::from_weights(width, height, values)?)));
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a live map handle.
#[no_mangle]
pub unsafe extern "C" fn dg_map_free(map: *mut DgMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Writes the map's width, height and whether it is empty.
///
/// # Safety
/// `map` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_map_info(
    map: *const DgMap,
    out_width: *mut usize,
    out_height: *mut usize,
    out_empty: *mut bool,
) -> DgStatus {
    guard(|| {
        let map = &deref(map, "map")?.0;
        *out(out_width, "out_width")? = map.width();
        *out(out_height, "out_height")? = map.height();
        *out(out_empty, "out_empty")? = map.is_empty();
        Ok(())
    })
}

/// Copies the row-major probabilities into `values`, which must hold exactly
/// `width * height` doubles.
///
/// # Safety
/// `map` must be a live handle and `values` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_map_values(map: *const DgMap, values: *mut f64, len: usize) -> DgStatus {
    guard(|| {
        let map = &deref(map, "map")?.0;
        if len != map.values().len() {
            return Err(
                Error::InvalidArgument(format!("buffer holds {len} values, map has {}", map.values().len())).into(),
            );
        }
        if values.is_null() {
            return Err(Failure::Null("values"));
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(map.values());
        Ok(())
    })
}

/// KL divergence of `pred` from `truth` with regularizer `epsilon`.
///
/// # Safety
/// Both maps must be live handles and `out_kl` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_kl_divergence(
    truth: *const DgMap,
    pred: *const DgMap,
    epsilon: f64,
    out_kl: *mut f64,
) -> DgStatus {
    guard(|| {
        let (truth, pred) = (&deref(truth, "truth")?.0, &deref(pred, "pred")?.0);
        let cfg = MetricConfig::new(epsilon, Default::default())?;
        *out(out_kl, "out_kl")? = kl_divergence(truth, pred, &cfg)?;
        Ok(())
    })
}

/// Pearson correlation between two maps.
///
/// # Safety
/// Both maps must be live handles and `out_cc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_correlation(a: *const DgMap, b: *const DgMap, out_cc: *mut f64) -> DgStatus {
    guard(|| {
        let (a, b) = (&deref(a, "a")?.0, &deref(b, "b")?.0);
        *out(out_cc, "out_cc")? = correlation_coefficient(a, b)?;
        Ok(())
    })
}

/// Wraps `width * height * channels` interleaved values in [0, 1].
///
/// # Safety
/// `data` must hold that many doubles and `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f64,
    out_image: *mut *mut DgImage,
) -> DgStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(Error::InvalidArgument("image size overflows".into()))?;
        let values = slice(data, n, "data")?.to_vec();
        let out_image = out(out_image, "out_image")?;
        *out_image = Box::into_raw(Box::new(DgImage(Image::new(width, height, channels, values)?)));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a live image handle.
#[no_mangle]
pub unsafe extern "C" fn dg_image_free(image: *mut DgImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Copies the interleaved pixel values into `data`, which must hold exactly
/// `width * height * channels` doubles.
///
/// # Safety
/// `image` must be a live handle and `data` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_image_data(image: *const DgImage, data: *mut f64, len: usize) -> DgStatus {
    guard(|| {
        let image = &deref(image, "image")?.0;
        if len != image.data().len() {
            return Err(
                Error::InvalidArgument(format!("buffer holds {len} values, image has {}", image.data().len())).into(),
            );
        }
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        std::slice::from_raw_parts_mut(data, len).copy_from_slice(image.data());
        Ok(())
    })
}

/// Masks `image` with `map`. `lambda` is used by the soft mode only.
///
/// # Safety
/// `image` and `map` must be live handles and `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_mask(
    image: *const DgImage,
    map: *const DgMap,
    mode: DgMaskMode,
    lambda: f64,
    out_image: *mut *mut DgImage,
) -> DgStatus {
    guard(|| {
        let (image, map) = (&deref(image, "image")?.0, &deref(map, "map")?.0);
        let out_image = out(out_image, "out_image")?;
        let mode = match mode {
            DgMaskMode::Hard => MaskMode::Hard,
            DgMaskMode::Soft => MaskMode::Soft,
            DgMaskMode::Baseline => MaskMode::Baseline,
        };
        let masked = apply_mask(image, map, mode, &MaskConfig::new(lambda)?)?;
        *out_image = Box::into_raw(Box::new(DgImage(masked)));
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    #[test]
    fn null_output_is_reported() {
        let status = unsafe { dg_map_from_weights(1, 1, [1.0].as_ptr(), ptr::null_mut()) };
        assert_eq!(status, DgStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(dg_last_error()) };
        assert!(msg.to_str().unwrap().contains("out_map"));
    }

    #[test]
    fn success_clears_the_last_error() {
        let mut map = ptr::null_mut();
        unsafe {
            assert_eq!(
                dg_map_from_weights(1, 1, [-1.0].as_ptr(), &mut map),
                DgStatus::InvalidArgument
            );
            assert!(map.is_null());
            assert_eq!(dg_map_from_weights(1, 1, [1.0].as_ptr(), &mut map), DgStatus::Ok);
            assert_eq!(CStr::from_ptr(dg_last_error()).to_bytes(), b"");
            dg_map_free(map);
        }
    }
}
