//! C ABI over the augmentation kernels, the seeded generator and the loss
//! functions.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_decode` and released with the matching `*_free`. Every fallible call
//! returns a [`MassStatus`]; on failure [`mass_last_error_message`] describes
//! the cause for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use mass_core::cropping::{make_two_views, CropStrategy};
use mass_core::image::Image;
use mass_core::objective::{cosine_loss, symmetrized_loss};
use mass_core::policy::{apply_policy, magnitude_to_params, sample_randaugment, PolicySource, RandAugmentConfig};
use mass_core::ppm::{decode_ppm, encode_ppm};
use mass_core::rng::{derive_seed, Rng};
use mass_core::tensor::Tensor;
use mass_core::transforms::TransformKind;
use mass_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Decode = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassCropStrategy {
    Uniform = 0,
    Inception = 1,
    Full = 2,
}

impl From<MassCropStrategy> for CropStrategy {
    fn from(s: MassCropStrategy) -> Self {
        match s {
            MassCropStrategy::Uniform => CropStrategy::Uniform,
            MassCropStrategy::Inception => CropStrategy::Inception,
            MassCropStrategy::Full => CropStrategy::Full,
        }
    }
}

/// Seeded generator handle.
pub struct MassRng(Rng);

/// RGB image handle.
pub struct MassImage(Image);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MassStatus {
    match err {
        Error::MalformedHeader(_)
        | Error::UnsupportedMaxval(_)
        | Error::TruncatedPayload { .. }
        | Error::BadMagic(_)
        | Error::VersionMismatch(_)
        | Error::Truncated
        | Error::UnsupportedDtype(_)
        | Error::InvalidName(_)
        | Error::DecodeFailure { .. }
        | Error::ParseError { .. }
        | Error::Json(_) => MassStatus::Decode,
        Error::ShapeMismatch(_) | Error::TraceMismatch => MassStatus::ShapeMismatch,
        Error::Io(_) | Error::EmptyDirectory(_) => MassStatus::Io,
        _ => MassStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MassStatus, String)>) -> MassStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MassStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MassStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (MassStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MassStatus, String) {
    (MassStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MassStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (MassStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put_image(out: *mut *mut MassImage, img: Image) {
    *out = Box::into_raw(Box::new(MassImage(img)));
}

/// Message for the most recent failure on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mass_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn mass_rng_new(seed: u64) -> *mut MassRng {
    Box::into_raw(Box::new(MassRng(Rng::new(seed))))
}

/// # Safety
/// `rng` must come from [`mass_rng_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mass_rng_free(rng: *mut MassRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// # Safety
/// `rng` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_rng_next_u64(rng: *mut MassRng, out: *mut u64) -> MassStatus {
    guard(|| {
        let r = handle_mut(rng, "rng")?;
        let out = handle_mut(out, "out")?;
        *out = r.0.next_u64();
        Ok(())
    })
}

/// # Safety
/// `rng` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_rng_next_f64(rng: *mut MassRng, out: *mut f64) -> MassStatus {
    guard(|| {
        let r = handle_mut(rng, "rng")?;
        let out = handle_mut(out, "out")?;
        *out = r.0.next_f64();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn mass_derive_seed(root: u64, stream_id: u64) -> u64 {
    derive_seed(root, stream_id)
}

/// Copy `height * width * 3` interleaved RGB bytes into a new image. A NULL
/// `pixels` yields a black image.
///
/// # Safety
/// `pixels`, when non-null, must point to `len` readable bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mass_image_new(
    height: usize,
    width: usize,
    pixels: *const u8,
    len: usize,
    out: *mut *mut MassImage,
) -> MassStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = if pixels.is_null() {
            vec![0; height.saturating_mul(width).saturating_mul(3)]
        } else {
            std::slice::from_raw_parts(pixels, len).to_vec()
        };
        put_image(out, Image::new(height, width, data).map_err(core_err)?);
        Ok(())
    })
}

/// # Safety
/// `img` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mass_image_free(img: *mut MassImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// # Safety
/// `img` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn mass_image_height(img: *const MassImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn mass_image_width(img: *const MassImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Borrowed pointer to the interleaved RGB bytes, valid while `img` lives.
///
/// # Safety
/// `img` must be a live handle; `len`, when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_image_pixels(img: *const MassImage, len: *mut usize) -> *const u8 {
    match img.as_ref() {
        Some(i) => {
            if let Some(l) = len.as_mut() {
                *l = i.0.pixels().len();
            }
            i.0.pixels().as_ptr()
        }
        None => ptr::null(),
    }
}

/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_ppm_decode(bytes: *const u8, len: usize, out: *mut *mut MassImage) -> MassStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let img = decode_ppm(std::slice::from_raw_parts(bytes, len)).map_err(core_err)?;
        put_image(out, img);
        Ok(())
    })
}

/// Encode as binary P6. Release the buffer with [`mass_bytes_free`].
///
/// # Safety
/// `img` must be a live handle; `out` and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_ppm_encode(img: *const MassImage, out: *mut *mut u8, out_len: *mut usize) -> MassStatus {
    guard(|| {
        let img = handle(img, "img")?;
        if out.is_null() || out_len.is_null() {
            return Err(null("out"));
        }
        let bytes = encode_ppm(&img.0).into_boxed_slice();
        *out_len = bytes.len();
        *out = Box::into_raw(bytes) as *mut u8;
        Ok(())
    })
}

/// # Safety
/// `bytes` and `len` must come from [`mass_ppm_encode`].
#[no_mangle]
pub unsafe extern "C" fn mass_bytes_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}

#[no_mangle]
pub extern "C" fn mass_transform_count() -> u32 {
    TransformKind::ALL.len() as u32
}

/// Static NUL-terminated name of transform `kind`, or NULL when out of range.
#[no_mangle]
pub extern "C" fn mass_transform_name(kind: u32) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    let names = NAMES.get_or_init(|| TransformKind::ALL.iter().map(|k| CString::new(k.name()).unwrap()).collect());
    names.get(kind as usize).map_or(ptr::null(), |c| c.as_ptr())
}

/// Index of the transform called `name`, or -1.
///
/// # Safety
/// `name` must be a NUL-terminated string or NULL.
#[no_mangle]
pub unsafe extern "C" fn mass_transform_index(name: *const c_char) -> i32 {
    if name.is_null() {
        return -1;
    }
    CStr::from_ptr(name).to_str().ok().and_then(|s| s.parse::<TransformKind>().ok()).map_or(-1, |k| k.index() as i32)
}

/// Apply transform `kind` at `magnitude` in [0, 10], drawing any random
/// parameters from `rng`.
///
/// # Safety
/// `img` and `rng` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_transform_apply(
    img: *const MassImage,
    kind: u32,
    magnitude: f64,
    rng: *mut MassRng,
    out: *mut *mut MassImage,
) -> MassStatus {
    guard(|| {
        let img = handle(img, "img")?;
        let rng = handle_mut(rng, "rng")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = TransformKind::from_index(kind as usize)
            .ok_or_else(|| (MassStatus::InvalidArgument, format!("transform index {kind} out of range")))?;
        let op = magnitude_to_params(kind, magnitude, &mut rng.0).map_err(core_err)?;
        put_image(out, op.apply(&img.0).map_err(core_err)?);
        Ok(())
    })
}

/// Sample `n_ops` transforms over the full search space at `magnitude` and
/// apply them in order.
///
/// # Safety
/// `img` and `rng` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_randaugment_apply(
    img: *const MassImage,
    n_ops: u32,
    magnitude: f64,
    rng: *mut MassRng,
    out: *mut *mut MassImage,
) -> MassStatus {
    guard(|| {
        let img = handle(img, "img")?;
        let rng = handle_mut(rng, "rng")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RandAugmentConfig::new(n_ops as usize, magnitude).map_err(core_err)?;
        let ops = sample_randaugment(&cfg, &mut rng.0);
        put_image(out, apply_policy(&img.0, &ops, &mut rng.0).map_err(core_err)?);
        Ok(())
    })
}

/// Build the two training views of `img` from `seed`, identically to the
/// pre-training loop.
///
/// # Safety
/// `img` must be a live handle; `out_first` and `out_second` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mass_two_views(
    img: *const MassImage,
    strategy: MassCropStrategy,
    n_ops: u32,
    magnitude: f64,
    side: usize,
    seed: u64,
    out_first: *mut *mut MassImage,
    out_second: *mut *mut MassImage,
) -> MassStatus {
    guard(|| {
        let img = handle(img, "img")?;
        if out_first.is_null() || out_second.is_null() {
            return Err(null("out"));
        }
        let policy = PolicySource::RandAugment(RandAugmentConfig::new(n_ops as usize, magnitude).map_err(core_err)?);
        let (a, b) = make_two_views(&img.0, strategy.into(), &policy, side, &mut Rng::new(seed)).map_err(core_err)?;
        put_image(out_first, a);
        put_image(out_second, b);
        Ok(())
    })
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Tensor<f64>, (MassStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let n = rows.checked_mul(cols).ok_or((MassStatus::InvalidArgument, "matrix too large".into()))?;
    Tensor::from_vec(&[rows, cols], std::slice::from_raw_parts(p, n).to_vec()).map_err(core_err)
}

unsafe fn write_grad(dst: *mut f64, g: &Tensor<f64>) {
    if !dst.is_null() {
        ptr::copy_nonoverlapping(g.data().as_ptr(), dst, g.len());
    }
}

/// Mean negative cosine similarity of row-major `rows x cols` matrices. The
/// gradient with respect to `p` is written to `grad_p` when non-null.
///
/// # Safety
/// `p` and `z` must point to `rows * cols` doubles; `loss` must be writable;
/// `grad_p`, when non-null, must have room for `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn mass_cosine_loss(
    p: *const f64,
    z: *const f64,
    rows: usize,
    cols: usize,
    loss: *mut f64,
    grad_p: *mut f64,
) -> MassStatus {
    guard(|| {
        let (pt, zt) = (matrix(p, rows, cols, "p")?, matrix(z, rows, cols, "z")?);
        let loss = handle_mut(loss, "loss")?;
        let (l, g) = cosine_loss(&pt, &zt).map_err(core_err)?;
        *loss = l;
        write_grad(grad_p, &g);
        Ok(())
    })
}

/// Two-view symmetrized loss: predictions `p1`, `p2` against target
/// projections `z2`, `z1`.
///
/// # Safety
/// All four inputs must point to `rows * cols` doubles; `loss` must be
/// writable; gradient outputs, when non-null, need `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn mass_symmetrized_loss(
    p1: *const f64,
    z2: *const f64,
    p2: *const f64,
    z1: *const f64,
    rows: usize,
    cols: usize,
    loss: *mut f64,
    grad_p1: *mut f64,
    grad_p2: *mut f64,
) -> MassStatus {
    guard(|| {
        let p1 = matrix(p1, rows, cols, "p1")?;
        let z2 = matrix(z2, rows, cols, "z2")?;
        let p2 = matrix(p2, rows, cols, "p2")?;
        let z1 = matrix(z1, rows, cols, "z1")?;
        let loss = handle_mut(loss, "loss")?;
        let (l, g1, g2) = symmetrized_loss(&p1, &z2, &p2, &z1).map_err(core_err)?;
        *loss = l;
        write_grad(grad_p1, &g1);
        write_grad(grad_p2, &g2);
        Ok(())
    })
}
