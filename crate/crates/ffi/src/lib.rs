//! C interface to trained anatomy-net artifacts.
//!
//! Every fallible function returns an [`AnStatus`]. On failure a message is
//! kept per thread and can be read with [`an_last_error`]. Handles are opaque
//! and owned by the caller until passed to the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use anatomy_net::data::FeatureSet;
use anatomy_net::model::{argmax_rows, load_checkpoint, Model};
use anatomy_net::svm::MulticlassSvm;
use anatomy_net::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Data = 6,
    Numerical = 7,
    Panic = 8,
}

/// A trained network loaded from a checkpoint.
pub struct AnModel {
    inner: Model<f32>,
}

/// A trained one-vs-rest linear SVM.
pub struct AnSvm {
    inner: MulticlassSvm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Argument(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(e: &Error) -> AnStatus {
    match e {
        Error::Io { .. } => AnStatus::Io,
        Error::Format { .. }
        | Error::Truncated { .. }
        | Error::Version { .. }
        | Error::Inconsistent(_)
        | Error::Image { .. } => AnStatus::Format,
        Error::Shape { .. } | Error::Dimension { .. } => AnStatus::Shape,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Spec { .. } => AnStatus::InvalidArgument,
        Error::Data(_) => AnStatus::Data,
        _ => AnStatus::Numerical,
    }
}

/// Run `f`, translating errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AnStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            AnStatus::NullPointer
        }
        Ok(Err(Failure::Argument(msg))) => {
            set_last_error(msg);
            AnStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AnStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure::Argument("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
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

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn an_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn an_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn an_status_name(status: AnStatus) -> *const c_char {
    let s: &'static str = match status {
        AnStatus::Ok => "ok\0",
        AnStatus::NullPointer => "null pointer\0",
        AnStatus::InvalidArgument => "invalid argument\0",
        AnStatus::Io => "i/o error\0",
        AnStatus::Format => "format error\0",
        AnStatus::Shape => "shape mismatch\0",
        AnStatus::Data => "data error\0",
        AnStatus::Numerical => "numerical error\0",
        AnStatus::Panic => "internal panic\0",
    };
    s.as_ptr().cast()
}

/// Load a network checkpoint. On success `*out` receives a handle to free with [`an_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn an_model_load(path: *const c_char, out: *mut *mut AnModel) -> AnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let inner: Model<f32> = load_checkpoint(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(AnModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`an_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn an_model_free(model: *mut AnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn an_model_num_classes(model: *const AnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Writes channels, height, width of one input image to `out[0..3]`.
///
/// # Safety
/// `model` must be a live handle and `out` must point to three writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn an_model_input_shape(model: *const AnModel, out: *mut usize) -> AnStatus {
    guard(|| {
        let m = handle(model, "model")?;
        slice_mut(out, 3, "out")?.copy_from_slice(&m.inner.spec().input_shape);
        Ok(())
    })
}

fn image_batch(m: &AnModel, pixels: &[f32], n: usize) -> Result<Tensor<f32>, Failure> {
    let [c, h, w] = m.inner.spec().input_shape;
    if n == 0 {
        return Err(Failure::Argument("batch of zero images".into()));
    }
    Ok(Tensor::new([n, c, h, w], pixels.to_vec())?)
}

/// Inference-mode logits for `n` images laid out `[n, C, H, W]` in `pixels`.
/// `out` receives `n * num_classes` values.
///
/// # Safety
/// `pixels` must hold `n * C * H * W` floats and `out` `n * num_classes` writable floats.
#[no_mangle]
pub unsafe extern "C" fn an_model_logits(
    model: *const AnModel,
    pixels: *const f32,
    n: usize,
    out: *mut f32,
) -> AnStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let per_image: usize = m.inner.spec().input_shape.iter().product();
        let x = image_batch(m, slice(pixels, n * per_image, "pixels")?, n)?;
        let logits = m.inner.forward_infer(&x)?;
        slice_mut(out, logits.len(), "out")?.copy_from_slice(logits.data());
        Ok(())
    })
}

/// Predicted class of each of `n` images, written to `out[0..n]`.
///
/// # Safety
/// `pixels` must hold `n * C * H * W` floats and `out` `n` writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn an_model_classify(
    model: *const AnModel,
    pixels: *const f32,
    n: usize,
    out: *mut usize,
) -> AnStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let per_image: usize = m.inner.spec().input_shape.iter().product();
        let x = image_batch(m, slice(pixels, n * per_image, "pixels")?, n)?;
        let pred = argmax_rows(&m.inner.forward_infer(&x)?);
        slice_mut(out, n, "out")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// Load a saved SVM. On success `*out` receives a handle to free with [`an_svm_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn an_svm_load(path: *const c_char, out: *mut *mut AnSvm) -> AnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let inner = MulticlassSvm::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(AnSvm { inner }));
        Ok(())
    })
}

/// # Safety
/// `svm` must be null or a handle from [`an_svm_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn an_svm_free(svm: *mut AnSvm) {
    if !svm.is_null() {
        drop(Box::from_raw(svm));
    }
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `svm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn an_svm_dim(svm: *const AnSvm) -> usize {
    svm.as_ref().map_or(0, |s| s.inner.dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `svm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn an_svm_num_classes(svm: *const AnSvm) -> usize {
    svm.as_ref().map_or(0, |s| s.inner.num_classes())
}

/// Predicted class of each of `n` feature rows of width `dim`, written to `out[0..n]`.
///
/// # Safety
/// `features` must hold `n * dim` floats and `out` `n` writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn an_svm_classify(
    svm: *const AnSvm,
    features: *const f32,
    n: usize,
    dim: usize,
    out: *mut usize,
) -> AnStatus {
    guard(|| {
        let s = handle(svm, "svm")?;
        if n == 0 {
            return Err(Failure::Argument("batch of zero feature rows".into()));
        }
        let data = slice(features, n * dim, "features")?;
        let set = FeatureSet::new(Tensor::new([n, dim], data.to_vec())?, vec![0; n], "ffi")?;
        let pred = s.inner.predict_set(&set)?;
        slice_mut(out, n, "out")?.copy_from_slice(&pred);
        Ok(())
    })
}
