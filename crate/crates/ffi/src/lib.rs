//! C ABI over `lfa-core`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`LfaStatus`]; on failure [`lfa_last_error_message`] describes the error
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lfa_core::alignment::{
    lfa_init, lfa_step, serialize_anchor, AlignScope, AlignmentConfig, AnchorMode, AnchorSet,
};
use lfa_core::drift::latent_metrics;
use lfa_core::latent::{
    channel_mean_std, load_latent, low_pass, save_latent, LatentTensor, PoolingFilterSpec, Shape,
};
use lfa_core::LfaError;

/// Result code of every fallible call. Codes 2 to 6 match the exit codes of
/// the `lfa` command.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfaStatus {
    Ok = 0,
    NullPointer = 1,
    Format = 2,
    Numeric = 3,
    Io = 4,
    Session = 5,
    Adapter = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfaAnchorMode {
    Ema = 0,
    Fixed = 1,
    Prev = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfaScope {
    LowOnly = 0,
    HighOnly = 1,
    Both = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfaAlignmentConfig {
    /// Odd box filter window.
    pub window: usize,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    pub epsilon: f64,
    pub anchor_mode: LfaAnchorMode,
    pub scope: LfaScope,
    pub allow_zero_sigma: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LfaMetrics {
    pub l1: f64,
    pub l2: f64,
    pub ssim: f64,
}

/// A C×H×W float32 latent.
pub struct LfaTensor {
    inner: LatentTensor,
}

/// Alignment state carried across turns.
pub struct LfaAligner {
    cfg: AlignmentConfig,
    anchors: AnchorSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Failure {
    Null(&'static str),
    Core(LfaError),
}

impl From<LfaError> for Failure {
    fn from(e: LfaError) -> Self {
        Failure::Core(e)
    }
}

fn status_of(e: &LfaError) -> LfaStatus {
    match e.exit_code() {
        3 => LfaStatus::Numeric,
        4 => LfaStatus::Io,
        5 => LfaStatus::Session,
        6 => LfaStatus::Adapter,
        _ => LfaStatus::Format,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LfaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            LfaStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            LfaStatus::NullPointer
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
            set_last_error(format!("internal panic: {msg}"));
            LfaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| LfaError::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

fn boxed_tensor(t: LatentTensor) -> *mut LfaTensor {
    Box::into_raw(Box::new(LfaTensor { inner: t }))
}

fn to_core(cfg: &LfaAlignmentConfig) -> Result<AlignmentConfig, LfaError> {
    let out = AlignmentConfig {
        pool: PoolingFilterSpec::new(cfg.window)?,
        alpha_mu: cfg.alpha_mu,
        alpha_sigma: cfg.alpha_sigma,
        epsilon: cfg.epsilon,
        anchor_mode: match cfg.anchor_mode {
            LfaAnchorMode::Ema => AnchorMode::Ema,
            LfaAnchorMode::Fixed => AnchorMode::Fixed,
            LfaAnchorMode::Prev => AnchorMode::Prev,
        },
        scope: match cfg.scope {
            LfaScope::LowOnly => AlignScope::LowOnly,
            LfaScope::HighOnly => AlignScope::HighOnly,
            LfaScope::Both => AlignScope::Both,
        },
        allow_zero_sigma: cfg.allow_zero_sigma,
    };
    out.validate()?;
    Ok(out)
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lfa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn lfa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default settings: window 9, α_μ 0.95, α_σ 0.85, ε 1e-5, ema, low band.
#[no_mangle]
pub extern "C" fn lfa_alignment_config_default() -> LfaAlignmentConfig {
    let d = AlignmentConfig::default();
    LfaAlignmentConfig {
        window: d.pool.window(),
        alpha_mu: d.alpha_mu,
        alpha_sigma: d.alpha_sigma,
        epsilon: d.epsilon,
        anchor_mode: LfaAnchorMode::Ema,
        scope: LfaScope::LowOnly,
        allow_zero_sigma: false,
    }
}

/// Copies `channels·height·width` floats from `data` into a new tensor.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_new(
    channels: usize,
    height: usize,
    width: usize,
    data: *const f32,
    out: *mut *mut LfaTensor,
) -> LfaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let shape = Shape::new(channels, height, width)?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let values = std::slice::from_raw_parts(data, shape.len()).to_vec();
        *out = boxed_tensor(LatentTensor::new(shape, values)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_load(path: *const c_char, out: *mut *mut LfaTensor) -> LfaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        *out = boxed_tensor(load_latent(path_arg(path)?, None)?);
        Ok(())
    })
}

/// # Safety
/// `tensor` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_save(tensor: *const LfaTensor, path: *const c_char) -> LfaStatus {
    guard(|| {
        save_latent(&deref(tensor, "tensor")?.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `tensor` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_shape(
    tensor: *const LfaTensor,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> LfaStatus {
    guard(|| {
        let s = deref(tensor, "tensor")?.inner.shape();
        *deref_mut(channels, "channels")? = s.channels;
        *deref_mut(height, "height")? = s.height;
        *deref_mut(width, "width")? = s.width;
        Ok(())
    })
}

/// Read-only view of the values in channel, row, column order; null for a
/// null handle. Valid while the tensor lives.
///
/// # Safety
/// `tensor` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_data(tensor: *const LfaTensor) -> *const f32 {
    match tensor.as_ref() {
        Some(t) => t.inner.data().as_ptr(),
        None => ptr::null(),
    }
}

/// Number of values; 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_len(tensor: *const LfaTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.data().len())
}

/// # Safety
/// `tensor` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn lfa_tensor_free(tensor: *mut LfaTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Per-channel spatial mean and population std. `capacity` is the length of
/// both output arrays and must be at least the channel count.
///
/// # Safety
/// `means` and `stds` must hold `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lfa_channel_stats(
    tensor: *const LfaTensor,
    means: *mut f64,
    stds: *mut f64,
    capacity: usize,
) -> LfaStatus {
    guard(|| {
        let t = &deref(tensor, "tensor")?.inner;
        if means.is_null() || stds.is_null() {
            return Err(Failure::Null("means/stds"));
        }
        let stats = channel_mean_std(t);
        if capacity < stats.channels() {
            return Err(LfaError::InvalidArgument(format!(
                "capacity {capacity} is below the channel count {}",
                stats.channels()
            ))
            .into());
        }
        std::slice::from_raw_parts_mut(means, stats.channels()).copy_from_slice(&stats.means);
        std::slice::from_raw_parts_mut(stds, stats.channels()).copy_from_slice(&stats.stds);
        Ok(())
    })
}

/// Replicate-padded box filter with an odd `window`.
///
/// # Safety
/// `tensor` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_low_pass(
    tensor: *const LfaTensor,
    window: usize,
    out: *mut *mut LfaTensor,
) -> LfaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let t = &deref(tensor, "tensor")?.inner;
        *out = boxed_tensor(low_pass(t, PoolingFilterSpec::new(window)?));
        Ok(())
    })
}

/// Metrics of `a` against `b` (latent-space SSIM).
///
/// # Safety
/// Both tensors must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_latent_metrics(
    a: *const LfaTensor,
    b: *const LfaTensor,
    out: *mut LfaMetrics,
) -> LfaStatus {
    guard(|| {
        let m = latent_metrics(&deref(a, "a")?.inner, &deref(b, "b")?.inner)?;
        *deref_mut(out, "out")? = LfaMetrics {
            l1: m.l1,
            l2: m.l2,
            ssim: m.ssim,
        };
        Ok(())
    })
}

/// Anchors initialized from the round-0 latent `z0`.
///
/// # Safety
/// `config` and `z0` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_aligner_new(
    config: *const LfaAlignmentConfig,
    z0: *const LfaTensor,
    out: *mut *mut LfaAligner,
) -> LfaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = to_core(deref(config, "config")?)?;
        let anchors = lfa_init(&deref(z0, "z0")?.inner, &cfg)?;
        *out = Box::into_raw(Box::new(LfaAligner { cfg, anchors }));
        Ok(())
    })
}

/// Aligns `z_tilde` and advances the anchors. The aligner is unchanged on
/// failure.
///
/// # Safety
/// Handles must come from this library; `z_hat` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_aligner_step(
    aligner: *mut LfaAligner,
    z_tilde: *const LfaTensor,
    z_hat: *mut *mut LfaTensor,
) -> LfaStatus {
    guard(|| {
        let out = deref_mut(z_hat, "z_hat")?;
        *out = ptr::null_mut();
        let a = deref_mut(aligner, "aligner")?;
        let step = lfa_step(&deref(z_tilde, "z_tilde")?.inner, &a.anchors, &a.cfg)?;
        a.anchors = step.anchors;
        *out = boxed_tensor(step.z_hat);
        Ok(())
    })
}

/// Turns completed so far; 0 for a null handle.
///
/// # Safety
/// `aligner` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lfa_aligner_turn(aligner: *const LfaAligner) -> u64 {
    aligner.as_ref().map_or(0, |a| a.anchors.turn())
}

/// Anchor records (low band first) as a new string to release with
/// [`lfa_string_free`].
///
/// # Safety
/// `aligner` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfa_aligner_serialize(
    aligner: *const LfaAligner,
    out: *mut *mut c_char,
) -> LfaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let a = deref(aligner, "aligner")?;
        let text: String = [&a.anchors.low, &a.anchors.high]
            .into_iter()
            .flatten()
            .map(serialize_anchor)
            .collect();
        *out = CString::new(text).expect("records hold no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `aligner` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn lfa_aligner_free(aligner: *mut LfaAligner) {
    if !aligner.is_null() {
        drop(Box::from_raw(aligner));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn lfa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
