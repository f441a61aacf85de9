//! C ABI over `mllab-core`.
//!
//! Conventions:
//! - every fallible function returns an [`MllabStatus`]; `MLLAB_STATUS_OK` is zero;
//! - on failure, a message is kept per thread and can be copied out with
//!   [`mllab_last_error_message`];
//! - matrices are dense row-major `double` arrays with explicit dimensions;
//! - networks are opaque handles created by `mllab_network_*` constructors and
//!   released with [`mllab_network_free`];
//! - panics never cross the boundary; they are reported as `MLLAB_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use mllab::backbone::{init_network, load_checkpoint, save_checkpoint, BackboneKind, EmbeddingNetwork, NetworkConfig};
use mllab::data::pixel_normalize;
use mllab::eval::{best_threshold_accuracy, kfold_verification};
use mllab::loss::{asoftmax_psi, evaluate_loss, ClassifierParams, LossKind, LossSpec};
use mllab::tensor::{FeatureBatch, Mat};
use mllab::trainer::{lr_at_epoch, OptimizerConfig};
use mllab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MllabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Domain = 4,
    NonFinite = 5,
    Io = 6,
    Checkpoint = 7,
    BufferTooSmall = 8,
    Internal = 99,
}

/// Backbone selector for [`mllab_network_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MllabBackbone {
    Residual = 0,
    DepthwiseSeparable = 1,
}

/// Loss selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MllabLoss {
    CrossEntropy = 0,
    AngularSoftmax = 1,
    AmSoftmax = 2,
    ArcFace = 3,
    MarginalJoint = 4,
}

/// Loss hyperparameters; fill with [`mllab_loss_params_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MllabLossParams {
    /// An `MllabLoss` value.
    pub kind: u32,
    pub m_int: u32,
    pub m_add: f64,
    pub s: f64,
    pub dist_threshold: f64,
    pub error_margin: f64,
    pub balance: f64,
    pub normalize_features: bool,
    pub asoftmax_lambda: f64,
    pub marginal_hinge: bool,
}

/// Architecture sizes for [`mllab_network_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MllabNetworkConfig {
    /// An `MllabBackbone` value.
    pub kind: u32,
    pub input_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    pub grid_side: usize,
    pub kernel: usize,
}

/// Opaque embedding network.
pub struct MllabNetwork {
    inner: EmbeddingNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MllabStatus {
    match e {
        Error::DimensionMismatch { .. } => MllabStatus::DimensionMismatch,
        Error::Domain(_) | Error::Range(_) | Error::ZeroVector { .. } => MllabStatus::Domain,
        Error::NonFinite(_) => MllabStatus::NonFinite,
        Error::Io(_) => MllabStatus::Io,
        Error::Checkpoint(_) => MllabStatus::Checkpoint,
        _ => MllabStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MllabStatus, String)>) -> MllabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MllabStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            MllabStatus::Internal
        }
    }
}

type FfiResult<T> = Result<T, (MllabStatus, String)>;

fn core<T>(r: mllab::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MllabStatus, String) {
    (MllabStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (MllabStatus, String) {
    (MllabStatus::InvalidArgument, msg.into())
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> FfiResult<&'a Path> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

// Selectors cross the boundary as plain integers: an out-of-range value in
// a Rust enum would be undefined behaviour, an integer can be rejected.
fn loss_kind(k: u32) -> FfiResult<LossKind> {
    const CE: u32 = MllabLoss::CrossEntropy as u32;
    const SPHERE: u32 = MllabLoss::AngularSoftmax as u32;
    const AM: u32 = MllabLoss::AmSoftmax as u32;
    const ARC: u32 = MllabLoss::ArcFace as u32;
    const JOINT: u32 = MllabLoss::MarginalJoint as u32;
    match k {
        CE => Ok(LossKind::CrossEntropy),
        SPHERE => Ok(LossKind::AngularSoftmax),
        AM => Ok(LossKind::AMSoftmax),
        ARC => Ok(LossKind::ArcFace),
        JOINT => Ok(LossKind::MarginalJoint),
        other => Err(invalid(format!("unknown loss selector {other}"))),
    }
}

fn backbone_kind(k: u32) -> FfiResult<BackboneKind> {
    const RES: u32 = MllabBackbone::Residual as u32;
    const DWS: u32 = MllabBackbone::DepthwiseSeparable as u32;
    match k {
        RES => Ok(BackboneKind::Residual),
        DWS => Ok(BackboneKind::DepthwiseSeparable),
        other => Err(invalid(format!("unknown backbone selector {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mllab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes (without the terminator) of this thread's last error message.
#[no_mangle]
pub extern "C" fn mllab_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_bytes().len())
}

/// Copy this thread's last error message into `buf` (NUL-terminated).
/// Returns `MLLAB_STATUS_BUFFER_TOO_SMALL` if `len` cannot hold the message and
/// its terminator; the buffer is then left untouched.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mllab_last_error_message(buf: *mut c_char, len: usize) -> MllabStatus {
    if buf.is_null() {
        return MllabStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes_with_nul();
        if bytes.len() > len {
            return MllabStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        MllabStatus::Ok
    })
}

/// Default architecture sizes for backbone `kind` (an `MllabBackbone`) and `input_dim`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mllab_network_config_default(
    kind: u32,
    input_dim: usize,
    out: *mut MllabNetworkConfig,
) -> MllabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = NetworkConfig::new(backbone_kind(kind)?, input_dim);
        *out = MllabNetworkConfig {
            kind,
            input_dim: c.input_dim,
            width: c.width,
            blocks: c.blocks,
            embed_dim: c.embed_dim,
            grid_side: c.grid_side,
            kernel: c.kernel,
        };
        Ok(())
    })
}

/// Initialise a network deterministically from `seed`. On success `*out`
/// owns a handle to release with [`mllab_network_free`].
///
/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mllab_network_new(
    config: *const MllabNetworkConfig,
    seed: u64,
    out: *mut *mut MllabNetwork,
) -> MllabStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cfg = NetworkConfig {
            kind: backbone_kind(c.kind)?,
            input_dim: c.input_dim,
            width: c.width,
            blocks: c.blocks,
            embed_dim: c.embed_dim,
            grid_side: c.grid_side,
            kernel: c.kernel,
        };
        let inner = core(init_network(cfg, seed))?;
        *out = Box::into_raw(Box::new(MllabNetwork { inner }));
        Ok(())
    })
}

/// Release a handle; null is ignored.
///
/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mllab_network_free(net: *mut MllabNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mllab_network_input_dim(net: *const MllabNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.input_dim())
}

/// # Safety
/// `net` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mllab_network_embed_dim(net: *const MllabNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.embed_dim())
}

/// # Safety
/// `net` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mllab_network_param_count(net: *const MllabNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.params().len())
}

/// Embed `rows` inputs of width `cols` into `out` (`rows × embed_dim`).
///
/// # Safety
/// `inputs` must hold `rows·cols` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mllab_network_embed(
    net: *const MllabNetwork,
    inputs: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> MllabStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.inner;
        let need = rows * net.embed_dim();
        if out_len < need {
            return Err((MllabStatus::BufferTooSmall, format!("output needs {need} doubles, got {out_len}")));
        }
        let x = core(Mat::from_vec(rows, cols, input(inputs, rows * cols, "inputs")?.to_vec()))?;
        let e = core(net.embed(&x))?;
        output(out, need, "out")?.copy_from_slice(e.as_slice());
        Ok(())
    })
}

/// Write the network to a checkpoint file.
///
/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn mllab_network_save(net: *const MllabNetwork, path: *const c_char) -> MllabStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.inner;
        core(save_checkpoint(net, path_arg(path)?))
    })
}

/// Load a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mllab_network_load(path: *const c_char, out: *mut *mut MllabNetwork) -> MllabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = core(load_checkpoint(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(MllabNetwork { inner }));
        Ok(())
    })
}

/// Default hyperparameters for loss `kind` (an `MllabLoss`).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mllab_loss_params_default(kind: u32, out: *mut MllabLossParams) -> MllabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = LossSpec::new(loss_kind(kind)?);
        *out = MllabLossParams {
            kind,
            m_int: s.m_int,
            m_add: s.m_add,
            s: s.s,
            dist_threshold: s.dist_threshold,
            error_margin: s.error_margin,
            balance: s.balance,
            normalize_features: s.normalize_features,
            asoftmax_lambda: s.asoftmax_lambda,
            marginal_hinge: s.marginal_hinge,
        };
        Ok(())
    })
}

/// Mean loss over `n` features of width `d` with classifier weights
/// (`d × classes`, row-major) and biases. Any gradient pointer may be null
/// to skip that output; otherwise it must hold `n·d`, `d·classes` or
/// `classes` doubles respectively.
///
/// # Safety
/// All non-null pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mllab_loss_evaluate(
    params: *const MllabLossParams,
    features: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    weights: *const f64,
    biases: *const f64,
    classes: usize,
    out_loss: *mut f64,
    grad_features: *mut f64,
    grad_weights: *mut f64,
    grad_biases: *mut f64,
) -> MllabStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        let out_loss = out_loss.as_mut().ok_or_else(|| null("out_loss"))?;
        let spec = LossSpec {
            kind: loss_kind(p.kind)?,
            m_int: p.m_int,
            m_add: p.m_add,
            s: p.s,
            dist_threshold: p.dist_threshold,
            error_margin: p.error_margin,
            balance: p.balance,
            normalize_features: p.normalize_features,
            asoftmax_lambda: p.asoftmax_lambda,
            marginal_hinge: p.marginal_hinge,
        };
        let x = core(Mat::from_vec(n, d, input(features, n * d, "features")?.to_vec()))?;
        let batch = core(FeatureBatch::new(x, input(labels, n, "labels")?.to_vec(), classes))?;
        let w = core(Mat::from_vec(d, classes, input(weights, d * classes, "weights")?.to_vec()))?;
        let cls = core(ClassifierParams::new(w, input(biases, classes, "biases")?.to_vec()))?;
        let res = core(evaluate_loss(&spec, &batch, &cls))?;
        *out_loss = res.loss;
        if !grad_features.is_null() {
            output(grad_features, n * d, "grad_features")?.copy_from_slice(res.grad_features.as_slice());
        }
        if !grad_weights.is_null() {
            output(grad_weights, d * classes, "grad_weights")?.copy_from_slice(res.grad_weights.as_slice());
        }
        if !grad_biases.is_null() {
            output(grad_biases, classes, "grad_biases")?.copy_from_slice(&res.grad_biases);
        }
        Ok(())
    })
}

/// A-Softmax target-logit surrogate for angle `theta` in `[0, π]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mllab_asoftmax_psi(theta: f64, m: u32, out: *mut f64) -> MllabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = core(asoftmax_psi(theta, m))?;
        Ok(())
    })
}

/// Step-schedule learning rate for a 1-based `epoch`.
///
/// # Safety
/// `drop_epochs` must hold `num_drops` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mllab_lr_at_epoch(
    lr0: f64,
    drop_factor: f64,
    drop_epochs: *const usize,
    num_drops: usize,
    epochs: usize,
    epoch: usize,
    out: *mut f64,
) -> MllabStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let config = OptimizerConfig {
            lr0,
            drop_factor,
            drop_epochs: input(drop_epochs, num_drops, "drop_epochs")?.to_vec(),
            epochs,
            ..OptimizerConfig::default()
        };
        core(config.validate())?;
        *out = core(lr_at_epoch(&config, epoch))?;
        Ok(())
    })
}

unsafe fn pair_inputs(distances: *const f64, same: *const u8, n: usize) -> FfiResult<(Vec<f64>, Vec<bool>)> {
    let d = input(distances, n, "distances")?.to_vec();
    let s = input(same, n, "same")?.iter().map(|&b| b != 0).collect();
    Ok((d, s))
}

/// Best threshold and its accuracy (%) over `n` pairs; `same[i]` non-zero
/// marks a same-identity pair.
///
/// # Safety
/// `distances` and `same` must hold `n` values; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn mllab_best_threshold_accuracy(
    distances: *const f64,
    same: *const u8,
    n: usize,
    out_threshold: *mut f64,
    out_accuracy: *mut f64,
) -> MllabStatus {
    guard(|| {
        let t = out_threshold.as_mut().ok_or_else(|| null("out_threshold"))?;
        let a = out_accuracy.as_mut().ok_or_else(|| null("out_accuracy"))?;
        let (d, s) = pair_inputs(distances, same, n)?;
        (*t, *a) = core(best_threshold_accuracy(&d, &s))?;
        Ok(())
    })
}

/// Mean k-fold verification accuracy (%).
///
/// # Safety
/// `distances` and `same` must hold `n` values; `out_accuracy` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mllab_kfold_verification(
    distances: *const f64,
    same: *const u8,
    n: usize,
    folds: usize,
    seed: u64,
    out_accuracy: *mut f64,
) -> MllabStatus {
    guard(|| {
        let a = out_accuracy.as_mut().ok_or_else(|| null("out_accuracy"))?;
        let (d, s) = pair_inputs(distances, same, n)?;
        *a = core(kfold_verification(&d, &s, folds, seed))?;
        Ok(())
    })
}

/// `(raw − 127.5) / 128` for `n` intensities in `[0, 255]`.
///
/// # Safety
/// `raw` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mllab_pixel_normalize(raw: *const f64, n: usize, out: *mut f64) -> MllabStatus {
    guard(|| {
        let v = core(pixel_normalize(input(raw, n, "raw")?))?;
        output(out, n, "out")?.copy_from_slice(&v);
        Ok(())
    })
}
