//! C interface to the resact core.
//!
//! Models and datasets are opaque handles created by `*_load` and released by
//! the matching `*_free`. Every call returns a [`ResactStatus`]; on failure the
//! message is available from [`resact_last_error`] until the next failing call
//! on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use resact::baselines::load_model;
use resact::env::{reward_return_time, reward_session_length, EnvError, LoggedDataset};
use resact::evaluator::{evaluate_model, exact_behavior_means, ncis_value, EvalConfig, NcisReport};
use resact::numerics::NumericsError;
use resact::policy::ActionModel;

/// Result code of every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResactStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Checkpoint = 5,
    Config = 6,
    Numerics = 7,
    NonFinite = 8,
    Env = 9,
    Panic = 10,
}

/// A loaded policy checkpoint of any method.
pub struct ResactModel {
    inner: Box<dyn ActionModel>,
}

/// A logged dataset directory.
pub struct ResactDataset {
    inner: LoggedDataset,
}

/// Off-policy estimate with its diagnostics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ResactNcisReport {
    pub ncis: f64,
    pub ess: f64,
    pub clip_fraction: f64,
    pub n_trajectories: usize,
    pub skipped: usize,
}

impl From<&NcisReport> for ResactNcisReport {
    fn from(r: &NcisReport) -> Self {
        ResactNcisReport {
            ncis: r.ncis,
            ess: r.ess,
            clip_fraction: r.clip_fraction,
            n_trajectories: r.n_trajectories,
            skipped: r.skipped,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ResactStatus, String);

impl From<resact::Error> for Failure {
    fn from(e: resact::Error) -> Self {
        let status = match &e {
            resact::Error::Numerics(NumericsError::Io(_)) | resact::Error::Io(_) => ResactStatus::Io,
            resact::Error::Numerics(NumericsError::Checkpoint(_)) => ResactStatus::Checkpoint,
            resact::Error::Numerics(_) => ResactStatus::Numerics,
            resact::Error::Env(EnvError::Io(_)) => ResactStatus::Io,
            resact::Error::Env(_) => ResactStatus::Env,
            resact::Error::Config(_) | resact::Error::DoubleNormalization => ResactStatus::Config,
            resact::Error::NonFinite { .. } => ResactStatus::NonFinite,
            resact::Error::Checkpoint(_) | resact::Error::Json(_) => ResactStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match &e {
            EnvError::Io(_) => ResactStatus::Io,
            _ => ResactStatus::Env,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: ResactStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ResactStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ResactStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            ResactStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(ResactStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(ResactStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(ResactStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ResactStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ResactStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn eval_config(clip_c: f64, proxy_std: f64) -> Result<EvalConfig, Failure> {
    let cfg = EvalConfig {
        clip_c,
        proxy_std,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn resact_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn resact_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by any training method. `n_estimators = 0` keeps
/// the stored candidate count.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn resact_model_load(
    path: *const c_char,
    n_estimators: usize,
    out: *mut *mut ResactModel,
) -> ResactStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let n = (n_estimators > 0).then_some(n_estimators);
        let inner = load_model(&path, n)?;
        *out = Box::into_raw(Box::new(ResactModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`resact_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn resact_model_free(model: *mut ResactModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of one state row, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn resact_model_state_dim(model: *const ResactModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.state_dim())
}

/// Width of one action row, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn resact_model_action_dim(model: *const ResactModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.action_dim())
}

/// Acts on `n_rows` row-major raw states. `out` receives `n_rows × action_dim`
/// values; `out_len` is its capacity in doubles.
///
/// # Safety
/// `states` must hold `n_rows × state_dim` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn resact_model_act(
    model: *const ResactModel,
    states: *const f64,
    n_rows: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> ResactStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        let (sd, ad) = (m.state_dim(), m.action_dim());
        let need = n_rows * ad;
        if out_len < need {
            return Err(fail(
                ResactStatus::BufferTooSmall,
                format!("output holds {out_len} values, {need} needed"),
            ));
        }
        let input = slice_arg(states, n_rows * sd, "states")?;
        if n_rows == 0 {
            return Ok(());
        }
        let out = std::slice::from_raw_parts_mut(out_ref(out, "out")?, need);
        let x = ArrayView2::from_shape((n_rows, sd), input).expect("length checked");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = m.act_batch(x, &mut rng)?;
        for (dst, src) in out.iter_mut().zip(actions.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Loads a dataset directory written by `resact gen-data`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn resact_dataset_load(path: *const c_char, out: *mut *mut ResactDataset) -> ResactStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = LoggedDataset::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(ResactDataset { inner }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from [`resact_dataset_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn resact_dataset_free(dataset: *mut ResactDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of logged transitions, or 0 for a null dataset.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn resact_dataset_len(dataset: *const ResactDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Scores `model` on `dataset` against the simulator's logging policy.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn resact_evaluate(
    model: *const ResactModel,
    dataset: *const ResactDataset,
    clip_c: f64,
    proxy_std: f64,
    seed: u64,
    out: *mut ResactNcisReport,
) -> ResactStatus {
    guard(|| {
        let m = &deref(model, "model")?.inner;
        let ds = &deref(dataset, "dataset")?.inner;
        let out = out_ref(out, "out")?;
        let cfg = eval_config(clip_c, proxy_std)?;
        let width = ds.stats.config.session_dim() + ds.stats.config.request_dim();
        if m.state_dim() != width {
            return Err(fail(
                ResactStatus::InvalidArgument,
                format!("model state width {} does not match dataset width {width}", m.state_dim()),
            ));
        }
        let means = exact_behavior_means(ds);
        *out = (&evaluate_model(m.as_ref(), ds, means.view(), &cfg, seed)?).into();
        Ok(())
    })
}

/// NCIS over raw arrays. Trajectory `k` spans rows
/// `offsets[k] .. offsets[k + 1]`, so `offsets` has `n_trajectories + 1`
/// entries starting at 0 and ending at `n_rows`. Action arrays are row-major
/// `n_rows × action_dim`.
///
/// # Safety
/// Every pointer must reference the number of values described above.
#[no_mangle]
pub unsafe extern "C" fn resact_ncis_value(
    offsets: *const usize,
    n_trajectories: usize,
    rewards: *const f64,
    logged: *const f64,
    eval_means: *const f64,
    behavior_means: *const f64,
    n_rows: usize,
    action_dim: usize,
    clip_c: f64,
    proxy_std: f64,
    out: *mut ResactNcisReport,
) -> ResactStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = eval_config(clip_c, proxy_std)?;
        if action_dim == 0 {
            return Err(fail(ResactStatus::InvalidArgument, "action_dim must be positive"));
        }
        let offsets = slice_arg(offsets, n_trajectories + 1, "offsets")?;
        if offsets[0] != 0 || offsets[n_trajectories] != n_rows || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(fail(
                ResactStatus::InvalidArgument,
                "offsets must rise from 0 to n_rows",
            ));
        }
        let ranges: Vec<Range<usize>> = offsets.windows(2).map(|w| w[0]..w[1]).collect();
        let len = n_rows * action_dim;
        let view = |p, what| -> Result<ArrayView2<f64>, Failure> {
            let s = slice_arg(p, len, what)?;
            Ok(ArrayView2::from_shape((n_rows, action_dim), s).expect("length checked"))
        };
        let r = slice_arg(rewards, n_rows, "rewards")?;
        let report = ncis_value(
            &ranges,
            r,
            view(logged, "logged")?,
            view(eval_means, "eval_means")?,
            view(behavior_means, "behavior_means")?,
            &cfg,
        )?;
        *out = (&report).into();
        Ok(())
    })
}

/// Return-time reward level for a gap `delta` given the user's mean gap and
/// the population's 75th percentile.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn resact_reward_return_time(
    delta: f64,
    delta_avg_user: f64,
    delta_p75: f64,
    out: *mut u8,
) -> ResactStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = reward_return_time(delta, delta_avg_user, delta_p75)?;
        Ok(())
    })
}

/// Session-length reward level for `eta` requests given the user's mean.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn resact_reward_session_length(eta: usize, eta_avg_user: f64, out: *mut u8) -> ResactStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if !(eta_avg_user > 0.0) {
            return Err(fail(ResactStatus::InvalidArgument, "eta_avg_user must be positive"));
        }
        *out = reward_session_length(eta, eta_avg_user);
        Ok(())
    })
}
