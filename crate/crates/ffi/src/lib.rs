//! C ABI over the coala engine.
//!
//! Every handle is opaque and owned by the caller, who releases it with the
//! matching `*_free`. Functions return a [`CoalaStatus`]; on failure the
//! message is kept per thread and read back with [`coala_last_error`].
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coala::analytic::{run_experiment, Experiment};
use coala::envs::{Env, EnvConfig, EnvKind};
use coala::runconfig::RawConfig;
use coala::training::Trainer;
use coala::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalaEnvKind {
    Ipd = 0,
    Cleanup = 1,
}

/// A single two-player environment with its own RNG stream.
pub struct CoalaEnv {
    cfg: EnvConfig,
    env: Env,
    horizon: usize,
    rng: ChaCha8Rng,
}

/// A population trainer plus the JSON of its most recent metrics rows.
pub struct CoalaTrainer {
    trainer: Trainer,
    last: String,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> CoalaStatus {
    match err {
        Error::Config { .. } | Error::EmptyPool(_) => CoalaStatus::Config,
        Error::InvalidParameter(_) | Error::Shape(_) => CoalaStatus::InvalidArgument,
        Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => CoalaStatus::Io,
        _ => CoalaStatus::Numeric,
    }
}

struct Fail(CoalaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CoalaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CoalaStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            CoalaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CoalaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CoalaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Parses TOML text (NULL or empty means defaults).
unsafe fn raw_config(p: *const c_char) -> Result<RawConfig, Fail> {
    if p.is_null() {
        return Ok(RawConfig::default());
    }
    let t = text(p, "config")?;
    let table = t
        .parse::<toml::Table>()
        .map_err(|e| Fail(CoalaStatus::Config, format!("config: {}", e.message())))?;
    Ok(RawConfig { table })
}

/// Copies `s` plus a NUL into `buf`. `needed` receives the required size.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Fail> {
    if let Some(n) = needed.as_mut() {
        *n = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(Fail(
            CoalaStatus::BufferTooSmall,
            format!("buffer holds {len} bytes, {} needed", s.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes; `needed` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn coala_last_error(
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> CoalaStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_out(&msg, buf, len, needed) {
        Ok(()) => CoalaStatus::Ok,
        Err(Fail(code, _)) => code,
    }
}

/// Creates an environment. `horizon` is the episode length in steps.
///
/// # Safety
/// `out` must be a valid pointer; it receives an owned handle.
#[no_mangle]
pub unsafe extern "C" fn coala_env_new(
    kind: CoalaEnvKind,
    horizon: usize,
    seed: u64,
    out: *mut *mut CoalaEnv,
) -> CoalaStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        if horizon == 0 {
            return Err(Fail(
                CoalaStatus::InvalidArgument,
                "horizon must be positive".into(),
            ));
        }
        let cfg = EnvConfig {
            kind: match kind {
                CoalaEnvKind::Ipd => EnvKind::Ipd,
                CoalaEnvKind::Cleanup => EnvKind::Cleanup,
            },
            ..EnvConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = cfg.reset(&mut rng);
        *out = Box::into_raw(Box::new(CoalaEnv {
            cfg,
            env,
            horizon,
            rng,
        }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`coala_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coala_env_free(env: *mut CoalaEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coala_env_reset(env: *mut CoalaEnv) -> CoalaStatus {
    guard(|| {
        let e = as_mut(env, "env")?;
        e.env = e.cfg.reset(&mut e.rng);
        Ok(())
    })
}

/// # Safety
/// `env` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn coala_env_dims(
    env: *const CoalaEnv,
    obs_dim: *mut usize,
    n_actions: *mut usize,
) -> CoalaStatus {
    guard(|| {
        let e = as_ref(env, "env")?;
        *as_mut(obs_dim, "obs_dim")? = e.cfg.obs_dim();
        *as_mut(n_actions, "n_actions")? = e.cfg.n_actions();
        Ok(())
    })
}

/// Writes `agent`'s observation (0 or 1) into `buf` of `len` floats.
///
/// # Safety
/// `env` must be a live handle and `buf` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn coala_env_observation(
    env: *const CoalaEnv,
    agent: usize,
    buf: *mut f32,
    len: usize,
) -> CoalaStatus {
    guard(|| {
        let e = as_ref(env, "env")?;
        if agent > 1 {
            return Err(Fail(
                CoalaStatus::InvalidArgument,
                format!("agent {agent} out of range"),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let dim = e.cfg.obs_dim();
        if len < dim {
            return Err(Fail(
                CoalaStatus::BufferTooSmall,
                format!("observation needs {dim} floats"),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buf, dim);
        out.fill(0.0);
        e.env.write_observation(agent, out);
        Ok(())
    })
}

/// Advances one joint step. `rewards` receives two values.
///
/// # Safety
/// `env` must be a live handle, `rewards` valid for 2 doubles and `done`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coala_env_step(
    env: *mut CoalaEnv,
    action0: usize,
    action1: usize,
    rewards: *mut f64,
    done: *mut bool,
) -> CoalaStatus {
    guard(|| {
        let e = as_mut(env, "env")?;
        let n = e.cfg.n_actions();
        if action0 >= n || action1 >= n {
            return Err(Fail(
                CoalaStatus::InvalidArgument,
                format!("actions must be below {n}"),
            ));
        }
        if rewards.is_null() {
            return Err(null("rewards"));
        }
        let done = as_mut(done, "done")?;
        let r = e.env.step([action0, action1], e.horizon, &mut e.rng);
        std::slice::from_raw_parts_mut(rewards, 2).copy_from_slice(&r.rewards);
        *done = r.done;
        Ok(())
    })
}

/// Creates a trainer from TOML config text in the CLI file format
/// (`preset`, `estimator` and any config key). NULL means defaults.
///
/// # Safety
/// `config` must be NULL or a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coala_trainer_new(
    config: *const c_char,
    seed: u64,
    out: *mut *mut CoalaTrainer,
) -> CoalaStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let cfg = raw_config(config)?.train(false)?;
        let trainer = Trainer::new(cfg, seed)?;
        *out = Box::into_raw(Box::new(CoalaTrainer {
            trainer,
            last: "[]".into(),
        }));
        Ok(())
    })
}

/// # Safety
/// `trainer` must come from [`coala_trainer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coala_trainer_free(trainer: *mut CoalaTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Runs one training iteration. `finished` is set once the configured
/// iteration count is reached; further steps are rejected.
///
/// # Safety
/// `trainer` must be a live handle; `finished` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn coala_trainer_step(
    trainer: *mut CoalaTrainer,
    finished: *mut bool,
) -> CoalaStatus {
    guard(|| {
        let t = as_mut(trainer, "trainer")?;
        if t.trainer.done() {
            return Err(Fail(
                CoalaStatus::InvalidArgument,
                "training already finished".into(),
            ));
        }
        let rows = t.trainer.step()?;
        t.last = serde_json::to_string(&rows).map_err(Error::from)?;
        if let Some(f) = finished.as_mut() {
            *f = t.trainer.done();
        }
        Ok(())
    })
}

/// Completed iterations.
///
/// # Safety
/// `trainer` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coala_trainer_iteration(
    trainer: *const CoalaTrainer,
    out: *mut usize,
) -> CoalaStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(trainer, "trainer")?.trainer.iter;
        Ok(())
    })
}

/// JSON array of the metrics rows from the latest step.
///
/// # Safety
/// `trainer` must be a live handle, `buf` valid for `len` bytes and
/// `needed` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn coala_trainer_metrics(
    trainer: *const CoalaTrainer,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> CoalaStatus {
    guard(|| copy_out(&as_ref(trainer, "trainer")?.last, buf, len, needed))
}

/// Runs an analytic experiment by name and writes its summary as JSON.
///
/// # Safety
/// `experiment` must be NUL-terminated, `config` NULL or NUL-terminated,
/// `buf` valid for `len` bytes and `needed` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn coala_analytic_run(
    experiment: *const c_char,
    config: *const c_char,
    seed: u64,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> CoalaStatus {
    guard(|| {
        let exp: Experiment = text(experiment, "experiment")?.parse()?;
        let cfg = raw_config(config)?.analytic(exp)?;
        let out = run_experiment(exp, &cfg, seed)?;
        let json = serde_json::to_string(&out.summary).map_err(Error::from)?;
        copy_out(&json, buf, len, needed)
    })
}
