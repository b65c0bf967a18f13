//! C ABI over `pgrad`.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PgStatus`]; on failure the message is available from
//! [`pg_last_error_message`] on the same thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pgrad::envs::{grid_mdp_named, make_env, EnvName, RunningNormalizer, TabularMdp};
use pgrad::harness::{self, ExperimentConfig};
use pgrad::nn::Activation;
use pgrad::policy::Policy;
use pgrad::tabular::{mirror_converge, value_iteration, Drift, Neighborhood, TabularPolicy};
use pgrad::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Contract = 4,
    Numerical = 5,
    Schema = 6,
    Property = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgDrift {
    Trivial = 0,
    Ppo = 1,
}

/// Policy network plus the observation normalizer it was trained with.
pub struct PgPolicy {
    policy: Policy,
    normalizer: Option<RunningNormalizer>,
}

pub struct PgMdp {
    mdp: TabularMdp,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PgStatus {
    match e {
        Error::Config(_) => PgStatus::Config,
        Error::Contract(_) => PgStatus::Contract,
        Error::Numerical(_) => PgStatus::Numerical,
        Error::Schema(_) | Error::Json(_) | Error::Csv(_) => PgStatus::Schema,
        Error::Property(_) => PgStatus::Property,
        Error::Io(_) => PgStatus::Io,
    }
}

struct Fail(PgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PgStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside pgrad".into());
            PgStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(PgStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PgStatus::InvalidUtf8, "string argument is not UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(Fail(PgStatus::BufferTooSmall, format!("buffer holds {len}, need {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn write_out<T>(p: *mut T, v: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null());
    }
    p.write(v);
    Ok(())
}

fn env_name(s: &str) -> Result<EnvName, Fail> {
    Ok(s.parse::<EnvName>()?)
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fresh policy for the named environment (`"cartpole"` or `"pendulum"`)
/// with swish hidden layers of the given widths.
///
/// # Safety
/// `env` must be a NUL-terminated string, `hidden` valid for `n_hidden`
/// values and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_new(
    env: *const c_char,
    hidden: *const usize,
    n_hidden: usize,
    seed: u64,
    out: *mut *mut PgPolicy,
) -> PgStatus {
    guard(|| {
        let name = env_name(str_arg(env)?)?;
        let hidden = slice_arg(hidden, n_hidden)?;
        let e = make_env(name, 0, 0, None)?;
        let policy = Policy::new(e.spec().obs_dim, hidden, Activation::Swish, e.spec().action_space.clone(), seed)?;
        write_out(out, Box::into_raw(Box::new(PgPolicy { policy, normalizer: None })))
    })
}

/// Loads the policy and normalizer stored in a training checkpoint.
///
/// # Safety
/// `path` and `env` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_load(path: *const c_char, env: *const c_char, out: *mut *mut PgPolicy) -> PgStatus {
    guard(|| {
        let name = env_name(str_arg(env)?)?;
        let (policy, normalizer) = harness::load_policy(Path::new(str_arg(path)?), name)?;
        write_out(out, Box::into_raw(Box::new(PgPolicy { policy, normalizer })))
    })
}

/// # Safety
/// `p` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_free(p: *mut PgPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_num_params(p: *const PgPolicy) -> usize {
    p.as_ref().map_or(0, |h| h.policy.num_params())
}

/// # Safety
/// `p` must be a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_obs_dim(p: *const PgPolicy) -> usize {
    p.as_ref().map_or(0, |h| h.policy.obs_dim())
}

/// Length of the environment action vector (1 for discrete actions).
///
/// # Safety
/// `p` must be a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_action_dim(p: *const PgPolicy) -> usize {
    p.as_ref().map_or(0, |h| h.policy.action_dim())
}

/// Copies the flat parameter vector into `buf`.
///
/// # Safety
/// `p` must be a live handle and `buf` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_get_params(p: *const PgPolicy, buf: *mut f64, len: usize) -> PgStatus {
    guard(|| {
        let h = p.as_ref().ok_or_else(null)?;
        let flat = h.policy.flat();
        out_slice(buf, len, flat.len())?.copy_from_slice(&flat);
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle and `params` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_set_params(p: *mut PgPolicy, params: *const f64, len: usize) -> PgStatus {
    guard(|| {
        let h = p.as_mut().ok_or_else(null)?;
        h.policy.set_flat(slice_arg(params, len)?)?;
        Ok(())
    })
}

/// Deterministic environment action for a raw observation. The stored
/// normalizer, if any, is applied first.
///
/// # Safety
/// `p` must be a live handle, `obs` valid for `obs_len` values and
/// `action` for `action_len` values.
#[no_mangle]
pub unsafe extern "C" fn pg_policy_mode_action(
    p: *const PgPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    action_len: usize,
) -> PgStatus {
    guard(|| {
        let h = p.as_ref().ok_or_else(null)?;
        let obs = slice_arg(obs, obs_len)?;
        if obs.len() != h.policy.obs_dim() {
            return Err(Fail(PgStatus::Contract, format!("expected {} observation values", h.policy.obs_dim())));
        }
        let x = h.normalizer.as_ref().map_or_else(|| obs.to_vec(), |n| n.apply(obs));
        let a = h.policy.mode_action(&x)?;
        out_slice(action, action_len, a.len())?.copy_from_slice(&a);
        Ok(())
    })
}

/// Mean and standard deviation of raw returns over `episodes` mode-action
/// episodes of a checkpoint.
///
/// # Safety
/// Strings must be NUL-terminated; `mean` and `std` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_evaluate_checkpoint(
    path: *const c_char,
    env: *const c_char,
    episodes: usize,
    seed: u64,
    mean: *mut f64,
    std: *mut f64,
) -> PgStatus {
    guard(|| {
        let name = env_name(str_arg(env)?)?;
        let r = harness::evaluate(Path::new(str_arg(path)?), name, episodes, seed)?;
        write_out(mean, r.mean)?;
        write_out(std, r.std)
    })
}

/// Trains one seed from configuration text (`key = value` lines) and
/// writes the best evaluation mean return.
///
/// # Safety
/// `config` must be NUL-terminated; `best_eval` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_train(config: *const c_char, seed: u64, best_eval: *mut f64) -> PgStatus {
    guard(|| {
        let cfg = ExperimentConfig::parse(str_arg(config)?)?;
        let out = harness::run_training(&cfg, seed)?;
        write_out(best_eval, out.best_eval().unwrap_or(f64::NAN))
    })
}

/// Built-in tabular MDP: `"two_state"`, `"chain5"` or `"gridworld4x4"`.
///
/// # Safety
/// `name` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_mdp_preset(name: *const c_char, out: *mut *mut PgMdp) -> PgStatus {
    guard(|| {
        let mdp = grid_mdp_named(str_arg(name)?)?;
        write_out(out, Box::into_raw(Box::new(PgMdp { mdp })))
    })
}

/// # Safety
/// `m` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn pg_mdp_free(m: *mut PgMdp) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live MDP handle.
#[no_mangle]
pub unsafe extern "C" fn pg_mdp_num_states(m: *const PgMdp) -> usize {
    m.as_ref().map_or(0, |h| h.mdp.n_states)
}

/// # Safety
/// `m` must be a live MDP handle.
#[no_mangle]
pub unsafe extern "C" fn pg_mdp_num_actions(m: *const PgMdp) -> usize {
    m.as_ref().map_or(0, |h| h.mdp.n_actions)
}

/// Optimal state values into `values` (one per state).
///
/// # Safety
/// `m` must be a live handle and `values` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pg_mdp_optimal_values(m: *const PgMdp, values: *mut f64, len: usize) -> PgStatus {
    guard(|| {
        let h = m.as_ref().ok_or_else(null)?;
        let (v, _) = value_iteration(&h.mdp)?;
        out_slice(values, len, v.len())?.copy_from_slice(&v);
        Ok(())
    })
}

/// Runs `iters` mirror-learning updates from the uniform policy and writes
/// `J(π_n)` for `n = 1..=iters` into `trace`. `delta <= 0` means no KL ball.
/// Fails with `Property` if an update improves less than its drift bound.
///
/// # Safety
/// `m` must be a live handle and `trace` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pg_mirror_converge(
    m: *const PgMdp,
    drift: PgDrift,
    epsilon: f64,
    delta: f64,
    iters: usize,
    resolution: usize,
    trace: *mut f64,
    len: usize,
) -> PgStatus {
    guard(|| {
        let h = m.as_ref().ok_or_else(null)?;
        let d = match drift {
            PgDrift::Trivial => Drift::Trivial,
            PgDrift::Ppo => Drift::Ppo { epsilon },
        };
        let n = if delta > 0.0 { Neighborhood::KlBall { delta } } else { Neighborhood::Trivial };
        let out = out_slice(trace, len, iters)?;
        let pi0 = TabularPolicy::uniform(h.mdp.n_states, h.mdp.n_actions);
        let t = mirror_converge(&h.mdp, &pi0, &d, &n, iters, resolution)?;
        for (o, s) in out.iter_mut().zip(&t.steps) {
            *o = s.j;
        }
        t.verify()?;
        Ok(())
    })
}
