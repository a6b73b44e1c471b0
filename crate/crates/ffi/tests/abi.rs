use std::ffi::{c_char, CStr, CString};
use std::ptr;

use coala_ffi::*;

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe { coala_last_error(ptr::null_mut(), 0, &mut needed) };
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(
        unsafe { coala_last_error(buf.as_mut_ptr(), buf.len(), ptr::null_mut()) },
        CoalaStatus::Ok
    );
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn new_env(kind: CoalaEnvKind, horizon: usize, seed: u64) -> *mut CoalaEnv {
    let mut env = ptr::null_mut();
    assert_eq!(
        unsafe { coala_env_new(kind, horizon, seed, &mut env) },
        CoalaStatus::Ok
    );
    env
}

#[test]
fn ipd_episode_through_the_abi() {
    let env = new_env(CoalaEnvKind::Ipd, 3, 0);
    let (mut obs_dim, mut n_actions) = (0, 0);
    assert_eq!(
        unsafe { coala_env_dims(env, &mut obs_dim, &mut n_actions) },
        CoalaStatus::Ok
    );
    assert_eq!((obs_dim, n_actions), (5, 2));

    let mut obs = vec![0f32; obs_dim];
    let mut rewards = [0f64; 2];
    let mut done = false;
    assert_eq!(
        unsafe { coala_env_step(env, 0, 1, rewards.as_mut_ptr(), &mut done) },
        CoalaStatus::Ok
    );
    assert_eq!(rewards, [-1.0, 2.0]);
    assert!(!done);
    assert_eq!(
        unsafe { coala_env_observation(env, 1, obs.as_mut_ptr(), obs.len()) },
        CoalaStatus::Ok
    );
    assert_eq!(obs, [0.0, 0.0, 0.0, 1.0, 0.0]);
    for _ in 0..2 {
        assert_eq!(
            unsafe { coala_env_step(env, 1, 1, rewards.as_mut_ptr(), &mut done) },
            CoalaStatus::Ok
        );
    }
    assert!(done);
    assert_eq!(unsafe { coala_env_reset(env) }, CoalaStatus::Ok);
    assert_eq!(
        unsafe { coala_env_observation(env, 0, obs.as_mut_ptr(), obs.len()) },
        CoalaStatus::Ok
    );
    assert_eq!(obs[0], 1.0);
    unsafe { coala_env_free(env) };
}

#[test]
fn cleanup_is_reproducible_per_seed() {
    let trace = |seed| {
        let env = new_env(CoalaEnvKind::Cleanup, 20, seed);
        let (mut d, mut n) = (0, 0);
        unsafe { coala_env_dims(env, &mut d, &mut n) };
        let mut out = Vec::new();
        let mut obs = vec![0f32; d];
        let (mut r, mut done) = ([0f64; 2], false);
        for t in 0..20 {
            unsafe {
                coala_env_step(env, t % n, (t * 5 + 1) % n, r.as_mut_ptr(), &mut done);
                coala_env_observation(env, 0, obs.as_mut_ptr(), d);
            }
            out.extend(obs.iter().map(|x| x.to_bits() as u64));
            out.extend(r.map(f64::to_bits));
        }
        assert!(done);
        unsafe { coala_env_free(env) };
        out
    };
    assert_eq!(trace(4), trace(4));
}

#[test]
fn errors_are_codes_with_messages() {
    let env = new_env(CoalaEnvKind::Ipd, 3, 0);
    let (mut r, mut done) = ([0f64; 2], false);
    assert_eq!(
        unsafe { coala_env_step(env, 2, 0, r.as_mut_ptr(), &mut done) },
        CoalaStatus::InvalidArgument
    );
    assert!(last_error().contains("below 2"));
    let mut obs = [0f32; 2];
    assert_eq!(
        unsafe { coala_env_observation(env, 0, obs.as_mut_ptr(), 2) },
        CoalaStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { coala_env_reset(ptr::null_mut()) },
        CoalaStatus::NullPointer
    );
    assert_eq!(last_error(), "env is null");
    unsafe { coala_env_free(env) };
    unsafe { coala_env_free(ptr::null_mut()) };

    let bad = CString::new("[meta.loss]\nclip_epz = 0.1\n").unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { coala_trainer_new(bad.as_ptr(), 0, &mut t) },
        CoalaStatus::Config
    );
    assert!(last_error().contains("meta.loss.clip_epz"));
    assert!(t.is_null());
}

#[test]
fn trainer_steps_and_reports_metrics() {
    let cfg = CString::new(
        "iterations = 2\nmeta_batch = 2\nbatch = 2\nmeta_population = 2\nnaive_population = 2\nepisodes = 2\nhorizon = 4\n",
    )
    .unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { coala_trainer_new(cfg.as_ptr(), 1, &mut t) },
        CoalaStatus::Ok,
        "{}",
        last_error()
    );
    let mut finished = false;
    let mut iter = 0;
    while !finished {
        assert_eq!(
            unsafe { coala_trainer_step(t, &mut finished) },
            CoalaStatus::Ok,
            "{}",
            last_error()
        );
    }
    unsafe { coala_trainer_iteration(t, &mut iter) };
    assert_eq!(iter, 2);
    assert_eq!(
        unsafe { coala_trainer_step(t, ptr::null_mut()) },
        CoalaStatus::InvalidArgument
    );

    let mut needed = 0;
    assert_eq!(
        unsafe { coala_trainer_metrics(t, ptr::null_mut(), 0, &mut needed) },
        CoalaStatus::BufferTooSmall
    );
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(
        unsafe { coala_trainer_metrics(t, buf.as_mut_ptr(), needed, ptr::null_mut()) },
        CoalaStatus::Ok
    );
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    let rows: serde_json::Value = serde_json::from_str(json).unwrap();
    assert!(rows
        .as_array()
        .is_some_and(|r| !r.is_empty() && r.iter().all(|row| row["iter"] == 1)));
    unsafe { coala_trainer_free(t) };
}

#[test]
fn analytic_summary_as_json() {
    let exp = CString::new("finding1").unwrap();
    let cfg =
        CString::new("[group]\nsteps = 20\nseeds = 2\nlook_ahead = 4\nlog_every = 10\n").unwrap();
    let mut needed = 0;
    let s = unsafe {
        coala_analytic_run(
            exp.as_ptr(),
            cfg.as_ptr(),
            0,
            ptr::null_mut(),
            0,
            &mut needed,
        )
    };
    assert_eq!(s, CoalaStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; needed];
    let s = unsafe {
        coala_analytic_run(
            exp.as_ptr(),
            cfg.as_ptr(),
            0,
            buf.as_mut_ptr(),
            needed,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, CoalaStatus::Ok, "{}", last_error());
    let v: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap()).unwrap();
    assert!(v.is_object());

    let bogus = CString::new("finding9").unwrap();
    let s = unsafe {
        coala_analytic_run(
            bogus.as_ptr(),
            ptr::null(),
            0,
            buf.as_mut_ptr(),
            needed,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, CoalaStatus::Config);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/coala.h");
    for name in [
        "coala_last_error",
        "coala_env_new",
        "coala_env_free",
        "coala_env_reset",
        "coala_env_dims",
        "coala_env_observation",
        "coala_env_step",
        "coala_trainer_new",
        "coala_trainer_free",
        "coala_trainer_step",
        "coala_trainer_iteration",
        "coala_trainer_metrics",
        "coala_analytic_run",
        "typedef struct CoalaEnv CoalaEnv;",
        "COALA_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
