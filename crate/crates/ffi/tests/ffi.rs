use std::ffi::{CStr, CString};
use std::ptr;

use burdenlab::document::{ModelDocument, ModelRole};
use burdenlab::dynamics::{CellParams, ConstraintConfig, Enforcement, ModelDims};
use burdenlab::rng;
use burdenlab::tasks::SequenceTask;
use burdenlab_ffi::*;

fn last_error() -> String {
    let p = bl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn default_cfg() -> BlConstraintConfig {
    let mut c = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { bl_constraint_default(c.as_mut_ptr()) }, BlStatus::Ok);
    unsafe { c.assume_init() }
}

fn save_model(dir: &std::path::Path, enforcement: Enforcement, yard: ConstraintConfig) -> CString {
    let dims = ModelDims::new(5, 3, 8);
    let params = CellParams::init_uniform(dims, 2.0, &mut rng::stream(4, "ffi"));
    let doc = ModelDocument::new(ModelRole::Cc, params, enforcement, yard, SequenceTask::copy(8, 4, 1), 4);
    let path = dir.join("model.json");
    doc.save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn constraint_helpers_match_core() {
    let cfg = default_cfg();
    assert_eq!(cfg.r0, 3.0);
    let mut out = 0.0;
    let h = [0.0, 0.0];
    let hn = [1.0, 1.0];
    assert_eq!(unsafe { bl_burden(h.as_ptr(), hn.as_ptr(), 2, &cfg, &mut out) }, BlStatus::Ok);
    assert!((out - 1.5).abs() < 1e-15);
    assert_eq!(unsafe { bl_feasible_radius(200.0, &cfg, &mut out) }, BlStatus::Ok);
    assert_eq!(out, 0.5);
    assert_eq!(unsafe { bl_path_load_update(0.3, 0.2, &cfg, &mut out) }, BlStatus::Ok);
    assert!((out - 0.5).abs() < 1e-15);
    assert_eq!(unsafe { bl_path_load_update(0.3, -0.2, &cfg, &mut out) }, BlStatus::InvalidArgument);
    assert!(last_error().contains("nonnegative"));

    let mut p = [0.0; 2];
    let v = [3.0, 4.0];
    assert_eq!(unsafe { bl_project(v.as_ptr(), 2, 2.5, p.as_mut_ptr()) }, BlStatus::Ok);
    assert!((p[0] - 1.5).abs() < 1e-15 && (p[1] - 2.0).abs() < 1e-15);
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    let cfg = default_cfg();
    let mut out = 0.0;
    assert_eq!(unsafe { bl_burden(ptr::null(), ptr::null(), 2, &cfg, &mut out) }, BlStatus::NullPointer);
    assert_eq!(unsafe { bl_feasible_radius(1.0, ptr::null(), &mut out) }, BlStatus::NullPointer);
    let bad = BlConstraintConfig { r_min: -1.0, ..cfg };
    assert_eq!(unsafe { bl_feasible_radius(1.0, &bad, &mut out) }, BlStatus::Config);
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { bl_model_load(missing.as_ptr(), &mut m) }, BlStatus::Io);
    assert!(m.is_null());
    assert_eq!(unsafe { bl_model_load(ptr::null(), &mut m) }, BlStatus::NullPointer);
    unsafe {
        bl_model_free(ptr::null_mut());
        bl_trajectory_free(ptr::null_mut());
    }
    assert_eq!(unsafe { bl_trajectory_len(ptr::null()) }, 0);
    assert!(!bl_version().is_null());
}

#[test]
fn model_rollout_under_hard_enforcement() {
    let dir = tempfile::tempdir().unwrap();
    let yard = ConstraintConfig {
        r0: 0.6,
        r_min: 0.2,
        kappa: 0.5,
        ..Default::default()
    };
    let path = save_model(dir.path(), Enforcement::Hard, yard);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bl_model_load(path.as_ptr(), &mut m) }, BlStatus::Ok);
    let (mut n, mut d, mut v) = (0, 0, 0);
    assert_eq!(unsafe { bl_model_dims(m, &mut n, &mut d, &mut v) }, BlStatus::Ok);
    assert_eq!((n, d, v), (5, 3, 8));

    let tokens = [0usize, 1, 2, 3, 7, 6, 6, 6, 6, 6];
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { bl_model_rollout(m, tokens.as_ptr(), tokens.len(), ptr::null(), &mut t) },
        BlStatus::Ok
    );
    let len = unsafe { bl_trajectory_len(t) };
    assert_eq!(len, tokens.len());
    let (mut bv, mut fv) = (0, 0);
    assert_eq!(unsafe { bl_trajectory_violations(t, &mut bv, &mut fv) }, BlStatus::Ok);
    assert_eq!(fv, 0);

    let mut radii = vec![0.0; len];
    assert_eq!(
        unsafe { bl_trajectory_series(t, BlSeries::Radii, radii.as_mut_ptr(), len) },
        BlStatus::Ok
    );
    let mut state = vec![0.0; n];
    for step in 1..=len {
        assert_eq!(unsafe { bl_trajectory_state(t, step, state.as_mut_ptr(), n) }, BlStatus::Ok);
        let norm = state.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= radii[step - 1]);
    }
    assert_eq!(
        unsafe { bl_trajectory_state(t, 0, state.as_mut_ptr(), 2) },
        BlStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { bl_trajectory_state(t, len + 1, state.as_mut_ptr(), n) },
        BlStatus::InvalidArgument
    );

    let bad = [9usize];
    let mut t2 = ptr::null_mut();
    assert_eq!(
        unsafe { bl_model_rollout(m, bad.as_ptr(), 1, ptr::null(), &mut t2) },
        BlStatus::InvalidArgument
    );
    assert!(last_error().contains("vocabulary"));
    unsafe {
        bl_trajectory_free(t);
        bl_model_free(m);
    }
}

#[test]
fn experiment_runs_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/configs/smoke.toml");
    let cfg = CString::new(cfg_path).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bl_experiment_run(cfg.as_ptr(), out.as_ptr()) }, BlStatus::Ok);
    for f in ["report.json", "summary.csv", "hypotheses.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let missing = CString::new("/nonexistent.toml").unwrap();
    assert_eq!(unsafe { bl_experiment_run(missing.as_ptr(), out.as_ptr()) }, BlStatus::Config);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/burdenlab.h")).unwrap();
    for name in [
        "bl_model_load",
        "bl_model_free",
        "bl_model_rollout",
        "bl_trajectory_series",
        "bl_burden",
        "bl_feasible_radius",
        "bl_experiment_run",
        "bl_last_error_message",
        "typedef struct BlModel BlModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
