use std::ffi::{CStr, CString};
use std::ptr;

use acte_ffi::*;

fn last_error() -> String {
    let p = acte_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulated(scenario: u8) -> *mut ActeDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { acte_dataset_simulate(scenario, 200, 5, &mut ds) }, ActeStatus::Ok);
    ds
}

#[test]
fn fit_and_curve_round_trip() {
    let ds = simulated(1);
    let mut rows = 0;
    assert_eq!(unsafe { acte_dataset_rows(ds, &mut rows) }, ActeStatus::Ok);
    assert_eq!(rows, 200 * 23);

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { acte_model_fit(ds, ActeLearner::T, ActeBase::Ols, 0, 0, &mut model) }, ActeStatus::Ok);
    let mut tau = [0.0; 17];
    assert_eq!(unsafe { acte_model_curve(model, ds, ActeCurve::Effect, 20, 36, tau.as_mut_ptr(), tau.len()) }, ActeStatus::Ok);
    assert!(tau.iter().all(|v| (v - 2.0).abs() < 0.5), "{tau:?}");

    let (mut m0, mut m1) = ([0.0; 17], [0.0; 17]);
    unsafe {
        acte_model_curve(model, ds, ActeCurve::ControlMean, 20, 36, m0.as_mut_ptr(), 17);
        acte_model_curve(model, ds, ActeCurve::TreatedMean, 20, 36, m1.as_mut_ptr(), 17);
    }
    for i in 0..17 {
        assert_eq!(tau[i], m1[i] - m0[i]);
    }

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { acte_model_to_json(model, &mut json) }, ActeStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { acte_model_from_json(json, &mut back) }, ActeStatus::Ok);
    let mut again = [0.0; 17];
    unsafe { acte_model_curve(back, ds, ActeCurve::Effect, 20, 36, again.as_mut_ptr(), 17) };
    assert_eq!(tau, again);

    unsafe {
        acte_string_free(json);
        acte_model_free(back);
        acte_model_free(model);
        acte_dataset_free(ds);
    }
}

#[test]
fn bootstrap_fills_bands() {
    let ds = simulated(2);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { acte_model_fit(ds, ActeLearner::S, ActeBase::Ols, 0, 0, &mut model) }, ActeStatus::Ok);
    let (mut v, mut lo, mut hi) = ([0.0; 5], [0.0; 5], [0.0; 5]);
    let st = unsafe { acte_model_bootstrap(model, ds, 20, 24, 20, 0.1, 3, v.as_mut_ptr(), lo.as_mut_ptr(), hi.as_mut_ptr(), 5) };
    assert_eq!(st, ActeStatus::Ok);
    assert!((0..5).all(|i| lo[i] <= hi[i]));
    unsafe {
        acte_model_free(model);
        acte_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported_by_status_and_message() {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { acte_dataset_simulate(4, 10, 0, &mut ds) }, ActeStatus::Config);
    assert!(last_error().contains("scenario 4"));
    assert!(ds.is_null());

    assert_eq!(unsafe { acte_dataset_simulate(1, 10, 0, ptr::null_mut()) }, ActeStatus::NullArgument);
    let mut rows = 0;
    assert_eq!(unsafe { acte_dataset_rows(ptr::null(), &mut rows) }, ActeStatus::NullArgument);

    let ds = simulated(1);
    let mut model = ptr::null_mut();
    unsafe { acte_model_fit(ds, ActeLearner::X, ActeBase::Rf, 10, 1, &mut model) };
    let mut small = [0.0; 3];
    let st = unsafe { acte_model_curve(model, ds, ActeCurve::Effect, 20, 30, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, ActeStatus::BufferTooSmall);
    assert!(last_error().contains("11 needed"));
    let st = unsafe { acte_model_curve(model, ds, ActeCurve::ControlMean, 20, 20, small.as_mut_ptr(), 3) };
    assert_eq!(st, ActeStatus::Config);
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { acte_model_fit(ds, ActeLearner::T, ActeBase::Rf, 0, 1, &mut bad) }, ActeStatus::Config);

    let missing = CString::new("/nonexistent/games.csv").unwrap();
    let outcome = CString::new("pts").unwrap();
    let mut read = ptr::null_mut();
    let st = unsafe { acte_dataset_read_csv(missing.as_ptr(), ptr::null(), outcome.as_ptr(), -1.0, 18, 39, &mut read) };
    assert_eq!(st, ActeStatus::Io);
    assert!(last_error().contains("games.csv"));

    let junk = CString::new("{}").unwrap();
    assert_eq!(unsafe { acte_model_from_json(junk.as_ptr(), &mut bad) }, ActeStatus::Serialization);
    unsafe {
        acte_model_free(model);
        acte_dataset_free(ds);
        acte_dataset_free(ptr::null_mut());
        acte_string_free(ptr::null_mut());
    }
}

#[test]
fn reads_box_scores() {
    let dir = std::env::temp_dir().join(format!("acte-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("g.csv");
    let mut text = String::from("player_id,game_date,age,minutes,team,pts,possessions\n");
    for p in 0..6 {
        for d in 0..20 {
            let day = 1 + d + d / 3;
            text.push_str(&format!("p{p},2020-01-{:02},{},30,{},{},100\n", day, 24 + p % 3, ["A", "B"][p % 2], d % 7));
        }
    }
    std::fs::write(&path, text).unwrap();
    let (c_path, cov, outcome) = (
        CString::new(path.to_str().unwrap()).unwrap(),
        CString::new("team:categorical").unwrap(),
        CString::new("pts").unwrap(),
    );
    let mut ds = ptr::null_mut();
    let st = unsafe { acte_dataset_read_csv(c_path.as_ptr(), cov.as_ptr(), outcome.as_ptr(), -1.0, 18, 39, &mut ds) };
    assert_eq!(st, ActeStatus::Ok, "{}", last_error());
    let mut rows = 0;
    unsafe { acte_dataset_rows(ds, &mut rows) };
    assert!(rows > 0 && rows < 120);
    unsafe { acte_dataset_free(ds) };
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/acte.h")).unwrap();
    for item in [
        "ACTE_H",
        "typedef struct ActeDataset ActeDataset;",
        "typedef struct ActeModel ActeModel;",
        "ACTE_STATUS_BUFFER_TOO_SMALL",
        "acte_model_fit(",
        "acte_model_bootstrap(",
        "acte_last_error(",
        "acte_string_free(",
    ] {
        assert!(header.contains(item), "{item}");
    }
    let v = unsafe { CStr::from_ptr(acte_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
