use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hqm_ffi::*;

fn last_error() -> String {
    let p = hqm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn reference_config_rates() {
    let cfg = hqm_config_reference();
    let (mut kq, mut kh) = (0.0, 0.0);
    unsafe {
        assert_eq!(hqm_config_kappas(cfg, &mut kq, &mut kh), HqmStatus::Ok);
        let (mut ps, mut ph) = (0.0, 0.0);
        assert_eq!(
            hqm_efficiencies_at(cfg, 0.0, &mut ps, &mut ph),
            HqmStatus::Ok
        );
        assert!(ps > ph && ph > 0.0);
        hqm_config_free(cfg);
    }
    assert!((kq / (2.0 * std::f64::consts::PI * 1e6) - 31.7).abs() < 0.2);
    assert!((kh / (2.0 * std::f64::consts::PI * 1e6) - 59.8).abs() < 0.3);
}

#[test]
fn config_round_trip_and_errors() {
    let cfg = hqm_config_reference();
    unsafe {
        let text = hqm_config_to_toml(cfg);
        let mut parsed = ptr::null_mut();
        assert_eq!(hqm_config_from_toml(text, &mut parsed), HqmStatus::Ok);
        hqm_string_free(text);

        let bad = CString::new("[qubit_cavity]\nlength_um = 1").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(
            hqm_config_from_toml(bad.as_ptr(), &mut out),
            HqmStatus::Parse
        );
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        let over = CString::new("[detection]\neta_herald = 0.9").unwrap();
        assert_eq!(
            hqm_config_with_overrides(parsed, over.as_ptr(), &mut out),
            HqmStatus::Inconsistent
        );
        assert!(last_error().contains("eta_herald"));

        assert_eq!(
            hqm_config_from_toml(ptr::null(), &mut out),
            HqmStatus::NullPointer
        );
        assert_eq!(
            hqm_config_kappas(ptr::null(), ptr::null_mut(), ptr::null_mut()),
            HqmStatus::NullPointer
        );
        hqm_config_free(parsed);
        hqm_config_free(cfg);
        hqm_config_free(ptr::null_mut());
    }
}

#[test]
fn trials_are_seeded() {
    let cfg = hqm_config_reference();
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            hqm_run_trials(cfg, 3000, 5, HqmReadout::All as u32, &mut a),
            HqmStatus::Ok
        );
        assert_eq!(
            hqm_run_trials(cfg, 3000, 5, HqmReadout::All as u32, &mut b),
            HqmStatus::Ok
        );
        assert_eq!(hqm_dataset_len(a), 3000);
        let (ta, tb) = (hqm_dataset_to_tsv(a), hqm_dataset_to_tsv(b));
        assert_eq!(CStr::from_ptr(ta), CStr::from_ptr(tb));
        hqm_string_free(ta);
        hqm_string_free(tb);
        assert!(hqm_dataset_herald_count(a) > 0);
        let (mut f, mut s) = (0.0, 0.0);
        assert_eq!(
            hqm_dataset_average_fidelity(a, false, &mut f, &mut s),
            HqmStatus::Ok
        );
        assert!(f > 0.5 && f <= 1.0 && s > 0.0);
        let mut c = ptr::null_mut();
        assert_eq!(
            hqm_run_trials(cfg, 10, 5, 7, &mut c),
            HqmStatus::InvalidInput
        );
        assert_eq!(
            hqm_run_trials(cfg, 0, 5, 0, &mut c),
            HqmStatus::InvalidInput
        );
        hqm_dataset_free(a);
        hqm_dataset_free(b);
        hqm_config_free(cfg);
    }
}

#[test]
fn scenario_through_abi() {
    let cfg = hqm_config_reference();
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let name = CString::new("spectra").unwrap();
        let mut sc = ptr::null_mut();
        assert_eq!(
            hqm_scenario_run(cfg, name.as_ptr(), 2000, 1, &mut sc),
            HqmStatus::Ok
        );
        let summary = hqm_scenario_summary(sc);
        assert!(CStr::from_ptr(summary)
            .to_str()
            .unwrap()
            .starts_with("scenario: spectra"));
        hqm_string_free(summary);
        let mut failures = 99;
        assert_eq!(hqm_scenario_failures(sc, &mut failures), HqmStatus::Ok);
        assert_eq!(failures, 0);
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(hqm_scenario_write(sc, d.as_ptr(), true), HqmStatus::Ok);
        assert!(dir.path().join("summary.json").exists());
        hqm_scenario_free(sc);

        let unknown = CString::new("fig5").unwrap();
        assert_eq!(
            hqm_scenario_run(cfg, unknown.as_ptr(), 1, 1, &mut sc),
            HqmStatus::InvalidInput
        );
        assert!(sc.is_null());
        hqm_config_free(cfg);
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "hqm.h"
int main(void) {
    HqmConfig *cfg = hqm_config_reference();
    double kq = 0, kh = 0;
    if (hqm_config_kappas(cfg, &kq, &kh) != HQM_STATUS_OK) return 1;
    HqmDataset *ds = NULL;
    if (hqm_run_trials(cfg, 500, 3, HQM_READOUT_ALL, &ds) != HQM_STATUS_OK) return 2;
    HqmConfig *bad = NULL;
    if (hqm_config_from_toml("not toml [", &bad) != HQM_STATUS_PARSE || bad != NULL) return 3;
    if (hqm_last_error() == NULL) return 4;
    printf("%llu %.3f\n", (unsigned long long)hqm_dataset_len(ds), kq / 6.283185307179586e6);
    hqm_dataset_free(ds);
    hqm_config_free(cfg);
    return 0;
}
"#;

// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler available; skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let mut lib = profile_dir.join("libhqm_ffi.a");
    if !lib.exists() {
        // test builds link the rlib only; build the static library in its own target dir
        let target = profile_dir.parent().unwrap().join("abi-check");
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "hqm-ffi", "--lib", "--target-dir"])
            .arg(&target)
            .current_dir(&manifest)
            .status()
            .unwrap();
        assert!(status.success(), "building the static library failed");
        lib = target.join("debug").join("libhqm_ffi.a");
    }
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "500 31.688");
}
