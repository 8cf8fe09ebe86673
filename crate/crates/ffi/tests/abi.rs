use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use rcmwalk_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rcm_last_error()) }.to_string_lossy().into_owned()
}

fn model(d1: usize, d2: usize, law: RcmLaw, param: f64) -> *mut RcmModel {
    let mut s = ptr::null_mut();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(rcm_scenery_new(1, 0.5, d2, law, param, &mut s), RcmStatus::Ok);
        assert_eq!(rcm_model_new(d1, d2, s, &mut m), RcmStatus::Ok);
        rcm_scenery_free(s);
    }
    m
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(rcm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn kernel_and_scenery_values() {
    let mut p = 0.0;
    let x = [0i64];
    assert_eq!(unsafe { rcm_kernel(1, 1.0, x.as_ptr(), 1.0, &mut p) }, RcmStatus::Ok);
    // e^{-2} I_0(2)
    assert!((p - 0.3085083225).abs() < 1e-9);

    let mut s = ptr::null_mut();
    let mut z = 0.0;
    unsafe {
        assert_eq!(rcm_scenery_new(4, 2.0, 2, RcmLaw::ParetoUnit, 0.0, &mut s), RcmStatus::Ok);
        assert_eq!(rcm_scenery_z(s, [3i64, -2].as_ptr(), 2, &mut z), RcmStatus::Ok);
        rcm_scenery_free(s);
    }
    assert!(z >= 1.0);
}

#[test]
fn errors_set_status_and_message() {
    let mut s = ptr::null_mut();
    let st = unsafe { rcm_scenery_new(1, -1.0, 1, RcmLaw::ParetoUnit, 0.0, &mut s) };
    assert_eq!(st, RcmStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(last_error().contains("alpha"));

    let mut g = 0.0;
    assert_eq!(unsafe { rcm_green_exponent(1, 1, 2.0, &mut g) }, RcmStatus::Regime);
    assert_eq!(unsafe { rcm_kernel(1, 1.0, ptr::null(), 1.0, &mut g) }, RcmStatus::NullPointer);
    assert_eq!(unsafe { rcm_ondiag_exponent(1, 1, 0.5, ptr::null_mut()) }, RcmStatus::NullPointer);

    let m = model(1, 1, RcmLaw::ParetoUnit, 0.0);
    let mut v = 0.0;
    assert_eq!(unsafe { rcm_exact_prob(m, 4, 1.0, [0i64].as_ptr(), 1, &mut v) }, RcmStatus::Dimension);
    unsafe { rcm_model_free(m) };
    unsafe { rcm_model_free(ptr::null_mut()) };
}

#[test]
fn estimate_agrees_with_oracle() {
    let m = model(1, 1, RcmLaw::CappedPareto, 10.0);
    let x = [1i64, 0];
    let (mut exact, mut mean, mut se) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(rcm_exact_prob(m, 20, 2.0, x.as_ptr(), 2, &mut exact), RcmStatus::Ok);
        let st = rcm_kernel_estimate(m, 2.0, x.as_ptr(), 2, 20_000, RcmKernelMode::RaoBlackwell, 3, &mut mean, &mut se);
        assert_eq!(st, RcmStatus::Ok);
        rcm_model_free(m);
    }
    assert!((mean - exact).abs() <= 5.0 * se, "{mean} +- {se} vs {exact}");
}

#[test]
fn exact_green_is_positive_and_exponents_match() {
    let m = model(1, 2, RcmLaw::CappedPareto, 10.0);
    let mut g = 0.0;
    unsafe {
        assert_eq!(rcm_exact_green(m, 4, [2i64, 0, 0].as_ptr(), 3, &mut g), RcmStatus::Ok);
        rcm_model_free(m);
    }
    assert!(g > 0.0);
    let mut e = 0.0;
    assert_eq!(unsafe { rcm_ondiag_exponent(1, 1, 0.5, &mut e) }, RcmStatus::Ok);
    assert_eq!(e, 1.25);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rcmwalk.h")).unwrap();
    for f in [
        "rcm_version", "rcm_last_error", "rcm_scenery_new", "rcm_scenery_free", "rcm_scenery_z", "rcm_kernel",
        "rcm_model_new", "rcm_model_free", "rcm_kernel_estimate", "rcm_exact_prob", "rcm_exact_green",
        "rcm_ondiag_exponent", "rcm_green_exponent",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct RcmModel RcmModel;"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/rcmwalk.h");
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
