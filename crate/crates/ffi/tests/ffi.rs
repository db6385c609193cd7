use std::ptr;

use sparsecov_ffi::*;

fn model(which: u32, p: usize) -> *mut SparsecovModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sparsecov_model_builtin(which, p, &mut m) }, SparsecovStatus::Ok);
    m
}

fn draw(m: *const SparsecovModel, n: usize, stream: u64) -> *mut SparsecovSample {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sparsecov_model_sample(m, n, 7, stream, &mut s) }, SparsecovStatus::Ok);
    s
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let len = unsafe { sparsecov_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(len.min(255)).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn functionals_match_library() {
    let m = model(2, 30);
    let (mut frob, mut q) = (0.0, 0.0);
    assert_eq!(unsafe { sparsecov_model_functionals(m, &mut frob, &mut q) }, SparsecovStatus::Ok);
    assert!((q - 2.0 * 29.0 * 0.09).abs() < 1e-12);
    assert!((frob - q - 30.0).abs() < 1e-12);

    let s = draw(m, 40, 0);
    let (mut n, mut p) = (0, 0);
    unsafe { sparsecov_sample_dims(s, &mut n, &mut p) };
    assert_eq!((n, p), (40, 30));

    let mut cov = vec![0.0; 900];
    assert_eq!(unsafe { sparsecov_empirical_cov(s, cov.as_mut_ptr(), cov.len()) }, SparsecovStatus::Ok);
    let manual: f64 = (0..30).flat_map(|i| (0..30).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| cov[i * 30 + j].powi(2)).sum();
    let mut q0 = 0.0;
    assert_eq!(unsafe { sparsecov_q_offdiag(s, 0.0, &mut q0) }, SparsecovStatus::Ok);
    assert!((q0 - manual).abs() < 1e-9 * manual);

    let mut q_big = 1.0;
    unsafe { sparsecov_q_offdiag(s, 1e9, &mut q_big) };
    assert_eq!(q_big, 0.0);

    let (mut d, mut b2, mut l1) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { sparsecov_d_diag(s, &mut d) }, SparsecovStatus::Ok);
    assert_eq!(unsafe { sparsecov_bs_b2(s, &mut b2) }, SparsecovStatus::Ok);
    assert_eq!(unsafe { sparsecov_lr(s, 1e9, 1.0, &mut l1) }, SparsecovStatus::Ok);
    let max_diag = (0..30).map(|i| cov[i * 31]).fold(0.0, f64::max);
    assert_eq!(l1, max_diag);
    assert!(d > 0.0 && b2 > 0.0);

    unsafe {
        sparsecov_sample_free(s);
        sparsecov_model_free(m);
    }
}

#[test]
fn thresholds_and_two_sample() {
    let m = model(4, 40);
    let (a, b) = (draw(m, 30, 1), draw(m, 30, 2));
    let mut cv = ptr::null_mut();
    assert_eq!(unsafe { sparsecov_threshold_cv(5, 20, 3, &mut cv) }, SparsecovStatus::Ok);
    let mut tau = -1.0;
    assert_eq!(unsafe { sparsecov_resolve_threshold(a, cv, &mut tau) }, SparsecovStatus::Ok);
    assert!(tau >= 0.0);

    for method in [SparsecovMethod::Bs, SparsecovMethod::NewBs, SparsecovMethod::Cq, SparsecovMethod::NewCq, SparsecovMethod::Bonferroni, SparsecovMethod::Bh] {
        let mut res = SparsecovTestResult::default();
        assert_eq!(unsafe { sparsecov_two_sample(a, b, method, cv, 0.05, true, &mut res) }, SparsecovStatus::Ok);
        assert!((0.0..=1.0).contains(&res.p_value));
        let thresholded = matches!(method, SparsecovMethod::NewBs | SparsecovMethod::NewCq);
        assert_eq!(res.tau.is_nan(), !thresholded);
    }

    let mut res = SparsecovTestResult::default();
    assert_eq!(unsafe { sparsecov_two_sample(a, b, SparsecovMethod::NewBs, ptr::null(), 0.05, true, &mut res) }, SparsecovStatus::NullPointer);
    assert!(last_error().contains("threshold"));

    let mut pr = ptr::null_mut();
    assert_eq!(unsafe { sparsecov_threshold_practical(1.5, &mut pr) }, SparsecovStatus::Ok);
    unsafe { sparsecov_resolve_threshold(a, pr, &mut tau) };
    assert!((tau - 1.5 * (40f64.ln() / 30.0).sqrt()).abs() < 1e-12);

    unsafe {
        sparsecov_threshold_free(cv);
        sparsecov_threshold_free(pr);
        sparsecov_sample_free(a);
        sparsecov_sample_free(b);
        sparsecov_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    let data = [1.0, f64::NAN, 3.0, 4.0];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sparsecov_sample_new(data.as_ptr(), 2, 2, false, &mut s) }, SparsecovStatus::InvalidInput);
    assert!(s.is_null());
    assert!(!last_error().is_empty());

    let bad = [1.0, 2.0, 2.0, 1.0];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sparsecov_model_custom(bad.as_ptr(), 2, &mut m) }, SparsecovStatus::NotPositiveSemiDefinite);

    assert_eq!(unsafe { sparsecov_sample_new(ptr::null(), 2, 2, false, &mut s) }, SparsecovStatus::NullPointer);
    assert_eq!(unsafe { sparsecov_threshold_explicit(-1.0, &mut ptr::null_mut()) }, SparsecovStatus::InvalidInput);
    let mut out = 0.0;
    assert_eq!(unsafe { sparsecov_d_diag(ptr::null(), &mut out) }, SparsecovStatus::NullPointer);

    let needed = unsafe { sparsecov_last_error_message(ptr::null_mut(), 0) };
    let mut tiny = [1 as std::ffi::c_char; 4];
    unsafe { sparsecov_last_error_message(tiny.as_mut_ptr(), 4) };
    assert!(needed > 3);
    assert_eq!(tiny[3], 0);
}

#[test]
fn rates_round_trip() {
    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { sparsecov_rates(100, 500, 0.0, 1.0, 1.0, &mut a, &mut b) }, SparsecovStatus::Ok);
    assert!(a > 0.0 && b > 0.0);
    assert_eq!(unsafe { sparsecov_rates(100, 500, 3.0, 1.0, 1.0, &mut a, &mut b) }, SparsecovStatus::InvalidInput);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sparsecov.h")).unwrap();
    for name in ["sparsecov_sample_new", "sparsecov_two_sample", "SparsecovStatus", "SparsecovTestResult", "sparsecov_last_error_message"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
