use std::ffi::{CStr, CString};
use std::ptr;

use protocomp_ffi::*;

fn last_error() -> String {
    let p = pc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

struct Handle(*mut PcDataset);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { pc_dataset_free(self.0) };
    }
}

fn gen_hist(per_class: usize, seed: u64) -> Handle {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pc_dataset_gen_histogram(3, per_class, 6, 10.0, seed, &mut out) }, PcStatus::Ok);
    Handle(out)
}

#[test]
fn generate_compress_evaluate() {
    let ds = gen_hist(20, 1);
    assert_eq!(unsafe { pc_dataset_len(ds.0) }, 60);
    assert_eq!(unsafe { pc_dataset_dim(ds.0) }, 6);
    assert!(pc_last_error().is_null());

    let (mut train, mut test) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { pc_dataset_split(ds.0, 0.5, 2, &mut train, &mut test) }, PcStatus::Ok);
    let (train, test) = (Handle(train), Handle(test));
    assert_eq!(unsafe { pc_dataset_len(train.0) + pc_dataset_len(test.0) }, 60);

    let opts = PcCompressOptions { method: PcMethod::Shc, ratio: 0.2, seed: 3, gamma_sq: 0.0, lambda: 0.0, max_iter: 5 };
    let mut protos = ptr::null_mut();
    assert_eq!(unsafe { pc_compress(train.0, &opts, &mut protos) }, PcStatus::Ok);
    let protos = Handle(protos);
    assert_eq!(unsafe { pc_dataset_len(protos.0) }, 6);
    let mut labels = vec![usize::MAX; 6];
    assert_eq!(unsafe { pc_dataset_labels(protos.0, labels.as_mut_ptr(), 6) }, PcStatus::Ok);
    // RMHC initialization may trade one class's slot for another's.
    assert!(labels.iter().all(|&y| y < 3));

    let mut report = PcEvalReport::default();
    assert_eq!(unsafe { pc_evaluate(protos.0, test.0, 1, PcMetric::Auto, 0.0, &mut report) }, PcStatus::Ok);
    assert_eq!(report.distance_evals, 6 * 30);
    assert!((0.0..=1.0).contains(&report.error_rate));

    let mut self_report = PcEvalReport::default();
    assert_eq!(unsafe { pc_evaluate(train.0, train.0, 1, PcMetric::Emd, 0.0, &mut self_report) }, PcStatus::Ok);
    assert_eq!(self_report.error_rate, 0.0);
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.json").to_str().unwrap()).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pc_dataset_gen_covariance(2, 5, 3, 6, 1.0, 4, &mut ds) }, PcStatus::Ok);
    let ds = Handle(ds);
    assert_eq!(unsafe { pc_dataset_save(ds.0, path.as_ptr()) }, PcStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { pc_dataset_load(path.as_ptr(), &mut back) }, PcStatus::Ok);
    let back = Handle(back);
    assert_eq!(unsafe { pc_dataset_len(back.0) }, 10);
    let mut r = PcEvalReport::default();
    assert_eq!(unsafe { pc_evaluate(back.0, ds.0, 1, PcMetric::Airm, 0.0, &mut r) }, PcStatus::Ok);
    assert_eq!(r.error_rate, 0.0);
}

#[test]
fn status_codes() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pc_dataset_gen_histogram(0, 5, 4, 1.0, 0, &mut out) }, PcStatus::Validation);
    assert!(out.is_null());
    assert!(last_error().contains("positive"));
    assert_eq!(unsafe { pc_dataset_gen_histogram(2, 5, 4, 1.0, 0, ptr::null_mut()) }, PcStatus::NullPointer);

    let missing = CString::new("/nonexistent/protocomp.json").unwrap();
    assert_eq!(unsafe { pc_dataset_load(missing.as_ptr(), &mut out) }, PcStatus::Io);
    assert_eq!(unsafe { pc_dataset_load(ptr::null(), &mut out) }, PcStatus::NullPointer);

    let ds = gen_hist(5, 0);
    let opts = PcCompressOptions { method: PcMethod::Scc, ratio: 0.5, seed: 0, gamma_sq: 0.0, lambda: 0.0, max_iter: 0 };
    assert_eq!(unsafe { pc_compress(ds.0, &opts, &mut out) }, PcStatus::Validation);
    assert!(last_error().contains("mismatch"));
    let mut r = PcEvalReport::default();
    assert_eq!(unsafe { pc_evaluate(ds.0, ds.0, 1, PcMetric::Jbld, 0.0, &mut r) }, PcStatus::Validation);

    let mut cov = ptr::null_mut();
    assert_eq!(unsafe { pc_dataset_gen_covariance(3, 10, 3, 10, 1.0, 0, &mut cov) }, PcStatus::Ok);
    let cov = Handle(cov);
    let opts = PcCompressOptions { method: PcMethod::Scc, ratio: 0.2, seed: 0, gamma_sq: 1e12, lambda: 0.0, max_iter: 0 };
    assert_eq!(unsafe { pc_compress(cov.0, &opts, &mut out) }, PcStatus::Numerical);

    let mut labels = [0usize; 3];
    assert_eq!(unsafe { pc_dataset_labels(ds.0, labels.as_mut_ptr(), 3) }, PcStatus::Validation);
    assert_eq!(unsafe { pc_dataset_len(ptr::null()) }, 0);
    unsafe { pc_dataset_free(ptr::null_mut()) };
}

#[test]
fn pairwise_functions() {
    // Scalars: jbld(1, 4) = ln 2.5 - ½ ln 4, airm(e², 1) = 2.
    let (one, four, e2) = ([1.0], [4.0], [1f64.exp().powi(2)]);
    let mut v = 0.0;
    assert_eq!(unsafe { pc_jbld(one.as_ptr(), four.as_ptr(), 1, &mut v) }, PcStatus::Ok);
    assert!((v - (2.5f64.ln() - 0.5 * 4f64.ln())).abs() < 1e-12);
    assert_eq!(unsafe { pc_airm(e2.as_ptr(), one.as_ptr(), 1, &mut v) }, PcStatus::Ok);
    assert!((v - 2.0).abs() < 1e-12);
    let not_spd = [1.0, 2.0, 2.0, 1.0];
    let eye = [1.0, 0.0, 0.0, 1.0];
    assert_eq!(unsafe { pc_jbld(not_spd.as_ptr(), eye.as_ptr(), 2, &mut v) }, PcStatus::Numerical);
    let asym = [1.0, 0.5, 0.0, 1.0];
    assert_eq!(unsafe { pc_airm(asym.as_ptr(), eye.as_ptr(), 2, &mut v) }, PcStatus::Validation);

    // Line metric: all mass moves from bin 0 to bin 2.
    let cost = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
    let (a, b) = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
    assert_eq!(unsafe { pc_emd(a.as_ptr(), b.as_ptr(), cost.as_ptr(), 3, &mut v) }, PcStatus::Ok);
    assert!((v - 2.0).abs() < 1e-12);
    let (a, b) = ([0.5, 0.3, 0.2], [0.2, 0.3, 0.5]);
    let mut emd = 0.0;
    assert_eq!(unsafe { pc_emd(a.as_ptr(), b.as_ptr(), cost.as_ptr(), 3, &mut emd) }, PcStatus::Ok);
    assert!((emd - 0.6).abs() < 1e-12);
    assert_eq!(unsafe { pc_sinkhorn(a.as_ptr(), b.as_ptr(), cost.as_ptr(), 3, 50.0, &mut v) }, PcStatus::Ok);
    assert!(v >= emd - 1e-9 && v - emd < 0.05, "{v}");
    let bad = [0.5, 0.6, 0.2];
    assert_eq!(unsafe { pc_emd(bad.as_ptr(), b.as_ptr(), cost.as_ptr(), 3, &mut v) }, PcStatus::Validation);
    assert_eq!(unsafe { pc_emd(ptr::null(), b.as_ptr(), cost.as_ptr(), 3, &mut v) }, PcStatus::NullPointer);
}

#[test]
fn errors_are_per_thread() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pc_dataset_gen_histogram(0, 1, 1, 1.0, 0, &mut out) }, PcStatus::Validation);
    std::thread::spawn(|| assert!(pc_last_error().is_null())).join().unwrap();
    assert!(!pc_last_error().is_null());
}

#[test]
fn c_program_links_against_header() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| {
        std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success())
    }) else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in target/<profile>/deps; the library is one level up.
    let exe = std::env::current_exe().unwrap();
    let libdir = exe.parent().unwrap().parent().unwrap();
    let staticlib = libdir.join("libprotocomp_ffi.a");
    if !staticlib.exists() {
        eprintln!("{} not built; skipping", staticlib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "protocomp.h"
int main(void) {
    PcDataset *ds = NULL;
    if (pc_dataset_gen_histogram(2, 10, 5, 10.0, 1, &ds) != PC_STATUS_OK) return 1;
    PcCompressOptions o = { PC_METHOD_CNN, 0.2, 0, 0.0, 0.0, 0 };
    PcDataset *p = NULL;
    if (pc_compress(ds, &o, &p) != PC_STATUS_OK) return 2;
    PcEvalReport r;
    if (pc_evaluate(p, ds, 1, PC_METRIC_AUTO, 0.0, &r) != PC_STATUS_OK) return 3;
    if (pc_dataset_gen_histogram(0, 1, 1, 1.0, 0, &ds) != PC_STATUS_VALIDATION) return 4;
    printf("%zu %.3f %s\n", pc_dataset_len(p), r.error_rate, pc_last_error());
    pc_dataset_free(p);
    pc_dataset_free(ds);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    // CNN keeps a consistent subset, so the training error is zero.
    assert!(text.contains(" 0.000 "), "{text}");
}
