use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use clausetriage::classifier::ClassifyTrainConfig;
use clausetriage::data::SyntheticConfig;
use clausetriage::pipeline::{
    gen_synthetic, train_classify_stage, train_rank_stage, tune_stage, TuneConfig, HEADS_FILE,
    RANK_CHECKPOINT_FILE, THRESHOLDS_FILE,
};
use clausetriage::rank::RankTrainConfig;
use clausetriage::{classifier, metrics, triage};
use clausetriage_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> Option<String> {
    let p = ct_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn run_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = SyntheticConfig {
        n_queries: 40,
        dim: 16,
        positive_rate: 0.05,
        ..SyntheticConfig::default()
    };
    gen_synthetic(&synth, 3, &data).unwrap();
    train_rank_stage(&RankTrainConfig::with_seed(3), &data, dir.path()).unwrap();
    train_classify_stage(
        &ClassifyTrainConfig::with_seed(3),
        &dir.path().join(RANK_CHECKPOINT_FILE),
        &data,
        dir.path(),
    )
    .unwrap();
    tune_stage(&TuneConfig::default(), &dir.path().join(HEADS_FILE), None, &data, dir.path()).unwrap();
    dir
}

fn path_c(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(ct_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn decide_and_boundaries() {
    let mut t: *mut CtThresholds = ptr::null_mut();
    unsafe {
        assert_eq!(ct_thresholds_new(0.2, 0.8, CtDomain::Probability, &mut t), CtStatus::Ok);
        let mut d = CtDecision::Review;
        for (x, want) in [
            (0.0, CtDecision::AutoNoncompliant),
            (0.19, CtDecision::AutoNoncompliant),
            (0.2, CtDecision::Review),
            (0.8, CtDecision::Review),
            (0.81, CtDecision::AutoCompliant),
        ] {
            assert_eq!(ct_decide(x, t, &mut d), CtStatus::Ok);
            assert_eq!(d, want, "x = {x}");
        }
        assert_eq!(ct_decide(1.5, t, &mut d), CtStatus::Domain);
        assert!(last_error().unwrap().contains("1.5"));
        assert_eq!(ct_decide(f64::NAN, t, &mut d), CtStatus::Domain);

        let (mut lo, mut hi, mut dom) = (0.0, 0.0, CtDomain::Similarity);
        assert_eq!(ct_thresholds_get(t, &mut lo, &mut hi, &mut dom), CtStatus::Ok);
        assert_eq!((lo, hi, dom), (0.2, 0.8, CtDomain::Probability));
        ct_thresholds_free(t);
    }
}

#[test]
fn invalid_thresholds_rejected() {
    let mut t: *mut CtThresholds = ptr::null_mut();
    let s = unsafe { ct_thresholds_new(0.9, 0.1, CtDomain::Probability, &mut t) };
    assert_eq!(s, CtStatus::InvalidArgument);
    assert!(t.is_null());
    assert!(last_error().is_some());
    let s = unsafe { ct_thresholds_new(-0.5, 0.5, CtDomain::Similarity, &mut t) };
    assert_eq!(s, CtStatus::Ok);
    unsafe { ct_thresholds_free(t) };
}

#[test]
fn null_pointers_reported() {
    let mut d = CtDecision::Review;
    unsafe {
        assert_eq!(ct_decide(0.5, ptr::null(), &mut d), CtStatus::NullPointer);
        assert_eq!(ct_store_open(ptr::null(), &mut ptr::null_mut()), CtStatus::NullPointer);
        let p = c("x");
        assert_eq!(ct_store_open(p.as_ptr(), ptr::null_mut()), CtStatus::NullPointer);
        let mut out = 0.0;
        assert_eq!(ct_auc(ptr::null(), ptr::null(), 3, &mut out), CtStatus::NullPointer);
        assert_eq!(ct_store_dim(ptr::null()), 0);
        ct_store_free(ptr::null_mut());
        ct_heads_free(ptr::null_mut());
        ct_projection_free(ptr::null_mut());
        ct_thresholds_free(ptr::null_mut());
    }
    assert!(last_error().unwrap().contains("null"));
}

#[test]
fn success_clears_last_error() {
    let mut t: *mut CtThresholds = ptr::null_mut();
    unsafe {
        ct_decide(0.5, ptr::null(), &mut CtDecision::Review);
        assert!(last_error().is_some());
        assert_eq!(ct_thresholds_new(0.1, 0.2, CtDomain::Probability, &mut t), CtStatus::Ok);
        assert!(last_error().is_none());
        ct_thresholds_free(t);
    }
}

#[test]
fn missing_file_is_io() {
    let mut s: *mut CtStore = ptr::null_mut();
    let p = c("/nonexistent/embeddings.emb1");
    assert_eq!(unsafe { ct_store_open(p.as_ptr(), &mut s) }, CtStatus::Io);
    assert!(s.is_null());
}

#[test]
fn tune_matches_core() {
    let values: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64 / 199.0).collect();
    let labels: Vec<u8> = values.iter().enumerate().map(|(i, &v)| u8::from(v > 0.7 || i % 17 == 0)).collect();
    let mut r = CtTuneResult { low: 0.0, high: 0.0, coverage: 0.0, auto_error: 0.0, infeasible: 9 };
    let s = unsafe {
        ct_tune_thresholds(values.as_ptr(), labels.as_ptr(), values.len(), 20, 0.02, CtDomain::Probability, &mut r)
    };
    assert_eq!(s, CtStatus::Ok);
    let want = triage::tune_thresholds(&values, &labels, 20, 0.02, triage::Domain::Probability).unwrap();
    assert_eq!(r.low, want.thresholds.low());
    assert_eq!(r.high, want.thresholds.high());
    assert_eq!(r.coverage, want.coverage);
    assert_eq!(r.auto_error, want.auto_error);
    assert_eq!(r.infeasible != 0, want.infeasible);
}

#[test]
fn tune_errors() {
    let mut r = CtTuneResult { low: 0.0, high: 0.0, coverage: 0.0, auto_error: 0.0, infeasible: 0 };
    unsafe {
        assert_eq!(
            ct_tune_thresholds(ptr::null(), ptr::null(), 0, 20, 0.02, CtDomain::Probability, &mut r),
            CtStatus::EmptySet
        );
        let v = [0.1, 0.2];
        assert_eq!(
            ct_tune_thresholds(v.as_ptr(), [0u8, 0].as_ptr(), 2, 20, 0.02, CtDomain::Probability, &mut r),
            CtStatus::SingleClass
        );
        assert_eq!(
            ct_tune_thresholds(v.as_ptr(), [0u8, 2].as_ptr(), 2, 20, 0.02, CtDomain::Probability, &mut r),
            CtStatus::InvalidArgument
        );
        assert_eq!(
            ct_tune_thresholds([2.0, 0.1].as_ptr(), [0u8, 1].as_ptr(), 2, 20, 0.02, CtDomain::Probability, &mut r),
            CtStatus::Domain
        );
    }
}

#[test]
fn metrics_match_core() {
    let grades = [3u32, 0, 4, 1, 0, 2];
    let (mut v, mut ok) = (0.0, 0u8);
    assert_eq!(unsafe { ct_ndcg_at_k(grades.as_ptr(), grades.len(), 5, 2.0, &mut v, &mut ok) }, CtStatus::Ok);
    assert_eq!(ok, 1);
    assert_eq!(v, metrics::ndcg_at_k(&grades, 5, 2.0).unwrap());

    let zeros = [0u32; 4];
    assert_eq!(unsafe { ct_ndcg_at_k(zeros.as_ptr(), 4, 5, 2.0, &mut v, &mut ok) }, CtStatus::Ok);
    assert_eq!((v, ok), (0.0, 0));
    assert_eq!(unsafe { ct_ndcg_at_k(zeros.as_ptr(), 4, 5, 1.0, &mut v, &mut ok) }, CtStatus::InvalidArgument);

    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut a = 0.0;
    assert_eq!(unsafe { ct_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut a) }, CtStatus::Ok);
    assert_eq!(a, 0.75);
    assert_eq!(unsafe { ct_auc(scores.as_ptr(), [1u8; 4].as_ptr(), 4, &mut a) }, CtStatus::SingleClass);
}

#[test]
fn artifacts_round_trip() {
    let dir = run_dir();
    let root = dir.path();
    let data = root.join("data");
    unsafe {
        let mut store: *mut CtStore = ptr::null_mut();
        assert_eq!(ct_store_open(path_c(&data.join("embeddings.emb1")).as_ptr(), &mut store), CtStatus::Ok);
        assert_eq!(ct_store_dim(store), 16);
        assert_eq!(ct_store_len(store), 40 + 40 * 20);

        let mut proj: *mut CtProjection = ptr::null_mut();
        assert_eq!(ct_projection_open(path_c(&root.join(RANK_CHECKPOINT_FILE)).as_ptr(), &mut proj), CtStatus::Ok);
        let mut heads: *mut CtHeads = ptr::null_mut();
        assert_eq!(ct_heads_open(path_c(&root.join(HEADS_FILE)).as_ptr(), ptr::null(), &mut heads), CtStatus::Ok);

        let (q, cl) = (c("q00000"), c("c00000-003"));
        let mut s = 0.0;
        assert_eq!(ct_projection_score(proj, store, q.as_ptr(), cl.as_ptr(), &mut s), CtStatus::Ok);
        assert!((-1.0..=1.0).contains(&s));
        let mut ps = CtPairScore { score: 0.0, p_theta: 0.0, p_phi: 0.0 };
        assert_eq!(ct_heads_score(heads, store, q.as_ptr(), cl.as_ptr(), &mut ps), CtStatus::Ok);
        assert_eq!(ps.score, s);
        let loaded = clausetriage::pipeline::load_heads(&root.join(HEADS_FILE), None).unwrap();
        let cal = &loaded.heads.calibration;
        assert_eq!(ps.p_theta, classifier::calibrate_probability(s, cal));
        assert!((0.0..=1.0).contains(&ps.p_phi));

        let bad = c("nope");
        assert_eq!(ct_heads_score(heads, store, bad.as_ptr(), cl.as_ptr(), &mut ps), CtStatus::Data);
        assert!(last_error().unwrap().contains("nope"));

        let mut t: *mut CtThresholds = ptr::null_mut();
        assert_eq!(ct_thresholds_open(path_c(&root.join(THRESHOLDS_FILE)).as_ptr(), &mut t), CtStatus::Ok);
        let mut d = CtDecision::Review;
        assert_eq!(ct_decide(ps.p_theta, t, &mut d), CtStatus::Ok);

        ct_thresholds_free(t);
        ct_heads_free(heads);
        ct_projection_free(proj);
        ct_store_free(store);
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/clausetriage.h")).unwrap();
    for name in [
        "ct_last_error",
        "ct_version",
        "ct_store_open",
        "ct_heads_open",
        "ct_heads_score",
        "ct_thresholds_new",
        "ct_decide",
        "ct_tune_thresholds",
        "ct_ndcg_at_k",
        "ct_auc",
        "typedef struct CtStore CtStore;",
        "CT_DECISION_REVIEW = 1",
        "CT_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

fn find_staticlib() -> Option<PathBuf> {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libclausetriage_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = find_staticlib() else {
        eprintln!("static library not built; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "clausetriage.h"

int main(void) {
    CtThresholds *t = NULL;
    if (ct_thresholds_new(0.2, 0.8, CT_DOMAIN_PROBABILITY, &t) != CT_STATUS_OK) return 1;
    CtDecision d;
    if (ct_decide(0.2, t, &d) != CT_STATUS_OK || d != CT_DECISION_REVIEW) return 2;
    if (ct_decide(0.9, t, &d) != CT_STATUS_OK || d != CT_DECISION_AUTO_COMPLIANT) return 3;
    if (ct_decide(2.0, t, &d) != CT_STATUS_DOMAIN || ct_last_error() == NULL) return 4;
    ct_thresholds_free(t);
    double s[4] = {0.1, 0.4, 0.35, 0.8};
    unsigned char y[4] = {0, 0, 1, 1};
    double a;
    if (ct_auc(s, y, 4, &a) != CT_STATUS_OK || a != 0.75) return 5;
    printf("ok %s\n", ct_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

