//! C ABI over the clausetriage engine.
//!
//! Objects cross the boundary as opaque handles created by `ct_*_open` /
//! `ct_*_new` and released with the matching `ct_*_free`. Every fallible
//! call returns a [`CtStatus`]; on failure a message is kept per thread and
//! can be read with [`ct_last_error`]. Panics are caught and reported as
//! [`CtStatus::Panic`].

// `!(x > 0.0)` style checks are kept so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clausetriage::data::{parse_embeddings, DataError, EmbeddingStore};
use clausetriage::metrics;
use clausetriage::pipeline::{load_heads, load_rank_checkpoint, LoadedHeads, PairScore, Scorer};
use clausetriage::retrieval::ProjectionParams;
use clausetriage::triage::{self, Decision, Domain, TriageError, TriageThresholds};
use clausetriage::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Domain = 4,
    Io = 5,
    EmptySet = 6,
    SingleClass = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtDecision {
    AutoNoncompliant = 0,
    Review = 1,
    AutoCompliant = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtDomain {
    Probability = 0,
    Similarity = 1,
}

/// Result of [`ct_tune_thresholds`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtTuneResult {
    pub low: f64,
    pub high: f64,
    pub coverage: f64,
    pub auto_error: f64,
    /// Nonzero when no band met the error cap.
    pub infeasible: u8,
}

/// Similarity and both head probabilities of one pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtPairScore {
    pub score: f64,
    pub p_theta: f64,
    pub p_phi: f64,
}

/// An `EMB1` embedding store.
pub struct CtStore {
    inner: EmbeddingStore,
}

/// A `PRJ1` projection checkpoint.
pub struct CtProjection {
    inner: ProjectionParams,
}

/// Trained heads with the projection they were trained on.
pub struct CtHeads {
    inner: LoadedHeads,
}

pub struct CtThresholds {
    inner: TriageThresholds,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(CtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Triage(t) => return t.into(),
            Error::Io { .. } | Error::Data(DataError::Io { .. }) => CtStatus::Io,
            Error::Usage(_) => CtStatus::InvalidArgument,
            _ => CtStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<TriageError> for Failure {
    fn from(e: TriageError) -> Self {
        let status = match e {
            TriageError::DomainMismatch { .. } => CtStatus::Domain,
            TriageError::EmptySet => CtStatus::EmptySet,
            TriageError::SingleClass(_) => CtStatus::SingleClass,
            _ => CtStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(CtStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CtStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    str_arg(p, name).map(PathBuf::from)
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn domain(d: CtDomain) -> Domain {
    match d {
        CtDomain::Probability => Domain::Probability,
        CtDomain::Similarity => Domain::Similarity,
    }
}

fn ct_domain(d: Domain) -> CtDomain {
    match d {
        Domain::Probability => CtDomain::Probability,
        Domain::Similarity => CtDomain::Similarity,
    }
}

fn ct_decision(d: Decision) -> CtDecision {
    match d {
        Decision::AutoNoncompliant => CtDecision::AutoNoncompliant,
        Decision::Review => CtDecision::Review,
        Decision::AutoCompliant => CtDecision::AutoCompliant,
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `ct_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ct_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- store ----------------------------------------------------------------

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ct_store_open(path: *const c_char, out: *mut *mut CtStore) -> CtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path, "path")?;
        let store = parse_embeddings(&path).map_err(|e| Failure::from(Error::from(e)))?;
        *out = Box::into_raw(Box::new(CtStore { inner: store }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`ct_store_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ct_store_free(store: *mut CtStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Base embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ct_store_dim(store: *const CtStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.dim())
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ct_store_len(store: *const CtStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.len())
}

// ---- projection -----------------------------------------------------------

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ct_projection_open(path: *const c_char, out: *mut *mut CtProjection) -> CtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path, "path")?;
        let (params, _) = load_rank_checkpoint(&path)?;
        *out = Box::into_raw(Box::new(CtProjection { inner: params }));
        Ok(())
    })
}

/// # Safety
/// `proj` must come from [`ct_projection_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ct_projection_free(proj: *mut CtProjection) {
    if !proj.is_null() {
        drop(Box::from_raw(proj));
    }
}

/// Cosine similarity of a rule and a clause under the projection.
///
/// # Safety
/// Handles must be live; ids NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_projection_score(
    proj: *const CtProjection,
    store: *const CtStore,
    query_id: *const c_char,
    clause_id: *const c_char,
    out: *mut f64,
) -> CtStatus {
    guard(|| {
        let proj = ref_arg(proj, "proj")?;
        let store = ref_arg(store, "store")?;
        let q = str_arg(query_id, "query_id")?;
        let c = str_arg(clause_id, "clause_id")?;
        let out = out_arg(out, "out")?;
        *out = Scorer::new(&store.inner, &proj.inner).score(q, c)?;
        Ok(())
    })
}

// ---- heads ----------------------------------------------------------------

/// Opens a heads file. `rank_path` may be null, in which case the rank
/// checkpoint named in the heads file is loaded from its directory.
///
/// # Safety
/// `path` must be NUL-terminated, `rank_path` null or NUL-terminated,
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_heads_open(
    path: *const c_char,
    rank_path: *const c_char,
    out: *mut *mut CtHeads,
) -> CtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path, "path")?;
        let rank = if rank_path.is_null() {
            None
        } else {
            Some(path_arg(rank_path, "rank_path")?)
        };
        let loaded = load_heads(&path, rank.as_deref().map(Path::new))?;
        *out = Box::into_raw(Box::new(CtHeads { inner: loaded }));
        Ok(())
    })
}

/// # Safety
/// `heads` must come from [`ct_heads_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ct_heads_free(heads: *mut CtHeads) {
    if !heads.is_null() {
        drop(Box::from_raw(heads));
    }
}

/// Scores a pair and runs both heads.
///
/// # Safety
/// Handles must be live; ids NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_heads_score(
    heads: *const CtHeads,
    store: *const CtStore,
    query_id: *const c_char,
    clause_id: *const c_char,
    out: *mut CtPairScore,
) -> CtStatus {
    guard(|| {
        let heads = &ref_arg(heads, "heads")?.inner;
        let store = ref_arg(store, "store")?;
        let q = str_arg(query_id, "query_id")?;
        let c = str_arg(clause_id, "clause_id")?;
        let out = out_arg(out, "out")?;
        let s = Scorer::new(&store.inner, &heads.params).score(q, c)?;
        let p = PairScore::new(s, &heads.heads);
        *out = CtPairScore {
            score: p.score,
            p_theta: p.p_theta,
            p_phi: p.p_phi,
        };
        Ok(())
    })
}

// ---- thresholds and decisions ---------------------------------------------

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ct_thresholds_new(
    low: f64,
    high: f64,
    domain_: CtDomain,
    out: *mut *mut CtThresholds,
) -> CtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = TriageThresholds::new(low, high, domain(domain_))?;
        *out = Box::into_raw(Box::new(CtThresholds { inner: t }));
        Ok(())
    })
}

/// Reads the band from a `thresholds.json` written by threshold tuning.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_thresholds_open(path: *const c_char, out: *mut *mut CtThresholds) -> CtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path, "path")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::from(Error::io(&path, e)))?;
        let file: clausetriage::pipeline::ThresholdsFile =
            serde_json::from_str(&text).map_err(|e| Failure::from(Error::json(&path, e)))?;
        *out = Box::into_raw(Box::new(CtThresholds {
            inner: file.tuned.thresholds,
        }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from a `ct_thresholds_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn ct_thresholds_free(t: *mut CtThresholds) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be live; output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ct_thresholds_get(
    t: *const CtThresholds,
    low: *mut f64,
    high: *mut f64,
    domain_: *mut CtDomain,
) -> CtStatus {
    guard(|| {
        let t = &ref_arg(t, "thresholds")?.inner;
        *out_arg(low, "low")? = t.low();
        *out_arg(high, "high")? = t.high();
        *out_arg(domain_, "domain")? = ct_domain(t.domain());
        Ok(())
    })
}

/// `x < low` → auto-noncompliant, `low ≤ x ≤ high` → review,
/// `x > high` → auto-compliant.
///
/// # Safety
/// `t` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_decide(x: f64, t: *const CtThresholds, out: *mut CtDecision) -> CtStatus {
    guard(|| {
        let t = &ref_arg(t, "thresholds")?.inner;
        let out = out_arg(out, "out")?;
        *out = ct_decision(triage::decide(x, t)?);
        Ok(())
    })
}

/// Grid search of the review band; see the Rust `tune_thresholds`.
///
/// # Safety
/// `values` and `labels` must point to `n` elements; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_tune_thresholds(
    values: *const f64,
    labels: *const u8,
    n: usize,
    grid_n: usize,
    error_cap: f64,
    domain_: CtDomain,
    out: *mut CtTuneResult,
) -> CtStatus {
    guard(|| {
        let values = slice_arg(values, n, "values")?;
        let labels = slice_arg(labels, n, "labels")?;
        let out = out_arg(out, "out")?;
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(Failure(CtStatus::InvalidArgument, format!("label {y} is not 0 or 1")));
        }
        let t = triage::tune_thresholds(values, labels, grid_n, error_cap, domain(domain_))?;
        *out = CtTuneResult {
            low: t.thresholds.low(),
            high: t.thresholds.high(),
            coverage: t.coverage,
            auto_error: t.auto_error,
            infeasible: u8::from(t.infeasible),
        };
        Ok(())
    })
}

// ---- metrics --------------------------------------------------------------

/// NDCG@k of grades listed in ranked order. `defined` is set to 0 (and
/// `out` to 0) when the ideal DCG is zero.
///
/// # Safety
/// `grades` must point to `n` elements; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn ct_ndcg_at_k(
    grades: *const u32,
    n: usize,
    k: usize,
    gain_base: f64,
    out: *mut f64,
    defined: *mut u8,
) -> CtStatus {
    guard(|| {
        let grades = slice_arg(grades, n, "grades")?;
        let out = out_arg(out, "out")?;
        let defined = out_arg(defined, "defined")?;
        if !(gain_base > 1.0) {
            return Err(Failure(CtStatus::InvalidArgument, "gain_base must exceed 1".into()));
        }
        let v = metrics::ndcg_at_k(grades, k, gain_base);
        *out = v.unwrap_or(0.0);
        *defined = u8::from(v.is_some());
        Ok(())
    })
}

/// Rank-statistic AUC; fails with `SingleClass` when one class is absent.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ct_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> CtStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let labels = slice_arg(labels, n, "labels")?;
        let out = out_arg(out, "out")?;
        if n == 0 {
            return Err(Failure(CtStatus::EmptySet, "empty input".into()));
        }
        *out = metrics::auc(scores, labels)
            .ok_or_else(|| Failure(CtStatus::SingleClass, "both classes are needed".into()))?;
        Ok(())
    })
}
