#![allow(dead_code)]
//! Naive reference implementations and fixtures shared by the test targets.

use std::path::{Path, PathBuf};

use clausetriage::audit::SeededRng;
use clausetriage::classifier::ClassifyTrainConfig;
use clausetriage::data::{SplitName, SyntheticConfig};
use clausetriage::pipeline::{
    self, EvaluateConfig, EvaluatePaths, TriagePaths, TuneConfig, HEADS_FILE,
    RANK_CHECKPOINT_FILE, THRESHOLDS_FILE,
};
use clausetriage::rank::RankTrainConfig;
use clausetriage::triage::Domain;

// ---- metric oracles ---------------------------------------------------------

fn dcg_naive(grades: &[u32], k: usize, base: f64) -> f64 {
    let mut total = 0.0;
    for (pos, &g) in grades.iter().enumerate() {
        if pos >= k {
            break;
        }
        let mut gain = 1.0;
        for _ in 0..g {
            gain *= base;
        }
        total += (gain - 1.0) / (pos as f64 + 2.0).log2();
    }
    total
}

fn permutations(items: &mut Vec<u32>, start: usize, f: &mut dyn FnMut(&[u32])) {
    if start == items.len() {
        f(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permutations(items, start + 1, f);
        items.swap(start, i);
    }
}

/// Ideal DCG by trying every ordering (short lists) or a selection sort.
fn ideal_dcg_naive(grades: &[u32], k: usize, base: f64) -> f64 {
    if grades.len() <= 7 {
        let mut best = 0.0f64;
        let mut v = grades.to_vec();
        permutations(&mut v, 0, &mut |p| best = best.max(dcg_naive(p, k, base)));
        return best;
    }
    let mut v = grades.to_vec();
    for i in 0..v.len() {
        let mut m = i;
        for j in i + 1..v.len() {
            if v[j] > v[m] {
                m = j;
            }
        }
        v.swap(i, m);
    }
    dcg_naive(&v, k, base)
}

pub fn ndcg_oracle(grades: &[u32], k: usize, base: f64) -> Option<f64> {
    let ideal = ideal_dcg_naive(grades, k, base);
    if ideal == 0.0 {
        None
    } else {
        Some(dcg_naive(grades, k, base) / ideal)
    }
}

pub fn p4_oracle(grades: &[u32], star: u32) -> f64 {
    let mut hits = 0;
    for &g in grades.iter().take(5) {
        if g >= star {
            hits += 1;
        }
    }
    hits as f64 / 5.0
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0u64);
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            den += 1;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    (den > 0).then(|| num / den as f64)
}

pub fn ece_oracle(p: &[f64], y: &[u8], bins: usize) -> f64 {
    let n = p.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..p.len())
            .filter(|&i| p[i] >= lo && (p[i] < hi || (b == bins - 1 && p[i] <= 1.0)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let conf: f64 = members.iter().map(|&i| p[i]).sum::<f64>() / m;
        let acc: f64 = members.iter().map(|&i| y[i] as f64).sum::<f64>() / m;
        total += m / n * (acc - conf).abs();
    }
    total
}

pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn counts_oracle(p: &[f64], y: &[u8], threshold: f64) -> Counts {
    let mut c = Counts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for i in 0..p.len() {
        let predicted = if p[i] > threshold { 1 } else { 0 };
        if predicted == 1 && y[i] == 1 {
            c.tp += 1;
        } else if predicted == 1 {
            c.fp += 1;
        } else if y[i] == 1 {
            c.fn_ += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

/// (precision, recall, f1) with 0 for undefined ratios.
pub fn prf_oracle(c: &Counts) -> (f64, f64, f64) {
    let p = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let r = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    let f = if c.tp == 0 { 0.0 } else { 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64 };
    (p, r, f)
}

// ---- triage oracle ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandOracle {
    pub low: f64,
    pub high: f64,
    pub auto: usize,
    pub wrong: usize,
    pub infeasible: bool,
}

/// Tries every ordered pair of grid points and recounts the data for each.
pub fn tune_oracle(values: &[f64], labels: &[u8], grid_n: usize, cap: f64, domain: Domain) -> BandOracle {
    let (lo, hi) = domain.range();
    let grid: Vec<f64> = (0..grid_n)
        .map(|i| if i == grid_n - 1 { hi } else { lo + (hi - lo) * (i as f64 / (grid_n - 1) as f64) })
        .collect();
    let mut all = Vec::new();
    for i in 0..grid_n {
        for j in i..grid_n {
            let (a, b) = (grid[i], grid[j]);
            let (mut auto, mut wrong) = (0, 0);
            for (&x, &y) in values.iter().zip(labels) {
                if x < a {
                    auto += 1;
                    wrong += usize::from(y == 1);
                } else if x > b {
                    auto += 1;
                    wrong += usize::from(y == 0);
                }
            }
            all.push(BandOracle { low: a, high: b, auto, wrong, infeasible: false });
        }
    }
    let err = |c: &BandOracle| c.wrong as f64 / c.auto as f64;
    let feasible: Vec<&BandOracle> = all.iter().filter(|c| c.auto > 0 && err(c) <= cap).collect();
    if !feasible.is_empty() {
        let best_auto = feasible.iter().map(|c| c.auto).max().unwrap();
        let top: Vec<&&BandOracle> = feasible.iter().filter(|c| c.auto == best_auto).collect();
        let best_err = top.iter().map(|c| err(c)).fold(f64::INFINITY, f64::min);
        // enumeration order is lexicographic, so the first match is the smallest pair
        return **top.into_iter().find(|c| err(c) == best_err).unwrap();
    }
    let nonempty: Vec<&BandOracle> = all.iter().filter(|c| c.auto > 0).collect();
    if nonempty.is_empty() {
        return BandOracle { low: grid[0], high: grid[grid_n - 1], auto: 0, wrong: 0, infeasible: true };
    }
    let best_err = nonempty.iter().map(|c| err(c)).fold(f64::INFINITY, f64::min);
    let top: Vec<&&BandOracle> = nonempty.iter().filter(|c| err(c) == best_err).collect();
    let best_auto = top.iter().map(|c| c.auto).max().unwrap();
    let mut pick = **top.into_iter().find(|c| c.auto == best_auto).unwrap();
    pick.infeasible = true;
    pick
}

// ---- random instances -------------------------------------------------------

pub fn random_grades(rng: &mut SeededRng, n: usize, grade_max: u32) -> Vec<u32> {
    (0..n).map(|_| rng.below(grade_max as usize + 1) as u32).collect()
}

/// Scores with deliberate ties: a third of instances draw from a small
/// set of values.
pub fn random_scored(rng: &mut SeededRng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let coarse = rng.below(3) == 0;
    let scores = (0..n)
        .map(|_| if coarse { rng.below(5) as f64 / 4.0 } else { rng.uniform() })
        .collect();
    let rate = 0.05 + 0.9 * rng.uniform();
    let labels = (0..n).map(|_| u8::from(rng.uniform() < rate)).collect();
    (scores, labels)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---- pipeline fixture -------------------------------------------------------

pub struct RunPaths {
    pub root: PathBuf,
    pub data: PathBuf,
    pub manifests: Vec<PathBuf>,
    pub audit: PathBuf,
}

/// Every stage end to end on a synthetic corpus, all under `root`.
pub fn run_pipeline(root: &Path, synth: &SyntheticConfig, seed: u64) -> RunPaths {
    let data = root.join("data");
    let mut manifests = vec![pipeline::gen_synthetic(synth, seed, &data).unwrap().manifest_path];
    manifests.push(pipeline::train_rank_stage(&RankTrainConfig::with_seed(seed), &data, root).unwrap().manifest_path);
    manifests.push(
        pipeline::train_classify_stage(
            &ClassifyTrainConfig::with_seed(seed),
            &root.join(RANK_CHECKPOINT_FILE),
            &data,
            root,
        )
        .unwrap()
        .manifest_path,
    );
    manifests.push(
        pipeline::tune_stage(&TuneConfig::default(), &root.join(HEADS_FILE), None, &data, root)
            .unwrap()
            .manifest_path,
    );
    for split in [SplitName::Validation, SplitName::Test] {
        let cfg = EvaluateConfig {
            split,
            ..EvaluateConfig::default()
        };
        manifests.push(pipeline::evaluate_stage(&cfg, &EvaluatePaths::default(), root).unwrap().manifest_path);
    }
    let audit = root.join("audit").join("test.audit.jsonl");
    let triage = TriagePaths {
        heads: root.join(HEADS_FILE),
        thresholds: root.join(THRESHOLDS_FILE),
        pairs: data.join(SplitName::Test.binary_file()),
        audit: audit.clone(),
        embeddings: None,
        rank_ckpt: None,
    };
    manifests.push(pipeline::triage_stage(&triage).unwrap().manifest_path);
    RunPaths {
        root: root.to_path_buf(),
        data,
        manifests,
        audit,
    }
}

// ---- gradient checks --------------------------------------------------------

use clausetriage::classifier::{batch_loss_gradient, FuzzyHeadParams, Heads, CalibrationParams};
use clausetriage::data::generate_synthetic;
use clausetriage::rank::{group_loss, loss_gradient};
use clausetriage::retrieval::ProjectionParams;

/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-5;

pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub struct GradReport {
    pub points: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

/// Central differences of the listwise loss against the analytic
/// projection gradient at `points` random parameter vectors.
pub fn check_rank_gradient(points: usize, coords_per_point: usize, seed: u64) -> GradReport {
    let synth = SyntheticConfig {
        dim: 8,
        n_queries: 20,
        clauses_per_query: 6,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic(&synth, seed).unwrap();
    let mut config = RankTrainConfig::with_seed(seed);
    let mut rng = SeededRng::new(seed);
    let groups: Vec<_> = corpus.train.groups.iter().filter(|g| g.grades.iter().any(|&x| x > 0)).collect();
    let mut report = GradReport { points: 0, coordinates: 0, max_rel_error: 0.0 };
    for p in 0..points {
        config.temperature = [1.0, 0.5, 0.1][p % 3];
        let group = groups[p % groups.len()];
        let mut params = ProjectionParams::random_init(synth.dim, 5, &mut rng);
        for v in params.as_mut_slice() {
            *v += 0.3 * rng.normal();
        }
        let (_, grad) = loss_gradient(group, &corpus.store, &params, &config).unwrap();
        let n = params.as_slice().len();
        for _ in 0..coords_per_point {
            let i = rng.below(n);
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += STEP;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= STEP;
            let numeric = (group_loss(group, &corpus.store, &plus, &config).unwrap()
                - group_loss(group, &corpus.store, &minus, &config).unwrap())
                / (2.0 * STEP);
            let e = grad_rel_error(grad.as_slice()[i], numeric);
            report.max_rel_error = report.max_rel_error.max(e);
            report.coordinates += 1;
        }
        report.points += 1;
    }
    report
}

/// Same check for the joint loss of both heads; every point covers α, β
/// and `coords_per_point` fuzzy-head coordinates.
pub fn check_heads_gradient(points: usize, coords_per_point: usize, seed: u64) -> GradReport {
    let mut rng = SeededRng::new(seed);
    let mut report = GradReport { points: 0, coordinates: 0, max_rel_error: 0.0 };
    for p in 0..points {
        let hidden = 3 + p % 6;
        let heads = Heads {
            calibration: CalibrationParams {
                alpha: 3.0 * rng.normal(),
                beta: rng.normal(),
            },
            fuzzy: {
                let mut f = FuzzyHeadParams::random_init(hidden, &mut rng);
                f.b2 = [rng.normal(), rng.normal(), rng.normal()];
                f
            },
        };
        let n = 16;
        let scores: Vec<f64> = (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 4 == 0)).collect();
        let (w1, w0) = if p % 2 == 0 { (1.0, 1.0) } else { (200.0, 1.0) };
        let (_, grad) = batch_loss_gradient(&scores, &labels, &heads, w1, w0);
        let flat = heads.to_flat();
        let loss_at = |v: &[f64]| batch_loss_gradient(&scores, &labels, &Heads::from_flat(hidden, v), w1, w0).0;
        let mut coords = vec![0, 1];
        coords.extend((0..coords_per_point).map(|_| 2 + rng.below(flat.len() - 2)));
        for i in coords {
            let mut plus = flat.clone();
            plus[i] += STEP;
            let mut minus = flat.clone();
            minus[i] -= STEP;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
            let e = grad_rel_error(grad[i], numeric);
            report.max_rel_error = report.max_rel_error.max(e);
            report.coordinates += 1;
        }
        report.points += 1;
    }
    report
}
