//! Ranking and binary classification metrics.
//!
//! Ranking: graded NDCG@k with exponential gains `base^g − 1` and `log2`
//! discounts, and 4★ precision@5. Binary: confusion-matrix statistics at a
//! threshold (`p > threshold` predicts 1), rank-statistic AUC with average
//! ranks for ties, and 10-bin expected calibration error.

use serde::{Deserialize, Serialize};

use crate::audit::sweep::MetricMap;

pub const ECE_BINS: usize = 10;
pub const DEFAULT_STAR_THRESHOLD: u32 = 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metric over an empty set")]
    EmptySet,
    #[error("{probabilities} probabilities but {labels} labels")]
    LengthMismatch { probabilities: usize, labels: usize },
}

pub fn gain(grade: u32, gain_base: f64) -> f64 {
    gain_base.powi(grade as i32) - 1.0
}

fn dcg(grades: &[u32], k: usize, gain_base: f64) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g, gain_base) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of grades listed in ranked order; `None` when the ideal DCG is
/// zero (no relevant item), which excludes the query from aggregates.
pub fn ndcg_at_k(ranked_grades: &[u32], k: usize, gain_base: f64) -> Option<f64> {
    let mut ideal = ranked_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k, gain_base);
    if idcg <= 0.0 {
        return None;
    }
    Some(dcg(ranked_grades, k, gain_base) / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum P4Denominator {
    /// Always divide by 5.
    #[default]
    Fixed,
    /// Divide by `min(5, n)`.
    Available,
}

/// Fraction of the top five with grade ≥ `star_threshold`.
pub fn p4_at_5(ranked_grades: &[u32], star_threshold: u32) -> f64 {
    p4_at_5_with(ranked_grades, star_threshold, P4Denominator::Fixed)
}

pub fn p4_at_5_with(ranked_grades: &[u32], star_threshold: u32, denom: P4Denominator) -> f64 {
    let hits = ranked_grades.iter().take(5).filter(|&&g| g >= star_threshold).count();
    let d = match denom {
        P4Denominator::Fixed => 5,
        P4Denominator::Available => ranked_grades.len().clamp(1, 5),
    };
    hits as f64 / d as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub p4_at_5: f64,
    /// Queries with positive ideal DCG.
    pub n_queries: usize,
    /// Queries dropped for zero ideal DCG.
    pub n_excluded: usize,
}

impl RankMetrics {
    pub fn insert_into(&self, prefix: &str, out: &mut MetricMap) {
        out.insert(format!("{prefix}ndcg_at_5"), self.ndcg_at_5);
        out.insert(format!("{prefix}ndcg_at_10"), self.ndcg_at_10);
        out.insert(format!("{prefix}p4_at_5"), self.p4_at_5);
        out.insert(format!("{prefix}n_queries"), self.n_queries as f64);
        out.insert(format!("{prefix}n_excluded"), self.n_excluded as f64);
    }
}

/// Averages per-query metrics over the queries with positive ideal DCG.
///
/// Input is `(query_id, grades in ranked order)`; summation runs over
/// ascending query id so the result does not depend on input order.
pub fn rank_metrics(
    queries: &[(String, Vec<u32>)],
    gain_base: f64,
    star_threshold: u32,
    denom: P4Denominator,
) -> RankMetrics {
    let mut order: Vec<&(String, Vec<u32>)> = queries.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let (mut n5, mut n10, mut p4) = (0.0, 0.0, 0.0);
    let (mut n, mut excluded) = (0usize, 0usize);
    for (_, grades) in order {
        match (ndcg_at_k(grades, 5, gain_base), ndcg_at_k(grades, 10, gain_base)) {
            (Some(a), Some(b)) => {
                n5 += a;
                n10 += b;
                p4 += p4_at_5_with(grades, star_threshold, denom);
                n += 1;
            }
            _ => excluded += 1,
        }
    }
    let d = n.max(1) as f64;
    RankMetrics {
        ndcg_at_5: n5 / d,
        ndcg_at_10: n10 / d,
        p4_at_5: p4 / d,
        n_queries: n,
        n_excluded: excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub ece: f64,
    pub confusion: Confusion,
}

impl BinaryMetrics {
    pub fn insert_into(&self, prefix: &str, out: &mut MetricMap) {
        out.insert(format!("{prefix}precision"), self.precision);
        out.insert(format!("{prefix}recall"), self.recall);
        out.insert(format!("{prefix}f1"), self.f1);
        if let Some(auc) = self.auc {
            out.insert(format!("{prefix}auc"), auc);
        }
        out.insert(format!("{prefix}accuracy"), self.accuracy);
        out.insert(format!("{prefix}ece"), self.ece);
    }
}

pub fn confusion(probabilities: &[f64], labels: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p > threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub fn binary_metrics(
    probabilities: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<BinaryMetrics, MetricsError> {
    if probabilities.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            probabilities: probabilities.len(),
            labels: labels.len(),
        });
    }
    if probabilities.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let c = confusion(probabilities, labels, threshold);
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BinaryMetrics {
        precision,
        recall,
        f1,
        auc: auc(probabilities, labels),
        accuracy: ratio(c.tp + c.tn, c.total()),
        ece: ece(probabilities, labels, ECE_BINS),
        confusion: c,
    })
}

/// Mann–Whitney AUC with average ranks over tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares their mean
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_block = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += avg_rank * pos_in_block as f64;
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((pos_rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Bin-count-weighted mean of `|mean label − mean probability|` over
/// `bins` equal-width bins on `[0, 1]`; `p = 1` falls in the last bin.
pub fn ece(probabilities: &[f64], labels: &[u8], bins: usize) -> f64 {
    if probabilities.is_empty() {
        return 0.0;
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    let mut pos = vec![0.0f64; bins];
    for (&p, &y) in probabilities.iter().zip(labels) {
        let b = ((p * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize;
        count[b] += 1;
        conf[b] += p;
        pos[b] += f64::from(y);
    }
    let n = probabilities.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (pos[b] / nb - conf[b] / nb).abs()
        })
        .sum()
}
