//! Three-band decision rule and constrained threshold search.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::real17_serde;

pub const DEFAULT_GRID_N: usize = 20;
pub const DEFAULT_ERROR_CAP: f64 = 0.02;
pub const DEFAULT_HARD_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TriageError {
    #[error("value {value} is outside the {domain} domain")]
    DomainMismatch { value: f64, domain: Domain },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("empty evaluation set")]
    EmptySet,
    #[error("tuning set has only label {0}")]
    SingleClass(u8),
    #[error("{values} values but {labels} labels")]
    LengthMismatch { values: usize, labels: usize },
    #[error("grid needs at least 2 points, got {0}")]
    InvalidGrid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Probability,
    Similarity,
}

impl Domain {
    /// Closed range of admissible values.
    pub fn range(self) -> (f64, f64) {
        match self {
            Domain::Probability => (0.0, 1.0),
            Domain::Similarity => (-1.0, 1.0),
        }
    }

    pub fn contains(self, x: f64) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&x)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Probability => "probability",
            Domain::Similarity => "similarity",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which per-pair value the thresholds are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// `p_θ` from the calibration head.
    Calibrated,
    /// `p_φ` from the fuzzy head.
    Fuzzy,
    /// Raw cosine similarity.
    Similarity,
}

impl ScoreSource {
    pub fn domain(self) -> Domain {
        match self {
            ScoreSource::Calibrated | ScoreSource::Fuzzy => Domain::Probability,
            ScoreSource::Similarity => Domain::Similarity,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Calibrated => "calibrated",
            ScoreSource::Fuzzy => "fuzzy",
            ScoreSource::Similarity => "similarity",
        }
    }
}

impl FromStr for ScoreSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "calibrated" => Ok(ScoreSource::Calibrated),
            "fuzzy" => Ok(ScoreSource::Fuzzy),
            "similarity" => Ok(ScoreSource::Similarity),
            other => Err(format!("unknown score source {other:?}")),
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    AutoNoncompliant,
    Review,
    AutoCompliant,
}

impl Decision {
    pub const ALL: [Decision; 3] = [
        Decision::AutoNoncompliant,
        Decision::Review,
        Decision::AutoCompliant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::AutoNoncompliant => "auto_noncompliant",
            Decision::Review => "review",
            Decision::AutoCompliant => "auto_compliant",
        }
    }

    pub fn is_auto(self) -> bool {
        self != Decision::Review
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    #[serde(with = "real17_serde")]
    low: f64,
    #[serde(with = "real17_serde")]
    high: f64,
    domain: Domain,
}

/// `(τ_low, τ_high)` with `τ_low ≤ τ_high`, both inside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct TriageThresholds {
    low: f64,
    high: f64,
    domain: Domain,
}

impl TryFrom<RawThresholds> for TriageThresholds {
    type Error = TriageError;
    fn try_from(r: RawThresholds) -> Result<Self, TriageError> {
        TriageThresholds::new(r.low, r.high, r.domain)
    }
}

impl From<TriageThresholds> for RawThresholds {
    fn from(t: TriageThresholds) -> Self {
        RawThresholds {
            low: t.low,
            high: t.high,
            domain: t.domain,
        }
    }
}

impl TriageThresholds {
    pub fn new(low: f64, high: f64, domain: Domain) -> Result<Self, TriageError> {
        if !(domain.contains(low) && domain.contains(high)) {
            return Err(TriageError::InvalidThresholds(format!(
                "({low}, {high}) not inside the {domain} domain"
            )));
        }
        if low > high {
            return Err(TriageThresholds::order_error(low, high));
        }
        Ok(TriageThresholds { low, high, domain })
    }

    fn order_error(low: f64, high: f64) -> TriageError {
        TriageError::InvalidThresholds(format!("low {low} exceeds high {high}"))
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }
}

/// `x < τ_low` → auto-noncompliant, `τ_low ≤ x ≤ τ_high` → review,
/// `x > τ_high` → auto-compliant.
pub fn decide(x: f64, t: &TriageThresholds) -> Result<Decision, TriageError> {
    if !t.domain.contains(x) {
        return Err(TriageError::DomainMismatch {
            value: x,
            domain: t.domain,
        });
    }
    Ok(if x < t.low {
        Decision::AutoNoncompliant
    } else if x > t.high {
        Decision::AutoCompliant
    } else {
        Decision::Review
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandCounts {
    pub auto_noncompliant: usize,
    pub review: usize,
    pub auto_compliant: usize,
}

impl BandCounts {
    pub fn auto(&self) -> usize {
        self.auto_noncompliant + self.auto_compliant
    }

    pub fn total(&self) -> usize {
        self.auto() + self.review
    }

    pub fn add(&mut self, d: Decision) {
        match d {
            Decision::AutoNoncompliant => self.auto_noncompliant += 1,
            Decision::Review => self.review += 1,
            Decision::AutoCompliant => self.auto_compliant += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    #[serde(with = "real17_serde")]
    pub coverage: f64,
    /// Error over auto-decided examples only; 0 when none are auto-decided.
    #[serde(with = "real17_serde")]
    pub auto_error: f64,
    /// Error when every example is decided by `x > hard_threshold`.
    #[serde(with = "real17_serde")]
    pub baseline_error: f64,
    pub counts: BandCounts,
    pub auto_errors: usize,
    pub empty_auto: bool,
    pub thresholds: TriageThresholds,
    #[serde(with = "real17_serde")]
    pub hard_threshold: f64,
}

fn check_inputs(values: &[f64], labels: &[u8]) -> Result<(), TriageError> {
    if values.len() != labels.len() {
        return Err(TriageError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
        });
    }
    if values.is_empty() {
        return Err(TriageError::EmptySet);
    }
    Ok(())
}

pub fn evaluate_triage(
    values: &[f64],
    labels: &[u8],
    t: &TriageThresholds,
    hard_threshold: f64,
) -> Result<TriageReport, TriageError> {
    check_inputs(values, labels)?;
    let mut counts = BandCounts::default();
    let mut auto_errors = 0;
    let mut baseline_errors = 0;
    for (&x, &y) in values.iter().zip(labels) {
        let d = decide(x, t)?;
        counts.add(d);
        match d {
            Decision::AutoNoncompliant if y == 1 => auto_errors += 1,
            Decision::AutoCompliant if y == 0 => auto_errors += 1,
            _ => {}
        }
        if (x > hard_threshold) != (y == 1) {
            baseline_errors += 1;
        }
    }
    let n = values.len() as f64;
    let auto = counts.auto();
    Ok(TriageReport {
        coverage: auto as f64 / n,
        auto_error: if auto == 0 {
            0.0
        } else {
            auto_errors as f64 / auto as f64
        },
        baseline_error: baseline_errors as f64 / n,
        counts,
        auto_errors,
        empty_auto: auto == 0,
        thresholds: *t,
        hard_threshold,
    })
}

/// Grid point `i` of `n` spanning the domain; exact at both ends.
pub fn grid_point(i: usize, n: usize, domain: Domain) -> f64 {
    let (lo, hi) = domain.range();
    if i == n - 1 {
        return hi;
    }
    lo + (hi - lo) * (i as f64 / (n - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedThresholds {
    pub thresholds: TriageThresholds,
    /// No band with at least one auto decision met the error cap; the
    /// returned band has the lowest auto error instead.
    pub infeasible: bool,
    pub grid_n: usize,
    #[serde(with = "real17_serde")]
    pub error_cap: f64,
    #[serde(with = "real17_serde")]
    pub coverage: f64,
    #[serde(with = "real17_serde")]
    pub auto_error: f64,
    pub auto: usize,
    pub auto_errors: usize,
    pub total: usize,
}

#[derive(Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    auto: usize,
    wrong: usize,
}

impl Cell {
    /// Compares `wrong/auto` exactly.
    fn cmp_error(&self, other: &Cell) -> Ordering {
        (self.wrong as u128 * other.auto as u128).cmp(&(other.wrong as u128 * self.auto as u128))
    }
}

/// Exhaustive search over the `grid_n·(grid_n+1)/2` ordered grid pairs.
///
/// Among bands with at least one auto decision and `auto_error ≤ error_cap`
/// the one with the highest coverage wins, then the lower error, then the
/// lexicographically smallest `(τ_low, τ_high)`. Without any such band the
/// lowest-error non-empty band is returned (ties: higher coverage, then
/// smallest pair) and flagged infeasible.
pub fn tune_thresholds(
    values: &[f64],
    labels: &[u8],
    grid_n: usize,
    error_cap: f64,
    domain: Domain,
) -> Result<TunedThresholds, TriageError> {
    check_inputs(values, labels)?;
    if grid_n < 2 {
        return Err(TriageError::InvalidGrid(grid_n));
    }
    if let Some(&x) = values.iter().find(|&&x| !domain.contains(x)) {
        return Err(TriageError::DomainMismatch { value: x, domain });
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(TriageError::SingleClass(0));
    }
    if positives == labels.len() {
        return Err(TriageError::SingleClass(1));
    }

    let mut pos: Vec<f64> = Vec::with_capacity(positives);
    let mut neg: Vec<f64> = Vec::with_capacity(labels.len() - positives);
    for (&x, &y) in values.iter().zip(labels) {
        if y == 1 { pos.push(x) } else { neg.push(x) }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let below = |v: &[f64], t: f64| v.partition_point(|&x| x < t);
    let above = |v: &[f64], t: f64| v.len() - v.partition_point(|&x| x <= t);

    let grid: Vec<f64> = (0..grid_n).map(|i| grid_point(i, grid_n, domain)).collect();
    let pos_below: Vec<usize> = grid.iter().map(|&g| below(&pos, g)).collect();
    let neg_below: Vec<usize> = grid.iter().map(|&g| below(&neg, g)).collect();
    let pos_above: Vec<usize> = grid.iter().map(|&g| above(&pos, g)).collect();
    let neg_above: Vec<usize> = grid.iter().map(|&g| above(&neg, g)).collect();

    let mut best_feasible: Option<Cell> = None;
    let mut best_error: Option<Cell> = None;
    // (i, j) ascending, so the first cell found wins every full tie.
    for i in 0..grid_n {
        for j in i..grid_n {
            let cell = Cell {
                i,
                j,
                auto: pos_below[i] + neg_below[i] + pos_above[j] + neg_above[j],
                wrong: pos_below[i] + neg_above[j],
            };
            if cell.auto == 0 {
                continue;
            }
            if cell.wrong as f64 / cell.auto as f64 <= error_cap {
                let better = match &best_feasible {
                    None => true,
                    Some(b) => cell.auto.cmp(&b.auto).then_with(|| b.cmp_error(&cell)) == Ordering::Greater,
                };
                if better {
                    best_feasible = Some(cell);
                }
            }
            let better = match &best_error {
                None => true,
                Some(b) => b.cmp_error(&cell).then_with(|| cell.auto.cmp(&b.auto)) == Ordering::Greater,
            };
            if better {
                best_error = Some(cell);
            }
        }
    }

    let (cell, infeasible) = match (best_feasible, best_error) {
        (Some(c), _) => (c, false),
        (None, Some(c)) => (c, true),
        // every band is empty: all values sit exactly on grid points
        (None, None) => (
            Cell {
                i: 0,
                j: grid_n - 1,
                auto: 0,
                wrong: 0,
            },
            true,
        ),
    };
    let n = values.len();
    Ok(TunedThresholds {
        thresholds: TriageThresholds::new(grid[cell.i], grid[cell.j], domain)?,
        infeasible,
        grid_n,
        error_cap,
        coverage: cell.auto as f64 / n as f64,
        auto_error: if cell.auto == 0 {
            0.0
        } else {
            cell.wrong as f64 / cell.auto as f64
        },
        auto: cell.auto,
        auto_errors: cell.wrong,
        total: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(low: f64, high: f64) -> TriageThresholds {
        TriageThresholds::new(low, high, Domain::Probability).unwrap()
    }

    #[test]
    fn decide_examples() {
        let th = t(0.2, 0.8);
        assert_eq!(decide(0.1, &th).unwrap(), Decision::AutoNoncompliant);
        assert_eq!(decide(0.2, &th).unwrap(), Decision::Review);
        assert_eq!(decide(0.8, &th).unwrap(), Decision::Review);
        assert_eq!(decide(0.9, &th).unwrap(), Decision::AutoCompliant);
        assert!(matches!(decide(1.5, &th), Err(TriageError::DomainMismatch { .. })));
        assert!(matches!(decide(f64::NAN, &th), Err(TriageError::DomainMismatch { .. })));
    }

    #[test]
    fn threshold_validation() {
        assert!(TriageThresholds::new(0.8, 0.2, Domain::Probability).is_err());
        assert!(TriageThresholds::new(-0.5, 0.2, Domain::Probability).is_err());
        assert!(TriageThresholds::new(-0.5, 0.2, Domain::Similarity).is_ok());
        let bad = r#"{"low":"9.0e-1","high":"1.0e-1","domain":"probability"}"#;
        assert!(serde_json::from_str::<TriageThresholds>(bad).is_err());
    }

    #[test]
    fn thresholds_serialize_as_17_digit_strings() {
        let th = t(1.0 / 19.0, 17.0 / 19.0);
        let s = serde_json::to_string(&th).unwrap();
        assert_eq!(
            s,
            r#"{"low":"5.2631578947368418e-2","high":"8.9473684210526316e-1","domain":"probability"}"#
        );
        let back: TriageThresholds = serde_json::from_str(&s).unwrap();
        assert_eq!(back.low().to_bits(), th.low().to_bits());
        assert_eq!(back.high().to_bits(), th.high().to_bits());
    }

    #[test]
    fn collapsed_band_matches_baseline_off_boundary() {
        let x = [0.1, 0.4, 0.5, 0.6, 0.9, 0.5];
        let y = [0, 1, 0, 0, 1, 1];
        let r = evaluate_triage(&x, &y, &t(0.5, 0.5), 0.5).unwrap();
        assert_eq!(r.counts.review, 2);
        assert_eq!(r.counts.auto(), 4);
        // baseline on the same four points: 0.4 (y=1) and 0.6 (y=0) are wrong
        assert_eq!(r.auto_errors, 2);
        assert_eq!(r.auto_error, 0.5);
    }

    #[test]
    fn separated_scores() {
        let x = [0.05, 0.1, 0.2, 0.85, 0.95];
        let y = [0, 0, 0, 1, 1];
        let r = evaluate_triage(&x, &y, &t(0.5, 0.6), 0.5).unwrap();
        assert_eq!((r.coverage, r.auto_error, r.baseline_error), (1.0, 0.0, 0.0));
        let tuned = tune_thresholds(&x, &y, 20, 0.02, Domain::Probability).unwrap();
        assert!(!tuned.infeasible);
        assert_eq!((tuned.coverage, tuned.auto_error), (1.0, 0.0));
    }

    #[test]
    fn empty_auto_band_is_flagged() {
        let r = evaluate_triage(&[0.3, 0.4], &[0, 1], &t(0.0, 1.0), 0.5).unwrap();
        assert!(r.empty_auto);
        assert_eq!(r.auto_error, 0.0);
        assert_eq!(r.coverage, 0.0);
        assert_eq!(evaluate_triage(&[], &[], &t(0.0, 1.0), 0.5).unwrap_err(), TriageError::EmptySet);
    }

    #[test]
    fn unconstrained_cap_covers_everything() {
        let x = [0.12, 0.33, 0.41, 0.77, 0.81, 0.3];
        let y = [1, 0, 1, 0, 1, 0];
        let tuned = tune_thresholds(&x, &y, 20, 1.0, Domain::Probability).unwrap();
        assert_eq!(tuned.coverage, 1.0);
        assert!(!tuned.infeasible);
    }

    #[test]
    fn infeasible_cap_is_flagged() {
        // interleaved labels: every non-empty band errs
        let x = [0.1, 0.12, 0.9, 0.92];
        let y = [1, 0, 0, 1];
        let tuned = tune_thresholds(&x, &y, 20, 0.02, Domain::Probability).unwrap();
        assert!(tuned.infeasible);
        assert!(tuned.auto > 0);
        assert!(tuned.auto_error > 0.02);
    }

    #[test]
    fn tuning_errors() {
        assert_eq!(
            tune_thresholds(&[], &[], 20, 0.02, Domain::Probability).unwrap_err(),
            TriageError::EmptySet
        );
        assert_eq!(
            tune_thresholds(&[0.2, 0.3], &[1, 1], 20, 0.02, Domain::Probability).unwrap_err(),
            TriageError::SingleClass(1)
        );
    }

    #[test]
    fn grid_ends_are_exact() {
        assert_eq!(grid_point(0, 20, Domain::Probability), 0.0);
        assert_eq!(grid_point(19, 20, Domain::Probability), 1.0);
        assert_eq!(grid_point(0, 20, Domain::Similarity), -1.0);
    }
}
