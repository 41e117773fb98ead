//! Listwise graded-softmax training of the dual projection.
//!
//! Grades map to gains `base^g − 1`, normalized into a target distribution
//! over each query group. The model distribution is `softmax(s / τ)` over
//! the group's cosine scores, and the loss is the cross-entropy between the
//! two. Gradients are propagated analytically through the cosine and both
//! projections.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::audit::{SeededRng, StageConfig};
use crate::data::{DataError, DatasetSplit, EmbeddingStore, Kind, QueryGroup, DEFAULT_GRADE_MAX};
use crate::metrics::{rank_metrics, P4Denominator, RankMetrics, DEFAULT_STAR_THRESHOLD};
use crate::optim::{clip_grad_norm, AdamW};
use crate::retrieval::{
    cosine, norm, sort_ranked, ProjectionParams, RetrievalError, ScoredPair, Side,
    DEFAULT_PROJECTION_DIM,
};

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error("target has no positive gain")]
    DegenerateTarget,
    #[error("training split has no usable query group")]
    EmptyTrainSet,
    #[error("{scores} scores for a target of length {target}")]
    LengthMismatch { scores: usize, target: usize },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankTrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    /// Step budget in (query, clause) pairs; whole groups are packed.
    pub max_group_pairs: usize,
    pub temperature: f64,
    pub gain_base: f64,
    pub projection_dim: usize,
    /// Share one projection between queries and clauses.
    pub tie_projections: bool,
    pub grade_max: u32,
}

impl RankTrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        RankTrainConfig {
            seed,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            epochs: 3,
            max_group_pairs: 96,
            temperature: 1.0,
            gain_base: 2.0,
            projection_dim: DEFAULT_PROJECTION_DIM,
            tie_projections: false,
            grade_max: DEFAULT_GRADE_MAX,
        }
    }
}

impl StageConfig for RankTrainConfig {
    const REQUIRED: &'static [&'static str] = &["seed"];

    fn defaults() -> Map<String, Value> {
        let Value::Object(mut m) = json!(RankTrainConfig::with_seed(0)) else {
            unreachable!()
        };
        m.remove("seed");
        m
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be finite and non-negative".into());
        }
        if !(self.temperature > 0.0) {
            return Err("temperature must be positive".into());
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.max_group_pairs == 0 || self.projection_dim == 0 {
            return Err("max_group_pairs and projection_dim must be positive".into());
        }
        if !(self.gain_base > 1.0) {
            return Err("gain_base must exceed 1".into());
        }
        if !(self.max_grad_norm > 0.0) || self.weight_decay < 0.0 {
            return Err("max_grad_norm must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}

/// Gains and the normalized target distribution of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTarget {
    pub gains: Vec<f64>,
    pub target: Vec<f64>,
    /// All gains are zero; the group carries no ranking signal.
    pub degenerate: bool,
}

pub fn grade_to_target(grades: &[u32], gain_base: f64) -> GainTarget {
    let gains: Vec<f64> = grades.iter().map(|&g| gain_base.powi(g as i32) - 1.0).collect();
    let total: f64 = gains.iter().sum();
    if total <= 0.0 {
        return GainTarget {
            target: vec![0.0; gains.len()],
            gains,
            degenerate: true,
        };
    }
    GainTarget {
        target: gains.iter().map(|g| g / total).collect(),
        gains,
        degenerate: false,
    }
}

/// Stable `softmax(scores / τ)`.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let m = scores.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s / temperature));
    let exps: Vec<f64> = scores.iter().map(|&s| (s / temperature - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `−Σ p_k log softmax(s/τ)_k`, evaluated via log-sum-exp.
pub fn listwise_loss(scores: &[f64], target: &GainTarget, temperature: f64) -> Result<f64, RankError> {
    if target.degenerate {
        return Err(RankError::DegenerateTarget);
    }
    if scores.len() != target.target.len() {
        return Err(RankError::LengthMismatch {
            scores: scores.len(),
            target: target.target.len(),
        });
    }
    // log-sum-exp as m + ln(1 + rest) keeps small losses accurate
    let z: Vec<f64> = scores.iter().map(|&s| s / temperature).collect();
    let top = (0..z.len()).fold(0, |a, i| if z[i] > z[a] { i } else { a });
    let m = z[top];
    let rest: f64 = (0..z.len()).filter(|&i| i != top).map(|i| (z[i] - m).exp()).sum();
    let tail = rest.ln_1p();
    Ok(z
        .iter()
        .zip(&target.target)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&zi, &p)| p * ((m - zi) + tail))
        .sum())
}

/// A query group resolved against the store.
struct Prepared<'a> {
    query: &'a [f32],
    candidates: Vec<&'a [f32]>,
    target: GainTarget,
}

fn prepare<'a>(
    group: &'a QueryGroup,
    store: &'a EmbeddingStore,
    gain_base: f64,
) -> Result<Prepared<'a>, RankError> {
    let query = store.vector(Kind::Rule, &group.query_id)?;
    let candidates = group
        .candidate_ids
        .iter()
        .map(|c| store.vector(Kind::Clause, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared {
        query,
        candidates,
        target: grade_to_target(&group.grades, gain_base),
    })
}

/// Adds this group's loss gradient into `grad` and returns the loss.
fn accumulate_group(
    g: &Prepared<'_>,
    params: &ProjectionParams,
    temperature: f64,
    grad: &mut ProjectionParams,
) -> Result<f64, RankError> {
    let zq = params.project(g.query, Side::Query)?;
    let zcs = g
        .candidates
        .iter()
        .map(|h| params.project(h, Side::Clause))
        .collect::<Result<Vec<_>, _>>()?;
    let nq = norm(&zq);
    let scores = zcs
        .iter()
        .map(|zc| cosine(&zq, zc))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = listwise_loss(&scores, &g.target, temperature)?;
    let predicted = softmax(&scores, temperature);

    let d = params.dim();
    let mut gzq = vec![0.0; d];
    for (k, zc) in zcs.iter().enumerate() {
        let coef = (predicted[k] - g.target.target[k]) / temperature;
        if coef == 0.0 {
            continue;
        }
        let nc = norm(zc);
        let s = scores[k];
        let inv = 1.0 / (nq * nc);
        // ds/dzq = zc/(|zq||zc|) - s zq/|zq|^2 ; ds/dzc symmetric
        let mut gzc = vec![0.0; d];
        for i in 0..d {
            gzq[i] += coef * (zc[i] * inv - s * zq[i] / (nq * nq));
            gzc[i] = coef * (zq[i] * inv - s * zc[i] / (nc * nc));
        }
        outer_add(grad, Side::Clause, &gzc, g.candidates[k]);
    }
    outer_add(grad, Side::Query, &gzq, g.query);
    Ok(loss)
}

fn outer_add(grad: &mut ProjectionParams, side: Side, gz: &[f64], h: &[f32]) {
    let base = grad.dim_base();
    for (row, &gi) in grad.weight_mut(side).chunks_exact_mut(base).zip(gz) {
        if gi == 0.0 {
            continue;
        }
        for (w, &hj) in row.iter_mut().zip(h) {
            *w += gi * f64::from(hj);
        }
    }
    for (b, &gi) in grad.bias_mut(side).iter_mut().zip(gz) {
        *b += gi;
    }
}

/// Loss and gradient of one group with respect to every projection entry.
pub fn loss_gradient(
    group: &QueryGroup,
    store: &EmbeddingStore,
    params: &ProjectionParams,
    config: &RankTrainConfig,
) -> Result<(f64, ProjectionParams), RankError> {
    let prepared = prepare(group, store, config.gain_base)?;
    if prepared.target.degenerate {
        return Err(RankError::DegenerateTarget);
    }
    let mut grad = ProjectionParams::zeros(params.dim_base(), params.dim());
    let loss = accumulate_group(&prepared, params, config.temperature, &mut grad)?;
    Ok((loss, grad))
}

/// Loss of one group, for finite-difference checks and logging.
pub fn group_loss(
    group: &QueryGroup,
    store: &EmbeddingStore,
    params: &ProjectionParams,
    config: &RankTrainConfig,
) -> Result<f64, RankError> {
    let g = prepare(group, store, config.gain_base)?;
    let zq = params.project(g.query, Side::Query)?;
    let scores = g
        .candidates
        .iter()
        .map(|h| cosine(&zq, &params.project(h, Side::Clause)?))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    listwise_loss(&scores, &g.target, config.temperature)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean pre-update group loss, summed in group order.
    pub train_loss: f64,
    pub val_ndcg_at_5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub skipped_groups: usize,
}

/// Packs shuffled group indices into steps of at most `budget` pairs; a
/// group larger than the budget gets a step of its own.
pub fn pack_batches(order: &[usize], sizes: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        if !current.is_empty() && used + sizes[i] > budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += sizes[i];
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Scores each group, ranks with the id tie rule and aggregates
/// NDCG@5/10 and P4@5.
pub fn evaluate_ranking(
    groups: &[QueryGroup],
    store: &EmbeddingStore,
    params: &ProjectionParams,
    gain_base: f64,
) -> Result<RankMetrics, RankError> {
    evaluate_ranking_with(groups, store, params, gain_base, DEFAULT_STAR_THRESHOLD, P4Denominator::Fixed)
}

pub fn evaluate_ranking_with(
    groups: &[QueryGroup],
    store: &EmbeddingStore,
    params: &ProjectionParams,
    gain_base: f64,
    star_threshold: u32,
    denom: P4Denominator,
) -> Result<RankMetrics, RankError> {
    let mut ranked = Vec::with_capacity(groups.len());
    for g in groups {
        let zq = params.project(store.vector(Kind::Rule, &g.query_id)?, Side::Query)?;
        let mut scored = Vec::with_capacity(g.candidate_ids.len());
        for (cid, &grade) in g.candidate_ids.iter().zip(&g.grades) {
            let zc = params.project(store.vector(Kind::Clause, cid)?, Side::Clause)?;
            scored.push((
                ScoredPair {
                    query_id: g.query_id.clone(),
                    clause_id: cid.clone(),
                    score: cosine(&zq, &zc)?,
                },
                grade,
            ));
        }
        let mut pairs: Vec<ScoredPair> = scored.iter().map(|(p, _)| p.clone()).collect();
        sort_ranked(&mut pairs);
        let grade_of: std::collections::HashMap<&str, u32> =
            scored.iter().map(|(p, g)| (p.clause_id.as_str(), *g)).collect();
        let grades = pairs.iter().map(|p| grade_of[p.clause_id.as_str()]).collect();
        ranked.push((g.query_id.clone(), grades));
    }
    Ok(rank_metrics(&ranked, gain_base, star_threshold, denom))
}

/// Trains the projection and returns the parameters of the epoch with the
/// best validation NDCG@5 (earliest on ties; last epoch if there is no
/// validation signal).
///
/// Sub-seeds from `SeededRng::new(config.seed)`: initialization, then the
/// epoch shuffles.
pub fn train_rank(
    train: &DatasetSplit,
    validation: &DatasetSplit,
    store: &EmbeddingStore,
    config: &RankTrainConfig,
) -> Result<(ProjectionParams, TrainingLog), RankError> {
    let mut root = SeededRng::new(config.seed);
    let mut init_rng = root.subseed();
    let mut shuffle_rng = root.subseed();
    let params = ProjectionParams::random_init(store.dim(), config.projection_dim, &mut init_rng);
    train_rank_from(params, train, validation, store, config, &mut shuffle_rng)
}

pub fn train_rank_from(
    mut params: ProjectionParams,
    train: &DatasetSplit,
    validation: &DatasetSplit,
    store: &EmbeddingStore,
    config: &RankTrainConfig,
    shuffle_rng: &mut SeededRng,
) -> Result<(ProjectionParams, TrainingLog), RankError> {
    let mut prepared = Vec::with_capacity(train.groups.len());
    let mut skipped = 0;
    for g in &train.groups {
        let p = prepare(g, store, config.gain_base)?;
        if p.target.degenerate {
            skipped += 1;
        } else {
            prepared.push(p);
        }
    }
    if prepared.is_empty() {
        return Err(RankError::EmptyTrainSet);
    }
    if config.tie_projections {
        let w = params.weight(Side::Query).to_vec();
        let b = params.bias(Side::Query).to_vec();
        params.weight_mut(Side::Clause).copy_from_slice(&w);
        params.bias_mut(Side::Clause).copy_from_slice(&b);
    }
    let sizes: Vec<usize> = prepared.iter().map(|p| p.candidates.len()).collect();
    let mut opt = AdamW::new(params.as_slice().len(), config.learning_rate, config.weight_decay);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ProjectionParams)> = None;
    let mut losses = vec![0.0; prepared.len()];

    for epoch in 1..=config.epochs {
        let order = shuffle_rng.permutation(prepared.len());
        let batches = pack_batches(&order, &sizes, config.max_group_pairs);
        for batch in &batches {
            let mut grad = ProjectionParams::zeros(params.dim_base(), params.dim());
            for &i in batch {
                losses[i] = accumulate_group(&prepared[i], &params, config.temperature, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
            if config.tie_projections {
                tie_gradient(&mut grad);
            }
            clip_grad_norm(grad.as_mut_slice(), config.max_grad_norm);
            opt.step(params.as_mut_slice(), grad.as_slice());
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val = if validation.groups.is_empty() {
            None
        } else {
            let m = evaluate_ranking(&validation.groups, store, &params, config.gain_base)?;
            (m.n_queries > 0).then_some(m.ndcg_at_5)
        };
        epochs.push(EpochLog {
            epoch,
            steps: batches.len(),
            train_loss,
            val_ndcg_at_5: val,
        });
        let score = val.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, _, _)) => score > *b || (val.is_none() && epoch == config.epochs),
        };
        if better {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok((
        best_params,
        TrainingLog {
            epochs,
            best_epoch,
            skipped_groups: skipped,
        },
    ))
}

fn tie_gradient(grad: &mut ProjectionParams) {
    let wq = grad.weight(Side::Query).to_vec();
    let bq = grad.bias(Side::Query).to_vec();
    for (c, q) in grad.weight_mut(Side::Clause).iter_mut().zip(&wq) {
        *c += q;
    }
    for (c, q) in grad.bias_mut(Side::Clause).iter_mut().zip(&bq) {
        *c += q;
    }
    let wc = grad.weight(Side::Clause).to_vec();
    let bc = grad.bias(Side::Clause).to_vec();
    grad.weight_mut(Side::Query).copy_from_slice(&wc);
    grad.bias_mut(Side::Query).copy_from_slice(&bc);
}

// ---- checkpoint I/O -------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"PRJ1";

/// Sidecar written next to a `PRJ1` checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub config_digest: String,
    pub seed: u64,
    pub dim_base: usize,
    pub dim: usize,
}

/// Rounds every entry through `f32`, i.e. to what a checkpoint stores.
pub fn round_to_checkpoint_precision(params: &mut ProjectionParams) {
    for v in params.as_mut_slice() {
        *v = f64::from(*v as f32);
    }
}

pub fn write_checkpoint<W: Write>(out: W, params: &ProjectionParams) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(CKPT_MAGIC)?;
    out.write_all(&(params.dim_base() as u32).to_le_bytes())?;
    out.write_all(&(params.dim() as u32).to_le_bytes())?;
    for &v in params.as_slice() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ProjectionParams, RankError> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| RankError::Checkpoint("truncated header".into()))?;
    if &head[..4] != CKPT_MAGIC {
        return Err(RankError::Checkpoint("missing PRJ1 magic".into()));
    }
    let dim_base = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if dim == 0 || dim_base == 0 {
        return Err(RankError::Checkpoint("zero dimension".into()));
    }
    let mut params = ProjectionParams::zeros(dim_base, dim);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| RankError::Checkpoint(e.to_string()))?;
    if bytes.len() != params.as_slice().len() * 4 {
        return Err(RankError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            params.as_slice().len() * 4,
            bytes.len()
        )));
    }
    for (dst, c) in params.as_mut_slice().iter_mut().zip(bytes.chunks_exact(4)) {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(RankError::Checkpoint("non-finite parameter".into()));
        }
        *dst = f64::from(v);
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<ProjectionParams, RankError> {
    let f = File::open(path).map_err(|e| RankError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(f))
}
