//! Calibration and fuzzy-gating heads over frozen similarity scores.
//!
//! The calibration head is a logistic layer `σ(α·s + β)`. The fuzzy head
//! maps the scalar score to three latent states
//! `u = softmax(W2·tanh(W1·s + b1) + b2)`, ordered (auto-noncompliant,
//! review, auto-compliant), and reduces them to a compliance probability
//! `u[compliant] + ½·u[review]`. Both heads are trained jointly with
//! positivity-weighted binary cross-entropy.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use crate::audit::{real17_serde, SeededRng, StageConfig};
use crate::data::{LabeledPair, DEFAULT_GRADE_MAX};
use crate::optim::AdamW;

pub const PROB_EPS: f64 = 1e-7;
pub const DEFAULT_HIDDEN: usize = 16;

/// Weight of each state in the scalar compliance probability.
const STATE_WEIGHTS: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClassifyError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training set has only label {0}")]
    AllOneClass(u8),
    #[error("{pairs} pairs but {scores} scores")]
    LengthMismatch { pairs: usize, scores: usize },
    #[error("head checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    #[serde(with = "real17_serde")]
    pub alpha: f64,
    #[serde(with = "real17_serde")]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyHeadParams {
    pub hidden: usize,
    /// `hidden × 1`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `3 × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: [f64; 3],
}

impl FuzzyHeadParams {
    pub fn zeros(hidden: usize) -> Self {
        FuzzyHeadParams {
            hidden,
            w1: vec![0.0; hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 3 * hidden],
            b2: [0.0; 3],
        }
    }

    /// Draw order: `w1`, `b1`, then `w2`, all standard normals scaled.
    pub fn random_init(hidden: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(hidden);
        p.w1.iter_mut().for_each(|w| *w = 4.0 * rng.normal());
        p.b1.iter_mut().for_each(|b| *b = 2.0 * rng.normal());
        let scale = 1.0 / (hidden as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = scale * rng.normal());
        p
    }

    fn len(hidden: usize) -> usize {
        5 * hidden + 3
    }
}

/// Both heads flattened as `[α, β, w1, b1, w2, b2]`, the optimizer's view.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub calibration: CalibrationParams,
    pub fuzzy: FuzzyHeadParams,
}

impl Heads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + FuzzyHeadParams::len(self.fuzzy.hidden));
        v.push(self.calibration.alpha);
        v.push(self.calibration.beta);
        v.extend(&self.fuzzy.w1);
        v.extend(&self.fuzzy.b1);
        v.extend(&self.fuzzy.w2);
        v.extend(self.fuzzy.b2);
        v
    }

    pub fn from_flat(hidden: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), 2 + FuzzyHeadParams::len(hidden));
        let h = hidden;
        Heads {
            calibration: CalibrationParams {
                alpha: v[0],
                beta: v[1],
            },
            fuzzy: FuzzyHeadParams {
                hidden,
                w1: v[2..2 + h].to_vec(),
                b1: v[2 + h..2 + 2 * h].to_vec(),
                w2: v[2 + 2 * h..2 + 5 * h].to_vec(),
                b2: [v[2 + 5 * h], v[3 + 5 * h], v[4 + 5 * h]],
            },
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn calibrate_probability(s: f64, params: &CalibrationParams) -> f64 {
    sigmoid(params.alpha * s + params.beta)
}

/// `−w1·y·log p − w0·(1−y)·log(1−p)` with `p` clamped to `[ε, 1−ε]`.
pub fn weighted_bce(p: f64, y: u8, w1: f64, w0: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        -w1 * p.ln()
    } else {
        -w0 * (1.0 - p).ln()
    }
}

/// `d weighted_bce / dp`, zero where the clamp is active.
fn weighted_bce_grad(p: f64, y: u8, w1: f64, w0: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    if y == 1 {
        -w1 / p
    } else {
        w0 / (1.0 - p)
    }
}

struct FuzzyPass {
    hidden: Vec<f64>,
    u: [f64; 3],
}

fn fuzzy_pass(s: f64, p: &FuzzyHeadParams) -> FuzzyPass {
    let hidden: Vec<f64> = p.w1.iter().zip(&p.b1).map(|(w, b)| (w * s + b).tanh()).collect();
    let mut logits = p.b2;
    for (k, row) in p.w2.chunks_exact(p.hidden).enumerate() {
        logits[k] += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let z = e[0] + e[1] + e[2];
    FuzzyPass {
        hidden,
        u: e.map(|x| x / z),
    }
}

/// State probabilities `(auto-noncompliant, review, auto-compliant)`.
pub fn fuzzy_forward(s: f64, params: &FuzzyHeadParams) -> [f64; 3] {
    fuzzy_pass(s, params).u
}

pub fn fuzzy_probability(u: &[f64; 3]) -> f64 {
    u[2] + 0.5 * u[1]
}

/// Per-example loss of both heads with gradient accumulated into `grad`
/// (flat layout of [`Heads::to_flat`]).
fn accumulate_example(
    s: f64,
    y: u8,
    heads: &Heads,
    w1: f64,
    w0: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    let cal = &heads.calibration;
    let p_theta = calibrate_probability(s, cal);
    let loss_theta = weighted_bce(p_theta, y, w1, w0);
    let dz = weighted_bce_grad(p_theta, y, w1, w0) * p_theta * (1.0 - p_theta);
    grad[0] += dz * s;
    grad[1] += dz;

    let f = &heads.fuzzy;
    let h = f.hidden;
    let pass = fuzzy_pass(s, f);
    let p_phi = fuzzy_probability(&pass.u);
    let loss_phi = weighted_bce(p_phi, y, w1, w0);
    let dp = weighted_bce_grad(p_phi, y, w1, w0);
    if dp != 0.0 {
        let dl: [f64; 3] = std::array::from_fn(|k| dp * pass.u[k] * (STATE_WEIGHTS[k] - p_phi));
        let (g_w1, rest) = grad[2..].split_at_mut(h);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(3 * h);
        for k in 0..3 {
            g_b2[k] += dl[k];
            for j in 0..h {
                g_w2[k * h + j] += dl[k] * pass.hidden[j];
            }
        }
        for j in 0..h {
            let dh: f64 = (0..3).map(|k| dl[k] * f.w2[k * h + j]).sum();
            let da = dh * (1.0 - pass.hidden[j] * pass.hidden[j]);
            g_w1[j] += da * s;
            g_b1[j] += da;
        }
    }
    (loss_theta, loss_phi)
}

/// Mean joint loss and its gradient over a set of examples.
pub fn batch_loss_gradient(
    scores: &[f64],
    labels: &[u8],
    heads: &Heads,
    w1: f64,
    w0: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; heads.to_flat().len()];
    let mut loss = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let (a, b) = accumulate_example(s, y, heads, w1, w0, &mut grad);
        loss += a + b;
    }
    let n = scores.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosWeight {
    /// `w1 = w0 = 1`.
    Unweighted,
    Weighted(f64),
}

impl PosWeight {
    /// `(w1, w0)`.
    pub fn weights(self, w0: f64) -> (f64, f64) {
        match self {
            PosWeight::Unweighted => (1.0, 1.0),
            PosWeight::Weighted(w1) => (w1, w0),
        }
    }
}

impl Serialize for PosWeight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PosWeight::Unweighted => s.serialize_str("unweighted"),
            PosWeight::Weighted(w) => s.serialize_f64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for PosWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Weight(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(n) if n == "unweighted" => Ok(PosWeight::Unweighted),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "expected \"unweighted\" or a positive number, got {n:?}"
            ))),
            Raw::Weight(w) => Ok(PosWeight::Weighted(w)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyTrainConfig {
    pub seed: u64,
    pub pos_weight: PosWeight,
    pub w0: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub grade_max: u32,
    /// Grade at or above which a derived binary label is 1; defaults to
    /// `grade_max`. Only used when a split has no binary file.
    pub binary_threshold: Option<u32>,
}

impl ClassifyTrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        ClassifyTrainConfig {
            seed,
            pos_weight: PosWeight::Unweighted,
            w0: 1.0,
            learning_rate: 5e-2,
            weight_decay: 0.01,
            epochs: 3,
            batch_size: 8,
            hidden: DEFAULT_HIDDEN,
            grade_max: DEFAULT_GRADE_MAX,
            binary_threshold: None,
        }
    }
}

impl StageConfig for ClassifyTrainConfig {
    const REQUIRED: &'static [&'static str] = &["seed"];

    fn defaults() -> Map<String, Value> {
        let Value::Object(mut m) = json!(ClassifyTrainConfig::with_seed(0)) else {
            unreachable!()
        };
        m.remove("seed");
        m
    }

    fn validate(&self) -> Result<(), String> {
        if let PosWeight::Weighted(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err("pos_weight must be positive".into());
            }
        }
        if !(self.w0 > 0.0) {
            return Err("w0 must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.weight_decay < 0.0 {
            return Err("learning_rate and weight_decay must be non-negative".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err("epochs, batch_size and hidden must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyEpochLog {
    pub epoch: usize,
    pub loss_theta: f64,
    pub loss_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyLog {
    pub epochs: Vec<ClassifyEpochLog>,
    pub steps: usize,
}

/// Trains both heads jointly on frozen scores with mini-batch AdamW.
///
/// Sub-seeds from `SeededRng::new(config.seed)`: fuzzy-head initialization,
/// then the epoch shuffles. The calibration head starts at `α = 1, β = 0`.
pub fn train_classifier(
    pairs: &[LabeledPair],
    scores: &[f64],
    config: &ClassifyTrainConfig,
) -> Result<(CalibrationParams, FuzzyHeadParams, ClassifyLog), ClassifyError> {
    if pairs.len() != scores.len() {
        return Err(ClassifyError::LengthMismatch {
            pairs: pairs.len(),
            scores: scores.len(),
        });
    }
    if pairs.is_empty() {
        return Err(ClassifyError::EmptyTrainSet);
    }
    let first = pairs[0].label;
    if pairs.iter().all(|p| p.label == first) {
        return Err(ClassifyError::AllOneClass(first));
    }
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let (w1, w0) = config.pos_weight.weights(config.w0);

    let mut root = SeededRng::new(config.seed);
    let mut init_rng = root.subseed();
    let mut shuffle_rng = root.subseed();
    let heads = Heads {
        calibration: CalibrationParams {
            alpha: 1.0,
            beta: 0.0,
        },
        fuzzy: FuzzyHeadParams::random_init(config.hidden, &mut init_rng),
    };
    let mut flat = heads.to_flat();
    let mut opt = AdamW::new(flat.len(), config.learning_rate, config.weight_decay);
    let mut log = ClassifyLog {
        epochs: Vec::with_capacity(config.epochs),
        steps: 0,
    };
    let mut loss_theta = vec![0.0; pairs.len()];
    let mut loss_phi = vec![0.0; pairs.len()];

    for epoch in 1..=config.epochs {
        let order = shuffle_rng.permutation(pairs.len());
        for batch in order.chunks(config.batch_size) {
            let current = Heads::from_flat(config.hidden, &flat);
            let mut grad = vec![0.0; flat.len()];
            for &i in batch {
                let (a, b) = accumulate_example(scores[i], labels[i], &current, w1, w0, &mut grad);
                loss_theta[i] = a;
                loss_phi[i] = b;
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            opt.step(&mut flat, &grad);
            log.steps += 1;
        }
        let n = pairs.len() as f64;
        log.epochs.push(ClassifyEpochLog {
            epoch,
            loss_theta: loss_theta.iter().sum::<f64>() / n,
            loss_phi: loss_phi.iter().sum::<f64>() / n,
        });
    }
    let trained = Heads::from_flat(config.hidden, &flat);
    Ok((trained.calibration, trained.fuzzy, log))
}

// ---- head checkpoint ------------------------------------------------------

/// Reference from a heads checkpoint to the rank checkpoint its scores came
/// from; `file` is resolved relative to the heads file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadsCheckpoint {
    #[serde(with = "real17_serde")]
    pub alpha: f64,
    #[serde(with = "real17_serde")]
    pub beta: f64,
    pub hidden: usize,
    /// Base64 of little-endian `f64` arrays.
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
    pub config_digest: String,
    pub seed: u64,
    pub rank_checkpoint: Option<CheckpointRef>,
}

fn encode_f64s(xs: &[f64]) -> String {
    let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(s: &str, expected: usize, name: &str) -> Result<Vec<f64>, ClassifyError> {
    let bytes = B64
        .decode(s)
        .map_err(|e| ClassifyError::Checkpoint(format!("{name}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(ClassifyError::Checkpoint(format!(
            "{name}: expected {expected} floats, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl HeadsCheckpoint {
    pub fn new(
        cal: &CalibrationParams,
        fuzzy: &FuzzyHeadParams,
        config_digest: String,
        seed: u64,
        rank_checkpoint: Option<CheckpointRef>,
    ) -> Self {
        HeadsCheckpoint {
            alpha: cal.alpha,
            beta: cal.beta,
            hidden: fuzzy.hidden,
            w1: encode_f64s(&fuzzy.w1),
            b1: encode_f64s(&fuzzy.b1),
            w2: encode_f64s(&fuzzy.w2),
            b2: encode_f64s(&fuzzy.b2),
            config_digest,
            seed,
            rank_checkpoint,
        }
    }

    pub fn heads(&self) -> Result<Heads, ClassifyError> {
        let h = self.hidden;
        if h == 0 {
            return Err(ClassifyError::Checkpoint("hidden width is zero".into()));
        }
        let b2 = decode_f64s(&self.b2, 3, "b2")?;
        let heads = Heads {
            calibration: CalibrationParams {
                alpha: self.alpha,
                beta: self.beta,
            },
            fuzzy: FuzzyHeadParams {
                hidden: h,
                w1: decode_f64s(&self.w1, h, "w1")?,
                b1: decode_f64s(&self.b1, h, "b1")?,
                w2: decode_f64s(&self.w2, 3 * h, "w2")?,
                b2: [b2[0], b2[1], b2[2]],
            },
        };
        if heads.to_flat().iter().any(|x| !x.is_finite()) {
            return Err(ClassifyError::Checkpoint("non-finite parameter".into()));
        }
        Ok(heads)
    }
}
