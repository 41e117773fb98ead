//! Stage runners shared by the command-line tool and the tests.
//!
//! Each runner reads its inputs, writes its artifacts and a sealed manifest
//! into the output directory and returns a [`StageOutcome`]. Artifacts are
//! canonical JSON or fixed binary layouts, so equal inputs and seeds give
//! byte-identical files.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::audit::sweep::{metrics_to_value, MetricMap};
use crate::audit::{
    canonical_json_pretty, load_config_value, run_seed_sweep, sha256_hex,
    AuditHeader, AuditWriter, ConfigError, RunManifest, Stage, StageConfig,
};
use crate::classifier::{
    calibrate_probability, fuzzy_forward, fuzzy_probability, train_classifier, CheckpointRef,
    ClassifyTrainConfig, Heads, HeadsCheckpoint,
};
use crate::data::{
    generate_synthetic, load_corpus, parse_dataset, parse_embeddings, write_binary,
    write_corpus, write_embeddings, Corpus, DataError, EmbeddingStore, Kind, LabeledPair, Schema,
    SplitName, SyntheticConfig, DEFAULT_GRADE_MAX, EMBEDDINGS_FILE,
};
use crate::error::{Error, Result};
use crate::metrics::{auc, binary_metrics, P4Denominator, DEFAULT_STAR_THRESHOLD};
use crate::rank::{
    evaluate_ranking_with, read_checkpoint, round_to_checkpoint_precision, train_rank,
    write_checkpoint, CheckpointMeta, RankTrainConfig,
};
use crate::retrieval::{cosine, ProjectionParams, Side};
use crate::triage::{
    decide, evaluate_triage, tune_thresholds, BandCounts, ScoreSource, TriageReport,
    TriageThresholds, TunedThresholds, DEFAULT_ERROR_CAP, DEFAULT_GRID_N, DEFAULT_HARD_THRESHOLD,
};

pub const RANK_CHECKPOINT_FILE: &str = "rank.prj1";
pub const RANK_SIDECAR_FILE: &str = "rank.prj1.json";
pub const HEADS_FILE: &str = "heads.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const SWEEP_FILE: &str = "sweep.json";
/// Default data directory inside a run directory.
pub const DATA_DIR: &str = "data";

pub fn manifest_file(stage: Stage) -> String {
    format!("manifest.{}.json", stage.as_str())
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub metrics: MetricMap,
    pub summary: String,
    /// Threshold tuning fell back to the lowest-error band.
    pub infeasible: bool,
}

// ---- stage configs --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub grid_n: usize,
    pub error_cap: f64,
    pub source: ScoreSource,
    /// Threshold of the single-cut baseline reported next to the band.
    pub hard_threshold: f64,
    pub grade_max: u32,
    pub binary_threshold: Option<u32>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            grid_n: DEFAULT_GRID_N,
            error_cap: DEFAULT_ERROR_CAP,
            source: ScoreSource::Calibrated,
            hard_threshold: DEFAULT_HARD_THRESHOLD,
            grade_max: DEFAULT_GRADE_MAX,
            binary_threshold: None,
        }
    }
}

impl StageConfig for TuneConfig {
    const REQUIRED: &'static [&'static str] = &[];

    fn defaults() -> Map<String, Value> {
        object(json!(TuneConfig::default()))
    }

    fn validate(&self) -> Result<(), String> {
        if self.grid_n < 2 {
            return Err("grid_n must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.error_cap) {
            return Err("error_cap must be in [0, 1]".into());
        }
        validate_binary_threshold(self.grade_max, self.binary_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub split: SplitName,
    /// Decision threshold for precision, recall, F1 and accuracy.
    pub threshold: f64,
    pub hard_threshold: f64,
    pub gain_base: f64,
    pub star_threshold: u32,
    pub p4_denominator: P4Denominator,
    pub grade_max: u32,
    pub binary_threshold: Option<u32>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            split: SplitName::Validation,
            threshold: 0.5,
            hard_threshold: DEFAULT_HARD_THRESHOLD,
            gain_base: 2.0,
            star_threshold: DEFAULT_STAR_THRESHOLD,
            p4_denominator: P4Denominator::Fixed,
            grade_max: DEFAULT_GRADE_MAX,
            binary_threshold: None,
        }
    }
}

impl StageConfig for EvaluateConfig {
    const REQUIRED: &'static [&'static str] = &[];

    fn defaults() -> Map<String, Value> {
        object(json!(EvaluateConfig::default()))
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.gain_base > 1.0) {
            return Err("gain_base must exceed 1".into());
        }
        validate_binary_threshold(self.grade_max, self.binary_threshold)
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    }
}

fn validate_binary_threshold(grade_max: u32, t: Option<u32>) -> Result<(), String> {
    match t {
        Some(t) if t == 0 || t > grade_max => Err("binary_threshold must be in 1..=grade_max".into()),
        _ => Ok(()),
    }
}

/// Reads an optional config file, overlays flag values and applies
/// defaults.
pub fn resolve_config<T: StageConfig>(file: Option<&Path>, overrides: Map<String, Value>) -> Result<T> {
    let mut value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Syntax(e.to_string()))?
        }
        None => Value::Object(Map::new()),
    };
    if let Value::Object(m) = &mut value {
        m.extend(overrides);
    }
    Ok(load_config_value(value)?)
}

// ---- file helpers ---------------------------------------------------------

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    std::fs::write(path, canonical_json_pretty(value)).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn record_input(m: &mut RunManifest, path: &Path) -> Result<()> {
    m.add_input(path).map_err(|e| Error::io(path, e))
}

fn finish_manifest(
    mut manifest: RunManifest,
    metrics: &MetricMap,
    outputs: &[PathBuf],
    path: PathBuf,
) -> Result<(RunManifest, PathBuf)> {
    manifest.metrics = metrics_to_value(metrics);
    for o in outputs {
        manifest.add_output(o).map_err(|e| Error::io(o, e))?;
    }
    manifest.write(&path).map_err(|e| Error::io(&path, e))?;
    Ok((manifest, path))
}

fn collapse_threshold(grade_max: u32, binary_threshold: Option<u32>) -> u32 {
    binary_threshold.unwrap_or(grade_max)
}

fn load_data(dir: &Path, grade_max: u32, binary_threshold: Option<u32>) -> Result<Corpus> {
    Ok(load_corpus(dir, grade_max, collapse_threshold(grade_max, binary_threshold))?)
}

// ---- scoring --------------------------------------------------------------

/// Projects each distinct rule and clause once and scores pairs by cosine.
pub struct Scorer<'a> {
    store: &'a EmbeddingStore,
    params: &'a ProjectionParams,
    queries: HashMap<String, Vec<f64>>,
    clauses: HashMap<String, Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(store: &'a EmbeddingStore, params: &'a ProjectionParams) -> Self {
        Scorer {
            store,
            params,
            queries: HashMap::new(),
            clauses: HashMap::new(),
        }
    }

    pub fn score(&mut self, query_id: &str, clause_id: &str) -> Result<f64> {
        if !self.queries.contains_key(query_id) {
            let z = self.params.project(self.store.vector(Kind::Rule, query_id)?, Side::Query)?;
            self.queries.insert(query_id.to_string(), z);
        }
        if !self.clauses.contains_key(clause_id) {
            let z = self.params.project(self.store.vector(Kind::Clause, clause_id)?, Side::Clause)?;
            self.clauses.insert(clause_id.to_string(), z);
        }
        Ok(cosine(&self.queries[query_id], &self.clauses[clause_id])?)
    }

    pub fn score_pairs(&mut self, pairs: &[LabeledPair]) -> Result<Vec<f64>> {
        pairs.iter().map(|p| self.score(&p.query_id, &p.clause_id)).collect()
    }
}

/// Similarity and both head probabilities of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub score: f64,
    pub p_theta: f64,
    pub p_phi: f64,
}

impl PairScore {
    pub fn new(score: f64, heads: &Heads) -> Self {
        PairScore {
            score,
            p_theta: calibrate_probability(score, &heads.calibration),
            p_phi: fuzzy_probability(&fuzzy_forward(score, &heads.fuzzy)),
        }
    }

    pub fn value(&self, source: ScoreSource) -> f64 {
        match source {
            ScoreSource::Calibrated => self.p_theta,
            ScoreSource::Fuzzy => self.p_phi,
            ScoreSource::Similarity => self.score,
        }
    }
}

/// Reads a `PRJ1` checkpoint and returns it with its SHA-256.
pub fn load_rank_checkpoint(path: &Path) -> Result<(ProjectionParams, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = read_checkpoint(bytes.as_slice())?;
    Ok((params, sha256_hex(&bytes)))
}

/// Heads plus the projection their scores come from.
#[derive(Debug, Clone)]
pub struct LoadedHeads {
    pub checkpoint: HeadsCheckpoint,
    pub heads: Heads,
    pub params: ProjectionParams,
    pub rank_path: PathBuf,
}

/// Loads a heads file and its rank checkpoint, which is looked up next to
/// the heads file unless `rank_override` is given. The checkpoint digest
/// must match the one recorded in the heads file.
pub fn load_heads(path: &Path, rank_override: Option<&Path>) -> Result<LoadedHeads> {
    let checkpoint: HeadsCheckpoint = read_json(path)?;
    let heads = checkpoint.heads()?;
    let rank_path = match (rank_override, &checkpoint.rank_checkpoint) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(r)) => path.parent().unwrap_or(Path::new(".")).join(&r.file),
        (None, None) => {
            return Err(Error::Usage(format!(
                "{} does not name a rank checkpoint; pass --rank-ckpt",
                path.display()
            )))
        }
    };
    let (params, sha) = load_rank_checkpoint(&rank_path)?;
    if let Some(r) = &checkpoint.rank_checkpoint {
        if r.sha256 != sha {
            return Err(Error::Invalid(format!(
                "{} does not match the rank checkpoint recorded in {}",
                rank_path.display(),
                path.display()
            )));
        }
    }
    Ok(LoadedHeads {
        checkpoint,
        heads,
        params,
        rank_path,
    })
}

/// Contents of `thresholds.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsFile {
    pub source: ScoreSource,
    pub tuned: TunedThresholds,
    pub validation: TriageReport,
}

fn insert_triage(prefix: &str, r: &TriageReport, out: &mut MetricMap) {
    out.insert(format!("{prefix}coverage"), r.coverage);
    out.insert(format!("{prefix}auto_error"), r.auto_error);
    out.insert(format!("{prefix}baseline_error"), r.baseline_error);
    insert_counts(prefix, &r.counts, out);
    out.insert(format!("{prefix}empty_auto"), f64::from(u8::from(r.empty_auto)));
}

fn insert_counts(prefix: &str, c: &BandCounts, out: &mut MetricMap) {
    out.insert(format!("{prefix}auto_noncompliant"), c.auto_noncompliant as f64);
    out.insert(format!("{prefix}review"), c.review as f64);
    out.insert(format!("{prefix}auto_compliant"), c.auto_compliant as f64);
}

// ---- ingest ---------------------------------------------------------------

/// Validates one dataset file and writes its normalized form as
/// `{split}.{schema}.jsonl` in `out`. With `embeddings`, every id must
/// resolve and the store is copied to `out` as well.
pub fn ingest(
    dataset: &Path,
    schema: Schema,
    split: Option<SplitName>,
    embeddings: Option<&Path>,
    grade_max: u32,
    out: &Path,
) -> Result<StageOutcome> {
    let split = match split {
        Some(s) => s,
        None => split_from_file_name(dataset).ok_or_else(|| {
            Error::Usage(format!(
                "cannot infer the split from {}; pass --split",
                dataset.display()
            ))
        })?,
    };
    let parsed = parse_dataset(dataset, schema, split, grade_max)?;
    ensure_dir(out)?;
    let config = json!({
        "schema": schema_name(schema),
        "split": split,
        "grade_max": grade_max,
    });
    let mut manifest = RunManifest::new(Stage::Ingest, None, config);
    record_input(&mut manifest, dataset)?;
    let mut outputs = Vec::new();

    if let Some(emb) = embeddings {
        let store = parse_embeddings(emb)?;
        for g in &parsed.groups {
            store.vector(Kind::Rule, &g.query_id)?;
            for c in &g.candidate_ids {
                store.vector(Kind::Clause, c)?;
            }
        }
        for p in &parsed.pairs {
            store.vector(Kind::Rule, &p.query_id)?;
            store.vector(Kind::Clause, &p.clause_id)?;
        }
        record_input(&mut manifest, emb)?;
        let dst = out.join(EMBEDDINGS_FILE);
        let f = File::create(&dst).map_err(|e| Error::io(&dst, e))?;
        write_embeddings(BufWriter::new(f), &store).map_err(|e| Error::io(&dst, e))?;
        outputs.push(dst);
    }

    let dst = out.join(match schema {
        Schema::Graded => split.graded_file(),
        Schema::Binary => split.binary_file(),
    });
    let f = File::create(&dst).map_err(|e| Error::io(&dst, e))?;
    match schema {
        Schema::Graded => crate::data::write_graded(BufWriter::new(f), &parsed.groups),
        Schema::Binary => write_binary(BufWriter::new(f), &parsed.pairs),
    }
    .map_err(|e| Error::io(&dst, e))?;
    outputs.push(dst);

    let mut metrics = MetricMap::new();
    metrics.insert("n_groups".into(), parsed.groups.len() as f64);
    metrics.insert("n_pairs".into(), parsed.pairs.len() as f64);
    metrics.insert(
        "n_candidates".into(),
        parsed.groups.iter().map(|g| g.candidate_ids.len()).sum::<usize>() as f64,
    );
    metrics.insert("n_positives".into(), parsed.positive_count() as f64);
    let summary = format!(
        "ingest: {} {} split, {} groups, {} pairs",
        schema_name(schema),
        split,
        parsed.groups.len(),
        parsed.pairs.len()
    );
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &outputs, out.join(manifest_file(Stage::Ingest)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: false,
    })
}

fn schema_name(schema: Schema) -> &'static str {
    match schema {
        Schema::Graded => "graded",
        Schema::Binary => "binary",
    }
}

fn split_from_file_name(path: &Path) -> Option<SplitName> {
    let name = file_name(path);
    SplitName::ALL
        .into_iter()
        .find(|s| name == s.graded_file() || name == s.binary_file())
}

// ---- synthetic ------------------------------------------------------------

pub fn gen_synthetic(config: &SyntheticConfig, seed: u64, out: &Path) -> Result<StageOutcome> {
    let corpus = generate_synthetic(config, seed)?;
    let outputs = write_corpus(out, &corpus)?;
    let manifest = RunManifest::new(Stage::Synthetic, Some(seed), config.to_value());
    let mut metrics = MetricMap::new();
    for name in SplitName::ALL {
        let s = corpus.split(name);
        metrics.insert(format!("{name}.n_groups"), s.groups.len() as f64);
        metrics.insert(format!("{name}.n_pairs"), s.pairs.len() as f64);
        metrics.insert(format!("{name}.n_positives"), s.positive_count() as f64);
    }
    let positives: usize = SplitName::ALL.iter().map(|&n| corpus.split(n).positive_count()).sum();
    let summary = format!(
        "gen-synthetic: {} queries, {} pairs, {} positives",
        config.n_queries,
        config.total_pairs(),
        positives
    );
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &outputs, out.join(manifest_file(Stage::Synthetic)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: false,
    })
}

// ---- rank -----------------------------------------------------------------

pub fn train_rank_stage(config: &RankTrainConfig, data: &Path, out: &Path) -> Result<StageOutcome> {
    let corpus = load_data(data, config.grade_max, None)?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new(Stage::Rank, Some(config.seed), config.to_value());
    for f in &corpus.files {
        record_input(&mut manifest, f)?;
    }
    let (mut params, log) = train_rank(&corpus.train, &corpus.validation, &corpus.store, config)?;
    round_to_checkpoint_precision(&mut params);

    let ckpt = out.join(RANK_CHECKPOINT_FILE);
    let f = File::create(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    write_checkpoint(f, &params).map_err(|e| Error::io(&ckpt, e))?;
    let sidecar = out.join(RANK_SIDECAR_FILE);
    let meta = CheckpointMeta {
        format: "PRJ1".into(),
        config_digest: manifest.config_digest.clone(),
        seed: config.seed,
        dim_base: params.dim_base(),
        dim: params.dim(),
    };
    write_json(&sidecar, &serde_json::to_value(&meta).expect("serializable"))?;

    let mut metrics = MetricMap::new();
    for e in &log.epochs {
        metrics.insert(format!("epoch_{}.train_loss", e.epoch), e.train_loss);
        if let Some(v) = e.val_ndcg_at_5 {
            metrics.insert(format!("epoch_{}.validation.ndcg_at_5", e.epoch), v);
        }
    }
    metrics.insert("best_epoch".into(), log.best_epoch as f64);
    metrics.insert("skipped_groups".into(), log.skipped_groups as f64);
    let mut headline = String::new();
    if !corpus.validation.groups.is_empty() {
        let m = evaluate_ranking_with(
            &corpus.validation.groups,
            &corpus.store,
            &params,
            config.gain_base,
            DEFAULT_STAR_THRESHOLD,
            P4Denominator::Fixed,
        )?;
        m.insert_into("validation.", &mut metrics);
        headline = format!(", validation NDCG@5 {:.4}", m.ndcg_at_5);
    }
    let summary = format!(
        "train-rank: {} epochs, best epoch {}{}",
        log.epochs.len(),
        log.best_epoch,
        headline
    );
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &[ckpt, sidecar], out.join(manifest_file(Stage::Rank)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: false,
    })
}

// ---- classify -------------------------------------------------------------

fn labels(pairs: &[LabeledPair]) -> Vec<u8> {
    pairs.iter().map(|p| p.label).collect()
}

fn insert_head_metrics(
    prefix: &str,
    scores: &[PairScore],
    labels: &[u8],
    threshold: f64,
    out: &mut MetricMap,
) -> Result<()> {
    let p_theta: Vec<f64> = scores.iter().map(|s| s.p_theta).collect();
    let p_phi: Vec<f64> = scores.iter().map(|s| s.p_phi).collect();
    let sim: Vec<f64> = scores.iter().map(|s| s.score).collect();
    binary_metrics(&p_theta, labels, threshold)?.insert_into(&format!("{prefix}calibrated."), out);
    binary_metrics(&p_phi, labels, threshold)?.insert_into(&format!("{prefix}fuzzy."), out);
    if let Some(a) = auc(&sim, labels) {
        out.insert(format!("{prefix}similarity.auc"), a);
    }
    Ok(())
}

pub fn train_classify_stage(
    config: &ClassifyTrainConfig,
    rank_ckpt: &Path,
    data: &Path,
    out: &Path,
) -> Result<StageOutcome> {
    let corpus = load_data(data, config.grade_max, config.binary_threshold)?;
    let (params, rank_sha) = load_rank_checkpoint(rank_ckpt)?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new(Stage::Classify, Some(config.seed), config.to_value());
    record_input(&mut manifest, rank_ckpt)?;
    for f in &corpus.files {
        record_input(&mut manifest, f)?;
    }

    let mut scorer = Scorer::new(&corpus.store, &params);
    let train_scores = scorer.score_pairs(&corpus.train.pairs)?;
    let (cal, fuzzy, log) = train_classifier(&corpus.train.pairs, &train_scores, config)?;
    let checkpoint = HeadsCheckpoint::new(
        &cal,
        &fuzzy,
        manifest.config_digest.clone(),
        config.seed,
        Some(CheckpointRef {
            file: file_name(rank_ckpt),
            sha256: rank_sha,
        }),
    );
    let heads_path = out.join(HEADS_FILE);
    write_json(&heads_path, &serde_json::to_value(&checkpoint).expect("serializable"))?;

    let heads = checkpoint.heads()?;
    let mut metrics = MetricMap::new();
    for e in &log.epochs {
        metrics.insert(format!("epoch_{}.loss_theta", e.epoch), e.loss_theta);
        metrics.insert(format!("epoch_{}.loss_phi", e.epoch), e.loss_phi);
    }
    metrics.insert("alpha".into(), cal.alpha);
    metrics.insert("beta".into(), cal.beta);
    metrics.insert("steps".into(), log.steps as f64);
    let mut headline = String::new();
    if !corpus.validation.pairs.is_empty() {
        let scores: Vec<PairScore> = scorer
            .score_pairs(&corpus.validation.pairs)?
            .into_iter()
            .map(|s| PairScore::new(s, &heads))
            .collect();
        insert_head_metrics("validation.", &scores, &labels(&corpus.validation.pairs), 0.5, &mut metrics)?;
        if let Some(a) = metrics.get("validation.calibrated.auc") {
            headline = format!(", validation AUC {a:.4}");
        }
    }
    let summary = format!(
        "train-classify: {} steps, alpha {:.4}, beta {:.4}{}",
        log.steps, cal.alpha, cal.beta, headline
    );
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &[heads_path], out.join(manifest_file(Stage::Classify)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: false,
    })
}

// ---- tune -----------------------------------------------------------------

pub fn tune_stage(
    config: &TuneConfig,
    heads_path: &Path,
    rank_override: Option<&Path>,
    data: &Path,
    out: &Path,
) -> Result<StageOutcome> {
    let loaded = load_heads(heads_path, rank_override)?;
    let corpus = load_data(data, config.grade_max, config.binary_threshold)?;
    ensure_dir(out)?;
    let mut manifest =
        RunManifest::new(Stage::Tune, Some(loaded.checkpoint.seed), config.to_value());
    record_input(&mut manifest, heads_path)?;
    record_input(&mut manifest, &loaded.rank_path)?;
    for f in &corpus.files {
        record_input(&mut manifest, f)?;
    }

    let pairs = &corpus.validation.pairs;
    let mut scorer = Scorer::new(&corpus.store, &loaded.params);
    let values: Vec<f64> = scorer
        .score_pairs(pairs)?
        .into_iter()
        .map(|s| PairScore::new(s, &loaded.heads).value(config.source))
        .collect();
    let ys = labels(pairs);
    let tuned = tune_thresholds(&values, &ys, config.grid_n, config.error_cap, config.source.domain())?;
    let report = evaluate_triage(&values, &ys, &tuned.thresholds, config.hard_threshold)?;
    let file = ThresholdsFile {
        source: config.source,
        tuned: tuned.clone(),
        validation: report.clone(),
    };
    let path = out.join(THRESHOLDS_FILE);
    write_json(&path, &serde_json::to_value(&file).expect("serializable"))?;

    manifest.thresholds = Some(tuned.thresholds);
    let mut metrics = MetricMap::new();
    insert_triage("validation.", &report, &mut metrics);
    metrics.insert("infeasible".into(), f64::from(u8::from(tuned.infeasible)));
    let summary = format!(
        "tune-thresholds: low {} high {}, coverage {:.4}, auto error {:.4}{}",
        tuned.thresholds.low(),
        tuned.thresholds.high(),
        tuned.coverage,
        tuned.auto_error,
        if tuned.infeasible { " (infeasible)" } else { "" }
    );
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &[path], out.join(manifest_file(Stage::Tune)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: tuned.infeasible,
    })
}

// ---- evaluate -------------------------------------------------------------

/// Artifact locations for [`evaluate_stage`]; `None` means the default
/// file inside the run directory (heads and thresholds are optional there).
#[derive(Debug, Clone, Default)]
pub struct EvaluatePaths {
    pub data: Option<PathBuf>,
    pub rank_ckpt: Option<PathBuf>,
    pub heads: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
}

pub fn evaluate_manifest_file(split: SplitName) -> String {
    format!("manifest.evaluate-{split}.json")
}

pub fn evaluate_stage(config: &EvaluateConfig, paths: &EvaluatePaths, out: &Path) -> Result<StageOutcome> {
    let data = paths.data.clone().unwrap_or_else(|| out.join(DATA_DIR));
    let optional = |given: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        given.clone().or_else(|| Some(out.join(name)).filter(|p| p.exists()))
    };
    let heads_path = optional(&paths.heads, HEADS_FILE);
    let thresholds_path = optional(&paths.thresholds, THRESHOLDS_FILE);
    let corpus = load_data(&data, config.grade_max, config.binary_threshold)?;

    let (params, rank_path, loaded) = match &heads_path {
        Some(h) => {
            let l = load_heads(h, paths.rank_ckpt.as_deref())?;
            (l.params.clone(), l.rank_path.clone(), Some(l))
        }
        None => {
            let p = paths.rank_ckpt.clone().unwrap_or_else(|| out.join(RANK_CHECKPOINT_FILE));
            (load_rank_checkpoint(&p)?.0, p, None)
        }
    };
    let thresholds: Option<ThresholdsFile> = thresholds_path.as_deref().map(read_json).transpose()?;
    if thresholds.is_some() && loaded.is_none() {
        return Err(Error::Usage("thresholds need a heads file".into()));
    }
    ensure_dir(out)?;
    let seed = loaded.as_ref().map(|l| l.checkpoint.seed);
    let mut manifest = RunManifest::new(Stage::Evaluate, seed, config.to_value());
    record_input(&mut manifest, &rank_path)?;
    if let Some(h) = &heads_path {
        record_input(&mut manifest, h)?;
    }
    if let Some(t) = &thresholds_path {
        record_input(&mut manifest, t)?;
    }
    for f in &corpus.files {
        record_input(&mut manifest, f)?;
    }

    let split = corpus.split(config.split);
    let mut metrics = MetricMap::new();
    let mut parts = vec![format!("evaluate {}", config.split)];
    if !split.groups.is_empty() {
        let m = evaluate_ranking_with(
            &split.groups,
            &corpus.store,
            &params,
            config.gain_base,
            config.star_threshold,
            config.p4_denominator,
        )?;
        m.insert_into("rank.", &mut metrics);
        parts.push(format!("NDCG@5 {:.4}", m.ndcg_at_5));
    }
    if let (Some(l), false) = (&loaded, split.pairs.is_empty()) {
        let mut scorer = Scorer::new(&corpus.store, &params);
        let scores: Vec<PairScore> = scorer
            .score_pairs(&split.pairs)?
            .into_iter()
            .map(|s| PairScore::new(s, &l.heads))
            .collect();
        let ys = labels(&split.pairs);
        insert_head_metrics("", &scores, &ys, config.threshold, &mut metrics)?;
        if let Some(a) = metrics.get("calibrated.auc") {
            parts.push(format!("AUC {a:.4}"));
        }
        if let Some(t) = &thresholds {
            let values: Vec<f64> = scores.iter().map(|s| s.value(t.source)).collect();
            let r = evaluate_triage(&values, &ys, &t.tuned.thresholds, config.hard_threshold)?;
            insert_triage("triage.", &r, &mut metrics);
            manifest.thresholds = Some(t.tuned.thresholds);
            parts.push(format!("coverage {:.4} auto error {:.4}", r.coverage, r.auto_error));
        }
    }
    if metrics.is_empty() {
        return Err(Error::Triage(crate::triage::TriageError::EmptySet));
    }
    let report = out.join(format!("metrics.{}.json", config.split));
    write_json(&report, &metrics_to_value(&metrics))?;
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &[report], out.join(evaluate_manifest_file(config.split)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary: parts.join(", "),
        infeasible: false,
    })
}

// ---- triage ---------------------------------------------------------------

/// One line of a pairs file; `label` is optional.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    query_id: String,
    clause_id: String,
    label: Option<i64>,
}

/// Reads `{"query_id","clause_id"[,"label"]}` lines.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String, Option<u8>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let n = i + 1;
        let p: PairLine = serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
            line: n,
            message: e.to_string(),
        })?;
        let label = match p.label {
            None => None,
            Some(v @ (0 | 1)) => Some(v as u8),
            Some(v) => return Err(DataError::InvalidLabel { line: n, value: v }.into()),
        };
        if !seen.insert((p.query_id.clone(), p.clause_id.clone())) {
            return Err(DataError::DuplicatePair {
                line: n,
                query_id: p.query_id,
                clause_id: p.clause_id,
            }
            .into());
        }
        out.push((p.query_id, p.clause_id, label));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct TriagePaths {
    pub heads: PathBuf,
    pub thresholds: PathBuf,
    pub pairs: PathBuf,
    pub audit: PathBuf,
    /// Defaults to `embeddings.emb1` next to the pairs file.
    pub embeddings: Option<PathBuf>,
    pub rank_ckpt: Option<PathBuf>,
}

/// Decides every pair and writes the audit trail; the manifest goes next
/// to the audit file as `manifest.triage.json`.
pub fn triage_stage(paths: &TriagePaths) -> Result<StageOutcome> {
    let loaded = load_heads(&paths.heads, paths.rank_ckpt.as_deref())?;
    let t: ThresholdsFile = read_json(&paths.thresholds)?;
    let emb_path = paths.embeddings.clone().unwrap_or_else(|| {
        paths.pairs.parent().unwrap_or(Path::new(".")).join(EMBEDDINGS_FILE)
    });
    let store = parse_embeddings(&emb_path)?;
    let pairs = read_pairs(&paths.pairs)?;
    let thresholds: TriageThresholds = t.tuned.thresholds;

    let mut scorer = Scorer::new(&store, &loaded.params);
    let mut scored = Vec::with_capacity(pairs.len());
    let mut counts = BandCounts::default();
    for (q, c, _) in &pairs {
        let s = PairScore::new(scorer.score(q, c)?, &loaded.heads);
        let d = decide(s.value(t.source), &thresholds)?;
        counts.add(d);
        scored.push((s, d));
    }

    let config = json!({ "source": t.source });
    let mut manifest = RunManifest::new(Stage::Triage, Some(loaded.checkpoint.seed), config);
    for p in [&paths.heads, &loaded.rank_path, &paths.thresholds, &paths.pairs, &emb_path] {
        record_input(&mut manifest, p)?;
    }
    manifest.thresholds = Some(thresholds);
    let mut metrics = MetricMap::new();
    metrics.insert("n_pairs".into(), pairs.len() as f64);
    insert_counts("", &counts, &mut metrics);
    if !pairs.is_empty() && pairs.iter().all(|p| p.2.is_some()) {
        let values: Vec<f64> = scored.iter().map(|(s, _)| s.value(t.source)).collect();
        let ys: Vec<u8> = pairs.iter().map(|p| p.2.unwrap_or(0)).collect();
        let r = evaluate_triage(&values, &ys, &thresholds, t.validation.hard_threshold)?;
        insert_triage("labeled.", &r, &mut metrics);
    }
    manifest.metrics = metrics_to_value(&metrics);
    let digest = manifest.seal();

    if let Some(dir) = paths.audit.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let f = File::create(&paths.audit).map_err(|e| Error::io(&paths.audit, e))?;
    let io = |e| Error::io(&paths.audit, e);
    let mut w = AuditWriter::new(BufWriter::new(f), AuditHeader::new(digest, t.source, thresholds))
        .map_err(io)?;
    for ((q, c, _), (s, d)) in pairs.iter().zip(&scored) {
        w.emit(q, c, s.score, s.p_theta, s.p_phi, *d).map_err(io)?;
    }
    w.finish().map_err(io)?;

    let dir = paths.audit.parent().unwrap_or(Path::new("."));
    let summary = format!(
        "triage: {} pairs, {} auto-noncompliant, {} review, {} auto-compliant",
        pairs.len(),
        counts.auto_noncompliant,
        counts.review,
        counts.auto_compliant
    );
    let (manifest, manifest_path) = finish_manifest(
        manifest,
        &metrics,
        std::slice::from_ref(&paths.audit),
        dir.join(manifest_file(Stage::Triage)),
    )?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: false,
    })
}

// ---- sweep ----------------------------------------------------------------

/// Per-stage config documents for a sweep; `seed` is filled in per run.
#[derive(Debug, Clone, Default)]
pub struct SweepConfigs {
    pub rank: Map<String, Value>,
    pub classify: Map<String, Value>,
    pub tune: TuneConfig,
    pub evaluate: EvaluateConfig,
}

/// Trains, tunes and evaluates once per seed over fixed data; run `s`
/// lives in `out/seed-s`. The aggregate goes to `sweep.json`.
pub fn sweep_stage(seeds: &[u64], configs: &SweepConfigs, data: &Path, out: &Path) -> Result<StageOutcome> {
    ensure_dir(out)?;
    let with_seed = |m: &Map<String, Value>, seed: u64| {
        let mut m = m.clone();
        m.insert("seed".into(), Value::from(seed));
        Value::Object(m)
    };
    let report = run_seed_sweep(seeds, |seed| -> Result<MetricMap> {
        let dir = out.join(format!("seed-{seed}"));
        let rank: RankTrainConfig = load_config_value(with_seed(&configs.rank, seed))?;
        let classify: ClassifyTrainConfig = load_config_value(with_seed(&configs.classify, seed))?;
        train_rank_stage(&rank, data, &dir)?;
        train_classify_stage(&classify, &dir.join(RANK_CHECKPOINT_FILE), data, &dir)?;
        let tuned = tune_stage(&configs.tune, &dir.join(HEADS_FILE), None, data, &dir)?;
        let paths = EvaluatePaths {
            data: Some(data.to_path_buf()),
            ..EvaluatePaths::default()
        };
        let eval = evaluate_stage(&configs.evaluate, &paths, &dir)?;
        let mut m = eval.metrics;
        m.insert("tune.infeasible".into(), f64::from(u8::from(tuned.infeasible)));
        Ok(m)
    })
    .map_err(|e| match e {
        crate::audit::sweep::SweepError::Stage { source, .. } => source,
        other => Error::Usage(other.to_string()),
    })?;

    let config = json!({
        "rank": Value::Object(configs.rank.clone()),
        "classify": Value::Object(configs.classify.clone()),
        "tune": configs.tune.to_value(),
        "evaluate": configs.evaluate.to_value(),
    });
    let mut manifest = RunManifest::new(Stage::Sweep, None, config);
    manifest.seed_set = seeds.to_vec();
    for f in load_data(data, configs.evaluate.grade_max, configs.evaluate.binary_threshold)?.files {
        record_input(&mut manifest, &f)?;
    }
    let path = out.join(SWEEP_FILE);
    write_json(&path, &report.to_value())?;

    let mut metrics = MetricMap::new();
    for (k, v) in &report.mean {
        metrics.insert(format!("mean.{k}"), *v);
    }
    for (k, v) in &report.min {
        metrics.insert(format!("min.{k}"), *v);
    }
    for (k, v) in &report.max {
        metrics.insert(format!("max.{k}"), *v);
    }
    let headline = report
        .mean
        .get("rank.ndcg_at_5")
        .map(|v| format!(", mean NDCG@5 {v:.4}"))
        .unwrap_or_default();
    let summary = format!("sweep: {} seeds{}", report.per_seed.len(), headline);
    let (manifest, manifest_path) =
        finish_manifest(manifest, &metrics, &[path], out.join(manifest_file(Stage::Sweep)))?;
    Ok(StageOutcome {
        manifest,
        manifest_path,
        metrics,
        summary,
        infeasible: false,
    })
}
