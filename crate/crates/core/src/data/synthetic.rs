//! Seeded synthetic corpora with planted graded structure.
//!
//! Every clause is generated against its own rule: a clause of grade `g`
//! starts at cosine `MAX_COSINE * g / grade_max` to the rule vector and is
//! then perturbed by isotropic Gaussian noise of total scale `noise`. With
//! `noise = 0` the clause–rule cosine is a strictly increasing function of
//! the grade, so the graded ranking is exactly recoverable.
//!
//! Positives (top grade) are planted at exactly `round(rate * pairs)`
//! slots chosen by a seeded permutation; the remaining slots draw their
//! grade from `grade_weights`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    write_binary, write_embeddings, write_graded, Corpus, DataError, DatasetSplit, EmbeddingRecord,
    EmbeddingStore, Kind, LabeledPair, QueryGroup, SplitName, DEFAULT_GRADE_MAX, EMBEDDINGS_FILE,
};
use crate::audit::{SeededRng, StageConfig};

const MAX_COSINE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Base embedding dimension.
    pub dim: usize,
    pub n_queries: usize,
    pub clauses_per_query: usize,
    pub grade_max: u32,
    /// Relative frequency of grades `0..grade_max` among non-positive slots.
    pub grade_weights: Vec<f64>,
    pub positive_rate: f64,
    pub noise: f64,
    /// Train / validation / test fractions of the queries.
    pub split_fractions: [f64; 3],
    /// Grade at or above which a pair is labeled 1; defaults to `grade_max`.
    pub binary_threshold: Option<u32>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 64,
            n_queries: 200,
            clauses_per_query: 20,
            grade_max: DEFAULT_GRADE_MAX,
            grade_weights: vec![0.55, 0.2, 0.15, 0.1],
            positive_rate: 0.006,
            noise: 0.3,
            split_fractions: [0.6, 0.2, 0.2],
            binary_threshold: None,
        }
    }
}

impl StageConfig for SyntheticConfig {
    const REQUIRED: &'static [&'static str] = &[];

    fn defaults() -> Map<String, Value> {
        match json!(SyntheticConfig::default()) {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.dim < 2 {
            return Err("dim must be at least 2".into());
        }
        if self.n_queries == 0 || self.clauses_per_query == 0 {
            return Err("n_queries and clauses_per_query must be positive".into());
        }
        if self.grade_max == 0 {
            return Err("grade_max must be positive".into());
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(format!("positive_rate {} not in (0, 1)", self.positive_rate));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err("noise must be finite and non-negative".into());
        }
        if self.grade_weights.len() != self.grade_max as usize {
            return Err(format!(
                "grade_weights needs {} entries (grades 0..{})",
                self.grade_max, self.grade_max
            ));
        }
        if self.grade_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.grade_weights.iter().sum::<f64>() <= 0.0
        {
            return Err("grade_weights must be non-negative with a positive sum".into());
        }
        let total: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|f| *f < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err("split_fractions must be non-negative and sum to 1".into());
        }
        if let Some(t) = self.binary_threshold {
            if t == 0 || t > self.grade_max {
                return Err("binary_threshold must be in 1..=grade_max".into());
            }
        }
        Ok(())
    }
}

impl SyntheticConfig {
    pub fn total_pairs(&self) -> usize {
        self.n_queries * self.clauses_per_query
    }

    pub fn effective_binary_threshold(&self) -> u32 {
        self.binary_threshold.unwrap_or(self.grade_max)
    }
}

fn unit_gaussian(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit vector orthogonal to the unit vector `q`.
fn orthogonal_unit(rng: &mut SeededRng, q: &[f64]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..q.len()).map(|_| rng.normal()).collect();
        let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
        for (x, qi) in v.iter_mut().zip(q) {
            *x -= dot * qi;
        }
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn sample_grade(rng: &mut SeededRng, weights: &[f64]) -> u32 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (g, &w) in weights.iter().enumerate() {
        if u < w {
            return g as u32;
        }
        u -= w;
    }
    // rounding fell off the end; take the last grade with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32
}

/// Generates an embedding store and train/validation/test splits.
///
/// Draw order from `SeededRng::new(seed)`: positive-slot permutation, then
/// per query its rule vector followed by each candidate's grade, direction
/// and noise. Queries are assigned to splits contiguously in generation
/// order.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Corpus, DataError> {
    config.validate().map_err(DataError::InvalidConfig)?;
    let mut rng = SeededRng::new(seed);
    let total = config.total_pairs();
    let n_pos = (config.positive_rate * total as f64).round() as usize;
    let mut positive = vec![false; total];
    for &slot in rng.permutation(total).iter().take(n_pos) {
        positive[slot] = true;
    }

    let dim = config.dim;
    let threshold = config.effective_binary_threshold();
    let mut store = EmbeddingStore::new(dim);
    let mut clause_records = Vec::with_capacity(total);
    let mut groups = Vec::with_capacity(config.n_queries);
    for qi in 0..config.n_queries {
        let q = unit_gaussian(&mut rng, dim);
        let query_id = format!("q{qi:05}");
        let mut candidate_ids = Vec::with_capacity(config.clauses_per_query);
        let mut grades = Vec::with_capacity(config.clauses_per_query);
        for ci in 0..config.clauses_per_query {
            let slot = qi * config.clauses_per_query + ci;
            let grade = if positive[slot] {
                config.grade_max
            } else {
                sample_grade(&mut rng, &config.grade_weights)
            };
            let cos = MAX_COSINE * f64::from(grade) / f64::from(config.grade_max);
            let sin = (1.0 - cos * cos).sqrt();
            let o = orthogonal_unit(&mut rng, &q);
            let scale = config.noise / (dim as f64).sqrt();
            let v: Vec<f32> = q
                .iter()
                .zip(&o)
                .map(|(qk, ok)| {
                    let e = rng.normal();
                    (cos * qk + sin * ok + scale * e) as f32
                })
                .collect();
            let clause_id = format!("c{qi:05}-{ci:03}");
            clause_records.push(EmbeddingRecord {
                id: clause_id.clone(),
                kind: Kind::Clause,
                vector: v,
            });
            candidate_ids.push(clause_id);
            grades.push(grade);
        }
        store.insert(EmbeddingRecord {
            id: query_id.clone(),
            kind: Kind::Rule,
            vector: q.iter().map(|&x| x as f32).collect(),
        })?;
        groups.push(QueryGroup {
            query_id,
            candidate_ids,
            grades,
        });
    }
    for rec in clause_records {
        store.insert(rec)?;
    }

    let n_train = (config.split_fractions[0] * config.n_queries as f64).round() as usize;
    let n_val = ((config.split_fractions[1] * config.n_queries as f64).round() as usize)
        .min(config.n_queries - n_train.min(config.n_queries));
    let n_train = n_train.min(config.n_queries);
    let mut splits = SplitName::ALL.map(DatasetSplit::empty);
    for (i, group) in groups.into_iter().enumerate() {
        let which = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        let split = &mut splits[which];
        for (cid, &g) in group.candidate_ids.iter().zip(&group.grades) {
            split.pairs.push(LabeledPair {
                query_id: group.query_id.clone(),
                clause_id: cid.clone(),
                label: u8::from(g >= threshold),
            });
        }
        split.groups.push(group);
    }
    let [train, validation, test] = splits;
    Ok(Corpus {
        store,
        train,
        validation,
        test,
        files: Vec::new(),
    })
}

/// Writes the corpus in the data-directory layout read by
/// [`super::load_corpus`]; returns the written paths in a fixed order.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Vec<PathBuf>, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut written = Vec::new();
    let emb = dir.join(EMBEDDINGS_FILE);
    let f = File::create(&emb).map_err(|e| DataError::io(&emb, e))?;
    write_embeddings(f, &corpus.store).map_err(|e| DataError::io(&emb, e))?;
    written.push(emb);
    for name in SplitName::ALL {
        let split = corpus.split(name);
        let graded = dir.join(name.graded_file());
        let f = File::create(&graded).map_err(|e| DataError::io(&graded, e))?;
        write_graded(BufWriter::new(f), &split.groups).map_err(|e| DataError::io(&graded, e))?;
        written.push(graded);
        let binary = dir.join(name.binary_file());
        let f = File::create(&binary).map_err(|e| DataError::io(&binary, e))?;
        write_binary(BufWriter::new(f), &split.pairs).map_err(|e| DataError::io(&binary, e))?;
        written.push(binary);
    }
    Ok(written)
}
