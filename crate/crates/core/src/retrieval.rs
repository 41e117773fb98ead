//! Dual projection of base embeddings and cosine scoring.

use serde::{Deserialize, Serialize};

use crate::audit::SeededRng;
use crate::data::{DataError, EmbeddingRecord, EmbeddingStore, Kind};

pub const DEFAULT_PROJECTION_DIM: usize = 512;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("vector length {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cosine of a zero-norm vector")]
    ZeroNormVector,
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: Kind, id: String },
    #[error("k must be at least 1")]
    InvalidK,
}

impl From<DataError> for RetrievalError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::UnknownId { id, kind } => RetrievalError::UnknownId { kind, id },
            other => unreachable!("store lookup returned {other}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Query,
    Clause,
}

/// `W_q, b_q, W_c, b_c` stored contiguously in that order, matrices
/// row-major `(dim × dim_base)`.
///
/// The flat layout doubles as the gradient container and the optimizer's
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    dim_base: usize,
    dim: usize,
    values: Vec<f64>,
}

impl ProjectionParams {
    pub fn zeros(dim_base: usize, dim: usize) -> Self {
        assert!(dim > 0 && dim_base > 0, "projection dims must be positive");
        ProjectionParams {
            dim_base,
            dim,
            values: vec![0.0; 2 * (dim * dim_base + dim)],
        }
    }

    /// Square identity projection with zero bias on both sides.
    pub fn identity(dim: usize) -> Self {
        let mut p = Self::zeros(dim, dim);
        for side in [Side::Query, Side::Clause] {
            let w = p.weight_mut(side);
            for i in 0..dim {
                w[i * dim + i] = 1.0;
            }
        }
        p
    }

    /// Gaussian weights with variance `1 / dim_base` and zero biases.
    ///
    /// Both sides start from the same draw, mirroring two heads initialized
    /// from one checkpoint; they diverge once trained. Uses `dim * dim_base`
    /// normal draws from `rng`.
    pub fn random_init(dim_base: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(dim_base, dim);
        let scale = 1.0 / (dim_base as f64).sqrt();
        let w: Vec<f64> = (0..dim * dim_base).map(|_| rng.normal() * scale).collect();
        p.weight_mut(Side::Query).copy_from_slice(&w);
        p.weight_mut(Side::Clause).copy_from_slice(&w);
        p
    }

    pub fn from_parts(
        dim_base: usize,
        dim: usize,
        w_q: &[f64],
        b_q: &[f64],
        w_c: &[f64],
        b_c: &[f64],
    ) -> Result<Self, RetrievalError> {
        let mut p = Self::zeros(dim_base, dim);
        for (src, side, bias) in [(w_q, Side::Query, false), (b_q, Side::Query, true), (w_c, Side::Clause, false), (b_c, Side::Clause, true)] {
            let dst = if bias { p.bias_mut(side) } else { p.weight_mut(side) };
            if src.len() != dst.len() {
                return Err(RetrievalError::DimMismatch {
                    expected: dst.len(),
                    got: src.len(),
                });
            }
            dst.copy_from_slice(src);
        }
        Ok(p)
    }

    pub fn dim_base(&self) -> usize {
        self.dim_base
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn block(&self, side: Side) -> usize {
        match side {
            Side::Query => 0,
            Side::Clause => self.dim * self.dim_base + self.dim,
        }
    }

    pub fn weight(&self, side: Side) -> &[f64] {
        let s = self.block(side);
        &self.values[s..s + self.dim * self.dim_base]
    }

    pub fn weight_mut(&mut self, side: Side) -> &mut [f64] {
        let s = self.block(side);
        let n = self.dim * self.dim_base;
        &mut self.values[s..s + n]
    }

    pub fn bias(&self, side: Side) -> &[f64] {
        let s = self.block(side) + self.dim * self.dim_base;
        &self.values[s..s + self.dim]
    }

    pub fn bias_mut(&mut self, side: Side) -> &mut [f64] {
        let s = self.block(side) + self.dim * self.dim_base;
        let n = self.dim;
        &mut self.values[s..s + n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// `W·h + b` for the chosen side.
    pub fn project(&self, h: &[f32], side: Side) -> Result<Vec<f64>, RetrievalError> {
        if h.len() != self.dim_base {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim_base,
                got: h.len(),
            });
        }
        let w = self.weight(side);
        let b = self.bias(side);
        Ok(w.chunks_exact(self.dim_base)
            .zip(b)
            .map(|(row, bias)| {
                row.iter().zip(h).map(|(wi, &hi)| wi * f64::from(hi)).sum::<f64>() + bias
            })
            .collect())
    }
}

pub fn project(
    e: &EmbeddingRecord,
    params: &ProjectionParams,
    side: Side,
) -> Result<Vec<f64>, RetrievalError> {
    params.project(&e.vector, side)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// `uᵀv / (‖u‖‖v‖)`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroNormVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub query_id: String,
    pub clause_id: String,
    pub score: f64,
}

/// Scores one (rule, clause) pair through the projection.
pub fn score_pair(
    query_id: &str,
    clause_id: &str,
    store: &EmbeddingStore,
    params: &ProjectionParams,
) -> Result<f64, RetrievalError> {
    let zq = params.project(store.vector(Kind::Rule, query_id)?, Side::Query)?;
    let zc = params.project(store.vector(Kind::Clause, clause_id)?, Side::Clause)?;
    cosine(&zq, &zc)
}

/// Scores every candidate and returns the top `min(k, n)` by descending
/// score, ties broken by ascending clause id.
pub fn rank_candidates(
    query_id: &str,
    candidate_ids: &[String],
    store: &EmbeddingStore,
    params: &ProjectionParams,
    k: usize,
) -> Result<Vec<ScoredPair>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let zq = params.project(store.vector(Kind::Rule, query_id)?, Side::Query)?;
    let mut scored = candidate_ids
        .iter()
        .map(|cid| {
            let zc = params.project(store.vector(Kind::Clause, cid)?, Side::Clause)?;
            Ok(ScoredPair {
                query_id: query_id.to_string(),
                clause_id: cid.clone(),
                score: cosine(&zq, &zc)?,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    sort_ranked(&mut scored);
    scored.truncate(k);
    Ok(scored)
}

/// Descending score, then ascending clause id.
pub fn sort_ranked(pairs: &mut [ScoredPair]) {
    pairs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.clause_id.cmp(&b.clause_id))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store_with(query: Vec<f32>, clauses: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(query.len());
        s.insert(EmbeddingRecord {
            id: "q".into(),
            kind: Kind::Rule,
            vector: query,
        })
        .unwrap();
        for (id, v) in clauses {
            s.insert(EmbeddingRecord {
                id: id.to_string(),
                kind: Kind::Clause,
                vector: v.clone(),
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn identity_projection_is_passthrough() {
        let p = ProjectionParams::identity(3);
        assert_eq!(p.project(&[1.5, -2.0, 0.25], Side::Query).unwrap(), vec![1.5, -2.0, 0.25]);
        assert_eq!(p.project(&[1.5, -2.0, 0.25], Side::Clause).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_weight_returns_bias() {
        let mut p = ProjectionParams::zeros(3, 2);
        p.bias_mut(Side::Clause).copy_from_slice(&[0.5, -7.0]);
        for h in [[1.0f32, 2.0, 3.0], [-9.0, 0.0, 4.0]] {
            assert_eq!(p.project(&h, Side::Clause).unwrap(), vec![0.5, -7.0]);
        }
    }

    #[test]
    fn projection_is_bitwise_repeatable() {
        let p = ProjectionParams::random_init(8, 5, &mut SeededRng::new(3));
        let h = [0.3f32, -1.0, 2.0, 0.0, 0.7, 0.1, -0.2, 9.0];
        let a = p.project(&h, Side::Query).unwrap();
        let b = p.project(&h, Side::Query).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            p.project(&h[..7], Side::Query),
            Err(RetrievalError::DimMismatch { expected: 8, got: 7 })
        );
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[3.0, -4.0], &[3.0, -4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), Err(RetrievalError::ZeroNormVector));
        assert!(matches!(cosine(&[1.0], &[1.0, 1.0]), Err(RetrievalError::DimMismatch { .. })));
    }

    #[test]
    fn k_beyond_candidates_returns_all_sorted() {
        let s = store_with(
            vec![1.0, 0.0],
            &[("a", vec![0.0, 1.0]), ("b", vec![1.0, 0.0]), ("c", vec![1.0, 1.0])],
        );
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ranked = rank_candidates("q", &ids, &s, &ProjectionParams::identity(2), 10).unwrap();
        let order: Vec<&str> = ranked.iter().map(|p| p.clause_id.as_str()).collect();
        assert_eq!(order, vec!["b", "c", "a"]);
    }

    #[test]
    fn equal_scores_fall_back_to_id_order() {
        let s = store_with(
            vec![1.0, 0.0],
            &[("zeta", vec![2.0, 1.0]), ("alpha", vec![2.0, 1.0]), ("mid", vec![2.0, 1.0])],
        );
        let ids: Vec<String> = ["zeta", "alpha", "mid"].iter().map(|s| s.to_string()).collect();
        let ranked = rank_candidates("q", &ids, &s, &ProjectionParams::identity(2), 2).unwrap();
        assert_eq!(ranked[0].score.to_bits(), ranked[1].score.to_bits());
        let order: Vec<&str> = ranked.iter().map(|p| p.clause_id.as_str()).collect();
        assert_eq!(order, vec!["alpha", "mid"]);
    }

    #[test]
    fn unknown_ids_and_zero_k() {
        let s = store_with(vec![1.0, 0.0], &[("a", vec![0.0, 1.0])]);
        let p = ProjectionParams::identity(2);
        assert!(matches!(
            rank_candidates("q", &["nope".to_string()], &s, &p, 1),
            Err(RetrievalError::UnknownId { kind: Kind::Clause, .. })
        ));
        assert!(matches!(
            rank_candidates("missing", &["a".to_string()], &s, &p, 1),
            Err(RetrievalError::UnknownId { kind: Kind::Rule, .. })
        ));
        assert_eq!(rank_candidates("q", &["a".to_string()], &s, &p, 0), Err(RetrievalError::InvalidK));
    }

    proptest! {
        #[test]
        fn cosine_bounded_and_symmetric(
            u in prop::collection::vec(-1e3f64..1e3, 6),
            v in prop::collection::vec(-1e3f64..1e3, 6),
        ) {
            prop_assume!(norm(&u) > 1e-9 && norm(&v) > 1e-9);
            let c = cosine(&u, &v).unwrap();
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&c));
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
        }
    }
}
