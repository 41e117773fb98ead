//! Canonical dataset and embedding schemas.
//!
//! Graded files carry one [`QueryGroup`] per line, binary files one
//! [`LabeledPair`] per line. Embeddings live in the little-endian `EMB1`
//! container read by [`parse_embeddings`].

mod dataset;
mod embeddings;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dataset::{
    collapse_to_binary, load_corpus, parse_dataset, parse_dataset_str, write_binary, write_graded,
    Corpus, Schema,
};
pub use embeddings::{parse_embeddings, read_embeddings, write_embeddings, EmbeddingStore};
pub use synthetic::{generate_synthetic, write_corpus, SyntheticConfig};

/// Default maximum relevance grade.
pub const DEFAULT_GRADE_MAX: u32 = 4;

pub const EMBEDDINGS_FILE: &str = "embeddings.emb1";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: grade {value} outside [0, {grade_max}]")]
    GradeOutOfRange {
        line: usize,
        value: i64,
        grade_max: u32,
    },
    #[error("line {line}: label {value} is not 0 or 1")]
    InvalidLabel { line: usize, value: i64 },
    #[error("line {line}: group {group} lists candidate {id} twice")]
    DuplicateCandidate {
        line: usize,
        group: String,
        id: String,
    },
    #[error("line {line}: group {group} has no candidates")]
    EmptyGroup { line: usize, group: String },
    #[error("line {line}: group {group} has {candidates} candidates but {grades} grades")]
    LengthMismatch {
        line: usize,
        group: String,
        candidates: usize,
        grades: usize,
    },
    #[error("line {line}: pair ({query_id}, {clause_id}) repeated")]
    DuplicatePair {
        line: usize,
        query_id: String,
        clause_id: String,
    },
    #[error("pair ({query_id}, {clause_id}) appears in both {first} and {second}")]
    OverlappingSplits {
        query_id: String,
        clause_id: String,
        first: SplitName,
        second: SplitName,
    },
    #[error("embedding file does not start with EMB1 magic")]
    BadMagic,
    #[error("record {record}: embedding file truncated")]
    Truncated { record: usize },
    #[error("embedding file has bytes past its {count} declared records")]
    TrailingBytes { count: usize },
    #[error("record {record}: unknown kind tag {tag}")]
    BadKind { record: usize, tag: u8 },
    #[error("record {record}: id is not valid UTF-8")]
    InvalidId { record: usize },
    #[error("embedding {id}: vector length {got} differs from store dim {dim}")]
    DimMismatch { id: String, got: usize, dim: usize },
    #[error("embedding {id}: zero-norm vector")]
    ZeroNormVector { id: String },
    #[error("embedding {id}: non-finite component")]
    NonFinite { id: String },
    #[error("embedding {id}: duplicate id for kind {kind}")]
    DuplicateId { id: String, kind: Kind },
    #[error("unknown {kind} id {id}")]
    UnknownId { id: String, kind: Kind },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Whether an embedding belongs to a rule (query side) or a clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Rule,
    Clause,
}

impl Kind {
    pub fn tag(self) -> u8 {
        match self {
            Kind::Rule => 0,
            Kind::Clause => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Kind::Rule),
            1 => Some(Kind::Clause),
            _ => None,
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kind::Rule => "rule",
            Kind::Clause => "clause",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub kind: Kind,
    pub vector: Vec<f32>,
}

/// One rule and its graded candidate clauses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub query_id: String,
    #[serde(rename = "candidates")]
    pub candidate_ids: Vec<String>,
    pub grades: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query_id: String,
    pub clause_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn graded_file(self) -> String {
        format!("{}.graded.jsonl", self.as_str())
    }

    pub fn binary_file(self) -> String {
        format!("{}.binary.jsonl", self.as_str())
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub groups: Vec<QueryGroup>,
    pub pairs: Vec<LabeledPair>,
}

impl DatasetSplit {
    pub fn empty(name: SplitName) -> Self {
        DatasetSplit {
            name,
            groups: Vec::new(),
            pairs: Vec::new(),
        }
    }

    pub fn positive_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == 1).count()
    }
}
