use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    parse_embeddings, DataError, DatasetSplit, EmbeddingStore, LabeledPair, QueryGroup,
    SplitName, EMBEDDINGS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Graded,
    Binary,
}

impl std::str::FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graded" => Ok(Schema::Graded),
            "binary" => Ok(Schema::Binary),
            other => Err(format!("unknown schema {other:?}")),
        }
    }
}

// Raw line shapes; integers are read signed so negative grades and labels
// surface as range errors instead of type errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    query_id: String,
    candidates: Vec<String>,
    grades: Vec<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    query_id: String,
    clause_id: String,
    label: i64,
}

/// Parses a line-delimited dataset file into a validated split.
pub fn parse_dataset(
    path: &Path,
    schema: Schema,
    name: SplitName,
    grade_max: u32,
) -> Result<DatasetSplit, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_dataset_str(&text, schema, name, grade_max)
}

pub fn parse_dataset_str(
    text: &str,
    schema: Schema,
    name: SplitName,
    grade_max: u32,
) -> Result<DatasetSplit, DataError> {
    let mut split = DatasetSplit::empty(name);
    let mut seen_pairs = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        match schema {
            Schema::Graded => split.groups.push(parse_group(line, line_no, grade_max)?),
            Schema::Binary => {
                let pair = parse_pair(line, line_no)?;
                if !seen_pairs.insert((pair.query_id.clone(), pair.clause_id.clone())) {
                    return Err(DataError::DuplicatePair {
                        line: line_no,
                        query_id: pair.query_id,
                        clause_id: pair.clause_id,
                    });
                }
                split.pairs.push(pair);
            }
        }
    }
    Ok(split)
}

fn parse_group(line: &str, line_no: usize, grade_max: u32) -> Result<QueryGroup, DataError> {
    let raw: RawGroup = serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    if raw.candidates.is_empty() && raw.grades.is_empty() {
        return Err(DataError::EmptyGroup {
            line: line_no,
            group: raw.query_id,
        });
    }
    if raw.candidates.len() != raw.grades.len() {
        return Err(DataError::LengthMismatch {
            line: line_no,
            group: raw.query_id,
            candidates: raw.candidates.len(),
            grades: raw.grades.len(),
        });
    }
    let mut grades = Vec::with_capacity(raw.grades.len());
    for &g in &raw.grades {
        if g < 0 || g > i64::from(grade_max) {
            return Err(DataError::GradeOutOfRange {
                line: line_no,
                value: g,
                grade_max,
            });
        }
        grades.push(g as u32);
    }
    let mut seen = HashSet::with_capacity(raw.candidates.len());
    for id in &raw.candidates {
        if !seen.insert(id.as_str()) {
            return Err(DataError::DuplicateCandidate {
                line: line_no,
                group: raw.query_id.clone(),
                id: id.clone(),
            });
        }
    }
    Ok(QueryGroup {
        query_id: raw.query_id,
        candidate_ids: raw.candidates,
        grades,
    })
}

fn parse_pair(line: &str, line_no: usize) -> Result<LabeledPair, DataError> {
    let raw: RawPair = serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    if raw.label != 0 && raw.label != 1 {
        return Err(DataError::InvalidLabel {
            line: line_no,
            value: raw.label,
        });
    }
    Ok(LabeledPair {
        query_id: raw.query_id,
        clause_id: raw.clause_id,
        label: raw.label as u8,
    })
}

pub fn write_graded<W: Write>(mut out: W, groups: &[QueryGroup]) -> std::io::Result<()> {
    for g in groups {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_binary<W: Write>(mut out: W, pairs: &[LabeledPair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Derives binary compliance labels from graded groups: grade ≥ `threshold`
/// maps to 1.
pub fn collapse_to_binary(groups: &[QueryGroup], threshold: u32) -> Vec<LabeledPair> {
    groups
        .iter()
        .flat_map(|g| {
            g.candidate_ids
                .iter()
                .zip(&g.grades)
                .map(move |(cid, &grade)| LabeledPair {
                    query_id: g.query_id.clone(),
                    clause_id: cid.clone(),
                    label: u8::from(grade >= threshold),
                })
        })
        .collect()
}

/// An embedding store plus its three splits, as laid out in a data directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub store: EmbeddingStore,
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub test: DatasetSplit,
    /// Files that were read, in load order.
    pub files: Vec<PathBuf>,
}

impl Corpus {
    pub fn split(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    fn split_mut(&mut self, name: SplitName) -> &mut DatasetSplit {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
        }
    }
}

/// Loads `embeddings.emb1` and the `{split}.graded.jsonl` /
/// `{split}.binary.jsonl` files from `dir`.
///
/// Missing split files yield empty splits. A split that has graded groups
/// but no binary file gets labels derived by [`collapse_to_binary`] with
/// `collapse_threshold`.
pub fn load_corpus(dir: &Path, grade_max: u32, collapse_threshold: u32) -> Result<Corpus, DataError> {
    let emb_path = dir.join(EMBEDDINGS_FILE);
    let store = parse_embeddings(&emb_path)?;
    let mut corpus = Corpus {
        store,
        train: DatasetSplit::empty(SplitName::Train),
        validation: DatasetSplit::empty(SplitName::Validation),
        test: DatasetSplit::empty(SplitName::Test),
        files: vec![emb_path],
    };
    for name in SplitName::ALL {
        let graded = dir.join(name.graded_file());
        let binary = dir.join(name.binary_file());
        let mut split = DatasetSplit::empty(name);
        if graded.exists() {
            split.groups = parse_dataset(&graded, Schema::Graded, name, grade_max)?.groups;
            corpus.files.push(graded);
        }
        if binary.exists() {
            split.pairs = parse_dataset(&binary, Schema::Binary, name, grade_max)?.pairs;
            corpus.files.push(binary);
        } else {
            split.pairs = collapse_to_binary(&split.groups, collapse_threshold);
        }
        *corpus.split_mut(name) = split;
    }

    let mut owner: BTreeMap<(&str, &str), SplitName> = BTreeMap::new();
    for name in SplitName::ALL {
        for p in &corpus.split(name).pairs {
            if let Some(&first) = owner.get(&(p.query_id.as_str(), p.clause_id.as_str())) {
                return Err(DataError::OverlappingSplits {
                    query_id: p.query_id.clone(),
                    clause_id: p.clause_id.clone(),
                    first,
                    second: name,
                });
            }
            owner.insert((p.query_id.as_str(), p.clause_id.as_str()), name);
        }
    }
    Ok(corpus)
}
