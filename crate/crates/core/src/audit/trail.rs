//! Append-only, line-delimited audit trail of triage decisions.
//!
//! The first line is an [`AuditHeader`] naming the schema version, the
//! producing manifest digest and the thresholds in force; each further line
//! is one [`AuditRecord`]. A trail is self-contained: [`replay_audit`]
//! recomputes every band from the recorded values alone.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::real17_serde;
use crate::triage::{decide, Decision, ScoreSource, TriageThresholds};

pub const AUDIT_SCHEMA: &str = "clausetriage-audit";
pub const AUDIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditHeader {
    pub schema: String,
    pub schema_version: u32,
    pub manifest_digest: String,
    pub source: ScoreSource,
    pub thresholds: TriageThresholds,
}

impl AuditHeader {
    pub fn new(manifest_digest: String, source: ScoreSource, thresholds: TriageThresholds) -> Self {
        AuditHeader {
            schema: AUDIT_SCHEMA.to_string(),
            schema_version: AUDIT_SCHEMA_VERSION,
            manifest_digest,
            source,
            thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub query_id: String,
    pub clause_id: String,
    #[serde(with = "real17_serde")]
    pub score: f64,
    #[serde(with = "real17_serde")]
    pub p_theta: f64,
    #[serde(with = "real17_serde")]
    pub p_phi: f64,
    pub decision: Decision,
    pub manifest: String,
}

impl AuditRecord {
    /// The value the thresholds were applied to.
    pub fn decided_value(&self, source: ScoreSource) -> f64 {
        match source {
            ScoreSource::Similarity => self.score,
            ScoreSource::Calibrated => self.p_theta,
            ScoreSource::Fuzzy => self.p_phi,
        }
    }
}

pub struct AuditWriter<W: Write> {
    out: W,
    header: AuditHeader,
    written: usize,
}

impl<W: Write> AuditWriter<W> {
    /// Writes the header line immediately, so an empty decision set still
    /// yields a valid, header-only trail.
    pub fn new(mut out: W, header: AuditHeader) -> std::io::Result<Self> {
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        Ok(AuditWriter {
            out,
            header,
            written: 0,
        })
    }

    pub fn header(&self) -> &AuditHeader {
        &self.header
    }

    /// Appends one decided pair.
    pub fn emit(
        &mut self,
        query_id: &str,
        clause_id: &str,
        score: f64,
        p_theta: f64,
        p_phi: f64,
        decision: Decision,
    ) -> std::io::Result<()> {
        let record = AuditRecord {
            query_id: query_id.to_string(),
            clause_id: clause_id.to_string(),
            score,
            p_theta,
            p_phi,
            decision,
            manifest: self.header.manifest_digest.clone(),
        };
        serde_json::to_writer(&mut self.out, &record)?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AuditReadError {
    #[error("audit i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("audit line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("audit trail has no header line")]
    MissingHeader,
}

pub fn read_audit<R: BufRead>(input: R) -> Result<(AuditHeader, Vec<AuditRecord>), AuditReadError> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or(AuditReadError::MissingHeader)??;
    let header: AuditHeader =
        serde_json::from_str(&header_line).map_err(|e| AuditReadError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let record = serde_json::from_str(&line).map_err(|e| AuditReadError::Malformed {
            line: i + 2,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}

/// Re-decides every record and returns the indices whose recorded band
/// disagrees, or whose manifest reference differs from the header.
pub fn replay_audit(header: &AuditHeader, records: &[AuditRecord]) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            let redecided = decide(r.decided_value(header.source), &header.thresholds);
            redecided.ok() != Some(r.decision) || r.manifest != header.manifest_digest
        })
        .map(|(i, _)| i)
        .collect()
}
