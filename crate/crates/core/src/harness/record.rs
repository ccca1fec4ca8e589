use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::difficulty::CalibrationRecord;
use crate::metrics::ScoredQuestion;
use crate::question::{QuestionSpec, Rejection};
use crate::verification::{Classification, EntityVerdict, Exchange, Outcome, QuestionScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyRecord {
    pub relevance: f64,
    pub ep: f64,
    pub ep_norm: f64,
    pub q_avg: f64,
    /// Set when `q_avg` is the type-mean substitute for a hallucinated entity.
    pub hallucination_substitute: bool,
    pub alpha: f64,
    pub q_d: f64,
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub question_index: usize,
    pub run_seed: u64,
    pub spec: QuestionSpec,
    pub rejections: Vec<Rejection>,
    pub batches_sampled: usize,
    pub response: String,
    pub entity_verdict: EntityVerdict,
    pub score: QuestionScore,
    pub difficulty: DifficultyRecord,
    /// Weight-table average difficulty at the time of the run.
    pub avg_qd_reference: f64,
    pub exchanges: Vec<Exchange>,
}

impl RunRecord {
    pub fn scored(&self) -> ScoredQuestion {
        let incorrect = match self.entity_verdict.classification {
            Classification::Aligned => self
                .score
                .fact_verdicts
                .iter()
                .filter(|f| f.outcome == Outcome::Incorrect)
                .count() as u8,
            _ => 0,
        };
        ScoredQuestion {
            question_index: self.question_index,
            classification: self.entity_verdict.classification,
            points: self.score.points,
            incorrect_facts: incorrect,
            q_d: self.difficulty.q_d,
        }
    }

    pub fn calibration_record(&self) -> Result<CalibrationRecord, HarnessError> {
        let statistics = self
            .spec
            .focal
            .statistics
            .ok_or_else(|| HarnessError::Data(format!("question {} has no statistics", self.question_index)))?;
        let ids: Vec<String> = self.spec.triples.iter().map(|t| t.relation_id.clone()).collect();
        let relation_ids: [String; 3] = ids
            .try_into()
            .map_err(|_| HarnessError::Data(format!("question {} does not have three triples", self.question_index)))?;
        Ok(CalibrationRecord {
            type_id: self.spec.focal.type_id.clone(),
            relation_ids,
            points: self.score.points,
            entity_hallucinated: self.entity_verdict.classification == Classification::Hallucinated,
            statistics,
        })
    }
}

/// Per-question wall-clock timings, kept apart from the deterministic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub question_index: usize,
    pub total_ms: f64,
    pub calls: Vec<(String, f64)>,
}

/// Reads every record of a log. Line numbers in errors start at 1.
pub fn read_log(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line).map_err(|e| HarnessError::SchemaMismatch {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
