//! Question difficulty: entity popularity, relation complexity and the
//! sigmoid difficulty score, plus calibration of type and relation weights
//! from earlier assessment logs.
//!
//! Popularity combines statistic-based relevance with a per-type weight.
//! Complexity is the mean of the three relation weights, where a relation's
//! weight grows as its historical question score falls. Difficulty is
//! `1 / (1 + exp(-alpha * (q_avg - ep_norm)))`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::EntityStatistics;

/// Weight used for a type or relation the table has never seen.
pub const NEUTRAL_WEIGHT: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 5.0;
pub const DEFAULT_MIX: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum DifficultyError {
    #[error("no statistic calibration bounds loaded")]
    CalibrationMissing,
    #[error("type {0} has no relation weights")]
    UnknownType(String),
    #[error("insufficient calibration data: {0}")]
    InsufficientData(String),
    #[error("invalid weight table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds { min: 0.0, max: 1.0 };

    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// Min-max scaling clamped to `[0, 1]`; a degenerate range maps to 0.5.
    pub fn scale(&self, value: f64) -> f64 {
        let span = self.max - self.min;
        if span.abs() < f64::EPSILON * self.max.abs().max(1.0) {
            return 0.5;
        }
        ((value - self.min) / span).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_logs: Vec<String>,
    pub records: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub alpha: f64,
    #[serde(default = "default_mix")]
    pub mix: f64,
    /// One weight per statistic, in [`EntityStatistics::FIELDS`] order.
    pub stat_weights: [f64; 7],
    /// Per-statistic bounds in log space (`ln(1 + x)`).
    #[serde(default)]
    pub stat_log_bounds: Option<[Bounds; 7]>,
    pub type_weights: BTreeMap<String, f64>,
    pub relation_weights: BTreeMap<String, BTreeMap<String, f64>>,
    pub ep_norm_bounds: Bounds,
    pub avg_qd: f64,
    #[serde(default)]
    pub calibrated_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn default_mix() -> f64 {
    DEFAULT_MIX
}

const BUILTIN_WEIGHTS: &str = include_str!("../data/weights.default.json");

impl WeightTable {
    /// Uncalibrated defaults shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_WEIGHTS).expect("builtin weight table is valid")
    }

    pub fn parse(text: &str) -> Result<Self, DifficultyError> {
        let table: Self = serde_json::from_str(text).map_err(|e| DifficultyError::InvalidTable(e.to_string()))?;
        table.normalized()
    }

    pub fn load(path: &Path) -> Result<Self, DifficultyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DifficultyError::InvalidTable(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| DifficultyError::InvalidTable(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight table serializes")
    }

    /// Validates the table and rescales `stat_weights` to sum to one.
    pub fn normalized(mut self) -> Result<Self, DifficultyError> {
        let bad = |m: String| Err(DifficultyError::InvalidTable(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return bad(format!("mix must be in [0,1], got {}", self.mix));
        }
        if self.stat_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("stat_weights must be non-negative".into());
        }
        let total: f64 = self.stat_weights.iter().sum();
        if total <= 0.0 {
            return bad("stat_weights must not all be zero".into());
        }
        if (total - 1.0).abs() > 1e-9 {
            for w in &mut self.stat_weights {
                *w /= total;
            }
        }
        for (t, w) in &self.type_weights {
            if !(0.0..=1.0).contains(w) {
                return bad(format!("type weight {t} = {w} outside [0,1]"));
            }
        }
        for (t, rels) in &self.relation_weights {
            for (r, w) in rels {
                if !(0.0..=1.0).contains(w) {
                    return bad(format!("relation weight {t}/{r} = {w} outside [0,1]"));
                }
            }
        }
        if self.ep_norm_bounds.min.partial_cmp(&self.ep_norm_bounds.max) != Some(std::cmp::Ordering::Less) {
            return bad("ep_norm_bounds.min must be below max".into());
        }
        if !(self.avg_qd > 0.0 && self.avg_qd < 1.0) {
            return bad(format!("avg_qd must be in (0,1), got {}", self.avg_qd));
        }
        if let Some(bounds) = &self.stat_log_bounds {
            if bounds
                .iter()
                .any(|b| b.min.partial_cmp(&b.max).is_none_or(|o| o.is_gt()) || b.min < 0.0)
            {
                return bad("stat_log_bounds must satisfy 0 <= min <= max".into());
            }
        }
        Ok(self)
    }

    pub fn type_weight(&self, type_id: &str) -> f64 {
        self.type_weights.get(type_id).copied().unwrap_or(NEUTRAL_WEIGHT)
    }

    pub fn relation_weight(&self, type_id: &str, relation_id: &str) -> f64 {
        self.relation_weights
            .get(type_id)
            .and_then(|m| m.get(relation_id))
            .copied()
            .unwrap_or(NEUTRAL_WEIGHT)
    }
}

pub fn log_normalize(stats: &EntityStatistics) -> [f64; 7] {
    stats.as_array().map(|v| (v as f64).ln_1p())
}

/// Weighted sum of per-statistic min-max scaled log values, in `[0, 1]`.
pub fn entity_relevance(stats: &EntityStatistics, table: &WeightTable) -> Result<f64, DifficultyError> {
    let bounds = table
        .stat_log_bounds
        .as_ref()
        .ok_or(DifficultyError::CalibrationMissing)?;
    let logs = log_normalize(stats);
    let total: f64 = logs
        .iter()
        .zip(bounds)
        .zip(&table.stat_weights)
        .map(|((value, b), w)| w * b.scale(*value))
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

pub fn entity_popularity(relevance: f64, type_weight: f64, mix: f64) -> f64 {
    mix * relevance + (1.0 - mix) * type_weight
}

pub fn question_complexity(relation_weights: [f64; 3]) -> f64 {
    relation_weights.iter().sum::<f64>() / 3.0
}

/// Complexity attributed to the focal entity when the answer was judged an
/// entity-level hallucination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucinationComplexity {
    /// Three times the mean relation weight of the type.
    pub total: f64,
    /// The mean, used in place of the question's own complexity.
    pub q_avg: f64,
}

pub fn entity_hallucination_complexity(
    type_id: &str,
    table: &WeightTable,
) -> Result<HallucinationComplexity, DifficultyError> {
    let set = table
        .relation_weights
        .get(type_id)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| DifficultyError::UnknownType(type_id.into()))?;
    let mean = set.values().sum::<f64>() / set.len() as f64;
    Ok(HallucinationComplexity {
        total: mean * 3.0,
        q_avg: mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyInputs {
    pub q_avg: f64,
    pub ep_norm: f64,
}

impl DifficultyInputs {
    pub fn new(q_avg: f64, ep_norm: f64) -> Self {
        Self {
            q_avg: q_avg.clamp(0.0, 1.0),
            ep_norm: ep_norm.clamp(0.0, 1.0),
        }
    }
}

pub fn question_difficulty(inputs: DifficultyInputs, alpha: f64) -> f64 {
    1.0 / (1.0 + (-alpha * (inputs.q_avg - inputs.ep_norm)).exp())
}

/// Normalised popularity of an entity under a weight table.
pub fn ep_norm(
    stats: &EntityStatistics,
    type_id: &str,
    table: &WeightTable,
) -> Result<(f64, f64, f64), DifficultyError> {
    let relevance = entity_relevance(stats, table)?;
    let ep = entity_popularity(relevance, table.type_weight(type_id), table.mix);
    Ok((relevance, ep, table.ep_norm_bounds.scale(ep)))
}

/// One scored question, as calibration sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub type_id: String,
    pub relation_ids: [String; 3],
    pub points: u8,
    pub entity_hallucinated: bool,
    pub statistics: EntityStatistics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsufficientData {
    pub type_id: String,
    pub relation_id: Option<String>,
    pub reason: String,
}

impl std::fmt::Display for InsufficientData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.relation_id {
            Some(r) => write!(f, "{}/{}: {}", self.type_id, r, self.reason),
            None => write!(f, "{}: {}", self.type_id, self.reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub table: WeightTable,
    pub flags: Vec<InsufficientData>,
}

/// Min-max normalisation of group means. A single group maps to 0 and is
/// reported; two or more equal means map to 0.5.
fn normalize_means<K: Ord + Clone>(means: &BTreeMap<K, f64>) -> (BTreeMap<K, f64>, bool) {
    if means.len() == 1 {
        return (means.keys().map(|k| (k.clone(), 0.0)).collect(), true);
    }
    let lo = means.values().copied().fold(f64::INFINITY, f64::min);
    let hi = means.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounds = Bounds::new(lo, hi);
    (
        means.iter().map(|(k, v)| (k.clone(), bounds.scale(*v))).collect(),
        false,
    )
}

fn mean_by<K: Ord>(pairs: impl Iterator<Item = (K, f64)>) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for (k, v) in pairs {
        let e = acc.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Recomputes type weights, relation weights, statistic bounds, popularity
/// bounds and the average difficulty from a log. `alpha`, `mix` and
/// `stat_weights` carry over from `prior`; so do weights of types and
/// relations the log never mentions, which are flagged.
pub fn calibrate(log: &[CalibrationRecord], prior: &WeightTable) -> Result<Calibration, DifficultyError> {
    if log.is_empty() {
        return Err(DifficultyError::InsufficientData("the log has no records".into()));
    }
    let mut flags = Vec::new();

    let type_means = mean_by(log.iter().map(|r| (r.type_id.clone(), r.points as f64)));
    let (type_norm, single) = normalize_means(&type_means);
    if single {
        for t in type_norm.keys() {
            flags.push(InsufficientData {
                type_id: t.clone(),
                relation_id: None,
                reason: "only one type observed; min-max is degenerate".into(),
            });
        }
    }
    let mut type_weights = prior.type_weights.clone();
    for t in prior.type_weights.keys().filter(|t| !type_norm.contains_key(*t)) {
        flags.push(InsufficientData {
            type_id: t.clone(),
            relation_id: None,
            reason: "no observations; prior weight kept".into(),
        });
    }
    type_weights.extend(type_norm);

    let mut relation_weights = prior.relation_weights.clone();
    let types: BTreeSet<&str> = log.iter().map(|r| r.type_id.as_str()).collect();
    for type_id in types {
        let means = mean_by(
            log.iter()
                .filter(|r| r.type_id == type_id)
                .flat_map(|r| r.relation_ids.iter().map(move |rel| (rel.clone(), r.points as f64))),
        );
        let (norm, single) = normalize_means(&means);
        let set = relation_weights.entry(type_id.to_owned()).or_default();
        for rel in set.keys().filter(|r| !norm.contains_key(*r)) {
            flags.push(InsufficientData {
                type_id: type_id.to_owned(),
                relation_id: Some(rel.clone()),
                reason: "no observations; prior weight kept".into(),
            });
        }
        if single {
            for rel in norm.keys() {
                flags.push(InsufficientData {
                    type_id: type_id.to_owned(),
                    relation_id: Some(rel.clone()),
                    reason: "only one relation observed for the type; min-max is degenerate".into(),
                });
            }
        }
        set.extend(norm.into_iter().map(|(rel, v)| (rel, 1.0 - v)));
    }

    let mut stat_log_bounds = [Bounds::new(f64::INFINITY, f64::NEG_INFINITY); 7];
    for record in log {
        for (b, v) in stat_log_bounds.iter_mut().zip(log_normalize(&record.statistics)) {
            b.min = b.min.min(v);
            b.max = b.max.max(v);
        }
    }

    let mut table = WeightTable {
        alpha: prior.alpha,
        mix: prior.mix,
        stat_weights: prior.stat_weights,
        stat_log_bounds: Some(stat_log_bounds),
        type_weights,
        relation_weights,
        ep_norm_bounds: prior.ep_norm_bounds,
        avg_qd: prior.avg_qd,
        calibrated_at: None,
        provenance: None,
    };

    let eps: Vec<f64> = log
        .iter()
        .map(|r| {
            entity_relevance(&r.statistics, &table)
                .map(|rel| entity_popularity(rel, table.type_weight(&r.type_id), table.mix))
        })
        .collect::<Result<_, _>>()?;
    let lo = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-12 {
        table.ep_norm_bounds = Bounds::new(lo, hi);
    } else {
        flags.push(InsufficientData {
            type_id: "*".into(),
            relation_id: None,
            reason: "popularity is constant across the log; prior bounds kept".into(),
        });
    }

    let mut qd_sum = 0.0;
    for (record, ep) in log.iter().zip(&eps) {
        let q_avg = if record.entity_hallucinated {
            entity_hallucination_complexity(&record.type_id, &table)?.q_avg
        } else {
            question_complexity([0, 1, 2].map(|i| table.relation_weight(&record.type_id, &record.relation_ids[i])))
        };
        let inputs = DifficultyInputs::new(q_avg, table.ep_norm_bounds.scale(*ep));
        qd_sum += question_difficulty(inputs, table.alpha);
    }
    table.avg_qd = qd_sum / log.len() as f64;

    let table = table.normalized()?;
    Ok(Calibration { table, flags })
}
