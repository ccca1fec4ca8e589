//! Compound question generation.
//!
//! For each question index the generator samples a batch of entities,
//! orders it rarest class first and walks it until an entity yields three
//! distinct question-eligible relations, complete statistics, a description
//! and a well-formed prompt. Each index draws from its own seed, so
//! questions can be generated in any order and on any thread.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::WeightTable;
use crate::kg::{EntityRecord, KgAccess, KgError, KgTriple, StatisticsOutcome, Tense, TypeClass};
use crate::seed::derive_seed;
use crate::tables::Tables;

pub const QUESTION_TEMPLATE: &str = "Please provide a brief overview of {name} {context}. Your response should be around 200 words long and must include key details such as {rel1}, {rel2}, and {rel3}. Focus exclusively on the most relevant entity associated with the provided name.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub question_index: usize,
    /// Focal entity with statistics and description filled in.
    pub focal: EntityRecord,
    /// The three chosen triples. `relation_label` holds the lowercase label
    /// used in the prompt and `tense_indicator` the entity's tense.
    pub triples: Vec<KgTriple>,
    pub supplementary_context: String,
    pub prompt_text: String,
    pub relation_weights: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Unlabeled,
    SubgraphUnavailable,
    InsufficientTriples,
    IncompleteStatistics,
    MissingDescription,
    MissingBirthDate,
    PromptCollision,
    MalformedData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub entity_id: String,
    pub reason: RejectionReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Selected(Vec<KgTriple>),
    Rejected { valid_relations: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("no birth date among the subgraph triples")]
    MissingBirthDate,
    #[error("type {0} is not in the type table")]
    UnknownType(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("template field {0} is empty")]
    TemplateFieldMissing(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("question {question_index}: no valid focal entity after {batches} batches")]
    Exhausted { question_index: usize, batches: usize },
}

/// Removes invalid types and orders the rest Uncommon, Common, VeryCommon,
/// keeping sample order within a class.
pub fn filter_and_prioritize(batch: Vec<EntityRecord>) -> Vec<EntityRecord> {
    let rank = |c: TypeClass| match c {
        TypeClass::Uncommon => 0,
        TypeClass::Common => 1,
        TypeClass::VeryCommon => 2,
        TypeClass::Invalid => 3,
    };
    let mut kept: Vec<_> = batch
        .into_iter()
        .filter(|e| e.type_class != TypeClass::Invalid)
        .collect();
    kept.sort_by_key(|e| rank(e.type_class));
    kept
}

/// Picks three distinct question-eligible relations, then one value for
/// each. Relations keep first-appearance order before the seeded draw.
pub fn select_valid_triples(entity: &EntityRecord, triples: &[KgTriple], tables: &Tables, rng_seed: u64) -> Selection {
    let eligible = tables.question_relations(&entity.type_id);
    let mut groups: Vec<(&str, Vec<&KgTriple>)> = Vec::new();
    for t in triples {
        if !eligible.contains(t.relation_id.as_str()) || !t.value_kind.is_textual() || t.fact_value.trim().is_empty() {
            continue;
        }
        match groups.iter_mut().find(|(r, _)| *r == t.relation_id) {
            Some((_, values)) => values.push(t),
            None => groups.push((&t.relation_id, vec![t])),
        }
    }
    if groups.len() < 3 {
        return Selection::Rejected {
            valid_relations: groups.len(),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for i in 0..3 {
        let j = rng.gen_range(i..groups.len());
        groups.swap(i, j);
    }
    Selection::Selected(
        groups[..3]
            .iter()
            .map(|(_, values)| values[rng.gen_range(0..values.len())].clone())
            .collect(),
    )
}

/// Year of an xsd dateTime literal as it should read in a lifespan.
fn year_of(raw: &str) -> Option<String> {
    let (negative, rest) = match raw.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, raw.strip_prefix('+').unwrap_or(raw)),
    };
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let year: u64 = digits.parse().ok()?;
    Some(if negative {
        format!("{year} BC")
    } else {
        year.to_string()
    })
}

/// Which relations carry a person's birth and death dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifespanRelations {
    pub birth: String,
    pub death: String,
}

impl Default for LifespanRelations {
    fn default() -> Self {
        Self {
            birth: "P569".into(),
            death: "P570".into(),
        }
    }
}

pub fn build_supplementary_context(
    entity: &EntityRecord,
    triples: &[KgTriple],
    tables: &Tables,
    lifespan: &LifespanRelations,
) -> Result<String, ContextError> {
    let entry = tables
        .types
        .get(&entity.type_id)
        .ok_or_else(|| ContextError::UnknownType(entity.type_id.clone()))?;
    if !entry.lifespan_context {
        return Ok(format!("({})", entry.label.to_lowercase()));
    }
    let year = |rel: &str| {
        triples
            .iter()
            .filter(|t| t.relation_id == rel)
            .find_map(|t| year_of(&t.raw_value))
    };
    let birth = year(&lifespan.birth).ok_or(ContextError::MissingBirthDate)?;
    Ok(match year(&lifespan.death) {
        Some(death) => format!("({birth}\u{2013}{death})"),
        None => format!("({birth}\u{2013})"),
    })
}

pub fn resolve_tense(
    entity: &EntityRecord,
    triples: &[KgTriple],
    tables: &Tables,
    lifespan: &LifespanRelations,
) -> Tense {
    match tables.types.get(&entity.type_id) {
        Some(t) if t.lifespan_context => {
            if triples.iter().any(|t| t.relation_id == lifespan.death) {
                Tense::Was
            } else {
                Tense::Is
            }
        }
        Some(t) => t.default_tense,
        None => Tense::Is,
    }
}

pub fn render_question(name: &str, context: &str, relations: [&str; 3]) -> Result<String, RenderError> {
    let fields = [
        ("name", name),
        ("context", context),
        ("rel1", relations[0]),
        ("rel2", relations[1]),
        ("rel3", relations[2]),
    ];
    let mut out = QUESTION_TEMPLATE.to_owned();
    for (key, value) in fields {
        let value = value.trim();
        if value.is_empty() {
            return Err(RenderError::TemplateFieldMissing(key));
        }
        let value = if key.starts_with("rel") {
            value.to_lowercase()
        } else {
            value.to_owned()
        };
        out = out.replacen(&format!("{{{key}}}"), &value, 1);
    }
    Ok(out)
}

/// True when each of the given fragments occurs exactly once in the prompt.
pub fn fields_occur_once(prompt: &str, fields: &[&str]) -> bool {
    fields.iter().all(|f| prompt.matches(f).count() == 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub batch_size: usize,
    pub max_batches: usize,
    pub lifespan_relations: LifespanRelations,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            batch_size: 10,
            max_batches: 50,
            lifespan_relations: LifespanRelations::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub spec: QuestionSpec,
    pub rejections: Vec<Rejection>,
    pub batches_sampled: usize,
}

#[derive(Clone)]
pub struct QuestionGenerator {
    kg: KgAccess,
    weights: Arc<WeightTable>,
    settings: GenerationSettings,
}

enum Attempt {
    Accepted(Box<QuestionSpec>),
    Rejected(RejectionReason),
}

impl QuestionGenerator {
    pub fn new(kg: KgAccess, weights: Arc<WeightTable>, settings: GenerationSettings) -> Self {
        Self { kg, weights, settings }
    }

    pub fn generate(&self, run_seed: u64, question_index: usize) -> Result<GeneratedQuestion, GenerationError> {
        let index = question_index.to_string();
        let mut rejections = Vec::new();
        for batch_no in 0..self.settings.max_batches {
            let seed = derive_seed(run_seed, &["question", &index, "batch", &batch_no.to_string()]);
            let batch = match self.kg.sample_random_entities(self.settings.batch_size, seed) {
                Ok(b) => b,
                Err(KgError::MalformedResponse(m)) => {
                    log::warn!("question {question_index}: unusable sample: {m}");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            for entity in filter_and_prioritize(batch) {
                let entity_id = entity.entity_id.clone();
                match self.attempt(run_seed, question_index, entity)? {
                    Attempt::Accepted(spec) => {
                        return Ok(GeneratedQuestion {
                            spec: *spec,
                            rejections,
                            batches_sampled: batch_no + 1,
                        })
                    }
                    Attempt::Rejected(reason) => {
                        log::debug!("question {question_index}: rejected {entity_id}: {reason:?}");
                        rejections.push(Rejection { entity_id, reason });
                    }
                }
            }
        }
        Err(GenerationError::Exhausted {
            question_index,
            batches: self.settings.max_batches,
        })
    }

    fn attempt(&self, run_seed: u64, question_index: usize, mut entity: EntityRecord) -> Result<Attempt, KgError> {
        use RejectionReason::*;
        let reject = |r| Ok(Attempt::Rejected(r));
        if entity.label.trim().is_empty() || entity.label == entity.entity_id {
            return reject(Unlabeled);
        }
        let tables = self.kg.tables();
        let subgraph = match self.kg.fetch_subgraph_triples(&entity.entity_id) {
            Ok(t) => t,
            Err(KgError::EntityNotFound(_)) => return reject(SubgraphUnavailable),
            Err(KgError::MalformedResponse(_)) => return reject(MalformedData),
            Err(e) => return Err(e),
        };
        let seed = derive_seed(
            run_seed,
            &["question", &question_index.to_string(), "triples", &entity.entity_id],
        );
        let mut chosen = match select_valid_triples(&entity, &subgraph, tables, seed) {
            Selection::Selected(t) => t,
            Selection::Rejected { .. } => return reject(InsufficientTriples),
        };
        entity.statistics = match self.kg.fetch_statistics(&entity.entity_id) {
            Ok(StatisticsOutcome::Complete(s)) => Some(s),
            Ok(StatisticsOutcome::Incomplete { .. }) => return reject(IncompleteStatistics),
            Err(KgError::EntityNotFound(_) | KgError::MalformedResponse(_)) => return reject(MalformedData),
            Err(e) => return Err(e),
        };
        entity.description = match self.kg.fetch_description(&entity.entity_id) {
            Ok(d) => Some(d),
            Err(KgError::DescriptionMissing(_) | KgError::EntityNotFound(_)) => return reject(MissingDescription),
            Err(KgError::MalformedResponse(_)) => return reject(MalformedData),
            Err(e) => return Err(e),
        };
        let lifespan = &self.settings.lifespan_relations;
        let context = match build_supplementary_context(&entity, &subgraph, tables, lifespan) {
            Ok(c) => c,
            Err(ContextError::MissingBirthDate) => return reject(MissingBirthDate),
            Err(ContextError::UnknownType(_)) => return reject(MalformedData),
        };
        let tense = resolve_tense(&entity, &subgraph, tables, lifespan);
        let labels: Vec<String> = chosen
            .iter()
            .map(|t| {
                tables
                    .relations
                    .get(&t.relation_id)
                    .map(|r| r.label.as_str())
                    .unwrap_or(&t.relation_label)
                    .to_lowercase()
            })
            .collect();
        for (t, label) in chosen.iter_mut().zip(labels) {
            t.relation_label = label;
            t.tense_indicator = tense;
        }
        let rels = [0, 1, 2].map(|i| chosen[i].relation_label.as_str());
        let prompt = match render_question(&entity.label, &context, rels) {
            Ok(p) => p,
            Err(_) => return reject(PromptCollision),
        };
        let mut fields = vec![entity.label.as_str(), context.as_str()];
        fields.extend(rels);
        if !fields_occur_once(&prompt, &fields) {
            return reject(PromptCollision);
        }
        let relation_weights = [0, 1, 2].map(|i| self.weights.relation_weight(&entity.type_id, &chosen[i].relation_id));
        Ok(Attempt::Accepted(Box::new(QuestionSpec {
            question_index,
            focal: entity,
            triples: chosen,
            supplementary_context: context,
            prompt_text: prompt,
            relation_weights,
        })))
    }
}
