//! Response verification.
//!
//! The entity-level filter first asks whether the model abstained, and if
//! not, compares the response with the entity's description by blended
//! semantic and token similarity. Only aligned responses go on to the
//! fact-level check, which decides each golden fact by NLI, then an LLM
//! judge, then an expert judge when the first two disagree.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatRequest, EmbeddingBackend, NliBackend, NliLabel, TokenUsage};
use crate::kg::Tense;
use crate::question::QuestionSpec;
use crate::tables::Tables;

pub mod prompts;
pub mod similarity;

pub use prompts::{ExpertChoice, LlmLabel};
pub use similarity::{entity_similarity, semantic_similarity, token_set_similarity, TokenSimilarity};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Aligned,
    Hallucinated,
    Abstained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityVerdict {
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_sim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_sim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_sim: Option<f64>,
    pub threshold: f64,
}

/// Entity-level decision from its inputs. Similarities matter only through
/// `entity_sim >= threshold`.
pub fn classify(abstained: bool, sims: Option<(f64, f64)>, threshold: f64) -> EntityVerdict {
    match (abstained, sims) {
        (true, _) | (false, None) => EntityVerdict {
            classification: Classification::Abstained,
            semantic_sim: None,
            token_sim: None,
            entity_sim: None,
            threshold,
        },
        (false, Some((semantic, token))) => {
            let entity = entity_similarity(semantic, token);
            EntityVerdict {
                classification: if entity >= threshold {
                    Classification::Aligned
                } else {
                    Classification::Hallucinated
                },
                semantic_sim: Some(semantic),
                token_sim: Some(token),
                entity_sim: Some(entity),
                threshold,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Nli,
    Llm,
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictFlag {
    /// The LLM judge answered "SUPPORTED", read as explicitly stated.
    SupportedLabel,
    /// The LLM judge reply had no recognisable label after one retry.
    UnparseableLlm,
    /// The expert reply named neither expert after one retry.
    UnparseableExpert,
    /// The translator sentence dropped the entity or fact; the template
    /// sentence was used.
    TranslatorFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub stage: Stage,
    pub llm_label: Option<LlmLabel>,
    pub expert_choice: Option<ExpertChoice>,
}

/// The fact-level state machine. `llm` and `expert` are consulted only when
/// needed; `None` from either means the judge's reply could not be parsed.
pub fn decide_fact<E>(
    nli: NliLabel,
    llm: impl FnOnce() -> Result<Option<LlmLabel>, E>,
    expert: impl FnOnce() -> Result<Option<ExpertChoice>, E>,
) -> Result<Decision, E> {
    let decision = |outcome, stage, llm_label, expert_choice| Decision {
        outcome,
        stage,
        llm_label,
        expert_choice,
    };
    if nli == NliLabel::Entailment {
        return Ok(decision(Outcome::Correct, Stage::Nli, None, None));
    }
    let label = match llm()? {
        None => return Ok(decision(Outcome::Incorrect, Stage::Llm, None, None)),
        Some(l) => l,
    };
    match (label, nli) {
        (LlmLabel::Contradicted | LlmLabel::NotMentioned, _) => {
            Ok(decision(Outcome::Incorrect, Stage::Llm, Some(label), None))
        }
        (LlmLabel::ExplicitlyStated, NliLabel::Neutral) => {
            Ok(decision(Outcome::Correct, Stage::Llm, Some(label), None))
        }
        (LlmLabel::ExplicitlyStated, _) => Ok(match expert()? {
            Some(ExpertChoice::Expert1) => decision(
                Outcome::Correct,
                Stage::Expert,
                Some(label),
                Some(ExpertChoice::Expert1),
            ),
            Some(ExpertChoice::Expert2) => decision(
                Outcome::Incorrect,
                Stage::Expert,
                Some(label),
                Some(ExpertChoice::Expert2),
            ),
            None => decision(Outcome::Incorrect, Stage::Expert, Some(label), None),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub relation_id: String,
    pub golden_fact: String,
    pub outcome: Outcome,
    pub deciding_stage: Stage,
    pub nli_label: NliLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_label: Option<LlmLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_choice: Option<ExpertChoice>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<VerdictFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub points: u8,
    pub abstained: bool,
    pub fact_verdicts: Vec<FactVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
}

pub fn score_question(verdict: &EntityVerdict, facts: Vec<FactVerdict>) -> Result<QuestionScore, ScoreError> {
    let bad = |m: &str| Err(ScoreError::InconsistentInput(m.into()));
    match verdict.classification {
        Classification::Abstained if facts.is_empty() => Ok(QuestionScore {
            points: 1,
            abstained: true,
            fact_verdicts: facts,
        }),
        Classification::Hallucinated if facts.is_empty() => Ok(QuestionScore {
            points: 0,
            abstained: false,
            fact_verdicts: facts,
        }),
        Classification::Aligned if facts.len() == 3 => Ok(QuestionScore {
            points: facts.iter().filter(|f| f.outcome == Outcome::Correct).count() as u8,
            abstained: false,
            fact_verdicts: facts,
        }),
        Classification::Aligned => bad("aligned responses need exactly three fact verdicts"),
        _ => bad("only aligned responses carry fact verdicts"),
    }
}

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("question {0} has no description")]
    MissingDescription(usize),
    #[error("question {index}: {message}")]
    Invalid { index: usize, message: String },
}

/// One backend exchange, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: String,
    pub request_hash: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
    pub latencies: Vec<(String, Duration)>,
}

/// A chat role: which backend serves it and with what settings.
#[derive(Clone)]
pub struct RoleBinding {
    pub role: String,
    pub backend: Arc<dyn ChatBackend>,
    pub model_id: String,
    pub system_prompt: String,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl RoleBinding {
    pub fn request(&self, user_prompt: String) -> ChatRequest {
        ChatRequest {
            role: self.role.clone(),
            model_id: self.model_id.clone(),
            system_prompt: self.system_prompt.clone(),
            user_prompt,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }

    /// Sends a prompt and records the exchange.
    pub fn ask(&self, prompt: String, transcript: &mut Transcript) -> Result<String, BackendError> {
        let response = self.backend.complete(&self.request(prompt))?;
        transcript.latencies.push((self.role.clone(), response.latency));
        transcript.exchanges.push(Exchange {
            role: self.role.clone(),
            request_hash: response.request_hash,
            output: response.text.clone(),
            usage: response.usage,
        });
        Ok(response.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationSettings {
    pub threshold: f64,
    pub token_similarity: TokenSimilarity,
}

impl Default for VerificationSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            token_similarity: TokenSimilarity::TokenSet,
        }
    }
}

#[derive(Clone)]
pub struct Verifier {
    pub abstention_detector: RoleBinding,
    pub fact_translator: RoleBinding,
    pub llm_entailment: RoleBinding,
    pub expert: RoleBinding,
    pub embedding: Arc<dyn EmbeddingBackend>,
    pub nli: Arc<dyn NliBackend>,
    pub settings: VerificationSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub entity_verdict: EntityVerdict,
    pub score: QuestionScore,
}

/// Template sentence used when the translator's sentence is unusable.
pub fn fallback_golden_fact(entity_label: &str, relation_label: &str, tense: Tense, fact: &str) -> String {
    format!("{entity_label}'s {relation_label} {} {fact}.", tense.verb())
}

fn clean_sentence(reply: &str) -> String {
    reply
        .trim()
        .trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}')
        .trim()
        .to_owned()
}

impl Verifier {
    /// Whether the detector judged the response an abstention. A reply
    /// naming neither label is retried once, then read as answered.
    pub fn detect_abstention(&self, question: &str, response: &str, t: &mut Transcript) -> Result<bool, BackendError> {
        for attempt in 0..2 {
            let reply = self
                .abstention_detector
                .ask(prompts::abstention_prompt(question, response), t)?;
            if let Some(abstained) = prompts::parse_abstention(&reply) {
                return Ok(abstained);
            }
            log::warn!(
                "abstention detector reply {reply:?} has no label (attempt {})",
                attempt + 1
            );
        }
        Ok(false)
    }

    fn embed(&self, text: &str, t: &mut Transcript) -> Result<Vec<f64>, BackendError> {
        let e = self.embedding.embed(text)?;
        if e.values.len() != self.embedding.dimension() {
            return Err(BackendError::DimensionMismatch {
                backend: "embedding".into(),
                expected: self.embedding.dimension(),
                got: e.values.len(),
            });
        }
        t.exchanges.push(Exchange {
            role: "embedding".into(),
            request_hash: e.request_hash,
            output: format!("{}-dimensional vector", e.values.len()),
            usage: None,
        });
        Ok(e.values)
    }

    pub fn classify_entity_level(
        &self,
        question: &str,
        response: &str,
        description: &str,
        t: &mut Transcript,
    ) -> Result<EntityVerdict, BackendError> {
        if self.detect_abstention(question, response, t)? {
            return Ok(classify(true, None, self.settings.threshold));
        }
        let a = self.embed(response, t)?;
        let b = self.embed(description, t)?;
        let semantic = semantic_similarity(&a, &b);
        let token = self.settings.token_similarity.score(response, description);
        Ok(classify(false, Some((semantic, token)), self.settings.threshold))
    }

    /// Golden-fact sentence plus whether the template fallback was used.
    pub fn render_golden_fact(
        &self,
        entity_label: &str,
        entity_type: &str,
        relation_label: &str,
        tense: Tense,
        fact: &str,
        t: &mut Transcript,
    ) -> Result<(String, bool), BackendError> {
        let prompt = prompts::translator_prompt(entity_label, entity_type, relation_label, tense.verb(), fact);
        for _ in 0..2 {
            let sentence = clean_sentence(&self.fact_translator.ask(prompt.clone(), t)?);
            if sentence.contains(entity_label) && sentence.contains(fact) {
                return Ok((sentence, false));
            }
        }
        Ok((fallback_golden_fact(entity_label, relation_label, tense, fact), true))
    }

    pub fn verify_fact(
        &self,
        relation_id: &str,
        golden_fact: &str,
        response: &str,
        t: &mut Transcript,
    ) -> Result<FactVerdict, BackendError> {
        let nli = self.nli.classify(response, golden_fact)?;
        t.exchanges.push(Exchange {
            role: "nli".into(),
            request_hash: nli.request_hash.clone(),
            output: format!("{:?}", nli.label).to_lowercase(),
            usage: None,
        });
        let mut flags = Vec::new();
        let decision = {
            let flags = &mut flags;
            let t = std::cell::RefCell::new(t);
            decide_fact(
                nli.label,
                || -> Result<_, BackendError> {
                    for _ in 0..2 {
                        let reply = self.llm_entailment.ask(
                            prompts::llm_entailment_prompt(response, golden_fact),
                            &mut t.borrow_mut(),
                        )?;
                        if let Some((label, supported)) = prompts::parse_llm_label(&reply) {
                            if supported {
                                flags.push(VerdictFlag::SupportedLabel);
                            }
                            return Ok(Some(label));
                        }
                    }
                    flags.push(VerdictFlag::UnparseableLlm);
                    Ok(None)
                },
                || -> Result<_, BackendError> {
                    for _ in 0..2 {
                        let reply = self
                            .expert
                            .ask(prompts::expert_prompt(response, golden_fact), &mut t.borrow_mut())?;
                        if let Some(choice) = prompts::parse_expert_choice(&reply) {
                            return Ok(Some(choice));
                        }
                    }
                    Ok(None)
                },
            )?
        };
        if decision.stage == Stage::Expert && decision.expert_choice.is_none() {
            flags.push(VerdictFlag::UnparseableExpert);
        }
        Ok(FactVerdict {
            relation_id: relation_id.into(),
            golden_fact: golden_fact.into(),
            outcome: decision.outcome,
            deciding_stage: decision.stage,
            nli_label: nli.label,
            llm_label: decision.llm_label,
            expert_choice: decision.expert_choice,
            flags,
        })
    }

    /// Runs both filters on a response and scores it.
    pub fn verify(
        &self,
        spec: &QuestionSpec,
        response: &str,
        tables: &Tables,
        t: &mut Transcript,
    ) -> Result<Verification, VerificationError> {
        let description = spec
            .focal
            .description
            .as_deref()
            .ok_or(VerificationError::MissingDescription(spec.question_index))?;
        let entity_verdict = self.classify_entity_level(&spec.prompt_text, response, description, t)?;
        let mut facts = Vec::new();
        if entity_verdict.classification == Classification::Aligned {
            let type_label = tables
                .types
                .get(&spec.focal.type_id)
                .map(|e| e.label.to_lowercase())
                .unwrap_or_else(|| spec.focal.type_id.clone());
            for triple in &spec.triples {
                let (golden, fallback) = self.render_golden_fact(
                    &spec.focal.label,
                    &type_label,
                    &triple.relation_label,
                    triple.tense_indicator,
                    &triple.fact_value,
                    t,
                )?;
                let mut verdict = self.verify_fact(&triple.relation_id, &golden, response, t)?;
                if fallback {
                    verdict.flags.insert(0, VerdictFlag::TranslatorFallback);
                }
                facts.push(verdict);
            }
        }
        let score = score_question(&entity_verdict, facts)?;
        Ok(Verification { entity_verdict, score })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{HashEmbedding, MockChat, MockNli, MockScript};
    use std::convert::Infallible;

    #[test]
    fn entailment_short_circuits() {
        let d = decide_fact::<Infallible>(
            NliLabel::Entailment,
            || panic!("llm consulted"),
            || panic!("expert consulted"),
        )
        .unwrap();
        assert_eq!((d.outcome, d.stage), (Outcome::Correct, Stage::Nli));
    }

    #[test]
    fn unparseable_stages_are_conservative() {
        let d = decide_fact::<Infallible>(NliLabel::Neutral, || Ok(None), || panic!()).unwrap();
        assert_eq!((d.outcome, d.stage), (Outcome::Incorrect, Stage::Llm));
        let d = decide_fact::<Infallible>(
            NliLabel::Contradiction,
            || Ok(Some(LlmLabel::ExplicitlyStated)),
            || Ok(None),
        )
        .unwrap();
        assert_eq!((d.outcome, d.stage), (Outcome::Incorrect, Stage::Expert));
    }

    #[test]
    fn classification_boundary_is_inclusive() {
        // 0.7*0.751 + 0.3*0.751 = 0.751 >= 0.750
        assert_eq!(
            classify(false, Some((0.751, 0.751)), 0.75).classification,
            Classification::Aligned
        );
        assert_eq!(
            classify(false, Some((0.6, 0.6)), 0.7).classification,
            Classification::Hallucinated
        );
        let v = classify(true, Some((1.0, 1.0)), 0.7);
        assert_eq!(v.classification, Classification::Abstained);
        assert!(v.entity_sim.is_none() && v.semantic_sim.is_none() && v.token_sim.is_none());
    }

    fn fact(outcome: Outcome) -> FactVerdict {
        FactVerdict {
            relation_id: "P1".into(),
            golden_fact: "x".into(),
            outcome,
            deciding_stage: Stage::Nli,
            nli_label: NliLabel::Entailment,
            llm_label: None,
            expert_choice: None,
            flags: vec![],
        }
    }

    #[test]
    fn scoring_rules() {
        let aligned = classify(false, Some((1.0, 1.0)), 0.7);
        let s = score_question(
            &aligned,
            vec![fact(Outcome::Correct), fact(Outcome::Correct), fact(Outcome::Incorrect)],
        )
        .unwrap();
        assert_eq!(s.points, 2);
        assert_eq!(score_question(&classify(true, None, 0.7), vec![]).unwrap().points, 1);
        let halluc = classify(false, Some((0.0, 0.0)), 0.7);
        assert_eq!(score_question(&halluc, vec![]).unwrap().points, 0);
        assert!(score_question(&halluc, vec![fact(Outcome::Correct)]).is_err());
        assert!(score_question(&aligned, vec![fact(Outcome::Correct)]).is_err());
    }

    fn role(name: &str, chat: Arc<dyn ChatBackend>) -> RoleBinding {
        RoleBinding {
            role: name.into(),
            backend: chat,
            model_id: "mock".into(),
            system_prompt: String::new(),
            temperature: Some(0.0),
            top_p: Some(0.6),
            max_tokens: None,
        }
    }

    fn verifier(script: &str) -> Verifier {
        let script: MockScript = serde_json::from_str(script).unwrap();
        let chat: Arc<dyn ChatBackend> = Arc::new(MockChat::new("mock", script));
        Verifier {
            abstention_detector: role("abstention_detector", chat.clone()),
            fact_translator: role("fact_translator", chat.clone()),
            llm_entailment: role("llm_entailment", chat.clone()),
            expert: role("expert", chat),
            embedding: Arc::new(HashEmbedding::new(32, 1)),
            nli: Arc::new(MockNli::default()),
            settings: VerificationSettings::default(),
        }
    }

    #[test]
    fn golden_fact_contract() {
        let v = verifier(
            r#"{"rules":[
                {"role":"fact_translator","contains":["Chicago"],"reply":"Robin Williams was born in Chicago."},
                {"role":"fact_translator","contains":["Glasgow"],"replies":["Robin was born in Scotland.","Still wrong."]}
            ]}"#,
        );
        let mut t = Transcript::default();
        let (s, fb) = v
            .render_golden_fact(
                "Robin Williams",
                "human",
                "place of birth",
                Tense::Was,
                "Chicago",
                &mut t,
            )
            .unwrap();
        assert!(!fb && s.contains("Robin Williams") && s.contains("Chicago"));
        let (s, fb) = v
            .render_golden_fact(
                "Robin Williams",
                "human",
                "place of birth",
                Tense::Was,
                "Glasgow",
                &mut t,
            )
            .unwrap();
        assert!(fb);
        assert_eq!(s, "Robin Williams's place of birth was Glasgow.");
        assert_eq!(t.exchanges.len(), 3);
        assert_eq!(
            fallback_golden_fact("Ada", "occupation", Tense::Is, "poet"),
            "Ada's occupation is poet."
        );
    }

    #[test]
    fn abstention_retries_then_defaults_to_answered() {
        let v = verifier(r#"{"rules":[{"role":"abstention_detector","replies":["hmm","still unsure"]}]}"#);
        let mut t = Transcript::default();
        assert!(!v.detect_abstention("Q", "R", &mut t).unwrap());
        assert_eq!(t.exchanges.len(), 2);
        let v = verifier(r#"{"defaults":{"abstention_detector":"Abstained."}}"#);
        assert!(v
            .detect_abstention(
                "Q",
                "I'm sorry, I don't have reliable information about this person.",
                &mut t
            )
            .unwrap());
    }

    #[test]
    fn verify_fact_records_flags() {
        let v = verifier(
            r#"{"rules":[
                {"role":"llm_entailment","contains":["zebra"],"reply":"SUPPORTED: yes"},
                {"role":"llm_entailment","contains":["lion"],"replies":["??","??"]}
            ]}"#,
        );
        let mut t = Transcript::default();
        let f = v
            .verify_fact("P1", "It likes zebra.", "Some response.", &mut t)
            .unwrap();
        assert_eq!((f.outcome, f.deciding_stage), (Outcome::Correct, Stage::Llm));
        assert_eq!(f.flags, [VerdictFlag::SupportedLabel]);
        let f = v.verify_fact("P1", "It likes lion.", "Some response.", &mut t).unwrap();
        assert_eq!((f.outcome, f.deciding_stage), (Outcome::Incorrect, Stage::Llm));
        assert_eq!(f.flags, [VerdictFlag::UnparseableLlm]);
        let f = v
            .verify_fact("P1", "It likes cats.", "It likes cats. And dogs.", &mut t)
            .unwrap();
        assert_eq!((f.outcome, f.deciding_stage), (Outcome::Correct, Stage::Nli));
    }
}
