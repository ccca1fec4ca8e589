//! Synthetic fixture sets: a small knowledge graph, a scripted model and
//! scripted judges that together exercise every verification path
//! offline.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::backends::mock::{MockRule, MockScript, NliRule};
use crate::backends::NliLabel;
use crate::kg::fixture::{FixtureEntity, FixtureKg, FixtureStatement, FixtureStats, FixtureValue};
use crate::kg::{render_time, Tense};
use crate::tables::Tables;
use crate::verification::fallback_golden_fact;

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "tas", "vol", "dri", "quen", "sab", "nor", "fel", "zan", "mur", "pel", "gor", "wyn",
    "bri", "sto", "ath", "cul", "ves", "oru", "ilm", "dex",
];

const DESCRIPTIVE: [&str; 48] = [
    "noted",
    "regional",
    "archive",
    "influence",
    "early",
    "career",
    "collection",
    "historic",
    "record",
    "museum",
    "valley",
    "harbour",
    "northern",
    "tradition",
    "society",
    "library",
    "academy",
    "documented",
    "exhibition",
    "archival",
    "studied",
    "restored",
    "catalogue",
    "inscription",
    "patron",
    "workshop",
    "foundation",
    "survey",
    "heritage",
    "province",
    "manuscript",
    "gallery",
    "chronicle",
    "journal",
    "edition",
    "assembly",
    "quarter",
    "district",
    "medieval",
    "coastal",
    "river",
    "council",
    "estate",
    "parish",
    "commission",
    "register",
    "annual",
    "festival",
];

const UNRELATED: [&str; 40] = [
    "spacecraft",
    "quantum",
    "robotic",
    "volcano",
    "desert",
    "tournament",
    "champion",
    "software",
    "galaxy",
    "orbital",
    "submarine",
    "telescope",
    "algorithm",
    "reactor",
    "glacier",
    "rainforest",
    "stadium",
    "laser",
    "satellite",
    "cyborg",
    "hurricane",
    "marathon",
    "circuit",
    "genome",
    "asteroid",
    "engine",
    "protocol",
    "mountain",
    "jungle",
    "rocket",
    "penguin",
    "electric",
    "carbon",
    "diamond",
    "thunder",
    "ocean",
    "crystal",
    "neon",
    "plasma",
    "cosmic",
];

/// How the scripted model answers a question about an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerStyle {
    Abstain,
    /// A declared refusal phrased as a generic disclaimer.
    Disclaimer,
    Unrelated,
    /// Half of the description mixed with unrelated words.
    Partial,
    Faithful,
}

/// How one fact appears in a faithful answer and how the judges treat it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactStyle {
    /// The golden sentence verbatim; the NLI model entails it.
    Verbatim,
    /// Paraphrased; the LLM judge says explicitly stated.
    Paraphrased,
    /// Paraphrased; the LLM judge says supported.
    Supported,
    /// A wrong value; the LLM judge says contradicted.
    Wrong,
    /// Left out; the LLM judge says not mentioned.
    Omitted,
    /// NLI contradiction, LLM explicitly stated; the expert sides with entailment.
    ExpertEntails,
    /// NLI contradiction, LLM explicitly stated; the expert sides with contradiction.
    ExpertContradicts,
    /// The LLM judge never gives a label.
    Unparseable,
    /// The translator drops the fact; the answer contains the template sentence.
    TranslatorFails,
}

const FACT_STYLES: [FactStyle; 9] = [
    FactStyle::Verbatim,
    FactStyle::Paraphrased,
    FactStyle::Supported,
    FactStyle::Wrong,
    FactStyle::Omitted,
    FactStyle::ExpertEntails,
    FactStyle::ExpertContradicts,
    FactStyle::Unparseable,
    FactStyle::TranslatorFails,
];

/// Entities that the question generator must reject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Defect {
    InvalidType,
    Unlabeled,
    NoDescription,
    MissingStatistic,
    NoBirthDate,
    TooFewRelations,
}

pub struct SyntheticFixtures {
    pub kg: FixtureKg,
    pub script: MockScript,
    pub nli_rules: Vec<NliRule>,
}

struct Names {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Names {
    fn word(&mut self, syllables: usize) -> String {
        let w: String = (0..syllables)
            .map(|_| *SYLLABLES.choose(&mut self.rng).expect("non-empty"))
            .collect();
        let mut c = w.chars();
        let first = c.next().expect("non-empty").to_uppercase().collect::<String>();
        first + c.as_str()
    }

    fn fresh(&mut self) -> String {
        loop {
            let name = format!("{} {}", self.word(3), self.word(3));
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }
}

fn words(rng: &mut impl Rng, pool: &[&str], n: usize) -> Vec<String> {
    (0..n)
        .map(|_| pool.choose(rng).expect("non-empty").to_string())
        .collect()
}

fn stats(rng: &mut impl Rng) -> FixtureStats {
    let log_uniform = |rng: &mut ChaCha8Rng, hi: f64| (10f64.powf(rng.gen_range(0.0..hi))) as i64;
    let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
    let external_ids = log_uniform(&mut r, 3.0);
    let linked_entities = log_uniform(&mut r, 3.5);
    FixtureStats {
        page_views: Some(log_uniform(&mut r, 7.0)),
        site_links: Some(1 + log_uniform(&mut r, 2.3)),
        statements: Some(5 + external_ids + linked_entities + log_uniform(&mut r, 2.5)),
        external_ids,
        linked_entities,
        references: log_uniform(&mut r, 3.5),
    }
}

fn stmt(tables: &Tables, relation_id: &str, value: FixtureValue) -> FixtureStatement {
    FixtureStatement {
        relation_id: relation_id.into(),
        relation_label: tables
            .relations
            .get(relation_id)
            .map(|r| r.label.clone())
            .unwrap_or_default(),
        value,
    }
}

fn entity_value(label: String) -> FixtureValue {
    let id = format!("Q{}", 900_000 + crate::seed::derive_seed(0, &[&label]) % 100_000);
    FixtureValue::Entity { id, label: Some(label) }
}

struct Builder<'a> {
    tables: &'a Tables,
    rng: ChaCha8Rng,
    names: Names,
    kg: FixtureKg,
    script: MockScript,
    nli_rules: Vec<NliRule>,
}

fn rule(role: &str, contains: Vec<String>, reply: impl Into<String>) -> MockRule {
    MockRule {
        role: Some(role.into()),
        contains,
        reply: Some(reply.into()),
        ..MockRule::default()
    }
}

fn fact_marker(golden: &str) -> String {
    format!("### Fact:\n{golden}\n")
}

impl Builder<'_> {
    fn words(&mut self, pool: &[&str], n: std::ops::Range<usize>) -> Vec<String> {
        let n = self.rng.gen_range(n);
        words(&mut self.rng, pool, n)
    }

    fn defect(&mut self, index: usize, defect: Defect) {
        let label = self.names.fresh();
        let type_id = if defect == Defect::InvalidType {
            "Q7187"
        } else {
            "Q3305213"
        };
        let mut e = FixtureEntity {
            id: format!("Q{}", 100_000 + index),
            label: Some(label.clone()),
            type_id: type_id.into(),
            statements: ["P170", "P571", "P195", "P276"]
                .iter()
                .map(|r| stmt(self.tables, r, entity_value(self.names.fresh())))
                .collect(),
            stats: stats(&mut self.rng),
            description: Some(format!(
                "{label} is a painting. {}",
                words(&mut self.rng, &DESCRIPTIVE, 30).join(" ")
            )),
        };
        match defect {
            Defect::InvalidType => {}
            Defect::Unlabeled => e.label = None,
            Defect::NoDescription => e.description = None,
            Defect::MissingStatistic => e.stats.page_views = None,
            Defect::TooFewRelations => e.statements.truncate(2),
            Defect::NoBirthDate => {
                e.type_id = "Q5".into();
                e.statements = ["P106", "P19", "P69"]
                    .iter()
                    .map(|r| stmt(self.tables, r, entity_value(self.names.fresh())))
                    .collect();
            }
        }
        self.kg.entities.push(e);
    }

    fn usable(&mut self, index: usize) {
        let types: Vec<_> = self
            .tables
            .types
            .iter()
            .filter(|t| t.valid_relations.len() >= 4)
            .cloned()
            .collect();
        let ty = types.choose(&mut self.rng).expect("types available").clone();
        let label = self.names.fresh();
        let id = format!("Q{}", 100_000 + index);

        let mut relations: Vec<String> = ty.valid_relations.to_vec();
        relations.sort();
        relations.shuffle(&mut self.rng);
        relations.truncate(4);
        let mut statements = Vec::new();
        let mut facts = Vec::new();
        for rel in &relations {
            let value = if matches!(rel.as_str(), "P571" | "P577") {
                let y = self.rng.gen_range(1600..2020);
                let time = format!(
                    "{y}-{:02}-{:02}T00:00:00Z",
                    self.rng.gen_range(2..=12),
                    self.rng.gen_range(1..=28)
                );
                FixtureValue::Time { time }
            } else {
                entity_value(self.names.fresh())
            };
            let fact = match &value {
                FixtureValue::Time { time } => render_time(time).expect("valid time"),
                FixtureValue::Entity { label, .. } => label.clone().expect("labelled"),
                _ => unreachable!(),
            };
            facts.push((rel.clone(), fact));
            statements.push(stmt(self.tables, rel, value));
        }
        let mut tense = ty.default_tense;
        if ty.lifespan_context {
            let born = self.rng.gen_range(1700..1990);
            statements.push(stmt(
                self.tables,
                "P569",
                FixtureValue::Time {
                    time: format!("{born}-03-14T00:00:00Z"),
                },
            ));
            if self.rng.gen_bool(0.5) {
                tense = Tense::Was;
                statements.push(stmt(
                    self.tables,
                    "P570",
                    FixtureValue::Time {
                        time: format!("{}-08-02T00:00:00Z", born + self.rng.gen_range(30..90)),
                    },
                ));
            }
        }
        let description = format!(
            "{label} is a {} {}.",
            ty.label.to_lowercase(),
            self.words(&DESCRIPTIVE, 50..80).join(" ")
        );

        let style = match self.rng.gen_range(0..100) {
            0..=9 => AnswerStyle::Abstain,
            10..=14 => AnswerStyle::Disclaimer,
            15..=29 => AnswerStyle::Unrelated,
            30..=39 => AnswerStyle::Partial,
            _ => AnswerStyle::Faithful,
        };
        let response = match style {
            AnswerStyle::Abstain => format!("I am not familiar with {label}, so I cannot provide an overview."),
            AnswerStyle::Disclaimer => {
                format!("Information about {label} may be incomplete and I would advise consulting reliable sources.")
            }
            AnswerStyle::Unrelated => format!(
                "{label} is widely known for {}.",
                self.words(&UNRELATED, 40..70).join(" ")
            ),
            AnswerStyle::Partial | AnswerStyle::Faithful => {
                let mut body: Vec<String> = description.split_whitespace().map(str::to_owned).collect();
                if style == AnswerStyle::Partial {
                    let keep = body.len() * self.rng.gen_range(35..75) / 100;
                    body.truncate(keep.max(4));
                    body.extend(self.words(&UNRELATED, 15..40));
                }
                let mut text = body.join(" ");
                for (rel, fact) in &facts {
                    let rel_label = self
                        .tables
                        .relations
                        .get(rel)
                        .map(|r| r.label.to_lowercase())
                        .unwrap_or_default();
                    let fs = *FACT_STYLES.choose(&mut self.rng).expect("non-empty");
                    if let Some(sentence) =
                        self.fact_rules(&label, &ty.label.to_lowercase(), &rel_label, tense, fact, fs)
                    {
                        text.push(' ');
                        text.push_str(&sentence);
                    }
                }
                text
            }
        };
        if style == AnswerStyle::Disclaimer {
            self.script.rules.push(rule(
                "abstention_detector",
                vec![format!("### Response: Information about {label} may be")],
                "Abstained",
            ));
        }
        self.script.rules.push(rule(
            "evaluated_model",
            vec![format!("overview of {label} (")],
            response,
        ));
        self.kg.entities.push(FixtureEntity {
            id,
            label: Some(label),
            type_id: ty.type_id.clone(),
            statements,
            stats: stats(&mut self.rng),
            description: Some(description),
        });
    }

    /// Adds translator and judge rules for one fact and returns the sentence
    /// the model's answer should contain, if any.
    fn fact_rules(
        &mut self,
        label: &str,
        type_label: &str,
        rel: &str,
        tense: Tense,
        fact: &str,
        style: FactStyle,
    ) -> Option<String> {
        let verb = tense.verb();
        let golden = format!("The {rel} of {label} {verb} {fact}.");
        let translator_key = vec![format!("({label} ({type_label}) , {rel} , {verb} , {fact})")];
        if style == FactStyle::TranslatorFails {
            self.script.rules.push(rule(
                "fact_translator",
                translator_key,
                "Here is the sentence you asked for.",
            ));
            return Some(fallback_golden_fact(label, rel, tense, fact));
        }
        self.script
            .rules
            .push(rule("fact_translator", translator_key, golden.clone()));
        let paraphrase = format!("{label} has {fact} listed under {rel}.");
        let llm = |reply: &str| rule("llm_entailment", vec![fact_marker(&golden)], reply);
        match style {
            FactStyle::Verbatim => Some(golden),
            FactStyle::Paraphrased => {
                self.script.rules.push(llm("EXPLICITLY STATED: the response names it."));
                Some(paraphrase)
            }
            FactStyle::Supported => {
                self.script.rules.push(llm("SUPPORTED: the response implies it."));
                Some(paraphrase)
            }
            FactStyle::Wrong => {
                self.script
                    .rules
                    .push(llm("CONTRADICTED: the response gives another value."));
                let wrong = self.names.fresh();
                Some(format!("The {rel} of {label} {verb} {wrong}."))
            }
            FactStyle::Omitted => None,
            FactStyle::ExpertEntails | FactStyle::ExpertContradicts => {
                self.script.rules.push(llm("EXPLICITLY STATED: the response names it."));
                self.nli_rules.push(NliRule {
                    premise_contains: paraphrase.clone(),
                    hypothesis_contains: golden.clone(),
                    label: NliLabel::Contradiction,
                });
                let choice = if style == FactStyle::ExpertEntails {
                    "Expert 1"
                } else {
                    "Expert 2"
                };
                self.script
                    .rules
                    .push(rule("expert", vec![fact_marker(&golden)], choice));
                Some(paraphrase)
            }
            FactStyle::Unparseable => {
                self.script.rules.push(llm("I cannot tell."));
                Some(paraphrase)
            }
            FactStyle::TranslatorFails => unreachable!(),
        }
    }
}

/// Builds a fixture set with `entities` entities, about one in eight of
/// which the question generator rejects.
pub fn generate(entities: usize, seed: u64, tables: &Tables) -> SyntheticFixtures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = Names {
        rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        used: HashSet::new(),
    };
    let mut b = Builder {
        tables,
        rng,
        names,
        kg: FixtureKg::default(),
        script: MockScript {
            rules: vec![rule(
                "abstention_detector",
                vec!["I am not familiar with".into()],
                "Abstained",
            )],
            defaults: BTreeMap::from([
                ("abstention_detector".into(), "Answered".into()),
                (
                    "llm_entailment".into(),
                    "NOT MENTIONED: the response does not cover it.".into(),
                ),
                ("expert".into(), "Expert 2".into()),
            ]),
        },
        nli_rules: Vec::new(),
    };
    let defects = [
        Defect::InvalidType,
        Defect::Unlabeled,
        Defect::NoDescription,
        Defect::MissingStatistic,
        Defect::NoBirthDate,
        Defect::TooFewRelations,
    ];
    for i in 0..entities {
        if i % 8 == 7 {
            b.defect(i, defects[(i / 8) % defects.len()]);
        } else {
            b.usable(i);
        }
    }
    SyntheticFixtures {
        kg: b.kg,
        script: b.script,
        nli_rules: b.nli_rules,
    }
}

/// Writes `kg.json`, `script.json` and a `config.json` that runs against
/// them, returning the config path.
pub fn write_fixture_set(
    dir: &Path,
    fixtures: &SyntheticFixtures,
    seed: u64,
    questions_per_run: usize,
    runs: usize,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("kg.json"), pretty(&fixtures.kg))?;
    std::fs::write(dir.join("script.json"), pretty(&fixtures.script))?;
    let role = |r: &str| json!({"backend": "scripted", "model": r});
    let config = json!({
        "seed": seed,
        "questions_per_run": questions_per_run,
        "runs": runs,
        "output_dir": "out",
        "max_concurrent_questions": 4,
        "kg": {"fixture": "kg.json"},
        "backends": {
            "scripted": {"kind": "mock_chat", "script": "script.json"},
            "hashed": {"kind": "hash_embedding", "dimension": 64, "seed": seed},
            "rules": {"kind": "mock_nli", "rules": fixtures.nli_rules}
        },
        "roles": {
            "evaluated_model": role("evaluated"),
            "abstention_detector": role("judge"),
            "fact_translator": role("judge"),
            "llm_entailment": role("judge"),
            "expert": role("judge"),
            "embedding": "hashed",
            "nli": "rules"
        }
    });
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&config).expect("config serializes") + "\n",
    )?;
    Ok(path)
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("fixture serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let t = Tables::builtin();
        let a = generate(40, 3, &t);
        let b = generate(40, 3, &t);
        assert_eq!(a.kg, b.kg);
        assert_eq!(a.script, b.script);
        assert_ne!(a.kg, generate(40, 4, &t).kg);
        a.kg.validate().unwrap();
        let labels: HashSet<_> = a.kg.entities.iter().filter_map(|e| e.label.clone()).collect();
        assert_eq!(labels.len(), a.kg.entities.iter().filter(|e| e.label.is_some()).count());
    }
}
