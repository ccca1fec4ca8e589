//! Deterministic stand-ins for the model backends.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    content_hash, BackendError, ChatBackend, ChatRequest, ChatResponse, Embedding, EmbeddingBackend, NliBackend,
    NliLabel, NliScores, NliVerdict, TokenUsage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Timeout,
    Empty,
}

/// One scripted reply. A rule matches when its role (if any) equals the
/// request role and every `contains` fragment occurs in the user prompt.
/// `replies` are served in order to repeated identical requests, the last
/// one repeating; `reply` is shorthand for a single reply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<MockFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Reply per role when no rule matches.
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub struct MockChat {
    name: String,
    by_role: HashMap<String, Vec<usize>>,
    any_role: Vec<usize>,
    script: MockScript,
    served: Mutex<HashMap<(usize, String), usize>>,
}

impl MockChat {
    pub fn new(name: impl Into<String>, script: MockScript) -> Self {
        let mut by_role: HashMap<String, Vec<usize>> = HashMap::new();
        let mut any_role = Vec::new();
        for (i, rule) in script.rules.iter().enumerate() {
            match &rule.role {
                Some(r) => by_role.entry(r.clone()).or_default().push(i),
                None => any_role.push(i),
            }
        }
        Self {
            name: name.into(),
            by_role,
            any_role,
            script,
            served: Mutex::new(HashMap::new()),
        }
    }

    fn find(&self, request: &ChatRequest) -> Option<usize> {
        let matches = |i: &&usize| {
            self.script.rules[**i]
                .contains
                .iter()
                .all(|c| request.user_prompt.contains(c.as_str()))
        };
        let role_rules = self.by_role.get(&request.role).map(Vec::as_slice).unwrap_or(&[]);
        // rules keep script order across the role-specific and any-role lists
        let a = role_rules.iter().find(matches).copied();
        let b = self.any_role.iter().find(matches).copied();
        match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }
}

fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl ChatBackend for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let request_hash = content_hash(&[
            &request.role,
            &request.model_id,
            &request.system_prompt,
            &request.user_prompt,
            &format!("{:?}/{:?}/{:?}", request.temperature, request.top_p, request.max_tokens),
        ]);
        let text = match self.find(request) {
            Some(i) => {
                let rule = &self.script.rules[i];
                match rule.fail {
                    Some(MockFailure::Timeout) => {
                        return Err(BackendError::Timeout {
                            backend: self.name.clone(),
                        })
                    }
                    Some(MockFailure::Empty) => {
                        return Err(BackendError::EmptyCompletion {
                            backend: self.name.clone(),
                        })
                    }
                    None => {}
                }
                let replies: Vec<&String> = rule.reply.iter().chain(&rule.replies).collect();
                if replies.is_empty() {
                    return Err(BackendError::EmptyCompletion {
                        backend: self.name.clone(),
                    });
                }
                let mut served = self.served.lock().unwrap_or_else(|e| e.into_inner());
                let n = served.entry((i, request_hash.clone())).or_insert(0);
                let text = replies[(*n).min(replies.len() - 1)].clone();
                *n += 1;
                text
            }
            None => match self.script.defaults.get(&request.role) {
                Some(t) => t.clone(),
                None => {
                    return Err(BackendError::Rejected {
                        backend: self.name.clone(),
                        status: 404,
                        body: format!("no scripted reply for role {}", request.role),
                    })
                }
            },
        };
        if text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion {
                backend: self.name.clone(),
            });
        }
        Ok(ChatResponse {
            usage: Some(TokenUsage {
                prompt_tokens: whitespace_tokens(&request.system_prompt) + whitespace_tokens(&request.user_prompt),
                completion_tokens: whitespace_tokens(&text),
            }),
            text,
            request_hash,
            latency: Duration::ZERO,
        })
    }
}

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Seeded random projection of token counts. Each token owns a pseudo-random
/// vector with components uniform in [-1, 1), drawn by splitmix64 seeded
/// with `seed` xor the first eight bytes (little-endian) of the token's
/// SHA-256; the text vector is the sum of its tokens' vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dimension: usize,
    seed: u64,
}

impl HashEmbedding {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut state = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) ^ self.seed;
        (0..self.dimension)
            .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect()
    }
}

impl EmbeddingBackend for HashEmbedding {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
        let mut values = vec![0.0; self.dimension];
        for (token, count) in counts {
            for (v, c) in values.iter_mut().zip(self.token_vector(&token)) {
                *v += c * count as f64;
            }
        }
        Ok(Embedding {
            values,
            request_hash: content_hash(&["hash-embedding", text]),
        })
    }
}

/// Pre-recorded vectors looked up by exact text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableEmbedding {
    pub dimension: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl TableEmbedding {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let table: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some((k, v)) = table.vectors.iter().find(|(_, v)| v.len() != table.dimension) {
            return Err(format!(
                "{}: vector for {k:?} has {} values, expected {}",
                path.display(),
                v.len(),
                table.dimension
            ));
        }
        Ok(table)
    }
}

impl EmbeddingBackend for TableEmbedding {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let values = self
            .vectors
            .get(text)
            .cloned()
            .ok_or_else(|| BackendError::Unavailable {
                backend: "embedding-table".into(),
                message: format!("no recorded vector for {:?}", text.chars().take(40).collect::<String>()),
            })?;
        Ok(Embedding {
            values,
            request_hash: content_hash(&["embedding-table", text]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliRule {
    pub premise_contains: String,
    pub hypothesis_contains: String,
    pub label: NliLabel,
}

/// Rule-based NLI. Explicit rules are checked in order; failing those, a
/// premise containing the whole hypothesis (case and whitespace folded,
/// final period dropped) entails it; anything else is neutral.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockNli {
    #[serde(default)]
    pub rules: Vec<NliRule>,
}

fn fold(text: &str) -> String {
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    joined.trim_end_matches('.').to_owned()
}

impl MockNli {
    pub fn scores_for(label: NliLabel) -> NliScores {
        match label {
            NliLabel::Entailment => NliScores {
                entailment: 0.9,
                neutral: 0.07,
                contradiction: 0.03,
            },
            NliLabel::Neutral => NliScores {
                entailment: 0.1,
                neutral: 0.8,
                contradiction: 0.1,
            },
            NliLabel::Contradiction => NliScores {
                entailment: 0.03,
                neutral: 0.12,
                contradiction: 0.85,
            },
        }
    }
}

impl NliBackend for MockNli {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "premise and hypothesis must be non-empty".into(),
            ));
        }
        let label = self
            .rules
            .iter()
            .find(|r| premise.contains(&r.premise_contains) && hypothesis.contains(&r.hypothesis_contains))
            .map(|r| r.label)
            .unwrap_or_else(|| {
                if fold(premise).contains(&fold(hypothesis)) {
                    NliLabel::Entailment
                } else {
                    NliLabel::Neutral
                }
            });
        Ok(NliVerdict {
            label,
            scores: Self::scores_for(label),
            request_hash: content_hash(&["mock-nli", premise, hypothesis]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: &str, prompt: &str) -> ChatRequest {
        ChatRequest {
            role: role.into(),
            model_id: "mock".into(),
            system_prompt: String::new(),
            user_prompt: prompt.into(),
            temperature: Some(0.0),
            top_p: Some(0.6),
            max_tokens: None,
        }
    }

    fn script() -> MockScript {
        serde_json::from_str(
            r#"{
              "rules": [
                {"role": "evaluated_model", "contains": ["Ada"], "reply": "Ada was a mathematician."},
                {"role": "expert", "contains": ["flaky"], "replies": ["dunno", "Expert 1"]},
                {"role": "evaluated_model", "contains": ["Slow"], "fail": "timeout"},
                {"contains": ["anyone"], "reply": "generic"}
              ],
              "defaults": {"abstention_detector": "Answered"}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn scripted_replies() {
        let chat = MockChat::new("mock", script());
        assert_eq!(
            chat.complete(&req("evaluated_model", "About Ada")).unwrap().text,
            "Ada was a mathematician."
        );
        assert_eq!(
            chat.complete(&req("abstention_detector", "x")).unwrap().text,
            "Answered"
        );
        assert_eq!(chat.complete(&req("expert", "anyone")).unwrap().text, "generic");
        assert!(matches!(
            chat.complete(&req("evaluated_model", "Slow one")),
            Err(BackendError::Timeout { .. })
        ));
        assert!(matches!(
            chat.complete(&req("expert", "nothing")),
            Err(BackendError::Rejected { .. })
        ));
    }

    #[test]
    fn reply_sequences_advance_per_request() {
        let chat = MockChat::new("mock", script());
        let a = req("expert", "flaky A");
        let b = req("expert", "flaky B");
        assert_eq!(chat.complete(&a).unwrap().text, "dunno");
        assert_eq!(chat.complete(&b).unwrap().text, "dunno");
        assert_eq!(chat.complete(&a).unwrap().text, "Expert 1");
        assert_eq!(chat.complete(&a).unwrap().text, "Expert 1");
    }

    #[test]
    fn splitmix_reference_values() {
        // published test vector for seed 1234567
        let mut s = 1234567u64;
        assert_eq!(splitmix64(&mut s), 6457827717110365317);
        assert_eq!(splitmix64(&mut s), 3203168211198807973);
    }

    #[test]
    fn hash_embedding_is_a_token_projection() {
        let e = HashEmbedding::new(8, 42);
        let a = e.embed("a").unwrap().values;
        assert_eq!(a, e.token_vector("a"));
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(
            e.embed("A  a").unwrap().values,
            a.iter().map(|v| v * 2.0).collect::<Vec<_>>()
        );
        assert_eq!(e.embed("b a").unwrap().values, e.embed("a, b").unwrap().values);
        assert_ne!(HashEmbedding::new(8, 43).embed("a").unwrap().values, a);
        assert!(e.embed("   ").is_err());
    }

    #[test]
    fn mock_nli_rules() {
        let nli = MockNli {
            rules: vec![NliRule {
                premise_contains: "born in Paris".into(),
                hypothesis_contains: "born in Lyon".into(),
                label: NliLabel::Contradiction,
            }],
        };
        let premise = "Marie was born in Paris. Marie was a physicist.";
        assert_eq!(
            nli.classify(premise, "marie was  born in Paris.").unwrap().label,
            NliLabel::Entailment
        );
        assert_eq!(
            nli.classify(premise, "Marie was born in Lyon.").unwrap().label,
            NliLabel::Contradiction
        );
        assert_eq!(
            nli.classify(premise, "Marie was a chemist.").unwrap().label,
            NliLabel::Neutral
        );
        for label in NliLabel::ALL {
            let s = MockNli::scores_for(label);
            assert!((s.entailment + s.neutral + s.contradiction - 1.0).abs() < 1e-12);
        }
    }
}
