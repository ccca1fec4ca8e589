use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::backends::http::Endpoint;
use crate::backends::mock::NliRule;
use crate::backends::{
    ChatBackend, EmbeddingBackend, HashEmbedding, HttpChat, HttpEmbedding, HttpNli, MockChat, MockNli, MockScript,
    NliBackend, TableEmbedding,
};
use crate::client::{HttpClient, RateLimiter, RetryPolicy};
use crate::difficulty::WeightTable;
use crate::kg::fixture::FixtureKg;
use crate::kg::{KgAccess, KgSettings};
use crate::metrics::HaluDokDenominator;
use crate::question::{GenerationSettings, QuestionGenerator};
use crate::tables::Tables;
use crate::transport::{FixtureStore, HttpTransport, RecordingTransport, ReplayTransport, Transport};
use crate::verification::prompts::EVALUATED_SYSTEM_PROMPT;
use crate::verification::{RoleBinding, TokenSimilarity, VerificationSettings, Verifier};

fn default_questions() -> usize {
    150
}
fn default_runs() -> usize {
    10
}
fn default_threshold() -> f64 {
    crate::verification::DEFAULT_THRESHOLD
}
fn default_concurrency() -> usize {
    4
}

/// Where the reference average difficulty for weighted accuracy comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgQdSource {
    /// The weight file's calibrated constant.
    #[default]
    Calibration,
    /// The mean difficulty over every question of this experiment.
    Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablePaths {
    pub types: PathBuf,
    pub relations: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgConfig {
    /// Serve the knowledge graph from a fixture file instead of the network.
    pub fixture: Option<PathBuf>,
    pub settings: KgSettings,
    pub rate_limit_rps: Option<f64>,
    pub generation: GenerationSettings,
    pub user_agent: String,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            fixture: None,
            settings: KgSettings::default(),
            rate_limit_rps: Some(5.0),
            generation: GenerationSettings::default(),
            user_agent: concat!("halubench/", env!("CARGO_PKG_VERSION"), " (benchmark harness)").into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    #[default]
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub mode: TransportMode,
    pub fixture_dir: Option<PathBuf>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: Option<u64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            mode: TransportMode::Live,
            fixture_dir: None,
            retries: 3,
            backoff_ms: 500,
            timeout_ms: Some(60_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Environment variable whose value, when set, replaces `api_key`.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    MockChat {
        script: PathBuf,
    },
    HttpChat {
        #[serde(flatten)]
        http: HttpBackendConfig,
    },
    HashEmbedding {
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
    TableEmbedding {
        path: PathBuf,
    },
    HttpEmbedding {
        #[serde(flatten)]
        http: HttpBackendConfig,
        model: String,
        dimension: usize,
    },
    MockNli {
        #[serde(default)]
        rules: Vec<NliRule>,
    },
    HttpNli {
        #[serde(flatten)]
        http: HttpBackendConfig,
    },
}

impl BackendConfig {
    fn capability(&self) -> &'static str {
        match self {
            BackendConfig::MockChat { .. } | BackendConfig::HttpChat { .. } => "chat",
            BackendConfig::HashEmbedding { .. }
            | BackendConfig::TableEmbedding { .. }
            | BackendConfig::HttpEmbedding { .. } => "embedding",
            BackendConfig::MockNli { .. } | BackendConfig::HttpNli { .. } => "nli",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRoleConfig {
    pub backend: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

fn default_model() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleBindings {
    pub evaluated_model: ChatRoleConfig,
    pub abstention_detector: ChatRoleConfig,
    pub fact_translator: ChatRoleConfig,
    pub llm_entailment: ChatRoleConfig,
    pub expert: ChatRoleConfig,
    pub embedding: String,
    pub nli: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_questions")]
    pub questions_per_run: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub token_similarity: TokenSimilarity,
    #[serde(default)]
    pub halu_dok_denominator: HaluDokDenominator,
    #[serde(default)]
    pub avg_qd_source: AvgQdSource,
    #[serde(default)]
    pub weight_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub max_concurrent_questions: usize,
    #[serde(default)]
    pub tables: Option<TablePaths>,
    #[serde(default)]
    pub kg: KgConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    pub backends: BTreeMap<String, BackendConfig>,
    pub roles: RoleBindings,
}

fn config_error(m: impl Into<String>) -> HarnessError {
    HarnessError::Config(m.into())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.weight_file {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
        if let Some(t) = &mut self.tables {
            resolve(base, &mut t.types);
            resolve(base, &mut t.relations);
        }
        if let Some(p) = &mut self.kg.fixture {
            resolve(base, p);
        }
        if let Some(p) = &mut self.transport.fixture_dir {
            resolve(base, p);
        }
        for b in self.backends.values_mut() {
            match b {
                BackendConfig::MockChat { script } => resolve(base, script),
                BackendConfig::TableEmbedding { path } => resolve(base, path),
                _ => {}
            }
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.questions_per_run == 0 {
            return Err(config_error("questions_per_run must be at least 1"));
        }
        if self.runs == 0 {
            return Err(config_error("runs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(config_error(format!("threshold {} must be in [0, 1]", self.threshold)));
        }
        if self.max_concurrent_questions == 0 {
            return Err(config_error("max_concurrent_questions must be at least 1"));
        }
        if self.kg.generation.batch_size == 0 || self.kg.generation.max_batches == 0 {
            return Err(config_error("generation batch_size and max_batches must be positive"));
        }
        if self.transport.mode != TransportMode::Live && self.transport.fixture_dir.is_none() {
            return Err(config_error("record and replay modes need transport.fixture_dir"));
        }
        let r = &self.roles;
        let chat_roles = [
            ("evaluated_model", &r.evaluated_model.backend),
            ("abstention_detector", &r.abstention_detector.backend),
            ("fact_translator", &r.fact_translator.backend),
            ("llm_entailment", &r.llm_entailment.backend),
            ("expert", &r.expert.backend),
        ];
        let all = chat_roles.iter().map(|(role, b)| (*role, b.as_str(), "chat")).chain([
            ("embedding", r.embedding.as_str(), "embedding"),
            ("nli", r.nli.as_str(), "nli"),
        ]);
        for (role, backend, capability) in all {
            match self.backends.get(backend) {
                None => {
                    return Err(config_error(format!(
                        "role {role} is bound to unknown backend {backend:?}"
                    )))
                }
                Some(b) if b.capability() != capability => {
                    return Err(config_error(format!(
                        "role {role} needs a {capability} backend but {backend:?} provides {}",
                        b.capability()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Hash of everything that affects results; the output directory and
    /// concurrency level are left out.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
            map.remove("max_concurrent_questions");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.transport.retries,
            base_backoff: Duration::from_millis(self.transport.backoff_ms),
        }
    }
}

/// Everything a run needs, built from a config.
#[derive(Clone)]
pub struct Assembly {
    pub tables: Arc<Tables>,
    pub weights: Arc<WeightTable>,
    pub generator: QuestionGenerator,
    pub evaluated: RoleBinding,
    pub verifier: Verifier,
}

fn network_transport(config: &RunConfig) -> Result<Arc<dyn Transport>, HarnessError> {
    let store = || -> Result<Arc<FixtureStore>, HarnessError> {
        let dir = config
            .transport
            .fixture_dir
            .clone()
            .ok_or_else(|| config_error("missing transport.fixture_dir"))?;
        FixtureStore::open(dir)
            .map(Arc::new)
            .map_err(|e| config_error(e.to_string()))
    };
    let live = || HttpTransport::new(&config.kg.user_agent).map_err(|e| config_error(e.to_string()));
    Ok(match config.transport.mode {
        TransportMode::Live => Arc::new(live()?),
        TransportMode::Record => Arc::new(RecordingTransport::new(live()?, store()?)),
        TransportMode::Replay => Arc::new(ReplayTransport::new(store()?)),
    })
}

fn endpoint(name: &str, http: &HttpBackendConfig, default_timeout: Option<u64>) -> Endpoint {
    let api_key = http
        .api_key_env
        .as_deref()
        .and_then(|var| std::env::var(var).ok())
        .or_else(|| http.api_key.clone());
    Endpoint {
        name: name.into(),
        url: http.url.clone(),
        api_key,
        timeout: http.timeout_ms.or(default_timeout).map(Duration::from_millis),
    }
}

enum Built {
    Chat(Arc<dyn ChatBackend>),
    Embedding(Arc<dyn EmbeddingBackend>),
    Nli(Arc<dyn NliBackend>),
}

fn build_backend(
    name: &str,
    config: &BackendConfig,
    client: &HttpClient,
    timeout: Option<u64>,
) -> Result<Built, HarnessError> {
    Ok(match config {
        BackendConfig::MockChat { script } => {
            let script = MockScript::load(script).map_err(config_error)?;
            Built::Chat(Arc::new(MockChat::new(name, script)))
        }
        BackendConfig::HttpChat { http } => Built::Chat(Arc::new(HttpChat::new(
            client.clone(),
            endpoint(name, http, timeout),
            http.max_in_flight,
        ))),
        BackendConfig::HashEmbedding { dimension, seed } => {
            if *dimension == 0 {
                return Err(config_error(format!("backend {name}: dimension must be positive")));
            }
            Built::Embedding(Arc::new(HashEmbedding::new(*dimension, *seed)))
        }
        BackendConfig::TableEmbedding { path } => {
            Built::Embedding(Arc::new(TableEmbedding::load(path).map_err(config_error)?))
        }
        BackendConfig::HttpEmbedding { http, model, dimension } => Built::Embedding(Arc::new(HttpEmbedding::new(
            client.clone(),
            endpoint(name, http, timeout),
            model.clone(),
            *dimension,
            http.max_in_flight,
        ))),
        BackendConfig::MockNli { rules } => Built::Nli(Arc::new(MockNli { rules: rules.clone() })),
        BackendConfig::HttpNli { http } => Built::Nli(Arc::new(HttpNli::new(
            client.clone(),
            endpoint(name, http, timeout),
            http.max_in_flight,
        ))),
    })
}

/// Role defaults: the evaluated model runs with its own defaults and the
/// fixed system prompt; judges run with their fixed sampling parameters
/// and no system message.
fn role_defaults(role: &str) -> (Option<f64>, Option<f64>, &'static str) {
    match role {
        "evaluated_model" => (None, None, EVALUATED_SYSTEM_PROMPT),
        "fact_translator" => (Some(0.3), Some(0.5), ""),
        _ => (Some(0.0), Some(0.6), ""),
    }
}

impl Assembly {
    pub fn build(config: &RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let tables = Arc::new(match &config.tables {
            Some(p) => Tables::load(&p.types, &p.relations).map_err(|e| config_error(e.to_string()))?,
            None => Tables::builtin(),
        });
        let weights = Arc::new(match &config.weight_file {
            Some(p) => WeightTable::load(p).map_err(|e| config_error(e.to_string()))?,
            None => WeightTable::builtin(),
        });
        if weights.stat_log_bounds.is_none() {
            return Err(config_error("weight file has no stat_log_bounds; run calibrate first"));
        }

        let needs_network = config.kg.fixture.is_none()
            || config.backends.values().any(|b| {
                matches!(
                    b,
                    BackendConfig::HttpChat { .. }
                        | BackendConfig::HttpEmbedding { .. }
                        | BackendConfig::HttpNli { .. }
                )
            });
        let network = if needs_network {
            Some(network_transport(config)?)
        } else {
            None
        };

        let kg_transport: Arc<dyn Transport> = match &config.kg.fixture {
            Some(path) => {
                let kg = FixtureKg::load(path).map_err(config_error)?;
                Arc::new(kg.into_server(config.kg.settings.endpoints.clone()))
            }
            None => network.clone().expect("network transport built"),
        };
        let kg_client = HttpClient::new(kg_transport)
            .with_retry(config.retry_policy())
            .with_rate_limit(Arc::new(RateLimiter::new(if config.kg.fixture.is_some() {
                None
            } else {
                config.kg.rate_limit_rps
            })))
            .with_cache();
        let kg = KgAccess::new(kg_client, config.kg.settings.clone(), tables.clone());
        let generator = QuestionGenerator::new(kg, weights.clone(), config.kg.generation.clone());

        let backend_client = match &network {
            Some(t) => HttpClient::new(t.clone()).with_retry(config.retry_policy()),
            None => HttpClient::new(Arc::new(crate::transport::InstrumentedTransport::new(|r| {
                Err(crate::transport::TransportError::Connect {
                    url: r.url.clone(),
                    message: "no network transport configured".into(),
                })
            }))),
        };
        let mut built = BTreeMap::new();
        for (name, b) in &config.backends {
            built.insert(
                name.clone(),
                build_backend(name, b, &backend_client, config.transport.timeout_ms)?,
            );
        }
        let chat = |role: &str, rc: &ChatRoleConfig| -> Result<RoleBinding, HarnessError> {
            let Some(Built::Chat(backend)) = built.get(&rc.backend) else {
                return Err(config_error(format!("role {role} needs a chat backend")));
            };
            let (t, p, system) = role_defaults(role);
            Ok(RoleBinding {
                role: role.into(),
                backend: backend.clone(),
                model_id: rc.model.clone(),
                system_prompt: rc.system_prompt.clone().unwrap_or_else(|| system.into()),
                temperature: rc.temperature.or(t),
                top_p: rc.top_p.or(p),
                max_tokens: rc.max_tokens,
            })
        };
        let r = &config.roles;
        let Some(Built::Embedding(embedding)) = built.get(&r.embedding) else {
            return Err(config_error("role embedding needs an embedding backend"));
        };
        let Some(Built::Nli(nli)) = built.get(&r.nli) else {
            return Err(config_error("role nli needs an nli backend"));
        };
        let verifier = Verifier {
            abstention_detector: chat("abstention_detector", &r.abstention_detector)?,
            fact_translator: chat("fact_translator", &r.fact_translator)?,
            llm_entailment: chat("llm_entailment", &r.llm_entailment)?,
            expert: chat("expert", &r.expert)?,
            embedding: embedding.clone(),
            nli: nli.clone(),
            settings: VerificationSettings {
                threshold: config.threshold,
                token_similarity: config.token_similarity,
            },
        };
        Ok(Self {
            evaluated: chat("evaluated_model", &r.evaluated_model)?,
            tables,
            weights,
            generator,
            verifier,
        })
    }
}
