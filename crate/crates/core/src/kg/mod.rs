//! Knowledge-graph access: random entity sampling, one-hop subgraphs,
//! popularity statistics and encyclopedia descriptions.
//!
//! Queries go over SPARQL (JSON results), statistics over the KG action API
//! and the page-view REST API, descriptions over the encyclopedia's extract
//! API. All calls share one [`HttpClient`], so caching, rate limiting,
//! retries and record/replay apply uniformly. [`fixture::FixtureKg`] serves
//! the same wire formats from an in-memory graph.

pub mod fixture;
mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{HttpClient, RequestError};
use crate::tables::Tables;

pub use wire::{render_time, MonthRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeClass {
    VeryCommon,
    Common,
    Uncommon,
    Invalid,
}

/// Auxiliary verb used when a fact is rendered as a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tense {
    Is,
    Was,
}

impl Tense {
    pub fn verb(self) -> &'static str {
        match self {
            Tense::Is => "is",
            Tense::Was => "was",
        }
    }
}

/// The seven popularity statistics. Every field is always present: a value
/// that is missing upstream never produces an `EntityStatistics` at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityStatistics {
    pub page_views: u64,
    pub site_links: u64,
    pub linked_entities: u64,
    pub external_ids: u64,
    pub wiki_token_count: u64,
    pub statements: u64,
    pub references: u64,
}

impl EntityStatistics {
    pub const FIELDS: [&'static str; 7] = [
        "page_views",
        "site_links",
        "linked_entities",
        "external_ids",
        "wiki_token_count",
        "statements",
        "references",
    ];

    /// Builds statistics from raw upstream values in [`Self::FIELDS`] order.
    /// Absent or negative values yield `None`.
    pub fn from_raw(raw: [Option<i64>; 7]) -> Option<Self> {
        let mut values = [0u64; 7];
        for (slot, value) in values.iter_mut().zip(raw) {
            *slot = u64::try_from(value?).ok()?;
        }
        Some(Self::from_array(values))
    }

    pub fn from_array(v: [u64; 7]) -> Self {
        Self {
            page_views: v[0],
            site_links: v[1],
            linked_entities: v[2],
            external_ids: v[3],
            wiki_token_count: v[4],
            statements: v[5],
            references: v[6],
        }
    }

    pub fn as_array(&self) -> [u64; 7] {
        [
            self.page_views,
            self.site_links,
            self.linked_entities,
            self.external_ids,
            self.wiki_token_count,
            self.statements,
            self.references,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub label: String,
    pub type_id: String,
    pub type_class: TypeClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistics: Option<EntityStatistics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// What kind of object a statement points at. Only `Entity`, `Text`, `Time`
/// and `Quantity` values are usable in questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Entity,
    Text,
    Time,
    Quantity,
    Media,
    Url,
    /// An entity object without a label; rendered as its raw id.
    Unlabeled,
}

impl ValueKind {
    pub fn is_textual(self) -> bool {
        matches!(
            self,
            ValueKind::Entity | ValueKind::Text | ValueKind::Time | ValueKind::Quantity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgTriple {
    pub relation_id: String,
    pub relation_label: String,
    pub fact_value: String,
    pub tense_indicator: Tense,
    pub value_kind: ValueKind,
    /// The value as returned by the endpoint, before rendering.
    pub raw_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StatisticsOutcome {
    Complete(EntityStatistics),
    Incomplete { missing: Vec<String> },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KgError {
    #[error("knowledge-graph endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("entity {0} not found")]
    EntityNotFound(String),
    #[error("no description for entity {0}")]
    DescriptionMissing(String),
}

impl From<RequestError> for KgError {
    fn from(e: RequestError) -> Self {
        KgError::EndpointUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgEndpoints {
    pub sparql: String,
    pub action_api: String,
    pub pageviews_api: String,
    pub description_api: String,
    /// Project name used in page-view requests, e.g. `en.wikipedia`.
    pub pageviews_project: String,
    /// Sitelink key naming the encyclopedia article, e.g. `enwiki`.
    pub sitelink: String,
}

impl Default for KgEndpoints {
    fn default() -> Self {
        Self {
            sparql: "https://query.wikidata.org/sparql".into(),
            action_api: "https://www.wikidata.org/w/api.php".into(),
            pageviews_api: "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article".into(),
            description_api: "https://en.wikipedia.org/w/api.php".into(),
            pageviews_project: "en.wikipedia".into(),
            sitelink: "enwiki".into(),
        }
    }
}

pub const DEFAULT_SAMPLING_QUERY: &str = r#"# halubench:sample seed={seed} limit={batch_size}
SELECT ?item ?itemLabel ?type WHERE {
  SERVICE bd:sample {
    ?item wdt:P31 ?type .
    bd:serviceParam bd:sample.limit {batch_size} .
    bd:serviceParam bd:sample.sampleType "RANDOM" .
  }
  SERVICE wikibase:label { bd:serviceParam wikibase:language "en". }
}"#;

pub const SUBGRAPH_QUERY: &str = r#"# halubench:subgraph entity={entity_id}
SELECT ?property ?propertyLabel ?value ?valueLabel WHERE {
  wd:{entity_id} ?claim ?statement .
  ?property wikibase:claim ?claim ;
            wikibase:statementProperty ?ps .
  ?statement ?ps ?value .
  SERVICE wikibase:label { bd:serviceParam wikibase:language "en". }
}"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgSettings {
    pub endpoints: KgEndpoints,
    /// SPARQL template with `{batch_size}` and `{seed}` placeholders. How the
    /// endpoint samples is up to the query.
    pub sampling_query: Option<String>,
    pub pageview_window: MonthRange,
    pub description_token_cap: usize,
}

impl Default for KgSettings {
    fn default() -> Self {
        Self {
            endpoints: KgEndpoints::default(),
            sampling_query: None,
            pageview_window: MonthRange::default(),
            description_token_cap: 1000,
        }
    }
}

/// Knowledge-graph client. Shareable across worker threads.
#[derive(Clone)]
pub struct KgAccess {
    client: HttpClient,
    settings: Arc<KgSettings>,
    tables: Arc<Tables>,
}

impl KgAccess {
    pub fn new(client: HttpClient, settings: KgSettings, tables: Arc<Tables>) -> Self {
        Self {
            client,
            settings: Arc::new(settings),
            tables,
        }
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn settings(&self) -> &KgSettings {
        &self.settings
    }

    /// Draws `batch_size` entities with ids, labels and types; statistics and
    /// descriptions are left empty.
    pub fn sample_random_entities(&self, batch_size: usize, rng_seed: u64) -> Result<Vec<EntityRecord>, KgError> {
        if batch_size == 0 {
            return Err(KgError::MalformedResponse("batch size must be positive".into()));
        }
        let template = self
            .settings
            .sampling_query
            .as_deref()
            .unwrap_or(DEFAULT_SAMPLING_QUERY);
        let query = template
            .replace("{batch_size}", &batch_size.to_string())
            .replace("{seed}", &rng_seed.to_string());
        let body = self.sparql(&query)?;
        let rows = wire::parse_sample(&body)?;
        if rows.len() < batch_size {
            return Err(KgError::MalformedResponse(format!(
                "sample returned {} rows, expected {batch_size}",
                rows.len()
            )));
        }
        Ok(rows
            .into_iter()
            .take(batch_size)
            .map(|row| EntityRecord {
                type_class: self.tables.types.classify(&row.type_id),
                entity_id: row.entity_id,
                label: row.label,
                type_id: row.type_id,
                statistics: None,
                description: None,
            })
            .collect())
    }

    /// Every one-hop `(relation, object)` pair of the entity, unfiltered.
    pub fn fetch_subgraph_triples(&self, entity_id: &str) -> Result<Vec<KgTriple>, KgError> {
        let query = SUBGRAPH_QUERY.replace("{entity_id}", entity_id);
        let body = self.sparql(&query)?;
        let triples = wire::parse_subgraph(&body)?;
        if triples.is_empty() {
            return Err(KgError::EntityNotFound(entity_id.into()));
        }
        Ok(triples)
    }

    pub fn fetch_statistics(&self, entity_id: &str) -> Result<StatisticsOutcome, KgError> {
        let entity = self.entity_document(entity_id)?;
        let title = entity.title.clone();
        let page_views = match &title {
            Some(t) => self.page_views(t)?,
            None => None,
        };
        let wiki_tokens = match &title {
            Some(t) => self.raw_extract(t)?.map(|text| text.split_whitespace().count() as i64),
            None => None,
        };
        let raw = [
            page_views,
            entity.site_links,
            entity.linked_entities,
            entity.external_ids,
            wiki_tokens,
            entity.statements,
            entity.references,
        ];
        Ok(match EntityStatistics::from_raw(raw) {
            Some(stats) => StatisticsOutcome::Complete(stats),
            None => StatisticsOutcome::Incomplete {
                missing: EntityStatistics::FIELDS
                    .iter()
                    .zip(raw)
                    .filter(|(_, v)| !matches!(v, Some(x) if *x >= 0))
                    .map(|(name, _)| (*name).to_owned())
                    .collect(),
            },
        })
    }

    /// Encyclopedia text, whitespace-normalised and capped at the configured
    /// number of whitespace tokens.
    pub fn fetch_description(&self, entity_id: &str) -> Result<String, KgError> {
        let entity = self.entity_document(entity_id)?;
        let title = entity
            .title
            .ok_or_else(|| KgError::DescriptionMissing(entity_id.into()))?;
        let text = self
            .raw_extract(&title)?
            .ok_or_else(|| KgError::DescriptionMissing(entity_id.into()))?;
        let normalized = normalize_description(&text, self.settings.description_token_cap);
        if normalized.is_empty() {
            return Err(KgError::DescriptionMissing(entity_id.into()));
        }
        Ok(normalized)
    }

    fn sparql(&self, query: &str) -> Result<String, KgError> {
        let request = wire::sparql_request(&self.settings.endpoints.sparql, query);
        Ok(self.client.execute(&request)?.body)
    }

    fn entity_document(&self, entity_id: &str) -> Result<wire::EntityDocument, KgError> {
        let request = wire::entity_request(&self.settings.endpoints.action_api, entity_id);
        let body = self.client.execute(&request)?.body;
        wire::parse_entity_document(&body, entity_id, &self.settings.endpoints.sitelink)
    }

    fn page_views(&self, title: &str) -> Result<Option<i64>, KgError> {
        let request = wire::pageviews_request(
            &self.settings.endpoints.pageviews_api,
            &self.settings.endpoints.pageviews_project,
            title,
            &self.settings.pageview_window,
        )?;
        match self.client.execute(&request) {
            Ok(resp) => wire::parse_pageviews(&resp.body),
            Err(RequestError::Status { status: 404, .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn raw_extract(&self, title: &str) -> Result<Option<String>, KgError> {
        let request = wire::extract_request(&self.settings.endpoints.description_api, title);
        let body = self.client.execute(&request)?.body;
        wire::parse_extract(&body)
    }
}

pub fn normalize_description(text: &str, token_cap: usize) -> String {
    text.split_whitespace().take(token_cap).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn statistics_zero_is_valid_absent_is_not() {
        let zeros = EntityStatistics::from_raw([Some(0); 7]).unwrap();
        assert_eq!(zeros.as_array(), [0; 7]);
        let mut raw = [Some(3); 7];
        raw[0] = None;
        assert!(EntityStatistics::from_raw(raw).is_none());
        raw[0] = Some(-1);
        assert!(EntityStatistics::from_raw(raw).is_none());
    }

    #[test]
    fn description_truncation() {
        let text = (0..2000).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" \n ");
        let out = normalize_description(&text, 1000);
        assert_eq!(out.split(' ').count(), 1000);
        assert!(out.ends_with("w999"));
        assert_eq!(normalize_description("  a \t b\n\nc ", 1000), "a b c");
    }

    #[test]
    fn statistics_reject_unknown_fields_and_partial_json() {
        let partial = r#"{"page_views":1,"site_links":1,"linked_entities":1,"external_ids":1,"wiki_token_count":1,"statements":1}"#;
        assert!(serde_json::from_str::<EntityStatistics>(partial).is_err());
    }

    proptest! {
        #[test]
        fn from_raw_is_total_or_nothing(raw in proptest::array::uniform7(proptest::option::of(-5i64..1_000_000))) {
            let built = EntityStatistics::from_raw(raw);
            let complete = raw.iter().all(|v| matches!(v, Some(x) if *x >= 0));
            prop_assert_eq!(built.is_some(), complete);
            if let Some(stats) = built {
                let back: Vec<i64> = stats.as_array().iter().map(|v| *v as i64).collect();
                let expect: Vec<i64> = raw.iter().map(|v| v.unwrap()).collect();
                prop_assert_eq!(back, expect);
            }
        }
    }
}
