//! An in-memory knowledge graph served over the same wire formats as the
//! live endpoints, so fixture runs exercise the full request/parse path.
//!
//! Sampling is seeded: the sampling query carries `seed=` and `limit=`
//! markers (see [`super::DEFAULT_SAMPLING_QUERY`]) and the fixture draws a
//! seeded permutation of its entities, cycling through fresh permutations
//! when the limit exceeds the entity count.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::KgEndpoints;
use crate::transport::{HttpRequest, HttpResponse, Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureValue {
    Entity {
        id: String,
        #[serde(default)]
        label: Option<String>,
    },
    Text {
        text: String,
    },
    /// xsd:dateTime literal, e.g. `1951-07-21T00:00:00Z`.
    Time {
        time: String,
    },
    Quantity {
        amount: String,
    },
    Media {
        file: String,
    },
    Url {
        url: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureStatement {
    pub relation_id: String,
    pub relation_label: String,
    pub value: FixtureValue,
}

/// Raw statistic values; `None` is served as an absent field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureStats {
    pub page_views: Option<i64>,
    pub site_links: Option<i64>,
    /// `statements`, `external_ids`, `linked_entities` and `references` are
    /// served together through the claims map; if `statements` is absent the
    /// claims map is omitted.
    pub statements: Option<i64>,
    pub external_ids: i64,
    pub linked_entities: i64,
    pub references: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntity {
    pub id: String,
    #[serde(default)]
    pub label: Option<String>,
    pub type_id: String,
    #[serde(default)]
    pub statements: Vec<FixtureStatement>,
    #[serde(default)]
    pub stats: FixtureStats,
    /// Encyclopedia article text. Its whitespace-token count is the
    /// wiki token statistic.
    #[serde(default)]
    pub description: Option<String>,
}

impl FixtureEntity {
    fn title(&self) -> Option<String> {
        self.description
            .as_ref()
            .map(|_| self.label.clone().unwrap_or_else(|| format!("Article {}", self.id)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureKg {
    pub entities: Vec<FixtureEntity>,
}

impl FixtureKg {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let kg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        kg.validate()?;
        Ok(kg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entities {
            if e.id.is_empty() || !seen.insert(&e.id) {
                return Err(format!("fixture entity id {:?} is empty or duplicated", e.id));
            }
            let s = &e.stats;
            if let Some(n) = s.statements {
                if s.external_ids + s.linked_entities > n {
                    return Err(format!("{}: external_ids + linked_entities exceed statements", e.id));
                }
                if n == 0 && s.references > 0 {
                    return Err(format!("{}: references without statements", e.id));
                }
            }
        }
        Ok(())
    }

    pub fn into_server(self, endpoints: KgEndpoints) -> FixtureKgServer {
        FixtureKgServer::new(self, endpoints)
    }
}

/// Serves a [`FixtureKg`] as a [`Transport`].
pub struct FixtureKgServer {
    kg: FixtureKg,
    by_id: HashMap<String, usize>,
    by_title: HashMap<String, usize>,
    endpoints: KgEndpoints,
}

fn not_found() -> HttpResponse {
    HttpResponse {
        status: 404,
        body: r#"{"type":"not found"}"#.into(),
    }
}

fn bad_request(msg: &str) -> HttpResponse {
    HttpResponse {
        status: 400,
        body: json!({ "error": msg }).to_string(),
    }
}

fn marker(query: &str, key: &str) -> Option<String> {
    let re = regex::Regex::new(&format!(r"{key}=(\S+)")).ok()?;
    re.captures(query).map(|c| c[1].to_owned())
}

impl FixtureKgServer {
    pub fn new(kg: FixtureKg, endpoints: KgEndpoints) -> Self {
        let by_id = kg.entities.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        let by_title = kg
            .entities
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.title().map(|t| (t, i)))
            .collect();
        Self {
            kg,
            by_id,
            by_title,
            endpoints,
        }
    }

    fn entity(&self, id: &str) -> Option<&FixtureEntity> {
        self.by_id.get(id).map(|i| &self.kg.entities[*i])
    }

    fn params(url: &url::Url) -> HashMap<String, String> {
        url.query_pairs()
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect()
    }

    fn sparql(&self, params: &HashMap<String, String>) -> HttpResponse {
        let Some(query) = params.get("query") else {
            return bad_request("missing query");
        };
        if query.contains("halubench:sample") {
            let seed = marker(query, "seed").and_then(|s| s.parse().ok()).unwrap_or(0u64);
            let limit = marker(query, "limit").and_then(|s| s.parse().ok()).unwrap_or(1usize);
            return HttpResponse::ok(self.sample(seed, limit).to_string());
        }
        if query.contains("halubench:subgraph") {
            let id = marker(query, "entity").unwrap_or_default();
            return HttpResponse::ok(self.subgraph(&id).to_string());
        }
        bad_request("unsupported query")
    }

    fn sample(&self, seed: u64, limit: usize) -> Value {
        let mut rows = Vec::new();
        let n = self.kg.entities.len();
        if n > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = Vec::new();
            while rows.len() < limit {
                if order.is_empty() {
                    order = (0..n).collect();
                    order.shuffle(&mut rng);
                    order.reverse();
                }
                let e = &self.kg.entities[order.pop().expect("non-empty")];
                rows.push(json!({
                    "item": {"type": "uri", "value": format!("http://www.wikidata.org/entity/{}", e.id)},
                    "itemLabel": {"type": "literal", "value": e.label.clone().unwrap_or_else(|| e.id.clone())},
                    "type": {"type": "uri", "value": format!("http://www.wikidata.org/entity/{}", e.type_id)},
                }));
            }
        }
        json!({"head": {"vars": ["item", "itemLabel", "type"]}, "results": {"bindings": rows}})
    }

    fn subgraph(&self, id: &str) -> Value {
        let rows: Vec<Value> = self
            .entity(id)
            .map(|e| {
                e.statements
                    .iter()
                    .map(|s| {
                        let (value, label) = match &s.value {
                            FixtureValue::Entity { id, label } => (
                                json!({"type": "uri", "value": format!("http://www.wikidata.org/entity/{id}")}),
                                Some(label.clone().unwrap_or_else(|| id.clone())),
                            ),
                            FixtureValue::Text { text } => (json!({"type": "literal", "value": text}), Some(text.clone())),
                            FixtureValue::Time { time } => (
                                json!({"type": "literal", "value": time, "datatype": "http://www.w3.org/2001/XMLSchema#dateTime"}),
                                Some(time.clone()),
                            ),
                            FixtureValue::Quantity { amount } => (
                                json!({"type": "literal", "value": amount, "datatype": "http://www.w3.org/2001/XMLSchema#decimal"}),
                                Some(amount.clone()),
                            ),
                            FixtureValue::Media { file } => (
                                json!({"type": "uri", "value": format!("http://commons.wikimedia.org/wiki/Special:FilePath/{file}")}),
                                None,
                            ),
                            FixtureValue::Url { url } => (json!({"type": "uri", "value": url}), None),
                        };
                        let mut row = json!({
                            "property": {"type": "uri", "value": format!("http://www.wikidata.org/entity/{}", s.relation_id)},
                            "propertyLabel": {"type": "literal", "value": s.relation_label},
                            "value": value,
                        });
                        if let Some(label) = label {
                            row["valueLabel"] = json!({"type": "literal", "value": label});
                        }
                        row
                    })
                    .collect()
            })
            .unwrap_or_default();
        json!({"head": {"vars": ["property", "propertyLabel", "value", "valueLabel"]}, "results": {"bindings": rows}})
    }

    fn entity_document(&self, id: &str) -> Value {
        let Some(e) = self.entity(id) else {
            return json!({"entities": {id: {"id": id, "missing": ""}}});
        };
        let mut doc = json!({"id": e.id});
        let s = &e.stats;
        if let Some(n) = s.site_links {
            // the article sitelink counts towards the total
            let mut links = serde_json::Map::new();
            let title = e.title();
            let mut remaining = n.max(0);
            if let Some(t) = &title {
                if remaining > 0 {
                    links.insert(self.endpoints.sitelink.clone(), json!({"title": t}));
                    remaining -= 1;
                }
            }
            for i in 0..remaining {
                links.insert(format!("x{i}wiki"), json!({"title": format!("{} {i}", e.id)}));
            }
            doc["sitelinks"] = Value::Object(links);
        }
        if let Some(n) = s.statements {
            let mut claims = serde_json::Map::new();
            let mut refs_left = s.references;
            for i in 0..n {
                let datatype = if i < s.external_ids {
                    "external-id"
                } else if i < s.external_ids + s.linked_entities {
                    "wikibase-item"
                } else {
                    "string"
                };
                let refs = if i == n - 1 { refs_left } else { refs_left.min(1) };
                refs_left -= refs;
                let references: Vec<Value> = (0..refs).map(|_| json!({"snaks": {}})).collect();
                claims.insert(
                    format!("P{}", 100_000 + i),
                    json!([{ "mainsnak": {"datatype": datatype}, "references": references }]),
                );
            }
            doc["claims"] = Value::Object(claims);
        }
        json!({"entities": {id: doc}})
    }

    fn extract(&self, title: &str) -> Value {
        match self.by_title.get(title).map(|i| &self.kg.entities[*i]) {
            Some(e) => {
                json!({"query": {"pages": {"1": {"title": title, "extract": e.description.clone().unwrap_or_default()}}}})
            }
            None => json!({"query": {"pages": {"-1": {"title": title, "missing": ""}}}}),
        }
    }

    fn pageviews(&self, path_tail: &str) -> HttpResponse {
        // <project>/all-access/user/<title>/monthly/<start>/<end>
        let segments: Vec<String> = path_tail
            .split('/')
            .map(|s| {
                url::form_urlencoded::parse(format!("x={s}").as_bytes())
                    .next()
                    .map(|(_, v)| v.into_owned())
                    .unwrap_or_default()
            })
            .collect();
        if segments.len() < 7 {
            return bad_request("bad page-view path");
        }
        let title = segments[3].replace('_', " ");
        let views = self
            .by_title
            .get(&title)
            .and_then(|i| self.kg.entities[*i].stats.page_views);
        match views {
            None => not_found(),
            Some(v) => {
                let first = v / 2;
                HttpResponse::ok(json!({"items": [{"views": first}, {"views": v - first}]}).to_string())
            }
        }
    }
}

impl Transport for FixtureKgServer {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let url = url::Url::parse(&request.url).map_err(|e| TransportError::Connect {
            url: request.url.clone(),
            message: e.to_string(),
        })?;
        let base = format!("{}://{}{}", url.scheme(), url.host_str().unwrap_or(""), url.path());
        let params = Self::params(&url);
        let e = &self.endpoints;
        let response = if base == e.sparql {
            self.sparql(&params)
        } else if base == e.action_api && params.get("action").map(String::as_str) == Some("wbgetentities") {
            let id = params.get("ids").cloned().unwrap_or_default();
            HttpResponse::ok(self.entity_document(&id).to_string())
        } else if base == e.description_api && params.get("action").map(String::as_str) == Some("query") {
            let title = params.get("titles").cloned().unwrap_or_default();
            HttpResponse::ok(self.extract(&title).to_string())
        } else if let Some(tail) = request.url.strip_prefix(&format!("{}/", e.pageviews_api)) {
            self.pageviews(tail)
        } else {
            not_found()
        };
        Ok(response)
    }
}
