use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{KgError, KgTriple, Tense, ValueKind};
use crate::transport::HttpRequest;

const ENTITY_PREFIX: &str = "http://www.wikidata.org/entity/";
const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

/// Inclusive range of months, written `YYYY-MM`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: String,
    pub end: String,
}

impl Default for MonthRange {
    fn default() -> Self {
        Self {
            start: "2017-01".into(),
            end: "2025-12".into(),
        }
    }
}

impl MonthRange {
    fn parse_month(s: &str) -> Option<NaiveDate> {
        let (y, m) = s.split_once('-')?;
        NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, 1)
    }

    /// `(YYYYMMDD00 of the first day, YYYYMMDD00 of the last day)`.
    pub fn bounds(&self) -> Result<(String, String), String> {
        let start = Self::parse_month(&self.start).ok_or_else(|| format!("bad month {:?}", self.start))?;
        let end_first = Self::parse_month(&self.end).ok_or_else(|| format!("bad month {:?}", self.end))?;
        if end_first < start {
            return Err(format!("page-view window {} .. {} is empty", self.start, self.end));
        }
        let next = if end_first.month() == 12 {
            NaiveDate::from_ymd_opt(end_first.year() + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(end_first.year(), end_first.month() + 1, 1)
        }
        .ok_or("month overflow")?;
        let last = next.pred_opt().ok_or("month underflow")?;
        Ok((
            format!("{}00", start.format("%Y%m%d")),
            format!("{}00", last.format("%Y%m%d")),
        ))
    }
}

pub(super) fn sparql_request(endpoint: &str, query: &str) -> HttpRequest {
    let qs: String = url::form_urlencoded::Serializer::new(String::new())
        .append_pair("query", query)
        .append_pair("format", "json")
        .finish();
    HttpRequest::get(format!("{endpoint}?{qs}")).with_header("Accept", "application/sparql-results+json")
}

pub(super) fn entity_request(action_api: &str, entity_id: &str) -> HttpRequest {
    let qs: String = url::form_urlencoded::Serializer::new(String::new())
        .append_pair("action", "wbgetentities")
        .append_pair("ids", entity_id)
        .append_pair("props", "sitelinks|claims")
        .append_pair("format", "json")
        .finish();
    HttpRequest::get(format!("{action_api}?{qs}"))
}

pub(super) fn extract_request(description_api: &str, title: &str) -> HttpRequest {
    let qs: String = url::form_urlencoded::Serializer::new(String::new())
        .append_pair("action", "query")
        .append_pair("prop", "extracts")
        .append_pair("explaintext", "1")
        .append_pair("redirects", "1")
        .append_pair("format", "json")
        .append_pair("titles", title)
        .finish();
    HttpRequest::get(format!("{description_api}?{qs}"))
}

pub(super) fn pageviews_request(
    api: &str,
    project: &str,
    title: &str,
    window: &MonthRange,
) -> Result<HttpRequest, KgError> {
    let (start, end) = window.bounds().map_err(KgError::MalformedResponse)?;
    let mut url =
        url::Url::parse(api).map_err(|e| KgError::EndpointUnavailable(format!("bad page-view url {api}: {e}")))?;
    url.path_segments_mut()
        .map_err(|_| KgError::EndpointUnavailable(format!("bad page-view url {api}")))?
        .pop_if_empty()
        .extend([
            project,
            "all-access",
            "user",
            &title.replace(' ', "_"),
            "monthly",
            &start,
            &end,
        ]);
    Ok(HttpRequest::get(url.to_string()))
}

fn malformed(what: &str, e: impl std::fmt::Display) -> KgError {
    KgError::MalformedResponse(format!("{what}: {e}"))
}

#[derive(Deserialize)]
struct SparqlResults {
    results: SparqlBindings,
}

#[derive(Deserialize)]
struct SparqlBindings {
    bindings: Vec<serde_json::Map<String, Value>>,
}

#[derive(Debug, Deserialize)]
struct Term {
    #[serde(rename = "type")]
    kind: String,
    value: String,
    #[serde(default)]
    datatype: Option<String>,
}

fn term(row: &serde_json::Map<String, Value>, name: &str) -> Result<Option<Term>, KgError> {
    row.get(name)
        .map(|v| serde_json::from_value::<Term>(v.clone()).map_err(|e| malformed(name, e)))
        .transpose()
}

fn bindings(body: &str) -> Result<Vec<serde_json::Map<String, Value>>, KgError> {
    let parsed: SparqlResults = serde_json::from_str(body).map_err(|e| malformed("SPARQL result set", e))?;
    Ok(parsed.results.bindings)
}

fn local_id(uri: &str) -> &str {
    uri.rsplit('/').next().unwrap_or(uri)
}

pub(super) struct SampleRow {
    pub entity_id: String,
    pub label: String,
    pub type_id: String,
}

pub(super) fn parse_sample(body: &str) -> Result<Vec<SampleRow>, KgError> {
    let rows = bindings(body)?;
    if rows.is_empty() {
        return Err(KgError::MalformedResponse("empty sample result set".into()));
    }
    rows.iter()
        .map(|row| {
            let item = term(row, "item")?.ok_or_else(|| malformed("sample row", "missing ?item"))?;
            let ty = term(row, "type")?.ok_or_else(|| malformed("sample row", "missing ?type"))?;
            let entity_id = local_id(&item.value).to_owned();
            if entity_id.is_empty() {
                return Err(malformed("sample row", "empty item id"));
            }
            let label = term(row, "itemLabel")?
                .map(|t| t.value)
                .filter(|l| !l.trim().is_empty())
                .unwrap_or_else(|| entity_id.clone());
            Ok(SampleRow {
                entity_id,
                label,
                type_id: local_id(&ty.value).to_owned(),
            })
        })
        .collect()
}

pub(super) fn parse_subgraph(body: &str) -> Result<Vec<KgTriple>, KgError> {
    let rows = bindings(body)?;
    let mut triples = Vec::with_capacity(rows.len());
    for row in &rows {
        let property = term(row, "property")?.ok_or_else(|| malformed("subgraph row", "missing ?property"))?;
        let value = term(row, "value")?.ok_or_else(|| malformed("subgraph row", "missing ?value"))?;
        let relation_id = local_id(&property.value).to_owned();
        let relation_label = term(row, "propertyLabel")?
            .map(|t| t.value)
            .unwrap_or_else(|| relation_id.clone());
        let value_label = term(row, "valueLabel")?.map(|t| t.value);
        let (value_kind, fact_value) = render_value(&value, value_label.as_deref());
        triples.push(KgTriple {
            relation_id,
            relation_label,
            fact_value,
            tense_indicator: Tense::Is,
            value_kind,
            raw_value: value.value,
        });
    }
    Ok(triples)
}

fn render_value(value: &Term, label: Option<&str>) -> (ValueKind, String) {
    if value.kind == "uri" {
        if let Some(id) = value.value.strip_prefix(ENTITY_PREFIX) {
            return match label {
                Some(l) if !l.trim().is_empty() && l != id => (ValueKind::Entity, l.to_owned()),
                _ => (ValueKind::Unlabeled, id.to_owned()),
            };
        }
        if value.value.contains("commons.wikimedia.org") {
            return (ValueKind::Media, value.value.clone());
        }
        return (ValueKind::Url, value.value.clone());
    }
    let datatype = value.datatype.as_deref().and_then(|d| d.strip_prefix(XSD));
    match datatype {
        Some("dateTime") | Some("date") => match render_time(&value.value) {
            Some(text) => (ValueKind::Time, text),
            None => (ValueKind::Text, value.value.clone()),
        },
        Some("decimal") | Some("integer") | Some("double") | Some("float") => {
            (ValueKind::Quantity, value.value.trim_start_matches('+').to_owned())
        }
        _ => (ValueKind::Text, value.value.clone()),
    }
}

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

/// Renders an xsd:dateTime as `21 July 1951`. A first-of-January timestamp is
/// rendered as the bare year, since that is how year-precision dates arrive.
pub fn render_time(raw: &str) -> Option<String> {
    let s = raw.trim_start_matches('+');
    let date = s.split('T').next()?;
    let (negative, date) = match date.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, date),
    };
    let mut parts = date.splitn(3, '-');
    let year: i64 = parts.next()?.parse().ok()?;
    let month: usize = parts.next()?.parse().ok()?;
    let day: u32 = parts.next()?.parse().ok()?;
    let year_text = if negative {
        format!("{year} BC")
    } else {
        year.to_string()
    };
    if month == 0 || (month == 1 && day <= 1) {
        return Some(year_text);
    }
    let month_name = MONTHS.get(month - 1)?;
    if day == 0 {
        return Some(format!("{month_name} {year_text}"));
    }
    Some(format!("{day} {month_name} {year_text}"))
}

/// Counts extracted from an entity's action-API document. `None` marks a
/// value the endpoint did not provide.
#[derive(Debug, Default)]
pub(super) struct EntityDocument {
    pub title: Option<String>,
    pub site_links: Option<i64>,
    pub statements: Option<i64>,
    pub external_ids: Option<i64>,
    pub linked_entities: Option<i64>,
    pub references: Option<i64>,
}

pub(super) fn parse_entity_document(body: &str, entity_id: &str, sitelink: &str) -> Result<EntityDocument, KgError> {
    let root: Value = serde_json::from_str(body).map_err(|e| malformed("entity document", e))?;
    if let Some(err) = root.get("error") {
        return Err(KgError::MalformedResponse(format!("entity document error: {err}")));
    }
    let entity = root
        .get("entities")
        .and_then(|e| e.get(entity_id))
        .ok_or_else(|| malformed("entity document", format!("no entry for {entity_id}")))?;
    if entity.get("missing").is_some() {
        return Err(KgError::EntityNotFound(entity_id.into()));
    }
    let mut doc = EntityDocument::default();
    if let Some(links) = entity.get("sitelinks").and_then(Value::as_object) {
        doc.site_links = Some(links.len() as i64);
        doc.title = links
            .get(sitelink)
            .and_then(|l| l.get("title"))
            .and_then(Value::as_str)
            .map(str::to_owned);
    }
    if let Some(claims) = entity.get("claims").and_then(Value::as_object) {
        let (mut statements, mut external, mut linked, mut references) = (0i64, 0i64, 0i64, 0i64);
        for claim in claims.values().filter_map(Value::as_array).flatten() {
            statements += 1;
            match claim.pointer("/mainsnak/datatype").and_then(Value::as_str) {
                Some("external-id") => external += 1,
                Some("wikibase-item") => linked += 1,
                _ => {}
            }
            references += claim
                .get("references")
                .and_then(Value::as_array)
                .map(|r| r.len() as i64)
                .unwrap_or(0);
        }
        doc.statements = Some(statements);
        doc.external_ids = Some(external);
        doc.linked_entities = Some(linked);
        doc.references = Some(references);
    }
    Ok(doc)
}

pub(super) fn parse_pageviews(body: &str) -> Result<Option<i64>, KgError> {
    let root: Value = serde_json::from_str(body).map_err(|e| malformed("page views", e))?;
    let Some(items) = root.get("items").and_then(Value::as_array) else {
        return Ok(None);
    };
    let mut total = 0i64;
    for item in items {
        match item.get("views").and_then(Value::as_i64) {
            Some(v) if v >= 0 => total += v,
            // any invalid month invalidates the aggregate
            _ => return Ok(Some(-1)),
        }
    }
    Ok(Some(total))
}

pub(super) fn parse_extract(body: &str) -> Result<Option<String>, KgError> {
    let root: Value = serde_json::from_str(body).map_err(|e| malformed("extract", e))?;
    let pages = root
        .pointer("/query/pages")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("extract", "missing query.pages"))?;
    Ok(pages
        .values()
        .filter(|p| p.get("missing").is_none())
        .filter_map(|p| p.get("extract").and_then(Value::as_str))
        .find(|t| !t.trim().is_empty())
        .map(str::to_owned))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_window_bounds() {
        let (s, e) = MonthRange::default().bounds().unwrap();
        assert_eq!(s, "2017010100");
        assert_eq!(e, "2025123100");
        let feb = MonthRange {
            start: "2024-02".into(),
            end: "2024-02".into(),
        };
        assert_eq!(feb.bounds().unwrap().1, "2024022900");
        assert!(MonthRange {
            start: "2025-01".into(),
            end: "2024-01".into()
        }
        .bounds()
        .is_err());
    }

    #[test]
    fn time_rendering() {
        assert_eq!(render_time("+1951-07-21T00:00:00Z").unwrap(), "21 July 1951");
        assert_eq!(render_time("1951-01-01T00:00:00Z").unwrap(), "1951");
        assert_eq!(render_time("-0500-01-01T00:00:00Z").unwrap(), "500 BC");
        assert_eq!(render_time("1890-03-00T00:00:00Z").unwrap(), "March 1890");
        assert!(render_time("garbage").is_none());
    }

    #[test]
    fn subgraph_value_kinds() {
        let body = r#"{"head":{"vars":[]},"results":{"bindings":[
 {"property":{"type":"uri","value":"http://www.wikidata.org/entity/P19"},"propertyLabel":{"type":"literal","value":"place of birth"},
  "value":{"type":"uri","value":"http://www.wikidata.org/entity/Q1297"},"valueLabel":{"type":"literal","value":"Chicago"}},
 {"property":{"type":"uri","value":"http://www.wikidata.org/entity/P40"},"propertyLabel":{"type":"literal","value":"child"},
  "value":{"type":"uri","value":"http://www.wikidata.org/entity/Q99"},"valueLabel":{"type":"literal","value":"Q99"}},
 {"property":{"type":"uri","value":"http://www.wikidata.org/entity/P18"},"propertyLabel":{"type":"literal","value":"image"},
  "value":{"type":"uri","value":"http://commons.wikimedia.org/wiki/Special:FilePath/x.jpg"}},
 {"property":{"type":"uri","value":"http://www.wikidata.org/entity/P569"},"propertyLabel":{"type":"literal","value":"date of birth"},
  "value":{"type":"literal","value":"1951-07-21T00:00:00Z","datatype":"http://www.w3.org/2001/XMLSchema#dateTime"}},
 {"property":{"type":"uri","value":"http://www.wikidata.org/entity/P1082"},"propertyLabel":{"type":"literal","value":"population"},
  "value":{"type":"literal","value":"+2746388","datatype":"http://www.w3.org/2001/XMLSchema#decimal"}}
]}}"#;
        let triples = parse_subgraph(body).unwrap();
        let kinds: Vec<_> = triples.iter().map(|t| (t.value_kind, t.fact_value.as_str())).collect();
        assert_eq!(
            kinds,
            vec![
                (ValueKind::Entity, "Chicago"),
                (ValueKind::Unlabeled, "Q99"),
                (
                    ValueKind::Media,
                    "http://commons.wikimedia.org/wiki/Special:FilePath/x.jpg"
                ),
                (ValueKind::Time, "21 July 1951"),
                (ValueKind::Quantity, "2746388"),
            ]
        );
    }

    #[test]
    fn entity_document_counts() {
        let body = r#"{"entities":{"Q1":{"id":"Q1","sitelinks":{"enwiki":{"title":"Foo Bar"},"dewiki":{"title":"Foo"}},
 "claims":{"P31":[{"mainsnak":{"datatype":"wikibase-item"},"references":[{},{}]}],
           "P214":[{"mainsnak":{"datatype":"external-id"}}],
           "P1476":[{"mainsnak":{"datatype":"monolingualtext"},"references":[{}]},{"mainsnak":{"datatype":"wikibase-item"}}]}}}}"#;
        let doc = parse_entity_document(body, "Q1", "enwiki").unwrap();
        assert_eq!(doc.title.as_deref(), Some("Foo Bar"));
        assert_eq!(doc.site_links, Some(2));
        assert_eq!(doc.statements, Some(4));
        assert_eq!(doc.external_ids, Some(1));
        assert_eq!(doc.linked_entities, Some(2));
        assert_eq!(doc.references, Some(3));

        let missing = r#"{"entities":{"Q9":{"id":"Q9","missing":""}}}"#;
        assert!(matches!(
            parse_entity_document(missing, "Q9", "enwiki"),
            Err(KgError::EntityNotFound(_))
        ));
    }

    #[test]
    fn pageviews_sum_and_invalid() {
        assert_eq!(
            parse_pageviews(r#"{"items":[{"views":3},{"views":4}]}"#).unwrap(),
            Some(7)
        );
        assert_eq!(
            parse_pageviews(r#"{"items":[{"views":3},{"views":-4}]}"#).unwrap(),
            Some(-1)
        );
        assert_eq!(parse_pageviews(r#"{"type":"not found"}"#).unwrap(), None);
    }

    #[test]
    fn sample_requires_rows() {
        let empty = r#"{"head":{"vars":["item"]},"results":{"bindings":[]}}"#;
        assert!(matches!(parse_sample(empty), Err(KgError::MalformedResponse(_))));
        assert!(matches!(parse_sample("<html>"), Err(KgError::MalformedResponse(_))));
    }

    #[test]
    fn pageviews_url_shape() {
        let req = pageviews_request(
            "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article",
            "en.wikipedia",
            "Robin Williams",
            &MonthRange::default(),
        )
        .unwrap();
        assert_eq!(
            req.url,
            "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article/en.wikipedia/all-access/user/Robin_Williams/monthly/2017010100/2025123100"
        );
    }
}
