//! The HTTP embedding and NLI clients against the shared wire schemas in
//! `schemas/`, which an external model service must also satisfy.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use halubench::backends::http::Endpoint;
use halubench::backends::{BackendError, EmbeddingBackend, HttpEmbedding, HttpNli, NliBackend, NliLabel};
use halubench::client::{HttpClient, RetryPolicy};
use halubench::transport::{HttpResponse, InstrumentedTransport};

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let value: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn serve(body: Value) -> (HttpClient, Arc<InstrumentedTransport>) {
    let text = body.to_string();
    let t = Arc::new(InstrumentedTransport::new(move |_| Ok(HttpResponse::ok(&text))));
    (HttpClient::new(t.clone()).with_retry(RetryPolicy::immediate(0)), t)
}

fn endpoint(url: &str) -> Endpoint {
    Endpoint {
        name: "shim".into(),
        url: url.into(),
        api_key: None,
        timeout: Some(Duration::from_secs(1)),
    }
}

fn sent(t: &InstrumentedTransport) -> Value {
    serde_json::from_str(t.calls()[0].1.body.as_deref().unwrap()).unwrap()
}

#[test]
fn embedding_round_trip_matches_schemas() {
    let response = json!({"data": [{"embedding": [0.25, -0.5, 1.0]}]});
    assert!(schema("embedding_response.schema.json").is_valid(&response));
    let (client, t) = serve(response);
    let e = HttpEmbedding::new(
        client,
        endpoint("http://shim/v1/embeddings"),
        "bge-small".into(),
        3,
        None,
    );
    assert_eq!(
        e.embed("Denzel Washington is an actor.").unwrap().values,
        vec![0.25, -0.5, 1.0]
    );
    assert!(schema("embedding_request.schema.json").is_valid(&sent(&t)));

    let bad = json!({"data": []});
    assert!(!schema("embedding_response.schema.json").is_valid(&bad));
    let (client, _) = serve(bad);
    let e = HttpEmbedding::new(
        client,
        endpoint("http://shim/v1/embeddings"),
        "bge-small".into(),
        3,
        None,
    );
    assert!(e.embed("x").is_err());
}

#[test]
fn nli_round_trip_matches_schemas() {
    let response_schema = schema("nli_response.schema.json");
    for label in NliLabel::ALL {
        let name = serde_json::to_value(label).unwrap();
        let mut scores = json!({"entailment": 0.1, "neutral": 0.1, "contradiction": 0.1});
        scores[name.as_str().unwrap()] = json!(0.8);
        let response = json!({"label": name, "scores": scores});
        assert!(response_schema.is_valid(&response), "{response}");
        let (client, t) = serve(response);
        let nli = HttpNli::new(client, endpoint("http://shim/v1/nli"), None);
        let verdict = nli.classify("The response.", "The golden fact.").unwrap();
        assert_eq!(verdict.label, label);
        let total = verdict.scores.entailment + verdict.scores.neutral + verdict.scores.contradiction;
        assert!((total - 1.0).abs() < 1e-6);
        let request = sent(&t);
        assert!(schema("nli_request.schema.json").is_valid(&request));
        assert_eq!(
            request,
            json!({"premise": "The response.", "hypothesis": "The golden fact."})
        );
    }
}

#[test]
fn nli_label_set_is_exactly_three() {
    let text =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/nli_response.schema.json"))
            .unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    let labels: Vec<Value> = NliLabel::ALL.iter().map(|l| serde_json::to_value(l).unwrap()).collect();
    assert_eq!(value["properties"]["label"]["enum"], Value::Array(labels));

    let scores = json!({"entailment": 0.2, "neutral": 0.6, "contradiction": 0.2});
    for label in ["NEUTRAL", "maybe", "contradicts"] {
        assert!(
            !schema("nli_response.schema.json").is_valid(&json!({"label": label, "scores": scores})),
            "{label}"
        );
    }
    // The client also reads other services' upper-case labels.
    let (client, _) = serve(json!({"label": "NEUTRAL", "scores": scores}));
    let nli = HttpNli::new(client, endpoint("http://shim/v1/nli"), None);
    assert_eq!(nli.classify("a", "b").unwrap().label, NliLabel::Neutral);
    for label in ["maybe", "contradicts"] {
        let (client, _) = serve(json!({"label": label, "scores": scores}));
        let nli = HttpNli::new(client, endpoint("http://shim/v1/nli"), None);
        assert!(
            matches!(nli.classify("a", "b"), Err(BackendError::LabelUnknown { .. })),
            "{label}"
        );
    }
}

#[test]
fn health_schema() {
    let s = schema("health_response.schema.json");
    assert!(s.is_valid(&json!({"status": "ok", "models": {"embedding": "bge-small-en", "nli": "deberta-v3-mnli"}})));
    assert!(!s.is_valid(&json!({"status": "ok"})));
    assert!(!s.is_valid(&json!({"status": "fine", "models": {"embedding": "a", "nli": "b"}})));
}
