use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{
    BackendError, ChatBackend, ChatRequest, ChatResponse, Embedding, EmbeddingBackend, InFlight, NliBackend, NliScores,
    NliVerdict, TokenUsage,
};
use crate::client::HttpClient;
use crate::transport::HttpRequest;

/// Connection settings shared by the HTTP backends.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub name: String,
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Option<Duration>,
}

struct Wire {
    client: HttpClient,
    endpoint: Endpoint,
    gate: InFlight,
}

impl Wire {
    fn new(client: HttpClient, endpoint: Endpoint, max_in_flight: Option<usize>) -> Self {
        Self {
            client,
            endpoint,
            gate: InFlight::new(max_in_flight),
        }
    }

    fn post(&self, body: serde_json::Value) -> Result<(String, String, Duration), BackendError> {
        let mut request =
            HttpRequest::post_json(&self.endpoint.url, body.to_string()).with_timeout(self.endpoint.timeout);
        if let Some(key) = &self.endpoint.api_key {
            request = request.with_header("Authorization", format!("Bearer {key}"));
        }
        let hash = request.key();
        let _slot = self.gate.enter();
        let started = Instant::now();
        let response = self
            .client
            .execute(&request)
            .map_err(|e| BackendError::from_request(&self.endpoint.name, e))?;
        Ok((response.body, hash, started.elapsed()))
    }

    fn malformed(&self, message: impl Into<String>) -> BackendError {
        BackendError::Malformed {
            backend: self.endpoint.name.clone(),
            message: message.into(),
        }
    }
}

/// Chat completions over `{model, messages, temperature, top_p, max_tokens}`.
pub struct HttpChat {
    wire: Wire,
}

#[derive(Deserialize)]
struct ChatWire {
    choices: Vec<ChoiceWire>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct ChoiceWire {
    message: MessageWire,
}

#[derive(Deserialize)]
struct MessageWire {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChat {
    pub fn new(client: HttpClient, endpoint: Endpoint, max_in_flight: Option<usize>) -> Self {
        Self {
            wire: Wire::new(client, endpoint, max_in_flight),
        }
    }
}

/// JSON body of a chat request. Unset sampling parameters are omitted.
pub fn chat_body(request: &ChatRequest) -> serde_json::Value {
    let mut messages = Vec::new();
    if !request.system_prompt.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_prompt}));
    }
    messages.push(json!({"role": "user", "content": request.user_prompt}));
    let mut body = json!({"model": request.model_id, "messages": messages});
    if let Some(t) = request.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(p) = request.top_p {
        body["top_p"] = json!(p);
    }
    if let Some(m) = request.max_tokens {
        body["max_tokens"] = json!(m);
    }
    body
}

impl ChatBackend for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let (body, request_hash, latency) = self.wire.post(chat_body(request))?;
        let parsed: ChatWire = serde_json::from_str(&body).map_err(|e| self.wire.malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| self.wire.malformed("no choices"))?;
        let text = choice.message.content.unwrap_or_default();
        if text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion {
                backend: self.wire.endpoint.name.clone(),
            });
        }
        Ok(ChatResponse {
            text,
            usage: parsed.usage,
            request_hash,
            latency,
        })
    }
}

/// Embeddings over `{model, input: [text]}`.
pub struct HttpEmbedding {
    wire: Wire,
    model: String,
    dimension: usize,
}

#[derive(Deserialize)]
struct EmbeddingWire {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl HttpEmbedding {
    pub fn new(
        client: HttpClient,
        endpoint: Endpoint,
        model: String,
        dimension: usize,
        max_in_flight: Option<usize>,
    ) -> Self {
        Self {
            wire: Wire::new(client, endpoint, max_in_flight),
            model,
            dimension,
        }
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let (body, request_hash, _) = self.wire.post(json!({"model": self.model, "input": [text]}))?;
        let parsed: EmbeddingWire = serde_json::from_str(&body).map_err(|e| self.wire.malformed(e.to_string()))?;
        let values = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| self.wire.malformed("no embedding in response"))?
            .embedding;
        if values.len() != self.dimension {
            return Err(BackendError::DimensionMismatch {
                backend: self.wire.endpoint.name.clone(),
                expected: self.dimension,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.wire.malformed("non-finite embedding value"));
        }
        Ok(Embedding { values, request_hash })
    }
}

/// NLI over `{premise, hypothesis}` returning `{label, scores}`.
pub struct HttpNli {
    wire: Wire,
}

#[derive(Deserialize)]
struct NliWire {
    label: String,
    scores: NliScores,
}

impl HttpNli {
    pub fn new(client: HttpClient, endpoint: Endpoint, max_in_flight: Option<usize>) -> Self {
        Self {
            wire: Wire::new(client, endpoint, max_in_flight),
        }
    }
}

impl NliBackend for HttpNli {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "premise and hypothesis must be non-empty".into(),
            ));
        }
        let (body, request_hash, _) = self.wire.post(json!({"premise": premise, "hypothesis": hypothesis}))?;
        let parsed: NliWire = serde_json::from_str(&body).map_err(|e| self.wire.malformed(e.to_string()))?;
        NliVerdict::from_wire(&self.wire.endpoint.name, &parsed.label, parsed.scores, request_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::NliLabel;
    use crate::client::RetryPolicy;
    use crate::transport::{HttpResponse, InstrumentedTransport, TransportError};
    use std::sync::Arc;

    fn endpoint(url: &str) -> Endpoint {
        Endpoint {
            name: "test".into(),
            url: url.into(),
            api_key: Some("secret".into()),
            timeout: Some(Duration::from_millis(50)),
        }
    }

    fn client(t: InstrumentedTransport) -> (HttpClient, Arc<InstrumentedTransport>) {
        let t = Arc::new(t);
        (HttpClient::new(t.clone()).with_retry(RetryPolicy::immediate(0)), t)
    }

    fn chat_request() -> ChatRequest {
        ChatRequest {
            role: "fact_translator".into(),
            model_id: "small".into(),
            system_prompt: String::new(),
            user_prompt: "Convert".into(),
            temperature: Some(0.3),
            top_p: Some(0.5),
            max_tokens: None,
        }
    }

    #[test]
    fn chat_wire_carries_role_parameters() {
        let (c, t) = client(InstrumentedTransport::new(|_| {
            Ok(HttpResponse::ok(
                r#"{"choices":[{"message":{"role":"assistant","content":"Sentence."}}],"usage":{"prompt_tokens":5,"completion_tokens":2}}"#,
            ))
        }));
        let chat = HttpChat::new(c, endpoint("http://m/v1/chat/completions"), None);
        let r = chat.complete(&chat_request()).unwrap();
        assert_eq!(r.text, "Sentence.");
        assert_eq!(r.usage.unwrap().completion_tokens, 2);
        let (_, sent) = &t.calls()[0];
        let body: serde_json::Value = serde_json::from_str(sent.body.as_deref().unwrap()).unwrap();
        assert_eq!(body["temperature"], 0.3);
        assert_eq!(body["top_p"], 0.5);
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert!(body.get("max_tokens").is_none());
        assert_eq!(sent.timeout, Some(Duration::from_millis(50)));
        assert!(sent
            .headers
            .iter()
            .any(|(k, v)| k == "Authorization" && v == "Bearer secret"));
        assert_eq!(r.request_hash, sent.key());
    }

    #[test]
    fn unset_parameters_are_omitted() {
        let mut req = chat_request();
        req.temperature = None;
        req.top_p = None;
        req.system_prompt = "Answer questions".into();
        let body = chat_body(&req);
        assert!(body.get("temperature").is_none() && body.get("top_p").is_none());
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn chat_errors() {
        let (c, _) = client(InstrumentedTransport::new(|_| {
            Ok(HttpResponse::ok(r#"{"choices":[{"message":{"content":"  "}}]}"#))
        }));
        let chat = HttpChat::new(c, endpoint("http://m/chat"), None);
        assert!(matches!(
            chat.complete(&chat_request()),
            Err(BackendError::EmptyCompletion { .. })
        ));

        let (c, _) = client(InstrumentedTransport::new(|r| {
            Err(TransportError::Timeout { url: r.url.clone() })
        }));
        let chat = HttpChat::new(c, endpoint("http://m/chat"), None);
        assert!(matches!(
            chat.complete(&chat_request()),
            Err(BackendError::Timeout { .. })
        ));

        let (c, _) = client(InstrumentedTransport::new(|_| {
            Ok(HttpResponse {
                status: 422,
                body: "bad model".into(),
            })
        }));
        let chat = HttpChat::new(c, endpoint("http://m/chat"), None);
        match chat.complete(&chat_request()) {
            Err(BackendError::Rejected { status, body, .. }) => assert_eq!((status, body.as_str()), (422, "bad model")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embedding_dimension_is_checked() {
        let (c, t) = client(InstrumentedTransport::new(|_| {
            Ok(HttpResponse::ok(r#"{"data":[{"embedding":[0.1,0.2,0.3]}]}"#))
        }));
        let e = HttpEmbedding::new(c.clone(), endpoint("http://e/embed"), "bge".into(), 3, None);
        assert_eq!(e.embed("text").unwrap().values, vec![0.1, 0.2, 0.3]);
        let body: serde_json::Value = serde_json::from_str(t.calls()[0].1.body.as_deref().unwrap()).unwrap();
        assert_eq!(body, json!({"model": "bge", "input": ["text"]}));
        let e = HttpEmbedding::new(c, endpoint("http://e/embed"), "bge".into(), 4, None);
        assert!(matches!(
            e.embed("text"),
            Err(BackendError::DimensionMismatch {
                expected: 4,
                got: 3,
                ..
            })
        ));
    }

    #[test]
    fn nli_wire() {
        let (c, t) = client(InstrumentedTransport::new(|_| {
            Ok(HttpResponse::ok(
                r#"{"label":"contradiction","scores":{"entailment":0.1,"neutral":0.2,"contradiction":0.6}}"#,
            ))
        }));
        let nli = HttpNli::new(c, endpoint("http://n/nli"), None);
        let v = nli.classify("resp", "fact").unwrap();
        assert_eq!(v.label, NliLabel::Contradiction);
        assert!((v.scores.contradiction - 0.6 / 0.9).abs() < 1e-12);
        let body: serde_json::Value = serde_json::from_str(t.calls()[0].1.body.as_deref().unwrap()).unwrap();
        assert_eq!(body, json!({"premise": "resp", "hypothesis": "fact"}));

        let (c, _) = client(InstrumentedTransport::new(|_| {
            Ok(HttpResponse::ok(
                r#"{"label":"maybe","scores":{"entailment":1,"neutral":0,"contradiction":0}}"#,
            ))
        }));
        let nli = HttpNli::new(c, endpoint("http://n/nli"), None);
        assert!(matches!(nli.classify("a", "b"), Err(BackendError::LabelUnknown { .. })));
    }
}
