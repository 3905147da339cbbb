//! Uniform client for chat-completion endpoints plus deterministic stub
//! backends, and assembly of retrieval-augmented consultation prompts.
//!
//! The wire protocol is the prevailing chat-completion HTTP convention:
//! `POST {base_url}/chat/completions` with body fields `model`, `messages`
//! (`role`/`content` pairs), and `temperature`, authorized with a bearer
//! token. Transport failures retry with exponential backoff (base 1 s,
//! factor 2, full jitter). API keys never reach logs or serialized output.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retriever::{search, ClauseIndex, RetrievalHit, RetrieverError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    EndpointUnreachable { attempts: usize, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no recorded reply for request: {0}")]
    ReplayMiss(String),
    #[error("empty message list")]
    EmptyMessages,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConsultError {
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: &str) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.to_string(),
        }
    }

    pub fn user(content: &str) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.to_string(),
        }
    }
}

/// Connection settings for a served model. `Debug` redacts the API key so
/// configs can be logged safely.
#[derive(Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: String,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub temperature: f64,
    /// Pre-jitter backoff base in seconds; attempt n waits up to
    /// `base * 2^(n-1)`.
    pub backoff_base_secs: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            model_name: "default".to_string(),
            api_key: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            temperature: 0.0,
            backoff_base_secs: 1.0,
        }
    }
}

impl EndpointConfig {
    /// Apply `LEGILM_BASE_URL` and `LEGILM_API_KEY` environment overrides.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var("LEGILM_BASE_URL") {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        if let Ok(key) = std::env::var("LEGILM_API_KEY") {
            if !key.is_empty() {
                self.api_key = key;
            }
        }
        self
    }
}

impl fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url)
            .field("model_name", &self.model_name)
            .field("api_key", &"[redacted]")
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("temperature", &self.temperature)
            .field("backoff_base_secs", &self.backoff_base_secs)
            .finish()
    }
}

/// Pre-jitter delay before retry attempt `n` (1-based).
pub fn backoff_delay(attempt: usize, base_secs: f64) -> Duration {
    Duration::from_secs_f64(base_secs * 2f64.powi(attempt as i32 - 1))
}

fn full_jitter(delay: Duration) -> Duration {
    let max = delay.as_secs_f64();
    if max <= 0.0 {
        return Duration::ZERO;
    }
    Duration::from_secs_f64(rand::thread_rng().gen_range(0.0..=max))
}

/// A chat-completion backend: the HTTP client or a deterministic stub.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError>;
    fn name(&self) -> String;
}

// ---------------------------------------------------------------------------
// HTTP backend

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    role: Option<String>,
    content: Option<String>,
}

pub struct HttpBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .expect("reqwest client");
        HttpBackend { config, client }
    }

    fn send_once(&self, body: &CompletionRequest<'_>) -> Result<String, AttemptError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let mut request = self.client.post(&url).json(body);
        if !self.config.api_key.is_empty() {
            request = request.bearer_auth(&self.config.api_key);
        }
        let response = request.send().map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("status {status}")));
        }
        let parsed: CompletionResponse = response
            .json()
            .map_err(|e| AttemptError::Fatal(format!("unparseable body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Fatal("no choices in reply".to_string()))?;
        if let Some(role) = &choice.message.role {
            if role != "assistant" {
                return Err(AttemptError::Fatal(format!("first choice has role {role}")));
            }
        }
        choice
            .message
            .content
            .ok_or_else(|| AttemptError::Fatal("reply lacks assistant content".to_string()))
    }
}

enum AttemptError {
    Transient(String),
    Fatal(String),
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let body = CompletionRequest {
            model: &self.config.model_name,
            messages,
            temperature: self.config.temperature,
        };
        // request logging carries no authorization material
        log::debug!(
            "POST {}/chat/completions model={} messages={}",
            self.config.base_url,
            self.config.model_name,
            messages.len()
        );
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.send_once(&body) {
                Ok(content) => {
                    log::debug!("reply ({} chars)", content.len());
                    return Ok(content);
                }
                Err(AttemptError::Fatal(message)) => {
                    return Err(GatewayError::MalformedResponse(message));
                }
                Err(AttemptError::Transient(message)) => {
                    log::warn!("attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        std::thread::sleep(full_jitter(backoff_delay(
                            attempt,
                            self.config.backoff_base_secs,
                        )));
                    }
                }
            }
        }
        Err(GatewayError::EndpointUnreachable {
            attempts,
            message: last,
        })
    }

    fn name(&self) -> String {
        self.config.model_name.clone()
    }
}

// ---------------------------------------------------------------------------
// stub backends

/// Returns the last user message verbatim.
pub struct EchoStub;

impl ChatBackend for EchoStub {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.clone())
            .ok_or_else(|| GatewayError::MalformedResponse("no user message to echo".to_string()))
    }

    fn name(&self) -> String {
        "echo-stub".to_string()
    }
}

/// Returns a fixed reply for any input.
pub struct ConstantStub(pub String);

impl ChatBackend for ConstantStub {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        Ok(self.0.clone())
    }

    fn name(&self) -> String {
        "constant-stub".to_string()
    }
}

/// Backend driven by a closure; used to rig replies in tests and harnesses.
pub struct FnBackend<F>(pub F)
where
    F: Fn(&[ChatMessage]) -> Result<String, GatewayError> + Send + Sync;

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        (self.0)(messages)
    }

    fn name(&self) -> String {
        "fn-backend".to_string()
    }
}

// ---------------------------------------------------------------------------
// fixture transcripts

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: Vec<ChatMessage>,
    pub response: String,
}

fn request_key(messages: &[ChatMessage]) -> String {
    serde_json::to_string(messages).expect("serializable messages")
}

/// Replays recorded request/response pairs, keyed on the exact request.
pub struct FixtureBackend {
    replies: HashMap<String, String>,
}

impl FixtureBackend {
    pub fn from_entries(entries: &[TranscriptEntry]) -> Self {
        let replies = entries
            .iter()
            .map(|e| (request_key(&e.request), e.response.clone()))
            .collect();
        FixtureBackend { replies }
    }

    /// Load a record-per-line transcript file.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let content = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for line in content.lines().filter(|l| !l.trim().is_empty()) {
            let entry: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::MalformedResponse(format!("bad transcript line: {e}")))?;
            entries.push(entry);
        }
        Ok(FixtureBackend::from_entries(&entries))
    }
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        self.replies
            .get(&request_key(messages))
            .cloned()
            .ok_or_else(|| {
                let question = messages
                    .iter()
                    .rev()
                    .find(|m| m.role == Role::User)
                    .map(|m| m.content.chars().take(80).collect::<String>())
                    .unwrap_or_default();
                GatewayError::ReplayMiss(question)
            })
    }

    fn name(&self) -> String {
        "fixture-replay".to_string()
    }
}

/// Wraps a backend and records its traffic so a transcript can be replayed.
pub struct RecordingBackend<B: ChatBackend> {
    inner: B,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut lines = String::new();
        for entry in self.transcript().iter() {
            lines.push_str(&serde_json::to_string(entry).expect("serializable entry"));
            lines.push('\n');
        }
        std::fs::write(path, lines)?;
        Ok(())
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        let response = self.inner.complete(messages)?;
        self.transcript.lock().unwrap().push(TranscriptEntry {
            request: messages.to_vec(),
            response: response.clone(),
        });
        Ok(response)
    }

    fn name(&self) -> String {
        self.inner.name()
    }
}

/// Parse a backend selector: `echo`, `const:<reply>`, `fixture:<path>`, or
/// an HTTP base URL.
pub fn backend_from_spec(
    spec: &str,
    config: EndpointConfig,
) -> Result<Box<dyn ChatBackend>, GatewayError> {
    if spec == "echo" {
        Ok(Box::new(EchoStub))
    } else if let Some(reply) = spec.strip_prefix("const:") {
        Ok(Box::new(ConstantStub(reply.to_string())))
    } else if let Some(path) = spec.strip_prefix("fixture:") {
        Ok(Box::new(FixtureBackend::from_file(Path::new(path))?))
    } else {
        let mut config = config;
        config.base_url = spec.to_string();
        Ok(Box::new(HttpBackend::new(config.with_env_overrides())))
    }
}

// ---------------------------------------------------------------------------
// RAG prompt assembly and consultation

/// System prompt imposing the answer-first output contract.
pub const ANALYST_SYSTEM_PROMPT: &str = "You are a data-protection compliance analyst. \
Answer with \"Yes\" or \"No\" first, then give a justification citing the relevant \
regulation articles.";

fn long_citation(citation: &str) -> String {
    match crate::citation::Citation::parse(citation, "GDPR") {
        Ok(c) => {
            let mut article = format!("Article {}", c.article);
            if let Some(p) = c.paragraph {
                article.push_str(&format!("({p})"));
            }
            if let Some(pt) = c.point {
                article.push_str(&format!("({pt})"));
            }
            format!("{article} of {}", c.regulation_id)
        }
        Err(_) => citation.to_string(),
    }
}

/// Build the consultation prompt: analyst system message, then a `Premise:`
/// section listing each retrieved clause in rank order, then the question.
pub fn assemble_rag_prompt(question: &str, hits: &[(RetrievalHit, String)]) -> Vec<ChatMessage> {
    let mut user = String::new();
    if !hits.is_empty() {
        user.push_str("Premise:\n");
        for (hit, text) in hits {
            user.push_str(&format!(
                "{} ({}): {}\n",
                long_citation(&hit.clause_citation),
                hit.clause_citation,
                text
            ));
        }
        user.push('\n');
    }
    user.push_str(question);
    vec![
        ChatMessage::system(ANALYST_SYSTEM_PROMPT),
        ChatMessage::user(&user),
    ]
}

/// A consultation result: the model's raw verdict text plus the clauses it
/// was shown, for downstream answer extraction and citation audit.
#[derive(Debug, Clone)]
pub struct Consultation {
    pub text: String,
    pub hits: Vec<(RetrievalHit, String)>,
}

/// Retrieve, prompt, complete.
pub fn consult(
    backend: &dyn ChatBackend,
    index: &ClauseIndex,
    question: &str,
    k: usize,
) -> Result<Consultation, ConsultError> {
    let hits: Vec<(RetrievalHit, String)> = search(index, question, k)?
        .into_iter()
        .map(|hit| {
            let text = index
                .clause_text(&hit.clause_citation)
                .unwrap_or_default()
                .to_string();
            (hit, text)
        })
        .collect();
    let messages = assemble_rag_prompt(question, &hits);
    let text = backend.complete(&messages)?;
    Ok(Consultation { text, hits })
}
