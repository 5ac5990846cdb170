//! OpenAI-compatible HTTP backend: `POST /v1/chat/completions` and
//! `POST /v1/embeddings`, with bounded retries and full-jitter backoff.
//!
//! The client is blocking. Async callers must hop onto a blocking thread
//! before invoking it.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapters::{
    BackendError, BackendProfile, Classifier, ImageInput, ReviewOutcome, Reviewer, Summarizer,
    TextEmbedder, VisionDescriber,
};
use crate::domain::{
    Embedding, EvidenceBundle, GuidelineVersion, Label, PriorSlot, StageName, StageRecord,
};
use crate::index::CaseHit;
use crate::text::short_hex;

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub factor: u32,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base: Duration::from_millis(250),
            factor: 2,
            max_delay: Duration::from_secs(30),
        }
    }

    /// Pre-jitter delay ceiling before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let mult = (self.factor as u64).saturating_pow(retry);
        let ms = (self.base.as_millis() as u64).saturating_mul(mult);
        Duration::from_millis(ms).min(self.max_delay)
    }

    /// Uniform draw from `[0, ceiling(retry)]`.
    pub fn delay<R: Rng>(&self, retry: u32, rng: &mut R) -> Duration {
        let cap = self.ceiling(retry).as_millis() as u64;
        Duration::from_millis(rng.gen_range(0..=cap))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Binary attachment sent as a base64 data URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub mime: String,
    pub bytes: Vec<u8>,
}

impl Attachment {
    pub fn image(bytes: &[u8]) -> Self {
        let mime = match bytes {
            [0x89, b'P', b'N', b'G', ..] => "image/png",
            [0xff, 0xd8, 0xff, ..] => "image/jpeg",
            [b'G', b'I', b'F', b'8', ..] => "image/gif",
            [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
            _ => "application/octet-stream",
        };
        Attachment {
            mime: mime.into(),
            bytes: bytes.to_vec(),
        }
    }

    fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub attempts: u32,
}

/// Blocking OpenAI-compatible client for one backend profile.
pub struct HttpBackend {
    profile: BackendProfile,
    policy: RetryPolicy,
    client: reqwest::blocking::Client,
    limiter: Arc<Limiter>,
    jitter: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("profile", &self.profile)
            .field("policy", &self.policy)
            .finish()
    }
}

enum AttemptError {
    Retryable(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(profile: BackendProfile, jitter_seed: u64) -> Result<Self, BackendError> {
        profile.validate().map_err(BackendError::InvalidResponse)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(profile.timeout_ms))
            .build()
            .map_err(|e| BackendError::Failure {
                status: None,
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            policy: RetryPolicy::new(profile.max_retries),
            limiter: Arc::new(Limiter::new(profile.max_in_flight)),
            profile,
            client,
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(jitter_seed)),
        })
    }

    pub fn with_retry_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn url(&self, path: &str) -> String {
        let base = self.profile.endpoint_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/{path}")
        } else {
            format!("{base}/v1/{path}")
        }
    }

    fn token(&self) -> Result<Option<String>, BackendError> {
        match self.profile.auth_token_env_var.as_deref() {
            None | Some("") => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::AuthMissing { var: var.into() }),
        }
    }

    fn post_with_retries(&self, path: &str, body: &Value) -> Result<(Value, u32), BackendError> {
        let token = self.token()?;
        let url = self.url(path);
        let _permit = self.limiter.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(&url, body, token.as_deref(), attempt) {
                Ok(v) => return Ok((v, attempt)),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(e)) => {
                    if attempt > self.policy.max_retries {
                        return Err(e);
                    }
                    let delay = {
                        let mut rng = self.jitter.lock().unwrap();
                        self.policy.delay(attempt - 1, &mut *rng)
                    };
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn attempt(
        &self,
        url: &str,
        body: &Value,
        token: Option<&str>,
        attempts: u32,
    ) -> Result<Value, AttemptError> {
        let mut req = self.client.post(url).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Err(AttemptError::Retryable(BackendError::Timeout { attempts }))
            }
            Err(e) => {
                return Err(AttemptError::Retryable(BackendError::Failure {
                    status: None,
                    attempts,
                    message: e.to_string(),
                }))
            }
        };
        let status = resp.status();
        if status.is_server_error() {
            return Err(AttemptError::Retryable(BackendError::Failure {
                status: Some(status.as_u16()),
                attempts,
                message: resp.text().unwrap_or_default(),
            }));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(BackendError::Failure {
                status: Some(status.as_u16()),
                attempts,
                message: resp.text().unwrap_or_default(),
            }));
        }
        resp.json::<Value>().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Retryable(BackendError::Timeout { attempts })
            } else {
                AttemptError::Fatal(BackendError::InvalidResponse(e.to_string()))
            }
        })
    }

    /// Request body for a chat completion. Attachments ride on the last
    /// user message as `image_url` parts.
    pub fn chat_body(&self, messages: &[ChatMessage], attachments: &[Attachment]) -> Value {
        let last_user = messages.iter().rposition(|m| m.role == "user");
        let msgs: Vec<Value> = messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if Some(i) == last_user && !attachments.is_empty() {
                    let mut parts = vec![json!({"type": "text", "text": m.content})];
                    parts.extend(attachments.iter().map(|a| {
                        json!({"type": "image_url", "image_url": {"url": a.data_url()}})
                    }));
                    json!({"role": m.role, "content": parts})
                } else {
                    json!({"role": m.role, "content": m.content})
                }
            })
            .collect();
        json!({
            "model": self.profile.model_name,
            "messages": msgs,
            "temperature": self.profile.temperature,
            "max_tokens": self.profile.max_tokens,
        })
    }

    pub fn chat(
        &self,
        messages: &[ChatMessage],
        attachments: &[Attachment],
    ) -> Result<ChatReply, BackendError> {
        let body = self.chat_body(messages, attachments);
        let (resp, attempts) = self.post_with_retries("chat/completions", &body)?;
        let content = &resp["choices"][0]["message"]["content"];
        let text = match content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
            _ => {
                return Err(BackendError::InvalidResponse(
                    "missing choices[0].message.content".into(),
                ))
            }
        };
        Ok(ChatReply { text, attempts })
    }

    pub fn embed(&self, input: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({"model": self.profile.model_name, "input": input});
        let (resp, _) = self.post_with_retries("embeddings", &body)?;
        resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| BackendError::InvalidResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| BackendError::InvalidResponse("non-numeric embedding".into()))
            })
            .collect()
    }
}

/// Issues one chat request with the profile's generation settings.
pub fn http_chat(
    profile: &BackendProfile,
    messages: &[ChatMessage],
    attachments: &[Attachment],
) -> Result<ChatReply, BackendError> {
    HttpBackend::new(profile.clone(), 0)?.chat(messages, attachments)
}

/// First balanced `{...}` block in `text`, for replies that wrap JSON in prose.
fn extract_json_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return serde_json::from_str(&text[start..start + i + 1]).ok();
                }
            }
            _ => {}
        }
    }
    None
}

pub struct HttpDescriber(pub Arc<HttpBackend>);

impl VisionDescriber for HttpDescriber {
    fn describe(&self, image: &ImageInput, prompt: &str) -> Result<String, BackendError> {
        let msgs = [
            ChatMessage::system("You are a dermatology vision agent. Report observations only."),
            ChatMessage::user(prompt),
        ];
        Ok(self.0.chat(&msgs, &[Attachment::image(&image.bytes)])?.text)
    }
}

pub struct HttpClassifier(pub Arc<HttpBackend>);

impl Classifier for HttpClassifier {
    fn classify(&self, image: &ImageInput, labels: &[Label]) -> Result<Vec<(Label, f64)>, BackendError> {
        let list = labels.iter().map(Label::as_str).collect::<Vec<_>>().join("\n");
        let msgs = [
            ChatMessage::system(
                "You are a dermatology classifier. Reply with a single JSON object mapping \
                 every candidate label to its probability. Probabilities must sum to 1.",
            ),
            ChatMessage::user(format!("Candidate labels:\n{list}")),
        ];
        let reply = self.0.chat(&msgs, &[Attachment::image(&image.bytes)])?;
        let obj = extract_json_object(&reply.text)
            .and_then(|v| v.as_object().cloned())
            .ok_or_else(|| BackendError::InvalidResponse("classifier reply is not a JSON object".into()))?;
        obj.into_iter()
            .map(|(k, v)| {
                v.as_f64()
                    .map(|p| (Label::new(k), p))
                    .ok_or_else(|| BackendError::InvalidResponse("non-numeric probability".into()))
            })
            .collect()
    }
}

pub struct HttpSummarizer(pub Arc<HttpBackend>);

/// Separates the prior guideline from new findings in summarizer prompts.
pub const INTEGRATION_DELIMITER: &str = "\n--- NEW CONFIRMED FINDINGS ---\n";

impl Summarizer for HttpSummarizer {
    fn summarize(&self, previous: Option<&str>, findings: &[String]) -> Result<String, BackendError> {
        let joined = findings
            .iter()
            .map(|f| format!("- {f}"))
            .collect::<Vec<_>>()
            .join("\n");
        let user = match previous {
            Some(p) => format!("{p}{INTEGRATION_DELIMITER}{joined}"),
            None => joined,
        };
        let msgs = [
            ChatMessage::system(
                "You are a dermatology summarization agent. Synthesize a concise diagnostic \
                 guideline for the disease category from the confirmed key findings. When a \
                 previous guideline is given, integrate the new findings, resolve \
                 contradictions and keep the discriminative features.",
            ),
            ChatMessage::user(user),
        ];
        Ok(self.0.chat(&msgs, &[])?.text)
    }
}

pub struct HttpTextEmbedder {
    pub backend: Arc<HttpBackend>,
    pub dim: usize,
}

impl TextEmbedder for HttpTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let v = self.backend.embed(text)?;
        if v.len() != self.dim {
            return Err(BackendError::InvalidResponse(format!(
                "embedding has {} dims, expected {}",
                v.len(),
                self.dim
            )));
        }
        Embedding::new(v).map_err(|e| BackendError::InvalidResponse(e.to_string()))
    }
}

pub struct HttpReviewer(pub Arc<HttpBackend>);

impl HttpReviewer {
    pub fn prompt(bundle: &EvidenceBundle, history: &[CaseHit], guidelines: &[GuidelineVersion]) -> String {
        let mut s = String::new();
        s.push_str("## Visual findings\n");
        s.push_str(&bundle.visual_findings);
        s.push_str("\n\n## Candidate diagnoses\n");
        for c in &bundle.candidates {
            s.push_str(&format!("- {} (confidence {:.4})\n", c.label, c.confidence));
        }
        s.push_str("\n## Textbook standards\n");
        for (label, prior) in &bundle.textbook_priors {
            match prior {
                PriorSlot::Found(k) => s.push_str(&format!("- {label}: {}\n", k.text)),
                PriorSlot::Absent => s.push_str(&format!("- {label}: (no textbook entry)\n")),
            }
        }
        s.push_str("\n## Evolved guidelines\n");
        if guidelines.is_empty() {
            s.push_str("(none)\n");
        }
        for g in guidelines {
            s.push_str(&format!("- {} v{}: {}\n", g.category, g.version, g.text));
        }
        s.push_str("\n## Similar historical cases\n");
        if history.is_empty() {
            s.push_str("(none)\n");
        }
        for h in history {
            s.push_str(&format!(
                "- {} [{}] similarity {:.4}: {}\n",
                h.case_id, h.diagnosis, h.score, h.key_findings
            ));
        }
        s
    }
}

const REVIEW_SYSTEM: &str = "You are a senior dermatology case reviewer. Follow five stages: \
1 Visual Feature Validation, 2 Canonical Guidelines Cross-Check, 3 Empirical Evidence Alignment, \
4 Conflict Resolution & Systematic Synthesis (prefer authoritative standards when statistical \
predictions conflict with guidelines), 5 Final Diagnostic Determination (choose one label from \
the candidate list). Reply with JSON: {\"final_diagnosis\": str, \"validated_findings\": str, \
\"stages\": [str, str, str, str, str]}.";

impl Reviewer for HttpReviewer {
    fn review(
        &self,
        bundle: &EvidenceBundle,
        history: &[CaseHit],
        guidelines: &[GuidelineVersion],
    ) -> Result<ReviewOutcome, BackendError> {
        let prompt = Self::prompt(bundle, history, guidelines);
        let digest = short_hex(prompt.as_bytes());
        let reply = self
            .0
            .chat(&[ChatMessage::system(REVIEW_SYSTEM), ChatMessage::user(prompt)], &[])?;
        let v = extract_json_object(&reply.text)
            .ok_or_else(|| BackendError::InvalidResponse("review reply is not JSON".into()))?;
        let d = Label::new(v["final_diagnosis"].as_str().unwrap_or_default());
        if !bundle.candidates.iter().any(|c| c.label == d) {
            return Err(BackendError::InvalidResponse(format!(
                "final diagnosis {d:?} is not a candidate"
            )));
        }
        let validated = v["validated_findings"]
            .as_str()
            .unwrap_or(&bundle.visual_findings)
            .to_string();
        let decisions = v["stages"].as_array().cloned().unwrap_or_default();
        let stages = StageName::ALL
            .iter()
            .enumerate()
            .map(|(i, s)| StageRecord {
                stage_index: s.index(),
                stage_name: *s,
                inputs_digest: digest.clone(),
                decision: decisions
                    .get(i)
                    .and_then(Value::as_str)
                    .unwrap_or("(not reported by reviewer)")
                    .to_string(),
                per_candidate_scores: None,
            })
            .collect();
        Ok(ReviewOutcome {
            final_diagnosis: d,
            validated_findings: validated,
            stages,
        })
    }
}
