//! A local OpenAI-compatible stub server with scriptable failures, for
//! exercising the HTTP adapter without a real model.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::adapters::mock::mock_embed_text;

/// What successful chat completions return.
#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    /// The text of the last user message.
    EchoLastUser,
    Fixed(String),
}

#[derive(Debug)]
struct StubState {
    fail_remaining: AtomicU32,
    fail_status: AtomicU32,
    reply: Mutex<StubReply>,
    embedding_dim: usize,
    requests: Mutex<Vec<(String, Value)>>,
    authorization: Mutex<Option<String>>,
}

/// Handle to a running stub. Dropping it stops the server.
pub struct StubLlm {
    addr: SocketAddr,
    state: Arc<StubState>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

fn last_user_text(body: &Value) -> String {
    let Some(msgs) = body["messages"].as_array() else {
        return String::new();
    };
    let Some(m) = msgs.iter().rev().find(|m| m["role"] == "user") else {
        return String::new();
    };
    match &m["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    }
}

fn scripted_failure(state: &StubState) -> Option<Response> {
    let left = state.fail_remaining.load(Ordering::SeqCst);
    if left == 0 {
        return None;
    }
    state.fail_remaining.store(left - 1, Ordering::SeqCst);
    let status = StatusCode::from_u16(state.fail_status.load(Ordering::SeqCst) as u16)
        .unwrap_or(StatusCode::SERVICE_UNAVAILABLE);
    Some((status, Json(json!({"error": {"message": "scripted failure"}}))).into_response())
}

fn record(state: &StubState, path: &str, headers: &HeaderMap, body: &Value) {
    state.requests.lock().unwrap().push((path.into(), body.clone()));
    *state.authorization.lock().unwrap() = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
}

async fn chat(State(state): State<Arc<StubState>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    record(&state, "chat/completions", &headers, &body);
    if let Some(r) = scripted_failure(&state) {
        return r;
    }
    let text = match &*state.reply.lock().unwrap() {
        StubReply::EchoLastUser => last_user_text(&body),
        StubReply::Fixed(s) => s.clone(),
    };
    Json(json!({
        "object": "chat.completion",
        "model": body["model"],
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }))
    .into_response()
}

async fn embeddings(State(state): State<Arc<StubState>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    record(&state, "embeddings", &headers, &body);
    if let Some(r) = scripted_failure(&state) {
        return r;
    }
    let input = body["input"].as_str().unwrap_or_default();
    let v = mock_embed_text(input, state.embedding_dim, 0);
    Json(json!({"object": "list", "data": [{"index": 0, "embedding": v.values()}]})).into_response()
}

impl StubLlm {
    /// Starts on an ephemeral localhost port. Embeddings have `embedding_dim` entries.
    pub fn start(embedding_dim: usize) -> std::io::Result<Self> {
        let state = Arc::new(StubState {
            fail_remaining: AtomicU32::new(0),
            fail_status: AtomicU32::new(503),
            reply: Mutex::new(StubReply::EchoLastUser),
            embedding_dim,
            requests: Mutex::new(Vec::new()),
            authorization: Mutex::new(None),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .route("/v1/embeddings", post(embeddings))
            .with_state(state.clone());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            })
        });
        Ok(StubLlm {
            addr,
            state,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    /// Base URL suitable for `BackendProfile::endpoint_url`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// The next `n` requests fail with `status`.
    pub fn fail_next(&self, n: u32, status: u16) {
        self.state.fail_status.store(status as u32, Ordering::SeqCst);
        self.state.fail_remaining.store(n, Ordering::SeqCst);
    }

    pub fn set_reply(&self, reply: StubReply) {
        *self.state.reply.lock().unwrap() = reply;
    }

    /// Every request received so far as `(path, body)`.
    pub fn requests(&self) -> Vec<(String, Value)> {
        self.state.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.requests.lock().unwrap().len()
    }

    /// `Authorization` header of the most recent request.
    pub fn last_authorization(&self) -> Option<String> {
        self.state.authorization.lock().unwrap().clone()
    }

    pub fn clear_requests(&self) {
        self.state.requests.lock().unwrap().clear();
    }
}

impl Drop for StubLlm {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
