//! Scripted chat-completions server for tests.
//!
//! Replies are consumed in order; when the script is empty the fallback
//! reply (if any) is used, otherwise the server answers 500. Every request
//! body and `Authorization` header is recorded.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::client::COMPLETIONS_PATH;

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    /// One choice per entry; a request with `n` larger than the list cycles through it.
    Completion(Vec<(String, Vec<f64>)>),
    Status(u16),
    /// A valid completion whose choices have no `logprobs`.
    NoLogprobs(String),
}

impl Reply {
    pub fn text(content: &str, logprobs: &[f64]) -> Self {
        Reply::Completion(vec![(content.to_string(), logprobs.to_vec())])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub body: Value,
    pub authorization: Option<String>,
}

#[derive(Default)]
struct Script {
    replies: VecDeque<Reply>,
    fallback: Option<Reply>,
    requests: Vec<RecordedRequest>,
}

type Shared = Arc<Mutex<Script>>;

pub struct MockServer {
    addr: SocketAddr,
    script: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

fn completion(choices: &[(String, Vec<f64>)], n: usize) -> Value {
    let items: Vec<Value> = (0..n.max(1))
        .map(|i| {
            let (content, lps) = &choices[i % choices.len()];
            let tokens: Vec<Value> = lps
                .iter()
                .enumerate()
                .map(|(k, lp)| json!({ "token": format!("t{k}"), "logprob": lp }))
                .collect();
            json!({
                "index": i,
                "message": { "role": "assistant", "content": content },
                "logprobs": { "content": tokens },
                "finish_reason": "stop",
            })
        })
        .collect();
    json!({ "id": "mock", "object": "chat.completion", "choices": items })
}

async fn handle(State(script): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let reply = {
        let mut s = script.lock().expect("script lock");
        s.requests.push(RecordedRequest {
            body: body.clone(),
            authorization: headers
                .get("authorization")
                .and_then(|v| v.to_str().ok())
                .map(String::from),
        });
        s.replies.pop_front().or_else(|| s.fallback.clone())
    };
    let n = body["n"].as_u64().unwrap_or(1) as usize;
    match reply {
        Some(Reply::Completion(choices)) if !choices.is_empty() => Json(completion(&choices, n)).into_response(),
        Some(Reply::NoLogprobs(content)) => Json(json!({
            "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }]
        }))
        .into_response(),
        Some(Reply::Status(code)) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(json!({ "error": { "message": "scripted failure" } }))).into_response()
        }
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "script exhausted").into_response(),
    }
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves on a background thread.
    pub fn start() -> std::io::Result<Self> {
        let script: Shared = Arc::default();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let app = Router::new()
            .route(COMPLETIONS_PATH, post(handle))
            .with_state(script.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            script,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn push(&self, reply: Reply) {
        self.script.lock().expect("script lock").replies.push_back(reply);
    }

    pub fn set_fallback(&self, reply: Reply) {
        self.script.lock().expect("script lock").fallback = Some(reply);
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.script.lock().expect("script lock").requests.clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
