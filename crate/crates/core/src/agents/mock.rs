//! Deterministic stand-ins for a chat backend: an in-process mock and a
//! tiny local HTTP server speaking the same protocol as [`super::HttpBackend`].

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::backend::ChatBackend;
use super::prompts::{self, question_of, Message};
use crate::Result;

#[derive(Debug, Clone, Default)]
pub struct MockTruth {
    pub answer: String,
    /// Returned verbatim by the entity judge.
    pub entities: Vec<String>,
}

/// Answers every question from an embedded truth table. Reflection asks
/// for one revision per (model, question) before accepting.
#[derive(Debug, Default)]
pub struct MockBackend {
    truth: HashMap<String, MockTruth>,
    reflected: Mutex<HashSet<(String, String)>>,
    calls: AtomicUsize,
    role_calls: Mutex<HashMap<&'static str, usize>>,
}

fn role_of(system: &str) -> &'static str {
    [
        (prompts::RAW, "raw"),
        (prompts::COT, "cot"),
        (prompts::DEBATER_A, "debater_a"),
        (prompts::DEBATER_B, "debater_b"),
        (prompts::DEBATE_JUDGE, "debate_judge"),
        (prompts::REACT, "react"),
        (prompts::REFLECT, "reflect"),
        (prompts::THINK_A, "think"),
        (prompts::SUMMARIZE, "summarize"),
        (prompts::ENTITY_JUDGE, "entity_judge"),
    ]
    .iter()
    .find(|(p, _)| *p == system)
    .map_or("unknown", |(_, r)| r)
}

impl MockBackend {
    pub fn new(truth: HashMap<String, MockTruth>) -> Self {
        MockBackend {
            truth,
            ..Default::default()
        }
    }

    /// Truth table where each question maps to its first gold answer.
    pub fn from_records(records: &[crate::dataio::DatasetRecord]) -> Self {
        Self::new(
            records
                .iter()
                .map(|r| {
                    (
                        r.question.clone(),
                        MockTruth {
                            answer: r.gold_answers[0].clone(),
                            entities: Vec::new(),
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn role_calls(&self, role: &str) -> usize {
        self.role_calls
            .lock()
            .expect("mock lock")
            .get(role)
            .copied()
            .unwrap_or(0)
    }

    pub fn respond(&self, model: &str, messages: &[Message]) -> String {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let system = messages
            .iter()
            .find(|m| m.role == "system")
            .map_or("", |m| m.content.as_str());
        let role = role_of(system);
        *self
            .role_calls
            .lock()
            .expect("mock lock")
            .entry(role)
            .or_default() += 1;
        let question = question_of(messages).unwrap_or("").to_string();
        let truth = self.truth.get(&question);
        let answer = truth.map_or("unknown", |t| t.answer.as_str());
        match role {
            "debater_a" | "debater_b" | "think" => {
                format!("Claim: {answer}\nQuote: \"{answer}\" appears in the context.")
            }
            "reflect" => {
                let first = self
                    .reflected
                    .lock()
                    .expect("mock lock")
                    .insert((model.to_string(), question));
                if first {
                    "Feedback: cite the supporting span.\nStatus: revise".to_string()
                } else {
                    "The answer is supported.\nStatus: final".to_string()
                }
            }
            "entity_judge" => {
                let ents = truth.map(|t| t.entities.join("; ")).unwrap_or_default();
                format!("Scores assigned.\n\\boxed{{{ents}}}")
            }
            _ => format!("Working through the context for {model}.\nFinal: \\boxed{{{answer}}}"),
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, model: &str, messages: &[Message], _temperature: f64) -> Result<String> {
        Ok(self.respond(model, messages))
    }
}

/// Local HTTP server backed by a [`MockBackend`]. The first `fail_first`
/// requests get `429 Too Many Requests` with `Retry-After: 0`.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    pub backend: Arc<MockBackend>,
    requests: Arc<AtomicUsize>,
    rejected: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(backend: MockBackend, fail_first: usize) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let backend = Arc::new(backend);
        let requests = Arc::new(AtomicUsize::new(0));
        let rejected = Arc::new(AtomicUsize::new(0));
        let (s, b, rq, rj) = (
            stop.clone(),
            backend.clone(),
            requests.clone(),
            rejected.clone(),
        );
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (b, rq, rj) = (b.clone(), rq.clone(), rj.clone());
                thread::spawn(move || {
                    let n = rq.fetch_add(1, Ordering::SeqCst);
                    let reject = n < fail_first;
                    if reject {
                        rj.fetch_add(1, Ordering::SeqCst);
                    }
                    let _ = handle_connection(stream, &b, reject);
                });
            }
        });
        Ok(MockServer {
            addr,
            stop,
            handle: Some(handle),
            backend,
            requests,
            rejected,
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn rejected(&self) -> usize {
        self.rejected.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    backend: &MockBackend,
    reject: bool,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let mut stream = stream;
    if reject {
        let msg = r#"{"error":"rate limited"}"#;
        return write!(
            stream,
            "HTTP/1.1 429 Too Many Requests\r\nRetry-After: 0\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{msg}",
            msg.len()
        );
    }
    let (status, payload) = match serde_json::from_slice::<serde_json::Value>(&body) {
        Ok(req) => {
            let model = req["model"].as_str().unwrap_or("").to_string();
            let messages: Vec<Message> =
                serde_json::from_value(req["messages"].clone()).unwrap_or_default();
            let content = backend.respond(&model, &messages);
            (
                "200 OK",
                serde_json::json!({
                    "object": "chat.completion",
                    "model": model,
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
                })
                .to_string(),
            )
        }
        Err(e) => (
            "400 Bad Request",
            serde_json::json!({"error": e.to_string()}).to_string(),
        ),
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )
}
