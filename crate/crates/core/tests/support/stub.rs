//! Minimal HTTP/1.1 chat-completion endpoint for exercising the LLM client
//! without network access.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

#[derive(Clone, Debug)]
pub struct StubRequest {
    pub authorization: Option<String>,
    pub body: Value,
}

impl StubRequest {
    /// The single user message of a chat request.
    pub fn prompt(&self) -> &str {
        self.body["messages"][0]["content"].as_str().unwrap_or_default()
    }
}

pub enum StubReply {
    /// A 200 chat completion whose message content is the given text.
    Chat(String),
    /// Any status with a raw body.
    Status(u16, String),
}

type Script = dyn Fn(usize, &StubRequest) -> StubReply + Send + Sync;

pub struct StubServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<StubRequest>>>,
}

impl StubServer {
    /// Serves `script(hit_index, request)` for every request until the
    /// process exits.
    pub fn start(script: impl Fn(usize, &StubRequest) -> StubReply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let script: Arc<Script> = Arc::new(script);
        let (h, r) = (hits.clone(), requests.clone());
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { continue };
                let (h, r, script) = (h.clone(), r.clone(), script.clone());
                std::thread::spawn(move || serve(conn, &h, &r, &*script));
            }
        });
        StubServer { url, hits, requests }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<StubRequest> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(conn: TcpStream, hits: &AtomicUsize, log: &Mutex<Vec<StubRequest>>, script: &Script) {
    let mut writer = conn.try_clone().expect("clone stream");
    let mut reader = BufReader::new(conn);
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let (mut length, mut authorization) = (0usize, None);
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header).unwrap_or(0) == 0 {
                return;
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap_or(0),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let req = StubRequest {
            authorization,
            body: serde_json::from_slice(&body).unwrap_or(Value::Null),
        };
        let index = hits.fetch_add(1, Ordering::SeqCst);
        log.lock().unwrap().push(req.clone());
        let (status, payload) = match script(index, &req) {
            StubReply::Chat(text) => (
                200,
                json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string(),
            ),
            StubReply::Status(code, body) => (code, body),
        };
        let head = format!(
            "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            payload.len()
        );
        if writer.write_all(head.as_bytes()).and_then(|_| writer.write_all(payload.as_bytes())).is_err() {
            return;
        }
    }
}
