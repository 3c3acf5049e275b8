#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::sync::Arc;
use std::time::{Duration, Instant};

use preprod_core::session::{Engine, EngineParts};
use preprod_core::{CoreConfig, ScriptedProgram, SessionEvent};
use serde_json::{json, Value};

pub struct TestServer {
    pub base: String,
    pub engine: Arc<Engine>,
    pub client: reqwest::blocking::Client,
    _dir: tempfile::TempDir,
    _rt: tokio::runtime::Runtime,
}

impl TestServer {
    pub fn scripted(program: ScriptedProgram) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (parts, _) = EngineParts::scripted(program, CoreConfig::default());
        let engine = Arc::new(Engine::new(parts, dir.path()));
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = rt
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .unwrap();
        let addr = listener.local_addr().unwrap();
        let app = preprod_server::router(engine.clone());
        rt.spawn(async move { axum::serve(listener, app).await });
        Self {
            base: format!("http://{addr}"),
            engine,
            client: reqwest::blocking::Client::builder()
                .timeout(None::<Duration>)
                .build()
                .unwrap(),
            _dir: dir,
            _rt: rt,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn create(&self, brief: &str) -> String {
        let r = self
            .client
            .post(self.url("/sessions"))
            .json(&json!({"mode": "new", "brief": brief}))
            .send()
            .unwrap();
        assert_eq!(r.status(), 201);
        r.json::<Value>().unwrap()["session_id"].as_str().unwrap().to_string()
    }

    pub fn post(&self, sid: &str, body: Value) -> reqwest::blocking::Response {
        self.client
            .post(self.url(&format!("/sessions/{sid}/messages")))
            .json(&body)
            .send()
            .unwrap()
    }

    pub fn say(&self, sid: &str, text: &str) -> String {
        let r = self.post(sid, json!({ "text": text }));
        assert_eq!(r.status(), 202, "{:?}", r.text());
        r.json::<Value>().unwrap()["request_id"].as_str().unwrap().to_string()
    }

    pub fn info(&self, sid: &str) -> Value {
        self.client
            .get(self.url(&format!("/sessions/{sid}")))
            .send()
            .unwrap()
            .json()
            .unwrap()
    }

    /// Polls until no request is in flight.
    pub fn wait_idle(&self, sid: &str) {
        let deadline = Instant::now() + Duration::from_secs(20);
        while self.info(sid).get("in_flight").is_some() {
            assert!(Instant::now() < deadline, "session never went idle");
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    pub fn say_and_wait(&self, sid: &str, text: &str) -> String {
        let rid = self.say(sid, text);
        self.wait_idle(sid);
        rid
    }

    pub fn project(&self, sid: &str) -> Value {
        self.client
            .get(self.url(&format!("/sessions/{sid}/project")))
            .send()
            .unwrap()
            .json()
            .unwrap()
    }

    pub fn transcript(&self, sid: &str) -> Value {
        self.client
            .get(self.url(&format!("/sessions/{sid}/transcript")))
            .send()
            .unwrap()
            .json()
            .unwrap()
    }

    pub fn log(&self, sid: &str) -> Vec<SessionEvent> {
        serde_json::from_value(self.transcript(sid)["events"].clone()).unwrap()
    }

    pub fn subscribe(&self, sid: &str, last_event_id: Option<u64>) -> SseReader {
        SseReader::open(&self.client, &self.url(&format!("/sessions/{sid}/events")), last_event_id)
    }

    pub fn subscribe_from(&self, sid: &str, from_seq: u64) -> SseReader {
        let r = self
            .client
            .get(self.url(&format!("/sessions/{sid}/events?from_seq={from_seq}")))
            .send()
            .unwrap();
        assert_eq!(r.status(), 200);
        SseReader {
            lines: BufReader::new(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub event: String,
    pub id: u64,
    pub data: String,
}

impl Frame {
    pub fn parse(&self) -> SessionEvent {
        serde_json::from_str(&self.data).unwrap()
    }
}

/// Minimal blocking reader of the SSE wire format.
pub struct SseReader {
    lines: BufReader<reqwest::blocking::Response>,
}

impl SseReader {
    pub fn open(client: &reqwest::blocking::Client, url: &str, last_event_id: Option<u64>) -> Self {
        let mut req = client.get(url);
        if let Some(id) = last_event_id {
            req = req.header("Last-Event-ID", id.to_string());
        }
        let r = req.send().unwrap();
        assert_eq!(r.status(), 200);
        assert!(r.headers()["content-type"]
            .to_str()
            .unwrap()
            .starts_with("text/event-stream"));
        SseReader {
            lines: BufReader::new(r),
        }
    }

    /// Next complete frame; keep-alive comments are skipped.
    pub fn next_frame(&mut self) -> Option<Frame> {
        let (mut event, mut id, mut data) = (None, None, Vec::new());
        loop {
            let mut line = String::new();
            if self.lines.read_line(&mut line).ok()? == 0 {
                return None;
            }
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                if let (Some(event), Some(id)) = (event.take(), id.take()) {
                    return Some(Frame {
                        event,
                        id,
                        data: data.join("\n"),
                    });
                }
                data.clear();
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = line.split_once(':').unwrap_or((line, ""));
            let value = value.strip_prefix(' ').unwrap_or(value);
            match field {
                "event" => event = Some(value.to_string()),
                "id" => id = value.parse().ok(),
                "data" => data.push(value.to_string()),
                _ => {}
            }
        }
    }

    /// Frames until `done_count` done events have been read.
    pub fn until_dones(&mut self, done_count: usize) -> Vec<Frame> {
        let mut out = Vec::new();
        let mut dones = 0;
        while dones < done_count {
            let f = self.next_frame().expect("stream ended early");
            dones += (f.event == "done") as usize;
            out.push(f);
        }
        out
    }
}
