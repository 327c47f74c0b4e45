#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use airays_core::backends::{ModelBackend, StubBackend};
use airays_core::catalog::{load_catalog, Catalog};
use airays_core::raster::CapturedFrame;
use airays_core::synth;
use airays_service::config::ServiceConfig;
use serde_json::Value;

pub fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn catalog() -> Catalog {
    load_catalog(repo().join("assets/catalog")).unwrap()
}

pub struct Server {
    pub base: String,
    pub runs: tempfile::TempDir,
    pub config: ServiceConfig,
}

pub fn config(runs: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        runs_dir: runs.into(),
        virtual_clock: true,
        processing_window_ms: 2_000,
        tick_ms: 5,
        audit: airays_service::config::AuditDefaults {
            out_dir: runs.join("audits"),
            ..Default::default()
        },
        ..ServiceConfig::default()
    }
}

/// Serve in-process on its own runtime thread.
pub fn start_with(edit: impl FnOnce(&mut ServiceConfig), backends: Arc<dyn ModelBackend>) -> Server {
    let runs = tempfile::tempdir().unwrap();
    let mut cfg = config(runs.path());
    edit(&mut cfg);
    let (tx, rx) = mpsc::channel::<SocketAddr>();
    let c = cfg.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            airays_service::serve(c, catalog(), backends, listener).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    Server {
        base: format!("http://{addr}"),
        runs,
        config: cfg,
    }
}

pub fn start() -> Server {
    start_with(|_| {}, Arc::new(StubBackend))
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build().unwrap()
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn get_json(&self, path: &str) -> Value {
        client().get(self.url(path)).send().unwrap().json().unwrap()
    }

    pub fn state(&self) -> String {
        self.get_json("/state")["state"].as_str().unwrap().to_string()
    }

    pub fn advance(&self, ms: u64) {
        let r = client()
            .post(self.url("/clock/advance"))
            .json(&serde_json::json!({ "ms": ms }))
            .send()
            .unwrap();
        assert!(r.status().is_success());
    }

    pub fn post_frame(&self, frame: &CapturedFrame) -> Value {
        let r = client().post(self.url("/frames")).body(frame.to_png().unwrap()).send().unwrap();
        assert_eq!(r.status().as_u16(), 202);
        r.json().unwrap()
    }

    pub fn trigger(&self, frame: Option<&CapturedFrame>) -> reqwest::blocking::Response {
        let body = frame.map(|f| f.to_png().unwrap()).unwrap_or_default();
        client().post(self.url("/trigger")).body(body).send().unwrap()
    }

    pub fn wait_state(&self, want: &str) {
        let start = Instant::now();
        while self.state() != want {
            assert!(start.elapsed() < Duration::from_secs(20), "stuck in {} waiting for {want}", self.state());
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn events(&self) -> EventReader {
        EventReader::open(&self.url("/events"))
    }
}

/// Parsed `data:` payloads of an SSE stream, read on a helper thread.
pub struct EventReader {
    rx: mpsc::Receiver<Value>,
}

impl EventReader {
    pub fn open(url: &str) -> Self {
        let (tx, rx) = mpsc::channel();
        let resp = reqwest::blocking::Client::builder()
            .timeout(None)
            .build()
            .unwrap()
            .get(url)
            .send()
            .unwrap();
        assert_eq!(resp.headers()["content-type"], "text/event-stream");
        std::thread::spawn(move || {
            for line in BufReader::new(resp).lines() {
                let Ok(line) = line else { break };
                if let Some(data) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:")) {
                    if tx.send(serde_json::from_str::<Value>(data).unwrap()).is_err() {
                        break;
                    }
                }
            }
        });
        Self { rx }
    }

    pub fn next(&self) -> Value {
        self.rx.recv_timeout(Duration::from_secs(20)).expect("event")
    }

    /// Events up to and including the first matching one.
    pub fn until(&self, pred: impl Fn(&Value) -> bool) -> Vec<Value> {
        let mut out = Vec::new();
        loop {
            let v = self.next();
            let hit = pred(&v);
            out.push(v);
            if hit {
                return out;
            }
        }
    }
}

pub fn is_state_to(v: &Value, to: &str) -> bool {
    v["kind"] == "state" && v["payload"]["to"] == to
}

/// Synthetic portrait whose stub readings match: person box present, bag
/// box present on the matted frame.
pub fn frame_with(person: bool, bag: bool) -> CapturedFrame {
    (0..2000)
        .map(|v| synth::portrait(96, 128, v))
        .find(|f| {
            let p = !StubBackend.detect(f, "person").unwrap().is_empty();
            let matted = StubBackend.remove_background(f).unwrap();
            let b = !StubBackend.detect(&matted, "bag").unwrap().is_empty();
            p == person && b == bag
        })
        .unwrap()
}
