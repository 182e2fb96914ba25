//! A local HTTP server speaking the provider wire contract.
//!
//! Used by integration tests to exercise [`super::RemoteProvider`] without a
//! real model service. The handler sees the decoded request and returns
//! either an output value or an HTTP status with a body.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::Value;

use super::remote::{WireRequest, WireResponse};

pub type StubReply = Result<Value, (u16, String)>;
type Handler = dyn Fn(&WireRequest) -> StubReply + Send + Sync;

pub struct StubServer {
    server: Arc<tiny_http::Server>,
    url: String,
    hits: Arc<Mutex<BTreeMap<String, usize>>>,
    total: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<WireRequest>>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&WireRequest) -> StubReply + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("stub server has no ip address"))?;
        let server = Arc::new(server);
        let hits = Arc::new(Mutex::new(BTreeMap::new()));
        let total = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);

        let worker = {
            let server = Arc::clone(&server);
            let hits = Arc::clone(&hits);
            let total = Arc::clone(&total);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                while let Ok(mut req) = server.recv() {
                    let mut body = String::new();
                    let reply = match req.as_reader().read_to_string(&mut body) {
                        Err(e) => Err((400, e.to_string())),
                        Ok(_) => match serde_json::from_str::<WireRequest>(&body) {
                            Err(e) => Err((400, e.to_string())),
                            Ok(wire) => {
                                total.fetch_add(1, Ordering::SeqCst);
                                *hits.lock().unwrap().entry(wire.task.clone()).or_insert(0) += 1;
                                let reply = handler(&wire);
                                requests.lock().unwrap().push(wire);
                                reply
                            }
                        },
                    };
                    let (status, text) = match reply {
                        Ok(output) => (200, serde_json::to_string(&WireResponse { output }).unwrap()),
                        Err((status, text)) => (status, text),
                    };
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let _ = req.respond(
                        tiny_http::Response::from_string(text)
                            .with_status_code(status)
                            .with_header(header),
                    );
                }
            })
        };

        Ok(Self {
            server,
            url: format!("http://127.0.0.1:{port}/"),
            hits,
            total,
            requests,
            worker: Some(worker),
        })
    }

    /// Replies with the request's `input` unchanged.
    pub fn echo() -> std::io::Result<Self> {
        Self::start(|req| Ok(req.input.clone()))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn hits(&self, task: &str) -> usize {
        self.hits.lock().unwrap().get(task).copied().unwrap_or(0)
    }

    pub fn total_hits(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    /// Every decoded request received so far, in arrival order.
    pub fn requests(&self) -> Vec<(String, String, Value)> {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .map(|r| (r.task.clone(), r.model.clone(), r.input.clone()))
            .collect()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
