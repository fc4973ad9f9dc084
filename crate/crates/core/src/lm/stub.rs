//! In-process HTTP server that exposes any [`LanguageModel`] over the logits
//! protocol. Used by tests and the `serve-stub` subcommand.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::protocol::*;
use super::LanguageModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct StubOptions {
    pub model_name: String,
    /// Delay applied before answering any request.
    pub latency: Duration,
    /// Truncates or pads logprob vectors to this length (protocol fault injection).
    pub logprobs_len_override: Option<usize>,
    pub workers: usize,
}

impl Default for StubOptions {
    fn default() -> Self {
        Self {
            model_name: "ngram".into(),
            latency: Duration::ZERO,
            logprobs_len_override: None,
            workers: 4,
        }
    }
}

pub struct StubServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (port 0 picks a free port) and starts answering requests
    /// on background threads.
    pub fn start<L>(lm: Arc<L>, addr: &str, options: StubOptions) -> Result<Self>
    where
        L: LanguageModel + ?Sized + 'static,
    {
        let server = Server::http(addr).map_err(|e| Error::Connection(format!("bind {addr}: {e}")))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Connection("stub server is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let options = Arc::new(options);
        let workers = (0..options.workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let lm = Arc::clone(&lm);
                let options = Arc::clone(&options);
                thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle(&*lm, &options, request);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            addr: bound,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the worker threads exit, which only happens on shutdown.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop();
    }
}

type Reply = std::result::Result<String, (u16, String)>;

fn handle<L: LanguageModel + ?Sized>(lm: &L, options: &StubOptions, mut request: Request) {
    if !options.latency.is_zero() {
        thread::sleep(options.latency);
    }
    let mut body = String::new();
    let reply = match request.as_reader().read_to_string(&mut body) {
        Err(e) => Err((400, format!("unreadable body: {e}"))),
        Ok(_) => route(lm, options, request.method(), request.url(), &body),
    };
    let (status, payload) = match reply {
        Ok(json) => (200, json),
        Err((status, message)) => (
            status,
            serde_json::to_string(&ErrorResponse { error: message }).unwrap_or_default(),
        ),
    };
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header is valid");
    let response = Response::from_string(payload)
        .with_status_code(status)
        .with_header(header);
    // the client may have gone away (e.g. after a timeout)
    let _ = request.respond(response);
}

fn route<L: LanguageModel + ?Sized>(
    lm: &L,
    options: &StubOptions,
    method: &Method,
    url: &str,
    body: &str,
) -> Reply {
    match (method, url) {
        (Method::Get, INFO_PATH) => to_json(&InfoResponse {
            vocab_size: lm.vocab_size(),
            model: options.model_name.clone(),
            eos_id: Some(lm.eos_id()),
        }),
        (Method::Post, TOKENIZE_PATH) => {
            let req: TokenizeRequest = parse(body)?;
            let ids = lm.tokenize(&req.text).map_err(internal)?;
            to_json(&TokenizeResponse { ids })
        }
        (Method::Post, DETOKENIZE_PATH) => {
            let req: DetokenizeRequest = parse(body)?;
            let text = lm.detokenize(&req.ids).map_err(bad_request)?;
            to_json(&DetokenizeResponse { text })
        }
        (Method::Post, NEXT_LOGPROBS_PATH) => {
            let req: NextLogprobsRequest = parse(body)?;
            let mut logprobs = lm
                .next_logprobs(&req.context_ids)
                .map_err(bad_request)?
                .into_values();
            if let Some(len) = options.logprobs_len_override {
                logprobs.resize(len, f64::MIN);
            }
            to_json(&NextLogprobsResponse { logprobs })
        }
        (_, INFO_PATH | TOKENIZE_PATH | DETOKENIZE_PATH | NEXT_LOGPROBS_PATH) => {
            Err((405, format!("method {method} not allowed on {url}")))
        }
        _ => Err((404, format!("no route for {url}"))),
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> std::result::Result<T, (u16, String)> {
    serde_json::from_str(body).map_err(|e| (400, format!("invalid request body: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> Reply {
    serde_json::to_string(value).map_err(|e| (500, e.to_string()))
}

fn bad_request(e: Error) -> (u16, String) {
    (400, e.to_string())
}

fn internal(e: Error) -> (u16, String) {
    (500, e.to_string())
}
