//! Blocking HTTP client for an external model server speaking the protocol
//! in [`super::protocol`]. The server owns tokenization; this side only moves
//! token ids and log-probabilities.

use std::error::Error as _;
use std::io;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::*;
use super::{LanguageModel, LogProbVector};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, EOS};

#[derive(Debug, Clone)]
pub struct RemoteLM {
    base_url: String,
    agent: ureq::Agent,
    timeout: Duration,
    vocab_size: usize,
    eos_id: TokenId,
    model: String,
}

impl RemoteLM {
    /// Connects and performs the handshake.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut client = Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            timeout,
            vocab_size: 0,
            eos_id: EOS,
            model: String::new(),
        };
        client.remote_handshake()?;
        Ok(client)
    }

    /// Fetches `/v1/info` and caches the vocabulary size. Later logprob
    /// responses of any other length are rejected.
    pub fn remote_handshake(&mut self) -> Result<usize> {
        let info: InfoResponse = self.get(INFO_PATH)?;
        if info.vocab_size == 0 {
            return Err(Error::Protocol("server reported an empty vocabulary".into()));
        }
        self.vocab_size = info.vocab_size;
        self.eos_id = info.eos_id.unwrap_or(EOS);
        self.model = info.model;
        Ok(self.vocab_size)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = self.url(path);
        let resp = self.agent.get(&url).call().map_err(|e| map_ureq_error(&url, e))?;
        read_json(&url, resp)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = self.url(path);
        let resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| map_ureq_error(&url, e))?;
        read_json(&url, resp)
    }
}

fn read_json<T: DeserializeOwned>(url: &str, resp: ureq::Response) -> Result<T> {
    resp.into_json().map_err(|e| {
        if is_timeout(&e) {
            Error::Timeout(format!("{url}: {e}"))
        } else {
            Error::Protocol(format!("{url}: malformed response body: {e}"))
        }
    })
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock)
}

fn map_ureq_error(url: &str, err: ureq::Error) -> Error {
    match err {
        ureq::Error::Status(status, resp) => {
            let message = resp
                .into_json::<ErrorResponse>()
                .map(|e| e.error)
                .unwrap_or_else(|_| "no error body".into());
            Error::Server { status, message }
        }
        ureq::Error::Transport(t) => {
            let mut source = t.source();
            while let Some(s) = source {
                if let Some(io_err) = s.downcast_ref::<io::Error>() {
                    if is_timeout(io_err) {
                        return Error::Timeout(format!("{url}: {t}"));
                    }
                }
                source = s.source();
            }
            if t.to_string().contains("timed out") {
                Error::Timeout(format!("{url}: {t}"))
            } else {
                Error::Connection(format!("{url}: {t}"))
            }
        }
    }
}

impl LanguageModel for RemoteLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector> {
        let resp: NextLogprobsResponse = self.post(
            NEXT_LOGPROBS_PATH,
            &NextLogprobsRequest {
                context_ids: context.to_vec(),
            },
        )?;
        if resp.logprobs.len() != self.vocab_size {
            return Err(Error::LengthMismatch {
                expected: self.vocab_size,
                actual: resp.logprobs.len(),
            });
        }
        LogProbVector::from_logprobs(resp.logprobs)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let resp: TokenizeResponse = self.post(
            TOKENIZE_PATH,
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        if let Some(bad) = resp.ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Protocol(format!("server returned token id {bad} outside vocabulary")));
        }
        Ok(resp.ids)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let resp: DetokenizeResponse =
            self.post(DETOKENIZE_PATH, &DetokenizeRequest { ids: ids.to_vec() })?;
        Ok(resp.text)
    }

    fn eos_id(&self) -> TokenId {
        self.eos_id
    }
}
