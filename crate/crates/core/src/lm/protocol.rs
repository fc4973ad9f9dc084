//! JSON bodies of the HTTP logits protocol.
//!
//! | method | path                | request           | response                   |
//! |--------|---------------------|-------------------|----------------------------|
//! | GET    | `/v1/info`          |                   | [`InfoResponse`]           |
//! | POST   | `/v1/tokenize`      | [`TokenizeRequest`]   | [`TokenizeResponse`]   |
//! | POST   | `/v1/next_logprobs` | [`NextLogprobsRequest`] | [`NextLogprobsResponse`] |
//! | POST   | `/v1/detokenize`    | [`DetokenizeRequest`] | [`DetokenizeResponse`] |
//!
//! Failures use a non-200 status with an [`ErrorResponse`] body.

use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenId;

pub const INFO_PATH: &str = "/v1/info";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const NEXT_LOGPROBS_PATH: &str = "/v1/next_logprobs";
pub const DETOKENIZE_PATH: &str = "/v1/detokenize";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub model: String,
    /// Optional; servers following the reserved-id layout may omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextLogprobsRequest {
    pub context_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextLogprobsResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetokenizeRequest {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetokenizeResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
