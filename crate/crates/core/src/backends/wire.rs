//! JSON bodies of the scoring protocol.
//!
//! ```text
//! POST /v1/tokenize  {"text": "..."}                                  -> {"tokens": [..], "bos_token_id": null}
//! POST /v1/logprobs  {"tokens": [..], "positions": [..], "token_ids": [..]} -> {"logprobs": [[..], ..]}
//! GET  /v1/info                                                       -> {"vocab_size": D, "max_input_tokens": L, "bos_token_id": null}
//! errors: HTTP 4xx/5xx with {"error": {"code": "...", "message": "..."}}
//! ```
//!
//! `logprobs` rows follow `positions`, columns follow `token_ids`; values are
//! natural-log full-softmax probabilities, `null` for probability zero. When a
//! server must prepend a beginning-of-sequence token, `/v1/tokenize` returns it
//! as `tokens[0]` and names it in `bos_token_id`.

use serde::{Deserialize, Serialize};

use super::TokenId;

pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const LOGPROBS_PATH: &str = "/v1/logprobs";
pub const INFO_PATH: &str = "/v1/info";

pub const CODE_TOKEN_LIMIT: &str = "token_limit";
pub const CODE_POSITION: &str = "position_out_of_range";
pub const CODE_UNKNOWN_TOKEN: &str = "unknown_token";
pub const CODE_BAD_REQUEST: &str = "bad_request";
pub const CODE_NOT_FOUND: &str = "not_found";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<TokenId>,
    #[serde(default)]
    pub bos_token_id: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobsRequest {
    pub tokens: Vec<TokenId>,
    pub positions: Vec<usize>,
    pub token_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobsResponse {
    pub logprobs: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub max_input_tokens: usize,
    #[serde(default)]
    pub bos_token_id: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

/// Finite values pass through; `-inf` travels as `null`.
pub fn encode_row(row: &[f64]) -> Vec<Option<f64>> {
    row.iter().map(|&v| v.is_finite().then_some(v)).collect()
}

pub fn decode_row(row: &[Option<f64>]) -> Vec<f64> {
    row.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_are_exact() {
        let req = LogprobsRequest { tokens: vec![1, 2], positions: vec![1], token_ids: vec![5, 6] };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"tokens":[1,2],"positions":[1],"token_ids":[5,6]}"#
        );
        let resp = LogprobsResponse { logprobs: vec![encode_row(&[-0.5, f64::NEG_INFINITY])] };
        assert_eq!(serde_json::to_string(&resp).unwrap(), r#"{"logprobs":[[-0.5,null]]}"#);
        let tok: TokenizeResponse = serde_json::from_str(r#"{"tokens":[3]}"#).unwrap();
        assert_eq!(tok.bos_token_id, None);
        assert_eq!(serde_json::to_string(&TokenizeRequest { text: "a".into() }).unwrap(), r#"{"text":"a"}"#);
    }
}
