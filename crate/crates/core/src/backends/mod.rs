//! Model access.
//!
//! Everything downstream talks to a model through [`Tokenizer`] and
//! [`LanguageModel`]. Positions follow teacher-forcing convention: the row for
//! position `l` is the distribution of token `l` given `tokens[..l]`, so
//! `l == tokens.len()` asks for the next token after the input.

use thiserror::Error;

pub mod reference;
pub mod remote;
pub mod server;
pub mod tokenizer;
pub mod wire;

pub use reference::{
    bayes_predictive, BayesianMappingLm, BayesianRule, EchoRule, FrequencyLm, FrequencyRule,
    LabelRule, ReferenceLm, TemplateEchoLm,
};
pub use remote::{RemoteBackend, RemoteConfig};
pub use server::{serve, ServerHandle};
pub use tokenizer::{Vocabulary, WhitespaceMode, WordTokenizer};

pub type TokenId = u32;

/// Rows follow the requested positions, columns the requested token ids.
/// Entries are natural-log probabilities under the full-vocabulary softmax;
/// `f64::NEG_INFINITY` marks probability zero.
pub type LogProbMatrix = Vec<Vec<f64>>;

/// Token limits declared by the model families the toolkit was calibrated on.
pub const TOKEN_LIMIT_2K: usize = 2048;
pub const TOKEN_LIMIT_4K: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("input of {tokens} tokens exceeds the limit of {limit}")]
    TokenLimit { tokens: usize, limit: usize },
    #[error("position {position} is out of range for {len} input tokens")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    UnknownToken { id: TokenId, vocab: usize },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("server returned {status} ({code}): {message}")]
    Server { status: u16, code: String, message: String },
}

impl BackendError {
    /// Whether retrying the identical request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Server { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A pure, prefix-stable text-to-token function.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError>;
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError>;
    fn vocab_size(&self) -> usize;
}

/// Teacher-forced scoring of a token sequence.
///
/// Implementations must be prefix pure (row `l` depends only on
/// `tokens[..l]`) and deterministic.
pub trait LanguageModel: Tokenizer {
    fn max_input_tokens(&self) -> usize;

    fn logprobs(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        token_ids: &[TokenId],
    ) -> Result<LogProbMatrix, BackendError>;
}

/// Shared request validation for in-process and served models.
pub fn validate_request(
    tokens: &[TokenId],
    positions: &[usize],
    token_ids: &[TokenId],
    vocab: usize,
    limit: usize,
) -> Result<(), BackendError> {
    if tokens.len() > limit {
        return Err(BackendError::TokenLimit { tokens: tokens.len(), limit });
    }
    if let Some(&position) = positions.iter().find(|&&p| p == 0 || p > tokens.len()) {
        return Err(BackendError::PositionOutOfRange { position, len: tokens.len() });
    }
    if let Some(&id) = tokens.iter().chain(token_ids).find(|&&t| t as usize >= vocab) {
        return Err(BackendError::UnknownToken { id, vocab });
    }
    Ok(())
}

impl<T: Tokenizer + ?Sized> Tokenizer for &T {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError> {
        (**self).detokenize(ids)
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
}

impl<T: Tokenizer + ?Sized> Tokenizer for std::sync::Arc<T> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError> {
        (**self).detokenize(ids)
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn max_input_tokens(&self) -> usize {
        (**self).max_input_tokens()
    }
    fn logprobs(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        token_ids: &[TokenId],
    ) -> Result<LogProbMatrix, BackendError> {
        (**self).logprobs(tokens, positions, token_ids)
    }
}
