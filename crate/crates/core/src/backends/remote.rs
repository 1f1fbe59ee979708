//! HTTP client for the scoring protocol in [`super::wire`].

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    decode_row, ErrorResponse, InfoResponse, LogprobsRequest, LogprobsResponse, TokenizeRequest,
    TokenizeResponse, CODE_TOKEN_LIMIT, INFO_PATH, LOGPROBS_PATH, TOKENIZE_PATH,
};
use super::{BackendError, LanguageModel, LogProbMatrix, TokenId, Tokenizer};

pub const ENV_URL: &str = "ICL_BACKEND_URL";
pub const ENV_TIMEOUT: &str = "ICL_BACKEND_TIMEOUT_SECS";
pub const ENV_MAX_IN_FLIGHT: &str = "ICL_BACKEND_MAX_IN_FLIGHT";
pub const ENV_RETRIES: &str = "ICL_BACKEND_RETRIES";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Skip `/v1/info` for these when set.
    #[serde(default)]
    pub max_input_tokens: Option<usize>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
}

fn default_timeout() -> f64 {
    120.0
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    250
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            max_input_tokens: None,
            vocab_size: None,
        }
    }

    /// Applies `ICL_BACKEND_*` environment overrides.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            self.url = url;
        }
        if let Some(v) = env_parse(ENV_TIMEOUT) {
            self.timeout_secs = v;
        }
        if let Some(v) = env_parse(ENV_MAX_IN_FLIGHT) {
            self.max_in_flight = v;
        }
        if let Some(v) = env_parse(ENV_RETRIES) {
            self.retries = v;
        }
        self
    }
}

fn env_parse<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

struct Permits {
    free: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), released: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.released.wait(free).expect("permit lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.released.notify_one();
    }
}

pub struct RemoteBackend {
    agent: ureq::Agent,
    base: String,
    config: RemoteConfig,
    info: InfoResponse,
    permits: Permits,
}

impl RemoteBackend {
    /// Connects and, unless the config already states them, asks the server
    /// for its vocabulary size and token limit.
    pub fn connect(config: RemoteConfig) -> Result<Self, BackendError> {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        let base = config.url.trim_end_matches('/').to_string();
        let mut backend = Self {
            agent,
            base,
            permits: Permits::new(config.max_in_flight),
            info: InfoResponse {
                vocab_size: config.vocab_size.unwrap_or(0),
                max_input_tokens: config.max_input_tokens.unwrap_or(0),
                bos_token_id: None,
            },
            config,
        };
        if backend.config.vocab_size.is_none() || backend.config.max_input_tokens.is_none() {
            let info: InfoResponse = backend.with_retries(|| backend.get(INFO_PATH))?;
            backend.info.vocab_size = backend.config.vocab_size.unwrap_or(info.vocab_size);
            backend.info.max_input_tokens =
                backend.config.max_input_tokens.unwrap_or(info.max_input_tokens);
            backend.info.bos_token_id = info.bos_token_id;
        }
        Ok(backend)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn bos_token_id(&self) -> Option<TokenId> {
        self.info.bos_token_id
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt.min(10));
                    log::warn!("retrying after {e} (attempt {}, waiting {wait} ms)", attempt + 1);
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R, BackendError> {
        let _permit = self.permits.acquire();
        decode(self.agent.get(&format!("{}{path}", self.base)).call())
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let _permit = self.permits.acquire();
        let body = serde_json::to_value(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
        decode(self.agent.post(&format!("{}{path}", self.base)).send_json(body))
    }
}

fn decode<R: DeserializeOwned>(result: Result<ureq::Response, ureq::Error>) -> Result<R, BackendError> {
    match result {
        Ok(response) => response
            .into_json::<R>()
            .map_err(|e| BackendError::Protocol(e.to_string())),
        Err(ureq::Error::Status(status, response)) => {
            let text = response.into_string().unwrap_or_default();
            let (code, message) = match serde_json::from_str::<ErrorResponse>(&text) {
                Ok(body) => (body.error.code, body.error.message),
                Err(_) => ("unknown".to_string(), text),
            };
            Err(BackendError::Server { status, code, message })
        }
        Err(ureq::Error::Transport(t)) => Err(BackendError::Transport(t.to_string())),
    }
}

impl Tokenizer for RemoteBackend {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        let request = TokenizeRequest { text: text.to_string() };
        let response: TokenizeResponse = self.with_retries(|| self.post(TOKENIZE_PATH, &request))?;
        let mut tokens = response.tokens;
        if let Some(bos) = response.bos_token_id {
            if tokens.first() == Some(&bos) {
                tokens.remove(0);
            }
        }
        Ok(tokens)
    }

    fn detokenize(&self, _ids: &[TokenId]) -> Result<String, BackendError> {
        Err(BackendError::Protocol("the scoring protocol has no detokenize endpoint".into()))
    }

    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }
}

impl LanguageModel for RemoteBackend {
    fn max_input_tokens(&self) -> usize {
        self.info.max_input_tokens
    }

    fn logprobs(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        token_ids: &[TokenId],
    ) -> Result<LogProbMatrix, BackendError> {
        let offset = usize::from(self.info.bos_token_id.is_some());
        let limit = self.info.max_input_tokens;
        if tokens.len() + offset > limit {
            return Err(BackendError::TokenLimit { tokens: tokens.len() + offset, limit });
        }
        if let Some(&position) = positions.iter().find(|&&p| p + offset == 0 || p > tokens.len()) {
            return Err(BackendError::PositionOutOfRange { position, len: tokens.len() });
        }
        let mut sent = Vec::with_capacity(tokens.len() + offset);
        sent.extend(self.info.bos_token_id);
        sent.extend_from_slice(tokens);
        let request = LogprobsRequest {
            tokens: sent,
            positions: positions.iter().map(|p| p + offset).collect(),
            token_ids: token_ids.to_vec(),
        };
        let response: LogprobsResponse = self
            .with_retries(|| self.post(LOGPROBS_PATH, &request))
            .map_err(|e| match e {
                BackendError::Server { code, .. } if code == CODE_TOKEN_LIMIT => {
                    BackendError::TokenLimit { tokens: tokens.len() + offset, limit }
                }
                other => other,
            })?;
        if response.logprobs.len() != positions.len()
            || response.logprobs.iter().any(|row| row.len() != token_ids.len())
        {
            return Err(BackendError::Protocol(format!(
                "expected a {}x{} matrix",
                positions.len(),
                token_ids.len()
            )));
        }
        let rows: LogProbMatrix = response.logprobs.iter().map(|r| decode_row(r)).collect();
        if rows.iter().flatten().any(|&v| v.is_nan() || v > 1e-9) {
            return Err(BackendError::Protocol("log-probabilities must be <= 0".into()));
        }
        Ok(rows)
    }
}
