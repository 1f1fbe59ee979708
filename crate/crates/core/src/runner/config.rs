//! Experiment configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunnerError;
use crate::backends::{RemoteConfig, WhitespaceMode};
use crate::metrics::{BootstrapSettings, Pairing, Smoothing, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use crate::transforms::TransformSpec;
use crate::verbalize::TemplateSpec;

pub const DEFAULT_WINDOW: usize = 5;
pub const CHANGEPOINT_WINDOW: usize = 3;
pub const DEFAULT_ABORT_FRACTION: f64 = 0.01;
pub const DEFAULT_MAXCONTEXT_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub task: TaskConfig,
    pub backend: BackendConfig,
    pub transforms: Vec<NamedTransform>,
    pub repetitions: usize,
    pub seed: u64,
    /// Overrides the backend's declared token limit.
    #[serde(default)]
    pub token_limit: Option<usize>,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    #[serde(default)]
    pub smoothing: Smoothing,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub pairing: Pairing,
    /// Worker threads; all cores when unset.
    #[serde(default)]
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub evaluation: EvaluationMode,
    #[serde(default)]
    pub calibration: Option<CalibrationMode>,
    #[serde(default = "default_abort_fraction")]
    pub max_abort_fraction: f64,
}

fn default_name() -> String {
    "experiment".to_string()
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_abort_fraction() -> f64 {
    DEFAULT_ABORT_FRACTION
}
fn default_samples() -> usize {
    DEFAULT_MAXCONTEXT_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// JSONL dataset (header line with class names, then one example per line).
    pub dataset: PathBuf,
    #[serde(default = "default_template")]
    pub template: TemplateRef,
    /// Examples per run; computed from the token limit when unset.
    #[serde(default)]
    pub max_examples: Option<usize>,
    /// Orderings sampled when computing the maximum context size.
    #[serde(default = "default_samples")]
    pub maxcontext_samples: usize,
}

fn default_template() -> TemplateRef {
    TemplateRef::Preset("sentence".to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateRef {
    Preset(String),
    Custom(TemplateSpec),
}

impl TemplateRef {
    pub fn resolve(&self) -> Result<TemplateSpec, RunnerError> {
        let spec = match self {
            TemplateRef::Preset(name) => TemplateSpec::preset(name)?,
            TemplateRef::Custom(spec) => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Closed-form Bayesian learner over identity/flip label mappings.
    Bayesian {
        prior_identity: f64,
        noise: f64,
        /// `keywords[c]`: words marking an input as latent class `c`.
        keywords: Vec<Vec<String>>,
        #[serde(default)]
        tokenizer: WhitespaceMode,
    },
    /// Laplace-smoothed frequencies of the labels shown so far.
    Echo {
        #[serde(default)]
        tokenizer: WhitespaceMode,
    },
    /// Constant class distribution; the dataset frequencies when unset.
    Frequency {
        #[serde(default)]
        frequencies: Option<Vec<f64>>,
        #[serde(default)]
        tokenizer: WhitespaceMode,
    },
    Remote {
        url: String,
        #[serde(default)]
        timeout_secs: Option<f64>,
        #[serde(default)]
        max_in_flight: Option<usize>,
        #[serde(default)]
        retries: Option<u32>,
        #[serde(default)]
        max_input_tokens: Option<usize>,
        #[serde(default)]
        vocab_size: Option<usize>,
    },
}

impl BackendConfig {
    /// The remote client configuration, with `ICL_BACKEND_*` overrides applied.
    pub fn remote_config(&self) -> Option<RemoteConfig> {
        match self {
            BackendConfig::Remote { url, timeout_secs, max_in_flight, retries, max_input_tokens, vocab_size } => {
                let mut config = RemoteConfig::new(url.clone());
                config.timeout_secs = timeout_secs.unwrap_or(config.timeout_secs);
                config.max_in_flight = max_in_flight.unwrap_or(config.max_in_flight);
                config.retries = retries.unwrap_or(config.retries);
                config.max_input_tokens = *max_input_tokens;
                config.vocab_size = *vocab_size;
                Some(config.with_env_overrides())
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTransform {
    pub name: String,
    pub transform: TransformSpec,
    /// Defaults to 3 for changepoint schedules and to the experiment window otherwise.
    #[serde(default)]
    pub smoothing_window: Option<usize>,
}

impl NamedTransform {
    pub fn window(&self, experiment_default: usize) -> usize {
        self.smoothing_window.unwrap_or(match self.transform {
            TransformSpec::Changepoint { .. } => CHANGEPOINT_WINDOW,
            _ => experiment_default,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}
fn default_level() -> f64 {
    DEFAULT_LEVEL
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: DEFAULT_RESAMPLES, level: DEFAULT_LEVEL, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn settings(&self, seed_offset: u64) -> BootstrapSettings {
        BootstrapSettings { resamples: self.resamples, level: self.level, seed: self.seed.wrapping_add(seed_offset) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// All context sizes from one forward pass per run.
    #[default]
    SinglePass,
    /// One forward pass per context size, query rendered without its label.
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Divide by the prediction for a content-free query with no context.
    ContentFree,
    /// Divide by the prediction for a content-free query after the same
    /// context as each point.
    PerInput,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.task.dataset.is_relative() {
            config.task.dataset = base.join(&config.task.dataset);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let invalid = |m: &str| Err(RunnerError::Config(m.to_string()));
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1");
        }
        if self.transforms.is_empty() {
            return invalid("at least one transform is required");
        }
        if self.smoothing_window == 0 || self.transforms.iter().any(|t| t.smoothing_window == Some(0)) {
            return invalid("smoothing windows must be at least 1");
        }
        for (i, t) in self.transforms.iter().enumerate() {
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return invalid(&format!("transform name `{}` must be non-empty [A-Za-z0-9_-]", t.name));
            }
            if self.transforms[..i].iter().any(|o| o.name == t.name) {
                return invalid(&format!("duplicate transform name `{}`", t.name));
            }
            if t.transform.repetitions() > 0 && self.evaluation != EvaluationMode::Classic {
                return invalid("answer-in-context transforms need classic evaluation");
            }
        }
        if !(0.0..=1.0).contains(&self.max_abort_fraction) {
            return invalid("max_abort_fraction must be within [0, 1]");
        }
        if self.task.maxcontext_samples == 0 || self.task.max_examples == Some(0) {
            return invalid("max_examples and maxcontext_samples must be at least 1");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the config, ignoring
    /// settings that cannot change results (output location, worker count).
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.output_dir = PathBuf::new();
        keyed.workers = None;
        let canonical = serde_json::to_string(&keyed).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
name = "toy"
repetitions = 3
seed = 9
output_dir = "out"

[task]
dataset = "data.jsonl"
max_examples = 8

[backend]
kind = "bayesian"
prior_identity = 0.5
noise = 0.1
keywords = [["bad"], ["good"]]
tokenizer = "merge"

[[transforms]]
name = "default"
transform = { kind = "default" }

[[transforms]]
name = "alt"
transform = { kind = "changepoint", mode = "alternating", changepoint = 5 }
"#;

    #[test]
    fn parses_and_defaults() {
        let c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.task.template, TemplateRef::Preset("sentence".into()));
        assert_eq!(c.smoothing_window, 5);
        assert_eq!(c.transforms[1].window(c.smoothing_window), 3);
        assert_eq!(c.bootstrap.resamples, 10_000);
        assert_eq!(c.evaluation, EvaluationMode::SinglePass);
        assert_eq!(c.hash(), ExperimentConfig::from_toml(EXAMPLE).unwrap().hash());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(ExperimentConfig::from_toml(&EXAMPLE.replace("seed = 9", "seed = 9\nsede = 1")).is_err());
        let c = ExperimentConfig::from_toml(&EXAMPLE.replace("repetitions = 3", "repetitions = 0")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn custom_template_and_remote_backend() {
        let text = EXAMPLE
            .replace(
                "max_examples = 8",
                "max_examples = 8\ntemplate = { input_template = \"Review: {text}\\n\", label_cue = \"Sentiment:\" }",
            )
            .replace(
                "kind = \"bayesian\"\nprior_identity = 0.5\nnoise = 0.1\nkeywords = [[\"bad\"], [\"good\"]]\ntokenizer = \"merge\"",
                "kind = \"remote\"\nurl = \"http://127.0.0.1:9\"\nretries = 0",
            );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.task.template.resolve().unwrap().label_cue, "Sentiment:");
        let remote = c.backend.remote_config().unwrap();
        assert_eq!(remote.retries, 0);
    }
}
