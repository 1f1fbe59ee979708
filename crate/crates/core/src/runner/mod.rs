//! Experiment orchestration: sampling, execution against a backend,
//! persistence and reporting.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, BayesianRule, EchoRule, FrequencyRule, LanguageModel, LogProbMatrix, ReferenceLm,
    RemoteBackend, TokenId, Tokenizer, WhitespaceMode, WordTokenizer, TOKEN_LIMIT_2K,
};
use crate::extract::{classic_query_point, extract_curve, CurvePoint, DynamicsCurve, ExtractError};
use crate::metrics::{calibrate, guessing_baseline, score_curve, Baseline, MetricCurves, MetricsError, PointScore};
use crate::tokenalign::{index_label_positions, resolve_label_tokens, AlignError, LabelPositionIndex, LabelTokenMap};
use crate::transforms::{inject_repetitions, Relation, TransformError, TransformSpec};
use crate::verbalize::{
    assemble, assemble_with_query, render_example, AssembleError, DatasetError, Labeling, TaskDataset,
    TemplateError, TemplateSpec,
};

mod config;
mod report;

pub use config::{
    BackendConfig, BootstrapConfig, CalibrationMode, EvaluationMode, ExperimentConfig, NamedTransform, TaskConfig,
    TemplateRef, CHANGEPOINT_WINDOW, DEFAULT_ABORT_FRACTION, DEFAULT_MAXCONTEXT_SAMPLES, DEFAULT_WINDOW,
};
pub use report::{
    emit_plot_data, load_experiment, render_summary_table, scores_of, summarize, summary_csv, LoadedExperiment,
    PlotSeries, SummaryRow,
};

/// Input text used for content-free calibration.
pub const CONTENT_FREE_INPUT: &str = "N/A";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";
pub const PLOT_DIR: &str = "plot";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed record in {path}: {message}")]
    Record { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("a single example needs {tokens} tokens, more than the limit of {limit}")]
    Infeasible { tokens: usize, limit: usize },
    #[error("transform `{transform}`: {aborted} of {total} runs aborted")]
    TooManyAborts { transform: String, aborted: usize, total: usize },
    #[error("cannot summarize: {0}")]
    Summary(String),
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        RunnerError::Io { path: path.to_path_buf(), source }
    }
}

/// Counts `logprobs` calls made through it.
pub struct CountingModel<M: ?Sized> {
    calls: AtomicUsize,
    inner: Arc<M>,
}

impl<M: LanguageModel + ?Sized> CountingModel<M> {
    pub fn new(inner: Arc<M>) -> Self {
        Self { calls: AtomicUsize::new(0), inner }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<M: LanguageModel + ?Sized> Tokenizer for CountingModel<M> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError> {
        self.inner.detokenize(ids)
    }
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for CountingModel<M> {
    fn max_input_tokens(&self) -> usize {
        self.inner.max_input_tokens()
    }
    fn logprobs(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        token_ids: &[TokenId],
    ) -> Result<LogProbMatrix, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.logprobs(tokens, positions, token_ids)
    }
}

/// Every class-name set the transforms display, dataset names first.
pub fn label_sets(dataset: &TaskDataset, transforms: &[NamedTransform]) -> Vec<Vec<String>> {
    let mut sets = vec![dataset.class_names().to_vec()];
    for t in transforms {
        let names = t.transform.display_names(dataset.class_names());
        if !sets.contains(&names) {
            sets.push(names);
        }
    }
    sets
}

/// Texts a closed-vocabulary reference tokenizer must cover.
fn reference_corpus(
    dataset: &TaskDataset,
    template: &TemplateSpec,
    transforms: &[NamedTransform],
) -> Result<Vec<String>, RunnerError> {
    let mut corpus = Vec::new();
    for set in label_sets(dataset, transforms) {
        for example in dataset.examples() {
            for name in &set {
                corpus.push(render_example(template, &example.inputs, name)?);
            }
        }
    }
    corpus.extend(transforms.iter().filter_map(|t| t.transform.prompt_text(dataset.class_names())));
    corpus.extend(template.prompt_prefix.clone());
    corpus.push(template.render_query(&vec![CONTENT_FREE_INPUT.to_string(); dataset.arity()])?);
    Ok(corpus)
}

/// Instantiates the configured backend; reference models get a vocabulary
/// covering the dataset, every displayed label set and every prompt.
pub fn build_backend(
    config: &ExperimentConfig,
    dataset: &TaskDataset,
    template: &TemplateSpec,
) -> Result<Arc<dyn LanguageModel>, RunnerError> {
    if let Some(remote) = config.backend.remote_config() {
        return Ok(Arc::new(RemoteBackend::connect(remote)?));
    }
    let corpus = reference_corpus(dataset, template, &config.transforms)?;
    let sets = label_sets(dataset, &config.transforms);
    let limit = config.token_limit.unwrap_or(TOKEN_LIMIT_2K);
    let tokenizer = |mode: WhitespaceMode| WordTokenizer::from_texts(mode, corpus.iter().map(String::as_str));
    let cue = template.label_cue.as_str();
    Ok(match &config.backend {
        BackendConfig::Bayesian { prior_identity, noise, keywords, tokenizer: mode } => {
            if dataset.num_classes() != 2 || keywords.len() != 2 {
                return Err(RunnerError::Config("the bayesian backend needs a binary task and two keyword lists".into()));
            }
            let rule = BayesianRule::new(*prior_identity, *noise)?;
            Arc::new(
                ReferenceLm::new(tokenizer(*mode), cue, &sets, rule)?
                    .with_keywords(keywords)
                    .with_max_input_tokens(limit),
            )
        }
        BackendConfig::Echo { tokenizer: mode } => {
            let rule = EchoRule { classes: dataset.num_classes() };
            Arc::new(ReferenceLm::new(tokenizer(*mode), cue, &sets, rule)?.with_max_input_tokens(limit))
        }
        BackendConfig::Frequency { frequencies, tokenizer: mode } => {
            let frequencies = frequencies.clone().unwrap_or_else(|| dataset.class_frequencies().to_vec());
            if frequencies.len() != dataset.num_classes() {
                return Err(RunnerError::Config("frequencies must list one value per class".into()));
            }
            let rule = FrequencyRule { frequencies };
            Arc::new(ReferenceLm::new(tokenizer(*mode), cue, &sets, rule)?.with_max_input_tokens(limit))
        }
        BackendConfig::Remote { .. } => unreachable!("handled above"),
    })
}

/// Result of [`compute_max_context`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxContext {
    /// Smallest example count whose input exceeds the limit, minimized over
    /// the sampled orderings.
    pub k: usize,
    pub per_sample: Vec<usize>,
    /// Some ordering fit entirely; its value is the dataset size.
    pub exhausted: bool,
}

/// Over `samples` random orderings, the minimum number of examples whose
/// assembled input exceeds `limit` tokens.
pub fn compute_max_context<T: Tokenizer + ?Sized>(
    dataset: &TaskDataset,
    template: &TemplateSpec,
    tokenizer: &T,
    limit: usize,
    samples: usize,
    seed: u64,
) -> Result<MaxContext, RunnerError> {
    if samples == 0 {
        return Err(RunnerError::Config("need at least one ordering".into()));
    }
    if dataset.is_empty() {
        return Err(RunnerError::Config("the dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_sample = Vec::with_capacity(samples);
    let mut exhausted = false;
    for _ in 0..samples {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let tokens = |n: usize| -> Result<usize, RunnerError> {
            let labeling = Labeling::default_for(dataset, &order[..n]);
            let text = assemble(dataset, &order[..n], &labeling, template, None)?.text;
            Ok(tokenizer.tokenize(&text)?.len())
        };
        let first = tokens(1)?;
        if first > limit {
            return Err(RunnerError::Infeasible { tokens: first, limit });
        }
        if tokens(order.len())? <= limit {
            exhausted = true;
            per_sample.push(order.len());
            continue;
        }
        // tokens(lo) <= limit < tokens(hi)
        let (mut lo, mut hi) = (1, order.len());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if tokens(mid)? > limit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        per_sample.push(hi);
    }
    Ok(MaxContext { k: *per_sample.iter().min().expect("samples >= 1"), per_sample, exhausted })
}

/// One sampled context evaluated under one transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub run: usize,
    pub config_hash: String,
    pub transform: String,
    /// Master seed; contexts come from stream `run` of it.
    pub seed: u64,
    pub example_order: Vec<usize>,
    /// Displayed class per sampled example.
    pub displayed_labels: Vec<usize>,
    pub relations: Vec<Relation>,
    /// Class probabilities per context size; shorter than `example_order`
    /// when the input was truncated at the token limit.
    pub probs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_prior: Option<Vec<Vec<f64>>>,
    pub floored_sizes: Vec<usize>,
    /// Token count of the full sampled input, before truncation.
    pub input_tokens: usize,
    pub truncated: bool,
    pub joint_log_likelihood: f64,
    /// Classic mode with repetitions: positions of the query copies per size.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repetition_positions: Vec<Vec<usize>>,
}

impl RunRecord {
    pub fn curve(&self) -> DynamicsCurve<f64> {
        DynamicsCurve {
            points: self
                .probs
                .iter()
                .zip(&self.displayed_labels)
                .enumerate()
                .map(|(m, (p, &target))| CurvePoint {
                    probs: p.clone(),
                    target,
                    raw: Vec::new(),
                    floored: self.floored_sizes.contains(&m),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSummary {
    pub name: String,
    pub transform: TransformSpec,
    pub window: usize,
    pub runs: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub examples_per_run: usize,
    pub token_limit: usize,
    pub class_names: Vec<String>,
    pub class_frequencies: Vec<f64>,
    pub baseline: Baseline<f64>,
    pub transforms: Vec<TransformSummary>,
    pub logprobs_calls: usize,
}

#[derive(Debug, Clone)]
pub struct TransformResult {
    pub name: String,
    pub records: Vec<RunRecord>,
    pub aborted: usize,
    pub scores: Vec<Vec<PointScore<f64>>>,
    pub curves: MetricCurves<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub transforms: Vec<TransformResult>,
}

/// ChaCha stream `run` of a seed derived from `(seed, domain)`.
fn stream(seed: u64, domain: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(run as u64);
    rng
}

struct Shared<'a> {
    config: &'a ExperimentConfig,
    hash: &'a str,
    dataset: &'a TaskDataset,
    template: &'a TemplateSpec,
    model: &'a dyn LanguageModel,
    limit: usize,
    examples: usize,
}

struct Prepared<'a> {
    index: usize,
    named: &'a NamedTransform,
    map: LabelTokenMap,
    /// Content-free prior with no context, when that calibration is active.
    prior: Option<Vec<f64>>,
}

impl Shared<'_> {
    fn order(&self, run: usize) -> Vec<usize> {
        let mut rng = stream(self.config.seed, 0, run);
        index::sample(&mut rng, self.dataset.len(), self.examples).into_vec()
    }

    fn content_free(&self) -> Vec<String> {
        vec![CONTENT_FREE_INPUT.to_string(); self.dataset.arity()]
    }

    fn classic_point(
        &self,
        map: &LabelTokenMap,
        order: &[usize],
        labeling: &Labeling,
        prompt: Option<&str>,
        query: &[String],
        target: usize,
    ) -> Result<Option<CurvePoint<f64>>, RunnerError> {
        let assembled = assemble_with_query(self.dataset, order, labeling, self.template, prompt, query)?;
        match classic_query_point(self.model, &assembled, map, target) {
            Ok(point) => Ok(Some(point)),
            Err(ExtractError::Backend(BackendError::TokenLimit { .. })) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn prepare<'t>(&self, index: usize, named: &'t NamedTransform) -> Result<Prepared<'t>, RunnerError> {
        named.transform.validate(self.dataset.num_classes())?;
        let names = named.transform.display_names(self.dataset.class_names());
        let map = resolve_label_tokens(self.model, self.template, &names)?;
        let prior = match self.config.calibration {
            Some(CalibrationMode::ContentFree) => {
                let prompt = named.transform.prompt_text(self.dataset.class_names());
                let empty = Labeling { indices: Vec::new(), class_names: names };
                let point = self
                    .classic_point(&map, &[], &empty, prompt.as_deref(), &self.content_free(), 0)?
                    .ok_or(RunnerError::Infeasible { tokens: 0, limit: self.limit })?;
                Some(point.probs)
            }
            _ => None,
        };
        Ok(Prepared { index, named, map, prior })
    }

    fn run(&self, prepared: &Prepared<'_>, run: usize) -> Result<RunRecord, RunnerError> {
        let order = self.order(run);
        let mut rng = stream(self.config.seed, prepared.index as u64 + 1, run);
        let out = prepared.named.transform.apply(self.dataset, &order, &mut rng)?;
        let labeling = out.labeling();
        let prompt = out.prompt.as_deref();
        let mut repetition_positions = Vec::new();
        let (mut curve, input_tokens, truncated) = match self.config.evaluation {
            EvaluationMode::SinglePass => {
                let assembled = assemble(self.dataset, &order, &labeling, self.template, prompt)?;
                let tokens = self.model.tokenize(&assembled.text)?;
                let index = index_label_positions(&tokens, &assembled, self.model, &prepared.map)?;
                let keep = index.positions.iter().take_while(|&&p| p <= self.limit).count();
                if keep == 0 {
                    return Err(RunnerError::Infeasible { tokens: tokens.len(), limit: self.limit });
                }
                let kept = LabelPositionIndex {
                    positions: index.positions[..keep].to_vec(),
                    expected: index.expected[..keep].to_vec(),
                    classes: index.classes[..keep].to_vec(),
                };
                let scored = &tokens[..tokens.len().min(self.limit)];
                let dists = self.model.logprobs(scored, &kept.positions, &prepared.map.first_tokens())?;
                (extract_curve::<f64>(&dists, &kept, &prepared.map)?, tokens.len(), keep < order.len())
            }
            EvaluationMode::Classic => {
                let k = prepared.named.transform.repetitions();
                let mut points = Vec::with_capacity(order.len());
                for m in 0..order.len() {
                    let query = &self.dataset.examples()[order[m]].inputs;
                    let (context, positions) = inject_repetitions(&order[..m], order[m], k, &mut rng);
                    let mut indices = labeling.indices[..m].to_vec();
                    for &p in &positions {
                        indices.insert(p, labeling.indices[m]);
                    }
                    let context_labels = Labeling { indices, class_names: labeling.class_names.clone() };
                    match self.classic_point(&prepared.map, &context, &context_labels, prompt, query, labeling.indices[m])? {
                        Some(point) => points.push(point),
                        None => break,
                    }
                    repetition_positions.push(positions);
                }
                if points.is_empty() {
                    return Err(RunnerError::Infeasible { tokens: 0, limit: self.limit });
                }
                let truncated = points.len() < order.len();
                if k == 0 {
                    repetition_positions.clear();
                }
                (DynamicsCurve { points }, 0, truncated)
            }
        };
        let calibration_prior = match self.config.calibration {
            None => None,
            Some(CalibrationMode::ContentFree) => {
                Some(vec![prepared.prior.clone().expect("prepared with the prior"); curve.len()])
            }
            Some(CalibrationMode::PerInput) => {
                let mut priors = Vec::with_capacity(curve.len());
                for m in 0..curve.len() {
                    let context = Labeling { indices: labeling.indices[..m].to_vec(), class_names: labeling.class_names.clone() };
                    let point = self
                        .classic_point(&prepared.map, &order[..m], &context, prompt, &self.content_free(), 0)?
                        .ok_or(RunnerError::Infeasible { tokens: 0, limit: self.limit })?;
                    priors.push(point.probs);
                }
                Some(priors)
            }
        };
        if let Some(priors) = &calibration_prior {
            for (point, prior) in curve.points.iter_mut().zip(priors) {
                point.probs = calibrate(&point.probs, prior)?;
            }
        }
        Ok(RunRecord {
            run_id: format!("{}-{run:06}", prepared.named.name),
            run,
            config_hash: self.hash.to_string(),
            transform: prepared.named.name.clone(),
            seed: self.config.seed,
            example_order: order,
            displayed_labels: out.labels,
            relations: out.relations,
            floored_sizes: curve.floored_sizes(),
            joint_log_likelihood: curve.joint_log_likelihood(),
            probs: curve.points.into_iter().map(|p| p.probs).collect(),
            calibration_prior,
            input_tokens,
            truncated,
            repetition_positions,
        })
    }
}

fn write_jsonl(path: &Path, records: &[RunRecord]) -> Result<(), RunnerError> {
    let file = fs::File::create(path).map_err(|e| RunnerError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| RunnerError::io(path, e))?;
    }
    out.flush().map_err(|e| RunnerError::io(path, e))
}

/// Runs every transform on `model` without touching the filesystem.
pub fn execute(
    config: &ExperimentConfig,
    dataset: &TaskDataset,
    model: &dyn LanguageModel,
) -> Result<ExperimentResult, RunnerError> {
    config.validate()?;
    let template = config.task.template.resolve()?;
    let limit = config.token_limit.map_or(model.max_input_tokens(), |l| l.min(model.max_input_tokens()));
    let examples = match config.task.max_examples {
        Some(k) => k,
        None => {
            let found = compute_max_context(dataset, &template, model, limit, config.task.maxcontext_samples, config.seed)?;
            log::info!("maximum context size {} (per ordering: {:?})", found.k, found.per_sample);
            found.k
        }
    };
    if examples > dataset.len() {
        log::warn!("requested {examples} examples per run but the dataset has {}", dataset.len());
    }
    let examples = examples.min(dataset.len());
    let counting = CountingModel::new(Arc::new(ModelRef(model)));
    let hash = config.hash();
    let shared = Shared {
        config,
        hash: &hash,
        dataset,
        template: &template,
        model: &counting,
        limit,
        examples,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| RunnerError::Config(e.to_string()))?;
    let mut results = Vec::with_capacity(config.transforms.len());
    let mut summaries = Vec::with_capacity(config.transforms.len());
    for (i, named) in config.transforms.iter().enumerate() {
        let prepared = shared.prepare(i, named)?;
        let outcomes: Vec<Result<RunRecord, RunnerError>> =
            pool.install(|| (0..config.repetitions).into_par_iter().map(|run| shared.run(&prepared, run)).collect());
        let mut records = Vec::with_capacity(outcomes.len());
        let mut aborted = 0;
        for (run, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(record) => records.push(record),
                Err(e) => {
                    log::warn!("transform `{}` run {run} aborted: {e}", named.name);
                    aborted += 1;
                }
            }
        }
        if aborted as f64 > config.max_abort_fraction * config.repetitions as f64 {
            return Err(RunnerError::TooManyAborts {
                transform: named.name.clone(),
                aborted,
                total: config.repetitions,
            });
        }
        let scores: Vec<Vec<PointScore<f64>>> = records.iter().map(|r| score_curve(&r.curve())).collect();
        let curves = MetricCurves::from_scores(&scores);
        log::info!("transform `{}`: {} runs, {aborted} aborted", named.name, records.len());
        summaries.push(TransformSummary {
            name: named.name.clone(),
            transform: named.transform.clone(),
            window: named.window(config.smoothing_window),
            runs: records.len(),
            aborted,
        });
        results.push(TransformResult { name: named.name.clone(), records, aborted, scores, curves });
    }
    let manifest = Manifest {
        name: config.name.clone(),
        config_hash: hash.clone(),
        config: config.clone(),
        examples_per_run: examples,
        token_limit: limit,
        class_names: dataset.class_names().to_vec(),
        class_frequencies: dataset.class_frequencies().to_vec(),
        baseline: guessing_baseline(dataset.class_frequencies()),
        transforms: summaries,
        logprobs_calls: counting.calls(),
    };
    Ok(ExperimentResult { manifest, transforms: results })
}

/// Borrowed model behind an `Arc`, so [`CountingModel`] can wrap it.
struct ModelRef<'a>(&'a dyn LanguageModel);

impl Tokenizer for ModelRef<'_> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        self.0.tokenize(text)
    }
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError> {
        self.0.detokenize(ids)
    }
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }
}

impl LanguageModel for ModelRef<'_> {
    fn max_input_tokens(&self) -> usize {
        self.0.max_input_tokens()
    }
    fn logprobs(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        token_ids: &[TokenId],
    ) -> Result<LogProbMatrix, BackendError> {
        self.0.logprobs(tokens, positions, token_ids)
    }
}

/// Writes the manifest, one JSONL file of run records per transform, plot
/// data, and a summary against the default transform when there is one.
pub fn persist(result: &ExperimentResult, dir: &Path) -> Result<(), RunnerError> {
    let runs = dir.join(RUNS_DIR);
    fs::create_dir_all(&runs).map_err(|e| RunnerError::io(&runs, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(&result.manifest).expect("manifest serializes");
    fs::write(&manifest_path, manifest + "\n").map_err(|e| RunnerError::io(&manifest_path, e))?;
    for t in &result.transforms {
        write_jsonl(&runs.join(format!("{}.jsonl", t.name)), &t.records)?;
    }
    let loaded = LoadedExperiment::from_result(dir, result);
    emit_plot_data(&loaded, &dir.join(PLOT_DIR))?;
    if loaded.default_transform().is_some() {
        let mut rows = Vec::new();
        for metric in crate::metrics::Metric::ALL {
            rows.extend(summarize(std::slice::from_ref(&loaded), metric)?);
        }
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, summary_csv(&rows)?).map_err(|e| RunnerError::io(&path, e))?;
    }
    Ok(())
}

/// Loads the dataset, builds the backend, runs every transform and writes
/// all artifacts to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, RunnerError> {
    config.validate()?;
    let dataset = TaskDataset::from_jsonl_path(&config.task.dataset)?;
    let template = config.task.template.resolve()?;
    let model = build_backend(config, &dataset, &template)?;
    let result = execute(config, &dataset, model.as_ref())?;
    persist(&result, &config.output_dir)?;
    Ok(result)
}
