use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use icl_dynamics::backends::{serve, LanguageModel, WhitespaceMode, WordTokenizer, TOKEN_LIMIT_2K};
use icl_dynamics::metrics::Metric;
use icl_dynamics::runner::{
    build_backend, compute_max_context, emit_plot_data, load_experiment, render_summary_table, run_experiment,
    summarize, summary_csv, ExperimentConfig, DEFAULT_MAXCONTEXT_SAMPLES, PLOT_DIR,
};
use icl_dynamics::verbalize::{render_example, TaskDataset, TemplateSpec};

#[derive(Parser)]
#[command(name = "icl-dynamics", version, about = "In-context learning dynamics experiments")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Loglik,
    Accuracy,
    Entropy,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Loglik => Metric::LogLikelihood,
            MetricArg::Accuracy => Metric::Accuracy,
            MetricArg::Entropy => Metric::Entropy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerArg {
    Drop,
    Merge,
}

#[derive(Subcommand)]
enum Command {
    /// Run every transform of an experiment config and write its artifacts.
    Run { config: PathBuf },
    /// Default-minus-variant differences at the largest context size.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "loglik")]
        metric: MetricArg,
        /// Also write the rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-size means, smoothed means and bootstrap intervals as CSV.
    Plotdata {
        dir: PathBuf,
        /// Defaults to `<dir>/plot`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest example count that fits the token limit.
    ///
    /// `task` is an experiment config (its backend tokenizes) or a JSONL
    /// dataset (a reference word tokenizer over the dataset tokenizes).
    Maxcontext {
        task: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Template preset, for dataset input.
        #[arg(long, default_value = "sentence")]
        template: String,
        /// Whitespace handling of the reference tokenizer, for dataset input.
        #[arg(long, value_enum, default_value = "drop")]
        tokenizer: TokenizerArg,
    },
    /// Serve the reference backend of a config over HTTP.
    ServeReference {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Summarize { dirs, metric, csv } => summarize_dirs(&dirs, metric.into(), csv.as_deref()),
        Command::Plotdata { dir, out } => plotdata(&dir, out),
        Command::Maxcontext { task, limit, samples, seed, template, tokenizer } => {
            maxcontext(&task, limit, samples, seed, &template, tokenizer)
        }
        Command::ServeReference { config, addr } => serve_reference(&config, &addr),
    }
}

fn run(path: &Path) -> Result<()> {
    let config = ExperimentConfig::from_path(path)?;
    let result = run_experiment(&config)?;
    let manifest = &result.manifest;
    println!(
        "{}: {} transforms x {} runs, {} examples per run, written to {}",
        manifest.name,
        manifest.transforms.len(),
        config.repetitions,
        manifest.examples_per_run,
        config.output_dir.display()
    );
    let loaded = load_experiment(&config.output_dir)?;
    if loaded.default_transform().is_some() && manifest.transforms.len() > 1 {
        print!("{}", render_summary_table(&summarize(&[loaded], Metric::LogLikelihood)?));
    }
    Ok(())
}

fn summarize_dirs(dirs: &[PathBuf], metric: Metric, csv: Option<&Path>) -> Result<()> {
    let experiments = dirs
        .iter()
        .map(|d| load_experiment(d).with_context(|| format!("loading {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize(&experiments, metric)?;
    print!("{}", render_summary_table(&rows));
    if let Some(path) = csv {
        fs::write(path, summary_csv(&rows)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn plotdata(dir: &Path, out: Option<PathBuf>) -> Result<()> {
    let experiment = load_experiment(dir)?;
    let out = out.unwrap_or_else(|| dir.join(PLOT_DIR));
    for path in emit_plot_data(&experiment, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn maxcontext(
    task: &Path,
    limit: Option<usize>,
    samples: Option<usize>,
    seed: u64,
    template: &str,
    tokenizer: TokenizerArg,
) -> Result<()> {
    let (found, limit) = if task.extension().is_some_and(|e| e == "toml") {
        let config = ExperimentConfig::from_path(task)?;
        let dataset = TaskDataset::from_jsonl_path(&config.task.dataset)?;
        let template = config.task.template.resolve()?;
        let model = build_backend(&config, &dataset, &template)?;
        let limit = limit.or(config.token_limit).unwrap_or(usize::MAX).min(model.max_input_tokens());
        let samples = samples.unwrap_or(config.task.maxcontext_samples);
        (compute_max_context(&dataset, &template, model.as_ref(), limit, samples, seed)?, limit)
    } else {
        let dataset = TaskDataset::from_jsonl_path(task)?;
        let template = TemplateSpec::preset(template)?;
        let mode = match tokenizer {
            TokenizerArg::Drop => WhitespaceMode::Drop,
            TokenizerArg::Merge => WhitespaceMode::Merge,
        };
        let mut corpus = Vec::new();
        for example in dataset.examples() {
            for name in dataset.class_names() {
                corpus.push(render_example(&template, &example.inputs, name)?);
            }
        }
        let model = WordTokenizer::from_texts(mode, corpus.iter().map(String::as_str));
        let limit = limit.unwrap_or(TOKEN_LIMIT_2K);
        let samples = samples.unwrap_or(DEFAULT_MAXCONTEXT_SAMPLES);
        (compute_max_context(&dataset, &template, &model, limit, samples, seed)?, limit)
    };
    println!("max_context = {}", found.k);
    println!("limit = {limit}");
    println!("per_ordering = {:?}", found.per_sample);
    if found.exhausted {
        println!("note: some ordering fit the whole dataset; the value is capped at the dataset size");
    }
    Ok(())
}

fn serve_reference(path: &Path, addr: &str) -> Result<()> {
    let config = ExperimentConfig::from_path(path)?;
    if config.backend.remote_config().is_some() {
        bail!("the config names a remote backend; serve-reference needs a reference backend");
    }
    let dataset = TaskDataset::from_jsonl_path(&config.task.dataset)?;
    let template = config.task.template.resolve()?;
    let model = build_backend(&config, &dataset, &template)?;
    let handle = serve(model, addr).map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    println!("serving on {}", handle.url());
    handle.join();
    Ok(())
}
