//! Reading persisted runs back, plot data and significance summaries.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{ExperimentResult, Manifest, RunRecord, RunnerError, MANIFEST_FILE, RUNS_DIR};
use crate::metrics::{
    bootstrap_ci, difference, is_gray, moving_average, score_point, values_at, Metric, MetricCurves, PointScore,
    SampleStats, SignificanceCell,
};
use crate::transforms::TransformSpec;

/// A persisted experiment: its manifest and the run records per transform.
#[derive(Debug, Clone)]
pub struct LoadedExperiment {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub runs: Vec<(String, Vec<RunRecord>)>,
}

impl LoadedExperiment {
    pub fn from_result(dir: &Path, result: &ExperimentResult) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: result.manifest.clone(),
            runs: result.transforms.iter().map(|t| (t.name.clone(), t.records.clone())).collect(),
        }
    }

    /// The transform named `default`, else the first unmodified-label transform.
    pub fn default_transform(&self) -> Option<&str> {
        let transforms = &self.manifest.transforms;
        transforms
            .iter()
            .find(|t| t.name == "default")
            .or_else(|| transforms.iter().find(|t| t.transform == TransformSpec::Default))
            .map(|t| t.name.as_str())
    }

    pub fn records(&self, transform: &str) -> Option<&[RunRecord]> {
        self.runs.iter().find(|(name, _)| name == transform).map(|(_, r)| r.as_slice())
    }
}

pub fn load_experiment(dir: impl AsRef<Path>) -> Result<LoadedExperiment, RunnerError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| RunnerError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| RunnerError::Record { path: manifest_path.clone(), message: e.to_string() })?;
    let mut runs = Vec::with_capacity(manifest.transforms.len());
    for t in &manifest.transforms {
        let path = dir.join(RUNS_DIR).join(format!("{}.jsonl", t.name));
        let file = fs::File::open(&path).map_err(|e| RunnerError::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RunnerError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| RunnerError::Record {
                path: path.clone(),
                message: format!("line {}: {e}", i + 1),
            })?;
            records.push(record);
        }
        runs.push((t.name.clone(), records));
    }
    Ok(LoadedExperiment { dir: dir.to_path_buf(), manifest, runs })
}

/// Rescores stored probabilities against the displayed labels.
pub fn scores_of(records: &[RunRecord]) -> Vec<Vec<PointScore<f64>>> {
    records
        .iter()
        .map(|r| r.probs.iter().zip(&r.displayed_labels).map(|(p, &y)| score_point(p, y)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub context_size: usize,
    pub runs: usize,
    pub mean: f64,
    pub smoothed: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub transform: String,
    pub metric: Metric,
    pub rows: Vec<PlotRow>,
}

impl PlotSeries {
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.transform, self.metric)
    }

    pub fn to_csv(&self) -> Result<String, RunnerError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row).map_err(|e| RunnerError::Summary(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| RunnerError::Summary(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Per-size mean, smoothed mean and bootstrap interval for every transform
/// and metric.
pub fn plot_series(experiment: &LoadedExperiment) -> Result<Vec<PlotSeries>, RunnerError> {
    let config = &experiment.manifest.config;
    let mut series = Vec::new();
    for (t_index, summary) in experiment.manifest.transforms.iter().enumerate() {
        let records = experiment.records(&summary.name).unwrap_or(&[]);
        let scores = scores_of(records);
        let curves = MetricCurves::from_scores(&scores);
        for (m_index, metric) in Metric::ALL.into_iter().enumerate() {
            let stats = &curves.get(metric).stats;
            let means: Vec<f64> = stats.iter().map(|s| s.mean).collect();
            let smoothed = moving_average(&means, summary.window, config.smoothing)?;
            let baseline = metric.of_baseline(&experiment.manifest.baseline);
            let rows = (0..stats.len())
                .into_par_iter()
                .map(|size| {
                    let values = values_at(&scores, metric, size);
                    let offset = ((t_index * Metric::ALL.len() + m_index) * 1_000_003 + size) as u64;
                    let ci = if values.len() >= 2 {
                        let (lo, hi) = bootstrap_ci(&values, &config.bootstrap.settings(offset))?;
                        (Some(lo), Some(hi))
                    } else {
                        (None, None)
                    };
                    Ok(PlotRow {
                        context_size: size,
                        runs: stats[size].n,
                        mean: means[size],
                        smoothed: smoothed[size],
                        ci_low: ci.0,
                        ci_high: ci.1,
                        baseline,
                    })
                })
                .collect::<Result<Vec<_>, RunnerError>>()?;
            series.push(PlotSeries { transform: summary.name.clone(), metric, rows });
        }
    }
    Ok(series)
}

/// Writes one CSV per (transform, metric) into `out_dir`; returns the paths.
pub fn emit_plot_data(experiment: &LoadedExperiment, out_dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(out_dir).map_err(|e| RunnerError::io(out_dir, e))?;
    let mut paths = Vec::new();
    for s in plot_series(experiment)? {
        let path = out_dir.join(s.file_name());
        fs::write(&path, s.to_csv()?).map_err(|e| RunnerError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Default-minus-variant difference at the largest shared context size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub variant: String,
    pub metric: Metric,
    pub context_size: usize,
    pub runs: usize,
    pub mean: f64,
    pub se: f64,
    pub bold: bool,
    pub gray: bool,
}

fn by_run(records: &[RunRecord], scores: &[Vec<PointScore<f64>>], metric: Metric, size: usize) -> BTreeMap<usize, f64> {
    records
        .iter()
        .zip(scores)
        .filter_map(|(r, s)| s.get(size).map(|v| (r.run, metric.of(v))))
        .collect()
}

/// Compares every non-default transform of each experiment with its default.
pub fn summarize(experiments: &[LoadedExperiment], metric: Metric) -> Result<Vec<SummaryRow>, RunnerError> {
    let mut rows = Vec::new();
    for experiment in experiments {
        let default_name = experiment
            .default_transform()
            .ok_or_else(|| RunnerError::Summary(format!("`{}` has no default transform", experiment.manifest.name)))?;
        let default_records = experiment.records(default_name).unwrap_or(&[]);
        let default_scores = scores_of(default_records);
        let default_len = default_scores.iter().map(Vec::len).max().unwrap_or(0);
        if default_len == 0 {
            return Err(RunnerError::Summary(format!("`{}` has no completed default runs", experiment.manifest.name)));
        }
        let size = default_len - 1;
        let baseline = &experiment.manifest.baseline;
        let accuracy = SampleStats::of(&values_at(&default_scores, Metric::Accuracy, size));
        let log_likelihood = SampleStats::of(&values_at(&default_scores, Metric::LogLikelihood, size));
        let gray = is_gray(&accuracy, baseline.accuracy, &log_likelihood, baseline.log_likelihood);
        let pairing = experiment.manifest.config.pairing;
        for (name, records) in &experiment.runs {
            if name == default_name {
                continue;
            }
            let scores = scores_of(records);
            let len = scores.iter().map(Vec::len).max().unwrap_or(0);
            if len != default_len {
                return Err(RunnerError::Summary(format!(
                    "`{}`: transform `{name}` reaches context size {} but `{default_name}` reaches {}",
                    experiment.manifest.name,
                    len.saturating_sub(1),
                    size
                )));
            }
            let a = by_run(default_records, &default_scores, metric, size);
            let b = by_run(records, &scores, metric, size);
            let (left, right): (Vec<f64>, Vec<f64>) = match pairing {
                crate::metrics::Pairing::Paired => {
                    a.iter().filter_map(|(run, &x)| b.get(run).map(|&y| (x, y))).unzip()
                }
                crate::metrics::Pairing::Unpaired => (a.values().copied().collect(), b.values().copied().collect()),
            };
            let (mean, se) = difference(&left, &right, pairing)?;
            let cell = SignificanceCell::new(mean, se, gray);
            rows.push(SummaryRow {
                experiment: experiment.manifest.name.clone(),
                variant: name.clone(),
                metric,
                context_size: size,
                runs: left.len().min(right.len()),
                mean: cell.mean,
                se: cell.se,
                bold: cell.bold,
                gray: cell.gray,
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String, RunnerError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| RunnerError::Summary(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| RunnerError::Summary(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Aligned text table; `*` marks significant differences, `~` grayed cells.
pub fn render_summary_table(rows: &[SummaryRow]) -> String {
    let header = ["experiment", "variant", "metric", "size", "runs", "difference", "flags"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.experiment.clone(),
                r.variant.clone(),
                r.metric.to_string(),
                r.context_size.to_string(),
                r.runs.to_string(),
                format!("{:.2} ± {:.2}", r.mean, r.se),
                format!("{}{}", if r.bold { "*" } else { "" }, if r.gray { "~" } else { "" }),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
