//! Scores, baselines and run statistics. Natural-log units throughout.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::DynamicsCurve;
use crate::Scalar;

/// Two-sided 95% normal quantile; `|mean| > BOLD_Z * se` marks a difference.
pub const BOLD_Z: f64 = 1.96;
/// One-sided 95% normal quantile used by the above-baseline test.
pub const GRAY_Z: f64 = 1.645;
pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.99;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("calibration prior has a non-positive entry at class {0}")]
    Calibration(usize),
    #[error("need at least 2 values, got {0}")]
    InsufficientData(usize),
    #[error("paired comparison needs equal run counts, got {default} and {variant}")]
    Pairing { default: usize, variant: usize },
    #[error("confidence level {0} is outside (0, 1)")]
    Level(f64),
    #[error("smoothing window must be at least 1")]
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    #[serde(rename = "loglik")]
    LogLikelihood,
    Entropy,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::LogLikelihood, Metric::Entropy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::LogLikelihood => "loglik",
            Metric::Entropy => "entropy",
        }
    }

    pub fn of<F: Scalar>(self, score: &PointScore<F>) -> F {
        match self {
            Metric::Accuracy => if score.correct { F::one() } else { F::zero() },
            Metric::LogLikelihood => score.log_likelihood,
            Metric::Entropy => score.entropy,
        }
    }

    pub fn of_baseline<F: Scalar>(self, baseline: &Baseline<F>) -> F {
        match self {
            Metric::Accuracy => baseline.accuracy,
            Metric::LogLikelihood => baseline.log_likelihood,
            Metric::Entropy => baseline.entropy,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}` (expected accuracy, loglik or entropy)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScore<F> {
    pub correct: bool,
    /// More than one class shares the maximum probability.
    pub tie: bool,
    pub log_likelihood: F,
    pub entropy: F,
}

/// `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy<F: Scalar>(p: &[F]) -> F {
    -p.iter().filter(|&&v| v > F::zero()).map(|&v| v * v.ln()).sum::<F>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Scalar>(p: &[F]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
            tie = false;
        } else if v == p[best] {
            tie = true;
        }
    }
    (best, tie)
}

pub fn score_point<F: Scalar>(p: &[F], target: usize) -> PointScore<F> {
    let (predicted, tie) = argmax(p);
    PointScore { correct: predicted == target, tie, log_likelihood: p[target].ln(), entropy: entropy(p) }
}

pub fn score_curve<F: Scalar>(curve: &DynamicsCurve<F>) -> Vec<PointScore<F>> {
    curve.points.iter().map(|pt| score_point(&pt.probs, pt.target)).collect()
}

/// Metrics of a predictor that always outputs the class frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline<F> {
    pub accuracy: F,
    pub log_likelihood: F,
    pub entropy: F,
}

pub fn guessing_baseline<F: Scalar>(frequencies: &[F]) -> Baseline<F> {
    let h = entropy(frequencies);
    Baseline { accuracy: frequencies[argmax(frequencies).0], log_likelihood: -h, entropy: h }
}

/// `q_c ∝ p_c / prior_c`.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN priors are rejected too
pub fn calibrate<F: Scalar>(p: &[F], prior: &[F]) -> Result<Vec<F>, MetricsError> {
    if let Some(c) = prior.iter().position(|&v| !(v > F::zero())) {
        return Err(MetricsError::Calibration(c));
    }
    let scaled: Vec<F> = p.iter().zip(prior).map(|(&a, &b)| a / b).collect();
    let total: F = scaled.iter().copied().sum();
    Ok(scaled.into_iter().map(|v| v / total).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Window centered on each point, shrunk at the edges.
    #[default]
    Centered,
    /// Window ending at each point, shrunk at the start.
    Trailing,
}

pub fn moving_average<F: Scalar>(series: &[F], window: usize, mode: Smoothing) -> Result<Vec<F>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::Window);
    }
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = match mode {
                Smoothing::Centered => {
                    let before = (window - 1) / 2;
                    (i.saturating_sub(before), (i + window - before).min(n))
                }
                Smoothing::Trailing => ((i + 1).saturating_sub(window), i + 1),
            };
            let slice = &series[lo..hi];
            slice.iter().copied().sum::<F>() / F::of(slice.len() as f64)
        })
        .collect())
}

/// Mean, sample standard deviation (n - 1) and standard error of the mean.
/// Deviation and error are zero for fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats<F> {
    pub n: usize,
    pub mean: F,
    pub sd: F,
    pub se: F,
}

impl<F: Scalar> SampleStats<F> {
    pub fn of(values: &[F]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: F::nan(), sd: F::zero(), se: F::zero() };
        }
        let mean = values.iter().copied().sum::<F>() / F::of(n as f64);
        if n < 2 {
            return Self { n, mean, sd: F::zero(), se: F::zero() };
        }
        let ss: F = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
        let sd = (ss / F::of((n - 1) as f64)).sqrt();
        Self { n, mean, sd, se: sd / F::of(n as f64).sqrt() }
    }
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * F::of(h - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { resamples: DEFAULT_RESAMPLES, level: DEFAULT_LEVEL, seed: 0 }
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci<F: Scalar>(values: &[F], settings: &BootstrapSettings) -> Result<(F, F), MetricsError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::InsufficientData(n));
    }
    if !(settings.level > 0.0 && settings.level < 1.0) {
        return Err(MetricsError::Level(settings.level));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let scale = F::of(n as f64);
    let mut means: Vec<F> = (0..settings.resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<F>() / scale)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite resample means"));
    let alpha = (1.0 - settings.level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Run `i` of both conditions shares its sampled context.
    #[default]
    Paired,
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCell<F> {
    /// `Metric(Default) - Metric(Variant)`.
    pub mean: F,
    pub se: F,
    pub bold: bool,
    pub gray: bool,
}

impl<F: Scalar> SignificanceCell<F> {
    pub fn new(mean: F, se: F, gray: bool) -> Self {
        Self { mean, se, bold: is_bold(mean, se), gray }
    }
}

pub fn is_bold<F: Scalar>(mean: F, se: F) -> bool {
    mean.abs() > F::of(BOLD_Z) * se
}

/// Mean difference and its standard error, default minus variant.
pub fn difference<F: Scalar>(default: &[F], variant: &[F], pairing: Pairing) -> Result<(F, F), MetricsError> {
    match pairing {
        Pairing::Paired => {
            if default.len() != variant.len() {
                return Err(MetricsError::Pairing { default: default.len(), variant: variant.len() });
            }
            let diffs: Vec<F> = default.iter().zip(variant).map(|(&a, &b)| a - b).collect();
            let stats = SampleStats::of(&diffs);
            Ok((stats.mean, stats.se))
        }
        Pairing::Unpaired => {
            let a = SampleStats::of(default);
            let b = SampleStats::of(variant);
            Ok((a.mean - b.mean, (a.se * a.se + b.se * b.se).sqrt()))
        }
    }
}

/// True when the default condition is not shown to beat the guessing
/// baseline: `mean + GRAY_Z * se > baseline` must hold for accuracy and for
/// log-likelihood, otherwise the cell is grayed.
pub fn is_gray<F: Scalar>(
    accuracy: &SampleStats<F>,
    baseline_accuracy: F,
    log_likelihood: &SampleStats<F>,
    baseline_log_likelihood: F,
) -> bool {
    let above = |s: &SampleStats<F>, b: F| s.mean + F::of(GRAY_Z) * s.se > b;
    !(above(accuracy, baseline_accuracy) && above(log_likelihood, baseline_log_likelihood))
}

/// Which bold decisions are possible when `mean` and `se` are only known up
/// to `± half_step` (values printed rounded to a fixed number of decimals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoldRange {
    pub can_be_bold: bool,
    pub can_be_plain: bool,
}

pub fn bold_under_rounding<F: Scalar>(mean: F, se: F, half_step: F) -> BoldRange {
    let zero = F::zero();
    let z = F::of(BOLD_Z);
    let abs_hi = mean.abs() + half_step;
    let abs_lo = (mean.abs() - half_step).max(zero);
    let se_lo = (se - half_step).max(zero);
    let se_hi = se + half_step;
    BoldRange { can_be_bold: abs_hi > z * se_lo, can_be_plain: abs_lo <= z * se_hi }
}

/// Per-size statistics of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve<F> {
    pub metric: Metric,
    pub stats: Vec<SampleStats<F>>,
}

/// Statistics at every context size, over all runs that reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves<F> {
    pub accuracy: MetricCurve<F>,
    pub log_likelihood: MetricCurve<F>,
    pub entropy: MetricCurve<F>,
}

impl<F: Scalar> MetricCurves<F> {
    /// `runs[r][m]` is run `r`'s score at size `m`; runs may differ in length.
    pub fn from_scores(runs: &[Vec<PointScore<F>>]) -> Self {
        let build = |metric: Metric| MetricCurve {
            metric,
            stats: (0..runs.iter().map(Vec::len).max().unwrap_or(0))
                .map(|m| SampleStats::of(&values_at(runs, metric, m)))
                .collect(),
        };
        Self {
            accuracy: build(Metric::Accuracy),
            log_likelihood: build(Metric::LogLikelihood),
            entropy: build(Metric::Entropy),
        }
    }

    pub fn get(&self, metric: Metric) -> &MetricCurve<F> {
        match metric {
            Metric::Accuracy => &self.accuracy,
            Metric::LogLikelihood => &self.log_likelihood,
            Metric::Entropy => &self.entropy,
        }
    }

    pub fn len(&self) -> usize {
        self.accuracy.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracy.stats.is_empty()
    }
}

/// Metric values at size `m` of every run long enough to have one.
pub fn values_at<F: Scalar>(runs: &[Vec<PointScore<F>>], metric: Metric, m: usize) -> Vec<F> {
    runs.iter().filter_map(|r| r.get(m)).map(|s| metric.of(s)).collect()
}
