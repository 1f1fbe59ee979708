//! Label-prediction curves from a single teacher-forced pass.
//!
//! One forward pass over `k` labeled examples scores the label of every
//! example given the examples before it. Point `i` of a [`DynamicsCurve`] is
//! the class distribution at the first label token of example `i`, i.e. the
//! prediction with context size `i`. The scored log-probabilities are
//! restricted to the classes' first tokens and renormalized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, LanguageModel, LogProbMatrix, TokenId};
use crate::tokenalign::{index_label_positions, query_position, AlignError, LabelPositionIndex, LabelTokenMap};
use crate::verbalize::AssembledInput;
use crate::Scalar;

/// Log-probabilities below this are raised to it before renormalizing.
pub const LOG_PROB_FLOOR: f64 = -80.0;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("position {position}: every label token has log-probability below {LOG_PROB_FLOOR}")]
    Degenerate { position: usize },
    #[error("expected {expected} rows of {classes} log-probabilities, got {rows} rows")]
    Shape { expected: usize, classes: usize, rows: usize },
    #[error("the input has no query")]
    NoQuery,
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Class distribution at one label position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint<F> {
    /// Renormalized over classes; sums to one.
    pub probs: Vec<F>,
    /// Displayed class of the example scored here.
    pub target: usize,
    /// Unrenormalized first-token probabilities.
    pub raw: Vec<F>,
    pub floored: bool,
}

impl<F: Scalar> CurvePoint<F> {
    /// Probability mass the model put on any class's first token.
    pub fn label_mass(&self) -> F {
        self.raw.iter().copied().sum()
    }

    pub fn log_likelihood(&self) -> F {
        self.probs[self.target].ln()
    }
}

/// Point `m` is the prediction at context size `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsCurve<F> {
    pub points: Vec<CurvePoint<F>>,
}

impl<F: Scalar> DynamicsCurve<F> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of the log-probabilities of all displayed labels given their
    /// preceding examples (first label tokens only, renormalized).
    pub fn joint_log_likelihood(&self) -> F {
        self.points.iter().map(CurvePoint::log_likelihood).sum()
    }

    /// Context sizes at which the floor was applied.
    pub fn floored_sizes(&self) -> Vec<usize> {
        self.points.iter().enumerate().filter(|(_, p)| p.floored).map(|(m, _)| m).collect()
    }
}

/// Renormalizes one row of label-token log-probabilities.
/// Returns `(probs, raw, floored)`; `position` only labels the error.
pub fn renormalize<F: Scalar>(log_probs: &[f64], position: usize) -> Result<(Vec<F>, Vec<F>, bool), ExtractError> {
    if log_probs.iter().any(|v| v.is_nan()) || log_probs.iter().all(|&v| v < LOG_PROB_FLOOR) {
        return Err(ExtractError::Degenerate { position });
    }
    let floored = log_probs.iter().any(|&v| v < LOG_PROB_FLOOR);
    let clamped: Vec<f64> = log_probs.iter().map(|&v| v.max(LOG_PROB_FLOOR)).collect();
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<F> = clamped.iter().map(|&v| F::of(v - max).exp()).collect();
    let total: F = weights.iter().copied().sum();
    let probs = weights.into_iter().map(|w| w / total).collect();
    let raw = log_probs.iter().map(|&v| F::of(v).exp()).collect();
    Ok((probs, raw, floored))
}

/// Builds the curve from one logprobs matrix whose rows follow `index`.
pub fn extract_curve<F: Scalar>(
    dists: &LogProbMatrix,
    index: &LabelPositionIndex,
    map: &LabelTokenMap,
) -> Result<DynamicsCurve<F>, ExtractError> {
    let classes = map.num_classes();
    if dists.len() != index.len() || dists.iter().any(|row| row.len() != classes) {
        return Err(ExtractError::Shape { expected: index.len(), classes, rows: dists.len() });
    }
    let points = dists
        .iter()
        .zip(&index.positions)
        .zip(&index.classes)
        .map(|((row, &position), &target)| {
            let (probs, raw, floored) = renormalize(row, position)?;
            Ok(CurvePoint { probs, target, raw, floored })
        })
        .collect::<Result<Vec<_>, ExtractError>>()?;
    Ok(DynamicsCurve { points })
}

/// Everything a single-pass evaluation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePass<F> {
    pub tokens: Vec<TokenId>,
    pub index: LabelPositionIndex,
    pub curve: DynamicsCurve<F>,
}

/// Tokenizes the assembled input, locates all label positions and scores
/// them with exactly one `logprobs` call.
pub fn single_pass_curve<F: Scalar, M: LanguageModel + ?Sized>(
    model: &M,
    assembled: &AssembledInput,
    map: &LabelTokenMap,
) -> Result<SinglePass<F>, ExtractError> {
    let tokens = model.tokenize(&assembled.text)?;
    let index = index_label_positions(&tokens, assembled, model, map)?;
    let dists = model.logprobs(&tokens, &index.positions, &map.first_tokens())?;
    let curve = extract_curve(&dists, &index, map)?;
    Ok(SinglePass { tokens, index, curve })
}

/// Classic evaluation: the class distribution for the query that ends
/// `assembled`, given its context examples.
pub fn classic_query_predict<F: Scalar, M: LanguageModel + ?Sized>(
    model: &M,
    assembled: &AssembledInput,
    map: &LabelTokenMap,
) -> Result<Vec<F>, ExtractError> {
    Ok(classic_query_point(model, assembled, map, 0)?.probs)
}

/// [`classic_query_predict`] as a curve point scored against `target`.
pub fn classic_query_point<F: Scalar, M: LanguageModel + ?Sized>(
    model: &M,
    assembled: &AssembledInput,
    map: &LabelTokenMap,
    target: usize,
) -> Result<CurvePoint<F>, ExtractError> {
    let tokens = model.tokenize(&assembled.text)?;
    let position = query_position(&tokens, assembled).ok_or(ExtractError::NoQuery)?;
    let dists = model.logprobs(&tokens, &[position], &map.first_tokens())?;
    let row = dists.first().ok_or(ExtractError::Shape { expected: 1, classes: map.num_classes(), rows: 0 })?;
    let (probs, raw, floored) = renormalize(row, position)?;
    Ok(CurvePoint { probs, target, raw, floored })
}
