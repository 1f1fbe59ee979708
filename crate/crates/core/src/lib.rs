//! In-context learning dynamics from a single forward pass.
//!
//! A few-shot prompt of `k` labeled examples is tokenized once; the model's
//! log-probabilities at each example's first label token give the prediction
//! for every context size `0..k` at once. The crate covers prompt assembly
//! ([`verbalize`]), locating label tokens ([`tokenalign`]), label
//! manipulations ([`transforms`]), curve extraction ([`extract`]), metrics and
//! significance ([`metrics`]), model access ([`backends`]) and experiment
//! orchestration ([`runner`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the runner uses throughout.

pub mod backends;
pub mod extract;
pub mod metrics;
pub mod runner;
pub mod scalar;
pub mod tokenalign;
pub mod transforms;
pub mod verbalize;

pub use scalar::Scalar;

pub type Curve = extract::DynamicsCurve<f64>;
pub type Point = extract::CurvePoint<f64>;
pub type Score = metrics::PointScore<f64>;
pub type Curves = metrics::MetricCurves<f64>;
pub type Stats = metrics::SampleStats<f64>;
pub type Cell = metrics::SignificanceCell<f64>;
pub type GuessingBaseline = metrics::Baseline<f64>;
