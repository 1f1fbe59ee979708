//! Label manipulations applied to a sampled in-context dataset.
//!
//! Every transform maps the true class indices of an ordered context to the
//! class indices (and names) displayed in the prompt. Displayed labels are also
//! the evaluation targets.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verbalize::{Labeling, PromptKind, TaskDataset};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("randomization proportion {0} is outside [0, 1]")]
    Proportion(f64),
    #[error("rotation direction must be +1 or -1, got {0}")]
    Direction(i64),
    #[error("changepoint must be at least 1")]
    Changepoint,
    #[error("replacement needs {expected} names, got {got}")]
    ReplaceArity { expected: usize, got: usize },
    #[error("replacement names must be distinct, `{0}` repeats")]
    DuplicateName(String),
    #[error("answer-in-context transforms cannot be nested")]
    NestedRepetition,
    #[error("example index {0} is out of range")]
    IndexOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangepointMode {
    /// Default relation up to the changepoint, flipped afterwards.
    DefaultToFlipped,
    FlippedToDefault,
    /// Relation switches with every example.
    Alternating,
}

/// Relation between the true and the displayed label at one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Default,
    Flipped,
    /// Label resampled from the class marginal; it may coincide with the true one.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    Default,
    /// Resamples exactly `round(proportion * N)` labels.
    Randomize { proportion: f64 },
    Rotate {
        #[serde(default = "plus_one")]
        direction: i64,
    },
    /// Shows class `c` as `names[(c + shift) mod C]`.
    Replace {
        names: Vec<String>,
        #[serde(default)]
        shift: i64,
    },
    Changepoint {
        mode: ChangepointMode,
        changepoint: usize,
        /// For `alternating`: whether position 1 is flipped.
        #[serde(default = "yes")]
        start_flipped: bool,
    },
    Prompt { prompt: PromptKind, inner: Box<TransformSpec> },
    /// Classic-mode only: `repetitions` copies of the query join the context.
    AnswerInContext { repetitions: usize, inner: Box<TransformSpec> },
}

fn plus_one() -> i64 {
    1
}

fn yes() -> bool {
    true
}

/// Single-token-friendly stand-in names: "A", "B", ...
pub fn arbitrary_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| char::from(b'A' + (c % 26) as u8).to_string()).collect()
}

/// `y -> (y + direction) mod C`.
pub fn rotate_class(label: usize, classes: usize, direction: i64) -> usize {
    (label as i64 + direction).rem_euclid(classes as i64) as usize
}

pub fn rotate_labels(labels: &[usize], classes: usize, direction: i64) -> Vec<usize> {
    labels.iter().map(|&y| rotate_class(y, classes, direction)).collect()
}

/// Relation shown at 1-indexed `position` under a changepoint schedule.
pub fn changepoint_relation(
    mode: ChangepointMode,
    changepoint: usize,
    start_flipped: bool,
    position: usize,
) -> Relation {
    let flipped = match mode {
        ChangepointMode::DefaultToFlipped => position > changepoint,
        ChangepointMode::FlippedToDefault => position <= changepoint,
        ChangepointMode::Alternating => (position % 2 == 1) == start_flipped,
    };
    if flipped {
        Relation::Flipped
    } else {
        Relation::Default
    }
}

/// Counts of (default, flipped) positions among the first `total`.
pub fn schedule_counts(
    mode: ChangepointMode,
    changepoint: usize,
    start_flipped: bool,
    total: usize,
) -> (usize, usize) {
    (1..=total).fold((0, 0), |(d, f), i| match changepoint_relation(mode, changepoint, start_flipped, i) {
        Relation::Flipped => (d, f + 1),
        _ => (d + 1, f),
    })
}

/// Labels displayed for one sampled context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformOutput {
    /// Displayed class index per position, into `class_names`.
    pub labels: Vec<usize>,
    pub relations: Vec<Relation>,
    pub class_names: Vec<String>,
    pub prompt: Option<String>,
}

impl TransformOutput {
    pub fn labeling(&self) -> Labeling {
        Labeling { indices: self.labels.clone(), class_names: self.class_names.clone() }
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|&y| self.class_names[y].as_str()).collect()
    }
}

impl TransformSpec {
    pub fn validate(&self, classes: usize) -> Result<(), TransformError> {
        match self {
            TransformSpec::Default => Ok(()),
            TransformSpec::Randomize { proportion } => {
                if (0.0..=1.0).contains(proportion) {
                    Ok(())
                } else {
                    Err(TransformError::Proportion(*proportion))
                }
            }
            TransformSpec::Rotate { direction } => match direction {
                1 | -1 => Ok(()),
                d => Err(TransformError::Direction(*d)),
            },
            TransformSpec::Replace { names, .. } => {
                if names.len() != classes {
                    return Err(TransformError::ReplaceArity { expected: classes, got: names.len() });
                }
                for (i, name) in names.iter().enumerate() {
                    if names[..i].contains(name) {
                        return Err(TransformError::DuplicateName(name.clone()));
                    }
                }
                Ok(())
            }
            TransformSpec::Changepoint { changepoint, .. } => {
                if *changepoint == 0 {
                    Err(TransformError::Changepoint)
                } else {
                    Ok(())
                }
            }
            TransformSpec::Prompt { inner, .. } => inner.validate(classes),
            TransformSpec::AnswerInContext { inner, .. } => {
                if inner.repetitions() > 0 || matches!(**inner, TransformSpec::AnswerInContext { .. }) {
                    return Err(TransformError::NestedRepetition);
                }
                inner.validate(classes)
            }
        }
    }

    /// Query copies to inject in classic mode.
    pub fn repetitions(&self) -> usize {
        match self {
            TransformSpec::AnswerInContext { repetitions, .. } => *repetitions,
            TransformSpec::Prompt { inner, .. } => inner.repetitions(),
            _ => 0,
        }
    }

    /// Class names shown in the prompt, indexed by displayed class.
    pub fn display_names(&self, class_names: &[String]) -> Vec<String> {
        match self {
            TransformSpec::Replace { names, .. } => names.clone(),
            TransformSpec::Prompt { inner, .. } | TransformSpec::AnswerInContext { inner, .. } => {
                inner.display_names(class_names)
            }
            _ => class_names.to_vec(),
        }
    }

    /// Instruction text placed before the examples, if any.
    pub fn prompt_text(&self, class_names: &[String]) -> Option<String> {
        match self {
            TransformSpec::Prompt { prompt, inner } => {
                Some(prompt.render(class_names, &inner.nominal_mapping(class_names)))
            }
            TransformSpec::AnswerInContext { inner, .. } => inner.prompt_text(class_names),
            _ => None,
        }
    }

    /// The relation a prompt can announce: `shown_as[c]` is the name class
    /// `c` is displayed as when the transform acts as a fixed mapping.
    fn nominal_mapping(&self, class_names: &[String]) -> Vec<String> {
        let classes = class_names.len();
        match self {
            TransformSpec::Rotate { direction } => (0..classes)
                .map(|c| class_names[rotate_class(c, classes, *direction)].clone())
                .collect(),
            TransformSpec::Replace { names, shift } => {
                (0..classes).map(|c| names[rotate_class(c, classes, *shift)].clone()).collect()
            }
            TransformSpec::Prompt { inner, .. } | TransformSpec::AnswerInContext { inner, .. } => {
                inner.nominal_mapping(class_names)
            }
            TransformSpec::Changepoint { .. } => (0..classes)
                .map(|c| class_names[rotate_class(c, classes, 1)].clone())
                .collect(),
            _ => class_names.to_vec(),
        }
    }

    /// Applies the transform to the context `order` drawn from `dataset`.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        dataset: &TaskDataset,
        order: &[usize],
        rng: &mut R,
    ) -> Result<TransformOutput, TransformError> {
        self.validate(dataset.num_classes())?;
        let truth = order
            .iter()
            .map(|&i| dataset.examples().get(i).map(|e| e.label).ok_or(TransformError::IndexOutOfRange(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.apply_labels(dataset, &truth, rng))
    }

    fn apply_labels<R: Rng + ?Sized>(&self, dataset: &TaskDataset, truth: &[usize], rng: &mut R) -> TransformOutput {
        let classes = dataset.num_classes();
        let names = dataset.class_names().to_vec();
        let uniform = |labels: Vec<usize>, relation: Relation| TransformOutput {
            relations: vec![relation; labels.len()],
            labels,
            class_names: names.clone(),
            prompt: None,
        };
        match self {
            TransformSpec::Default => uniform(truth.to_vec(), Relation::Default),
            TransformSpec::Rotate { direction } => {
                uniform(rotate_labels(truth, classes, *direction), Relation::Flipped)
            }
            TransformSpec::Replace { names: shown, shift } => TransformOutput {
                labels: rotate_labels(truth, classes, *shift),
                relations: vec![if *shift == 0 { Relation::Default } else { Relation::Flipped }; truth.len()],
                class_names: shown.clone(),
                prompt: None,
            },
            TransformSpec::Randomize { proportion } => {
                let n = truth.len();
                let count = ((proportion * n as f64).round() as usize).min(n);
                let mut labels = truth.to_vec();
                let mut relations = vec![Relation::Default; n];
                let marginal =
                    WeightedIndex::new(dataset.class_frequencies()).expect("frequencies are validated");
                let mut chosen = index::sample(rng, n, count).into_vec();
                chosen.sort_unstable();
                for i in chosen {
                    labels[i] = marginal.sample(rng);
                    relations[i] = Relation::Random;
                }
                TransformOutput { labels, relations, class_names: names, prompt: None }
            }
            TransformSpec::Changepoint { mode, changepoint, start_flipped } => {
                let relations: Vec<Relation> = (1..=truth.len())
                    .map(|i| changepoint_relation(*mode, *changepoint, *start_flipped, i))
                    .collect();
                let labels = truth
                    .iter()
                    .zip(&relations)
                    .map(|(&y, r)| if *r == Relation::Flipped { rotate_class(y, classes, 1) } else { y })
                    .collect();
                TransformOutput { labels, relations, class_names: names, prompt: None }
            }
            TransformSpec::Prompt { inner, .. } => {
                let mut out = inner.apply_labels(dataset, truth, rng);
                out.prompt = self.prompt_text(dataset.class_names());
                out
            }
            TransformSpec::AnswerInContext { inner, .. } => inner.apply_labels(dataset, truth, rng),
        }
    }
}

/// Inserts `k` copies of `query` at uniformly random context positions.
/// Returns the augmented order and the positions of the copies in it.
pub fn inject_repetitions<R: Rng + ?Sized>(
    order: &[usize],
    query: usize,
    k: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut slots: Vec<(usize, bool)> = order.iter().map(|&i| (i, false)).collect();
    for _ in 0..k {
        let at = rng.gen_range(0..=slots.len());
        slots.insert(at, (query, true));
    }
    let positions = slots.iter().enumerate().filter(|(_, s)| s.1).map(|(p, _)| p).collect();
    (slots.into_iter().map(|s| s.0).collect(), positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verbalize::Example;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn dataset(classes: &[&str], labels: &[usize]) -> TaskDataset {
        let examples = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Example { inputs: vec![format!("x{i}")], label })
            .collect();
        TaskDataset::new(examples, names(classes)).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn three_class_rotation() {
        let d = dataset(&["negative", "neutral", "positive"], &[0, 1, 2]);
        let out = TransformSpec::Rotate { direction: 1 }.apply(&d, &[0, 1, 2], &mut rng()).unwrap();
        assert_eq!(out.label_names(), vec!["neutral", "positive", "negative"]);
    }

    #[test]
    fn four_class_rotation() {
        let d = dataset(&["world", "sports", "business", "science and technology"], &[0, 1, 2, 3]);
        let out = TransformSpec::Rotate { direction: 1 }.apply(&d, &[0, 1, 2, 3], &mut rng()).unwrap();
        assert_eq!(out.label_names(), vec!["sports", "business", "science and technology", "world"]);
        let back = TransformSpec::Rotate { direction: -1 }.apply(&d, &[0, 1, 2, 3], &mut rng()).unwrap();
        assert_eq!(back.label_names(), vec!["science and technology", "world", "sports", "business"]);
    }

    #[test]
    fn replace_with_arbitrary_names() {
        let d = dataset(&["negative", "positive"], &[0, 1, 1]);
        let plain = TransformSpec::Replace { names: arbitrary_names(2), shift: 0 };
        assert_eq!(plain.apply(&d, &[0, 1], &mut rng()).unwrap().label_names(), vec!["A", "B"]);
        let flipped = TransformSpec::Replace { names: arbitrary_names(2), shift: 1 };
        assert_eq!(flipped.apply(&d, &[0, 1], &mut rng()).unwrap().label_names(), vec!["B", "A"]);
        let bad = TransformSpec::Replace { names: names(&["A", "A"]), shift: 0 };
        assert_eq!(bad.validate(2), Err(TransformError::DuplicateName("A".into())));
        assert_eq!(arbitrary_names(4), names(&["A", "B", "C", "D"]));
    }

    #[test]
    fn changepoint_schedules() {
        use ChangepointMode::*;
        assert_eq!(schedule_counts(DefaultToFlipped, 10, true, 20), (10, 10));
        assert_eq!(schedule_counts(Alternating, 10, true, 20), (10, 10));
        assert_eq!(schedule_counts(FlippedToDefault, 7, true, 14), (7, 7));
        let r: Vec<Relation> = (1..=4).map(|i| changepoint_relation(Alternating, 2, true, i)).collect();
        assert_eq!(r, vec![Relation::Flipped, Relation::Default, Relation::Flipped, Relation::Default]);
        assert_eq!(changepoint_relation(Alternating, 2, false, 1), Relation::Default);
    }

    #[test]
    fn prompt_announces_the_rotation() {
        let d = dataset(&["negative", "positive"], &[0, 1]);
        let spec = TransformSpec::Prompt {
            prompt: PromptKind::Instruct,
            inner: Box::new(TransformSpec::Rotate { direction: 1 }),
        };
        let out = spec.apply(&d, &[0, 1], &mut rng()).unwrap();
        assert_eq!(
            out.prompt.as_deref(),
            Some("In the following, negative means positive and positive means negative.\n\n")
        );
        assert_eq!(out.labels, vec![1, 0]);
    }

    #[test]
    fn randomize_counts_and_errors() {
        let d = dataset(&["n", "p"], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let order: Vec<usize> = (0..10).collect();
        let out = TransformSpec::Randomize { proportion: 0.3 }.apply(&d, &order, &mut rng()).unwrap();
        assert_eq!(out.relations.iter().filter(|r| **r == Relation::Random).count(), 3);
        assert_eq!(
            TransformSpec::Randomize { proportion: 1.5 }.apply(&d, &order, &mut rng()),
            Err(TransformError::Proportion(1.5))
        );
    }

    #[test]
    fn randomized_agreement_is_one_half() {
        let d = dataset(&["negative", "positive"], &[0, 1]);
        let order = [0, 1, 1, 0, 1, 0, 0, 1, 0, 1];
        let mut r = rng();
        let (mut agree, mut total) = (0usize, 0usize);
        for _ in 0..10_000 {
            let out = TransformSpec::Randomize { proportion: 1.0 }.apply(&d, &order, &mut r).unwrap();
            agree += out.labels.iter().zip(&order).filter(|(y, &i)| **y == d.examples()[i].label).count();
            total += order.len();
        }
        // 10^5 Bernoulli(1/2) draws: standard error 0.0016
        assert!((agree as f64 / total as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn repetitions_are_injected() {
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(inject_repetitions(&order, 42, 0, &mut rng()).0, order);
        for k in [1, 4] {
            let (augmented, positions) = inject_repetitions(&order, 42, k, &mut rng());
            assert_eq!(augmented.len(), 10 + k);
            assert_eq!(augmented.iter().filter(|&&i| i == 42).count(), k);
            assert!(positions.iter().all(|&p| augmented[p] == 42));
            let rest: Vec<usize> = augmented.into_iter().filter(|&i| i != 42).collect();
            assert_eq!(rest, order);
        }
        let nested = TransformSpec::AnswerInContext {
            repetitions: 1,
            inner: Box::new(TransformSpec::AnswerInContext { repetitions: 1, inner: Box::new(TransformSpec::Default) }),
        };
        assert_eq!(nested.validate(2), Err(TransformError::NestedRepetition));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = TransformSpec::Prompt {
            prompt: PromptKind::Invert,
            inner: Box::new(TransformSpec::Changepoint {
                mode: ChangepointMode::Alternating,
                changepoint: 5,
                start_flipped: true,
            }),
        };
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            t: TransformSpec,
        }
        let text = toml::to_string(&Wrap { t: spec.clone() }).unwrap();
        assert_eq!(toml::from_str::<Wrap>(&text).unwrap().t, spec);
        let parsed: Wrap = toml::from_str("[t]\nkind = \"rotate\"\n").unwrap();
        assert_eq!(parsed.t, TransformSpec::Rotate { direction: 1 });
    }

    proptest! {
        #[test]
        fn rotation_has_order_c(classes in 2usize..6, labels in proptest::collection::vec(0usize..6, 1..30)) {
            let labels: Vec<usize> = labels.into_iter().map(|y| y % classes).collect();
            let mut cur = labels.clone();
            for step in 1..=classes {
                cur = rotate_labels(&cur, classes, 1);
                prop_assert_eq!(cur == labels, step == classes);
            }
            prop_assert_eq!(rotate_labels(&rotate_labels(&labels, classes, 1), classes, -1), labels);
        }

        #[test]
        fn rotation_permutes_class_counts(labels in proptest::collection::vec(0usize..3, 1..40)) {
            let count = |v: &[usize], c: usize| v.iter().filter(|&&y| y == c).count();
            let rotated = rotate_labels(&labels, 3, 1);
            for c in 0..3 {
                prop_assert_eq!(count(&rotated, (c + 1) % 3), count(&labels, c));
            }
        }

        #[test]
        fn zero_randomization_is_default(labels in proptest::collection::vec(0usize..2, 2..20), seed in any::<u64>()) {
            let mut labels = labels;
            labels[0] = 0;
            labels[1] = 1;
            let d = dataset(&["n", "p"], &labels);
            let order: Vec<usize> = (0..labels.len()).rev().collect();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let out = TransformSpec::Randomize { proportion: 0.0 }.apply(&d, &order, &mut r).unwrap();
            let expected = TransformSpec::Default.apply(&d, &order, &mut r).unwrap();
            prop_assert_eq!(out.labels, expected.labels);
        }

        #[test]
        fn changepoint_counts_balance(cp in 1usize..30, start in any::<bool>()) {
            for mode in [ChangepointMode::DefaultToFlipped, ChangepointMode::FlippedToDefault, ChangepointMode::Alternating] {
                prop_assert_eq!(schedule_counts(mode, cp, start, 2 * cp), (cp, cp));
            }
        }

        #[test]
        fn apply_is_deterministic(seed in any::<u64>(), q in 0.0f64..=1.0) {
            let d = dataset(&["a", "b", "c"], &[0, 1, 2, 0, 1, 2, 2]);
            let order = [6, 5, 4, 3, 2, 1, 0];
            let spec = TransformSpec::Randomize { proportion: q };
            let a = spec.apply(&d, &order, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = spec.apply(&d, &order, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
