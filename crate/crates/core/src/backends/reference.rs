//! Closed-form language models used as test oracles.
//!
//! Each model reads a token prefix, decides whether the next token is a label
//! (the prefix ends with the label cue) and, if so, asks its [`LabelRule`] for
//! a distribution over classes. Everywhere else it copies the continuation of
//! the most recent earlier occurrence of the last two (then one) tokens, which
//! puts probability one on the next template token once the template has been
//! seen, and nothing on label tokens.

use std::collections::HashMap;

use num_traits::{pow, Num};

use super::tokenizer::{WordTokenizer, UNK_ID};
use super::{
    validate_request, BackendError, LanguageModel, LogProbMatrix, TokenId, Tokenizer,
    TOKEN_LIMIT_2K,
};

/// Class distribution at a label position.
pub trait LabelRule: Send + Sync {
    /// Returns one probability per class; the caller spreads it over every
    /// registered label-name set.
    fn predict(&self, history: &LabelHistory) -> Vec<f64>;
}

/// What a reference model can read off a token prefix that ends at a cue.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelHistory {
    /// `(latent feature, displayed class)` for every completed example.
    pub observed: Vec<(Option<usize>, usize)>,
    /// Latent feature of the pending query, if a keyword was seen.
    pub query_feature: Option<usize>,
}

/// A [`LabelRule`] wrapped into a full teacher-forced language model.
pub struct ReferenceLm<R> {
    tokenizer: WordTokenizer,
    cue: Vec<TokenId>,
    /// `label_sets[s][c]`: first in-context token of class `c` in name set `s`.
    label_sets: Vec<Vec<TokenId>>,
    label_lookup: HashMap<TokenId, usize>,
    keywords: HashMap<TokenId, usize>,
    max_input_tokens: usize,
    rule: R,
}

pub type TemplateEchoLm = ReferenceLm<EchoRule>;
pub type BayesianMappingLm = ReferenceLm<BayesianRule>;
pub type FrequencyLm = ReferenceLm<FrequencyRule>;

impl<R: LabelRule> ReferenceLm<R> {
    /// `label_sets` lists the class names of every relation the model should
    /// recognize (e.g. default names and arbitrary `A`/`B`); all sets must
    /// have the same number of classes.
    pub fn new(
        tokenizer: WordTokenizer,
        label_cue: &str,
        label_sets: &[Vec<String>],
        rule: R,
    ) -> Result<Self, BackendError> {
        let cue = tokenizer.tokenize(label_cue)?;
        if cue.is_empty() {
            return Err(BackendError::Protocol("label cue tokenizes to nothing".into()));
        }
        let classes = label_sets.first().map_or(0, Vec::len);
        let mut resolved = Vec::with_capacity(label_sets.len());
        let mut label_lookup = HashMap::new();
        for names in label_sets {
            if names.len() != classes {
                return Err(BackendError::Protocol("label sets differ in class count".into()));
            }
            let mut ids = Vec::with_capacity(classes);
            for (class, name) in names.iter().enumerate() {
                let full = tokenizer.tokenize(&format!("{label_cue} {name}"))?;
                let id = *full
                    .get(cue.len())
                    .ok_or_else(|| BackendError::Protocol(format!("label `{name}` has no tokens")))?;
                if id == UNK_ID {
                    return Err(BackendError::Protocol(format!("label `{name}` is out of vocabulary")));
                }
                label_lookup.insert(id, class);
                ids.push(id);
            }
            resolved.push(ids);
        }
        Ok(Self {
            tokenizer,
            cue,
            label_sets: resolved,
            label_lookup,
            keywords: HashMap::new(),
            max_input_tokens: TOKEN_LIMIT_2K,
            rule,
        })
    }

    /// Words whose presence in an input reveals its latent class.
    pub fn with_keywords(mut self, keywords: &[Vec<String>]) -> Self {
        for (class, words) in keywords.iter().enumerate() {
            for word in words {
                for id in self.tokenizer.word_ids(word) {
                    self.keywords.insert(id, class);
                }
            }
        }
        self
    }

    pub fn with_max_input_tokens(mut self, limit: usize) -> Self {
        self.max_input_tokens = limit;
        self
    }

    pub fn rule(&self) -> &R {
        &self.rule
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    fn ends_with_cue(&self, prefix: &[TokenId]) -> bool {
        prefix.ends_with(&self.cue)
    }

    fn history(&self, prefix: &[TokenId]) -> LabelHistory {
        let mut history = LabelHistory::default();
        let mut feature = None;
        let mut i = 0;
        while i < prefix.len() {
            if i >= self.cue.len() && prefix[..i].ends_with(&self.cue) {
                if let Some(&class) = self.label_lookup.get(&prefix[i]) {
                    history.observed.push((feature, class));
                    feature = None;
                    i += 1;
                    continue;
                }
            }
            if let Some(&class) = self.keywords.get(&prefix[i]) {
                feature = Some(class);
            }
            i += 1;
        }
        history.query_feature = feature;
        history
    }

    /// Sparse next-token distribution after `prefix`.
    pub fn next_token_distribution(&self, prefix: &[TokenId]) -> Vec<(TokenId, f64)> {
        if self.ends_with_cue(prefix) {
            let classes = self.rule.predict(&self.history(prefix));
            let share = 1.0 / self.label_sets.len() as f64;
            let mut out = Vec::new();
            for set in &self.label_sets {
                for (&id, &p) in set.iter().zip(&classes) {
                    out.push((id, p * share));
                }
            }
            return merge_duplicates(out);
        }
        vec![(echo_next(prefix), 1.0)]
    }
}

fn merge_duplicates(entries: Vec<(TokenId, f64)>) -> Vec<(TokenId, f64)> {
    let mut merged: Vec<(TokenId, f64)> = Vec::with_capacity(entries.len());
    for (id, p) in entries {
        match merged.iter_mut().find(|(m, _)| *m == id) {
            Some(slot) => slot.1 += p,
            None => merged.push((id, p)),
        }
    }
    merged
}

/// Continuation of the latest earlier match of the last two, then last one,
/// tokens; the unknown token when there is none.
fn echo_next(prefix: &[TokenId]) -> TokenId {
    for width in [2usize, 1] {
        if prefix.len() <= width {
            continue;
        }
        let key = &prefix[prefix.len() - width..];
        for start in (0..prefix.len() - width).rev() {
            if &prefix[start..start + width] == key {
                return prefix[start + width];
            }
        }
    }
    UNK_ID
}

impl<R: LabelRule> Tokenizer for ReferenceLm<R> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        self.tokenizer.tokenize(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError> {
        self.tokenizer.detokenize(ids)
    }

    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }
}

impl<R: LabelRule> LanguageModel for ReferenceLm<R> {
    fn max_input_tokens(&self) -> usize {
        self.max_input_tokens
    }

    fn logprobs(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        token_ids: &[TokenId],
    ) -> Result<LogProbMatrix, BackendError> {
        validate_request(tokens, positions, token_ids, self.vocab_size(), self.max_input_tokens)?;
        Ok(positions
            .iter()
            .map(|&position| {
                let dist = self.next_token_distribution(&tokens[..position]);
                token_ids
                    .iter()
                    .map(|t| {
                        dist.iter()
                            .find(|(id, _)| id == t)
                            .map_or(f64::NEG_INFINITY, |&(_, p)| p.ln())
                    })
                    .collect()
            })
            .collect())
    }
}

/// Laplace-smoothed frequencies of the labels already shown, so the curve
/// moves with the context.
#[derive(Debug, Clone, Copy)]
pub struct EchoRule {
    pub classes: usize,
}

impl LabelRule for EchoRule {
    fn predict(&self, history: &LabelHistory) -> Vec<f64> {
        let mut counts = vec![1.0; self.classes];
        for &(_, class) in &history.observed {
            counts[class] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }
}

/// Always predicts the same class distribution.
#[derive(Debug, Clone)]
pub struct FrequencyRule {
    pub frequencies: Vec<f64>,
}

impl LabelRule for FrequencyRule {
    fn predict(&self, _history: &LabelHistory) -> Vec<f64> {
        self.frequencies.clone()
    }
}

/// Exact Bayesian learner over two hypotheses for a binary task: the shown
/// label equals the input's latent class (identity), or its opposite (flip).
/// Each shown label agrees with the true hypothesis with probability
/// `1 - noise`.
#[derive(Debug, Clone, Copy)]
pub struct BayesianRule {
    /// Prior probability of the identity hypothesis.
    pub prior_identity: f64,
    pub noise: f64,
}

impl BayesianRule {
    pub fn new(prior_identity: f64, noise: f64) -> Result<Self, BackendError> {
        if !(prior_identity > 0.0 && prior_identity < 1.0) || !(noise > 0.0 && noise < 0.5) {
            return Err(BackendError::Protocol(format!(
                "need 0 < prior < 1 and 0 < noise < 0.5, got prior={prior_identity}, noise={noise}"
            )));
        }
        Ok(Self { prior_identity, noise })
    }

    /// Counts of context examples consistent / inconsistent with identity.
    pub fn evidence(history: &LabelHistory) -> (usize, usize) {
        history.observed.iter().fold((0, 0), |(agree, disagree), &(feature, class)| match feature {
            Some(f) if f == class => (agree + 1, disagree),
            Some(_) => (agree, disagree + 1),
            None => (agree, disagree),
        })
    }
}

impl LabelRule for BayesianRule {
    fn predict(&self, history: &LabelHistory) -> Vec<f64> {
        let (agree, disagree) = Self::evidence(history);
        let p = bayes_predictive(self.prior_identity, self.noise, agree, disagree);
        match history.query_feature {
            Some(0) => vec![p, 1.0 - p],
            Some(_) => vec![1.0 - p, p],
            None => vec![0.5, 0.5],
        }
    }
}

/// Predictive probability that the next label equals the query's latent
/// class, after `agree` examples consistent with identity and `disagree`
/// consistent with flip.
///
/// Generic so tests can evaluate it in exact rational arithmetic.
pub fn bayes_predictive<T: Num + Clone>(prior: T, noise: T, agree: usize, disagree: usize) -> T {
    let one = T::one();
    let keep = one.clone() - noise.clone();
    // odds(flip : identity) = (1-prior)/prior * (noise/keep)^(agree-disagree)
    let prior_odds = (one.clone() - prior.clone()) / prior;
    let odds = if agree >= disagree {
        prior_odds * pow(noise.clone() / keep.clone(), agree - disagree)
    } else {
        prior_odds * pow(keep.clone() / noise.clone(), disagree - agree)
    };
    let identity = one.clone() / (one + odds);
    let flip = T::one() - identity.clone();
    identity * keep + flip * noise
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::tokenizer::WhitespaceMode;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    const CORPUS: &str =
        "Sentence: 'good film'\nAnswer: positive\n\nSentence: 'bad film'\nAnswer: negative\n\n";

    fn bayes(prior: f64) -> BayesianMappingLm {
        let tok = WordTokenizer::from_texts(WhitespaceMode::Merge, [CORPUS]);
        ReferenceLm::new(tok, "Answer:", &[names(&["negative", "positive"])], BayesianRule::new(prior, 0.1).unwrap())
            .unwrap()
            .with_keywords(&[names(&["bad"]), names(&["good"])])
    }

    #[test]
    fn predictive_hand_values() {
        assert!((bayes_predictive(0.5_f64, 0.1, 0, 0) - 0.5).abs() < 1e-15);
        assert!((bayes_predictive(0.5_f64, 0.1, 1, 0) - 0.82).abs() < 1e-15);
        assert!((bayes_predictive(0.5_f64, 0.1, 1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reads_consistent_example_from_tokens() {
        let lm = bayes(0.5);
        let text = "Sentence: 'good film'\nAnswer: positive\n\nSentence: 'good film'\nAnswer:";
        let tokens = lm.tokenize(text).unwrap();
        let dist = lm.next_token_distribution(&tokens);
        let pos = lm.tokenize("Answer: positive").unwrap()[2];
        let p = dist.iter().find(|(id, _)| *id == pos).unwrap().1;
        assert!((p - 0.82).abs() < 1e-12);
    }

    #[test]
    fn template_tokens_are_echoed_with_certainty() {
        let lm = bayes(0.5);
        let tokens = lm.tokenize(CORPUS).unwrap();
        // Second block starts after "\n\n": "Sentence" ":" " '" ... are all
        // predicted from the first block.
        let second = lm.tokenize("Sentence: 'good film'\nAnswer: positive\n\n").unwrap().len();
        let rows = lm.logprobs(&tokens, &[second + 1], &[tokens[second + 1]]).unwrap();
        assert_eq!(rows[0][0], 0.0);
    }

    #[test]
    fn rejects_bad_requests() {
        let lm = bayes(0.5);
        let tokens = lm.tokenize(CORPUS).unwrap();
        assert!(matches!(
            lm.logprobs(&tokens, &[tokens.len() + 1], &[1]),
            Err(BackendError::PositionOutOfRange { .. })
        ));
        assert!(matches!(lm.logprobs(&tokens, &[0], &[1]), Err(BackendError::PositionOutOfRange { .. })));
        assert!(matches!(
            lm.logprobs(&tokens, &[1], &[100_000]),
            Err(BackendError::UnknownToken { .. })
        ));
        let small = bayes(0.5).with_max_input_tokens(3);
        assert!(matches!(small.logprobs(&tokens, &[1], &[1]), Err(BackendError::TokenLimit { .. })));
    }

    #[test]
    fn invalid_rule_parameters() {
        assert!(BayesianRule::new(1.0, 0.1).is_err());
        assert!(BayesianRule::new(0.5, 0.5).is_err());
    }

    #[test]
    fn echo_rule_counts_labels() {
        let rule = EchoRule { classes: 2 };
        let h = LabelHistory { observed: vec![(None, 1), (None, 1)], query_feature: None };
        assert_eq!(rule.predict(&h), vec![0.25, 0.75]);
    }
}
