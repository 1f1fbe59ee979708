//! Mapping class names and label spans onto tokens.
//!
//! A label's token is whatever the tokenizer produces for it *in context*,
//! i.e. after the label cue and a single space. Tokenizing the bare name can
//! give a different id (a leading-space variant), and tokenizing the cue with
//! a trailing space can add a whitespace token that never occurs in real
//! inputs, so both are avoided. Label positions are found by tokenizing each
//! text prefix that ends at a label cue and checking it against the full token
//! sequence, never by searching the token stream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, TokenId, Tokenizer};
use crate::verbalize::{AssembledInput, TemplateSpec};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("classes `{first}` and `{second}` share their first token {token}")]
    Collision { first: String, second: String, token: TokenId },
    #[error("tokenizing the cue followed by `{label}` does not start with the cue's tokens")]
    PrefixUnstable { label: String },
    #[error("label `{0}` adds no tokens after the cue")]
    EmptyLabel(String),
    #[error("label `{label}` maps to token {token}, outside the vocabulary of size {vocab}")]
    OutOfVocabulary { label: String, token: TokenId, vocab: usize },
    #[error("example {example}: expected token {expected} at position {position}, found {found:?}")]
    Misaligned { example: usize, position: usize, expected: TokenId, found: Option<TokenId> },
    #[error("example {example}: label text `{label}` is not a known class")]
    UnknownLabel { example: usize, label: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTokens {
    pub name: String,
    /// Token scored for this class.
    pub first_token: TokenId,
    /// All tokens the label adds after the cue, first token included.
    pub tokens: Vec<TokenId>,
    /// The name tokenized on its own; recorded for diagnostics only.
    pub naked: Vec<TokenId>,
}

impl LabelTokens {
    pub fn continuation(&self) -> &[TokenId] {
        &self.tokens[1..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTokenMap {
    pub labels: Vec<LabelTokens>,
    pub vocab_size: usize,
}

impl LabelTokenMap {
    /// First tokens in class order; the columns requested from a backend.
    pub fn first_tokens(&self) -> Vec<TokenId> {
        self.labels.iter().map(|l| l.first_token).collect()
    }

    pub fn class_of_name(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }
}

/// Resolves each class name to the first token it produces after the cue.
pub fn resolve_label_tokens<T: Tokenizer + ?Sized>(
    tokenizer: &T,
    template: &TemplateSpec,
    class_names: &[String],
) -> Result<LabelTokenMap, AlignError> {
    let cue = tokenizer.tokenize(&template.label_cue)?;
    let vocab = tokenizer.vocab_size();
    let mut labels: Vec<LabelTokens> = Vec::with_capacity(class_names.len());
    for name in class_names {
        let with_label = tokenizer.tokenize(&format!("{} {name}", template.label_cue))?;
        if !with_label.starts_with(&cue) {
            return Err(AlignError::PrefixUnstable { label: name.clone() });
        }
        let tokens = with_label[cue.len()..].to_vec();
        let &first_token = tokens.first().ok_or_else(|| AlignError::EmptyLabel(name.clone()))?;
        if first_token as usize >= vocab {
            return Err(AlignError::OutOfVocabulary { label: name.clone(), token: first_token, vocab });
        }
        if let Some(other) = labels.iter().find(|l| l.first_token == first_token) {
            return Err(AlignError::Collision {
                first: other.name.clone(),
                second: name.clone(),
                token: first_token,
            });
        }
        labels.push(LabelTokens {
            name: name.clone(),
            first_token,
            tokens,
            naked: tokenizer.tokenize(name)?,
        });
    }
    Ok(LabelTokenMap { labels, vocab_size: vocab })
}

/// Token positions of every example's label, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPositionIndex {
    pub positions: Vec<usize>,
    pub expected: Vec<TokenId>,
    /// Class index shown at each position.
    pub classes: Vec<usize>,
}

impl LabelPositionIndex {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Locates the first label token of each example in `full_tokens`.
///
/// For example `i`, the position is the token count of the text up to and
/// including its label cue. The full sequence must start with exactly those
/// tokens and continue with the label's first token; anything else means the
/// tokenizer merged across the cue/label boundary and is reported rather than
/// silently mis-scored.
pub fn index_label_positions<T: Tokenizer + ?Sized>(
    full_tokens: &[TokenId],
    assembled: &AssembledInput,
    tokenizer: &T,
    map: &LabelTokenMap,
) -> Result<LabelPositionIndex, AlignError> {
    let mut index = LabelPositionIndex {
        positions: Vec::with_capacity(assembled.len()),
        expected: Vec::with_capacity(assembled.len()),
        classes: Vec::with_capacity(assembled.len()),
    };
    for (example, segment) in assembled.segments.iter().enumerate() {
        let label = assembled.label_text(example);
        let class = map
            .class_of_name(label)
            .ok_or_else(|| AlignError::UnknownLabel { example, label: label.to_string() })?;
        let expected = map.labels[class].first_token;
        let prefix = tokenizer.tokenize(&assembled.text[..segment.cue_end])?;
        let position = prefix.len();
        let misaligned = || AlignError::Misaligned {
            example,
            position,
            expected,
            found: full_tokens.get(position).copied(),
        };
        if !full_tokens.starts_with(&prefix) || full_tokens.get(position) != Some(&expected) {
            return Err(misaligned());
        }
        if index.positions.last().is_some_and(|&last| last >= position) {
            return Err(misaligned());
        }
        index.positions.push(position);
        index.expected.push(expected);
        index.classes.push(class);
    }
    Ok(index)
}

/// Position predicting the token after a classic-mode query: the end of the
/// input, provided the query ends the text.
pub fn query_position(full_tokens: &[TokenId], assembled: &AssembledInput) -> Option<usize> {
    assembled
        .query
        .as_ref()
        .filter(|span| span.end == assembled.text.len())
        .map(|_| full_tokens.len())
}
