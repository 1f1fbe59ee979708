//! Few-shot prompt construction.
//!
//! A [`TemplateSpec`] turns an example's input text(s) and a label string into
//! a block of prompt text. [`assemble`] concatenates blocks and records, for
//! every block, the character span of its label so that later stages can find
//! the label tokens without searching the token stream.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator that ends every rendered example.
pub const EXAMPLE_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template expects {expected} input field(s), got {got}")]
    Arity { expected: usize, got: usize },
    #[error("unknown placeholder `{{{0}}}` in template")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in template `{0}`")]
    Unterminated(String),
    #[error("label cue must be non-empty and must not appear in the input template")]
    BadCue,
    #[error("unknown template preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class names must be pairwise distinct (`{0}` repeats)")]
    DuplicateClass(String),
    #[error("example {index} has label {label} but there are only {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("class frequencies must have one entry per class and sum to 1 (sum = {0})")]
    BadFrequencies(f64),
    #[error("examples mix 1-input and 2-input records")]
    MixedArity,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset has no header record with `class_names`")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum AssembleError {
    #[error("cannot assemble an input with no examples and no query")]
    Empty,
    #[error("order has {order} entries but {labels} labels were supplied")]
    LabelCount { order: usize, labels: usize },
    #[error("example index {0} is out of range")]
    IndexOutOfRange(usize),
    #[error("label index {label} has no name among {classes} classes")]
    UnknownLabel { label: usize, classes: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// One labeled example: one or two input texts plus a class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub inputs: Vec<String>,
    pub label: usize,
}

/// Labeled examples, the class vocabulary, and the empirical class marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    examples: Vec<Example>,
    class_names: Vec<String>,
    class_frequencies: Vec<f64>,
}

impl TaskDataset {
    /// Builds a dataset whose class frequencies are the label counts of `examples`.
    pub fn new(examples: Vec<Example>, class_names: Vec<String>) -> Result<Self, DatasetError> {
        let classes = class_names.len();
        let mut counts = vec![0usize; classes];
        for (index, example) in examples.iter().enumerate() {
            if example.label >= classes {
                return Err(DatasetError::LabelOutOfRange { index, label: example.label, classes });
            }
            counts[example.label] += 1;
        }
        let total = examples.len().max(1) as f64;
        let mut frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        if examples.is_empty() && classes > 0 {
            frequencies = vec![1.0 / classes as f64; classes];
        }
        Self::with_frequencies(examples, class_names, frequencies)
    }

    /// Builds a dataset with externally supplied class frequencies (e.g. from a
    /// larger training split than the examples kept in memory).
    pub fn with_frequencies(
        examples: Vec<Example>,
        class_names: Vec<String>,
        class_frequencies: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        let classes = class_names.len();
        if classes < 2 {
            return Err(DatasetError::TooFewClasses(classes));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::DuplicateClass(name.clone()));
            }
        }
        for (index, example) in examples.iter().enumerate() {
            if example.label >= classes {
                return Err(DatasetError::LabelOutOfRange { index, label: example.label, classes });
            }
        }
        let sum: f64 = class_frequencies.iter().sum();
        if class_frequencies.len() != classes
            || (sum - 1.0).abs() > 1e-12
            || class_frequencies.iter().any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(DatasetError::BadFrequencies(sum));
        }
        if let Some(first) = examples.first() {
            if examples.iter().any(|e| e.inputs.len() != first.inputs.len()) {
                return Err(DatasetError::MixedArity);
            }
        }
        Ok(Self { examples, class_names, class_frequencies })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_frequencies(&self) -> &[f64] {
        &self.class_frequencies
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of input fields per example (1 or 2); 1 for an empty dataset.
    pub fn arity(&self) -> usize {
        self.examples.first().map_or(1, |e| e.inputs.len())
    }

    /// Reads the line-delimited JSON dataset format.
    ///
    /// The first record is a header `{"class_names": [...]}` (optionally with
    /// `"class_frequencies"`). Every following record carries `text` or
    /// `text1`/`text2`, and `label` as either a class name or an index.
    pub fn from_jsonl_reader(reader: impl Read) -> Result<Self, DatasetError> {
        let mut header: Option<DatasetHeader> = None;
        let mut examples = Vec::new();
        for (number, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line_no = number + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            };
            let Some(head) = &header else {
                let parsed: DatasetHeader = serde_json::from_str(&line).map_err(parse_err)?;
                header = Some(parsed);
                continue;
            };
            let record: DatasetRecord = serde_json::from_str(&line).map_err(parse_err)?;
            let inputs = match (record.text, record.text1, record.text2) {
                (Some(t), None, None) => vec![t],
                (None, Some(a), Some(b)) => vec![a, b],
                _ => {
                    return Err(DatasetError::Parse {
                        line: line_no,
                        message: "expected either `text` or both `text1` and `text2`".into(),
                    })
                }
            };
            let label = match record.label {
                LabelField::Index(i) => i,
                LabelField::Name(name) => head
                    .class_names
                    .iter()
                    .position(|c| *c == name)
                    .ok_or_else(|| DatasetError::Parse {
                        line: line_no,
                        message: format!("label `{name}` is not a declared class"),
                    })?,
            };
            examples.push(Example { inputs, label });
        }
        let header = header.ok_or(DatasetError::MissingHeader)?;
        match header.class_frequencies {
            Some(freqs) => Self::with_frequencies(examples, header.class_names, freqs),
            None => Self::new(examples, header.class_names),
        }
    }

    pub fn from_jsonl_path(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_jsonl_reader(fs::File::open(path)?)
    }

    /// Serializes back into the line-delimited format (labels by name).
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&DatasetHeader {
            class_names: self.class_names.clone(),
            class_frequencies: Some(self.class_frequencies.clone()),
        })
        .expect("header serializes");
        out.push('\n');
        for example in &self.examples {
            let (text, text1, text2) = match example.inputs.as_slice() {
                [t] => (Some(t.clone()), None, None),
                [a, b] => (None, Some(a.clone()), Some(b.clone())),
                _ => unreachable!("arity checked at construction"),
            };
            let record = DatasetRecord {
                text,
                text1,
                text2,
                label: LabelField::Name(self.class_names[example.label].clone()),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_frequencies: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text2: Option<String>,
    label: LabelField,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelField {
    Index(usize),
    Name(String),
}

/// How one example is verbalized.
///
/// A rendered example is `input_template` (with `{text}` or `{text1}`/`{text2}`
/// substituted), then `label_cue`, one space, the label, and `separator`. The
/// query rendering stops right after `label_cue`, so the example and query
/// forms can never drift apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub input_template: String,
    pub label_cue: String,
    #[serde(default = "default_separator")]
    pub separator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_prefix: Option<String>,
}

fn default_separator() -> String {
    EXAMPLE_SEPARATOR.to_string()
}

enum Piece<'a> {
    Literal(&'a str),
    Field(usize),
}

impl TemplateSpec {
    pub fn new(input_template: impl Into<String>, label_cue: impl Into<String>) -> Self {
        Self {
            input_template: input_template.into(),
            label_cue: label_cue.into(),
            separator: default_separator(),
            prompt_prefix: None,
        }
    }

    /// `Sentence: '{text}'` / `Answer:` (single-sentence tasks).
    pub fn sentence() -> Self {
        Self::new("Sentence: '{text}'\n", "Answer:")
    }

    /// `Sentence 1: ... Sentence 2: ...` (paraphrase and entailment pairs).
    pub fn sentence_pair() -> Self {
        Self::new("Sentence 1: '{text1}'\nSentence 2: '{text2}'\n", "Answer:")
    }

    /// `Question 1: ... Question 2: ...` (question-pair similarity).
    pub fn question_pair() -> Self {
        Self::new("Question 1: '{text1}'\nQuestion 2: '{text2}'\n", "Answer:")
    }

    pub fn preset(name: &str) -> Result<Self, TemplateError> {
        match name {
            "sentence" => Ok(Self::sentence()),
            "sentence_pair" => Ok(Self::sentence_pair()),
            "question_pair" => Ok(Self::question_pair()),
            other => Err(TemplateError::UnknownPreset(other.to_string())),
        }
    }

    pub fn with_label_cue(mut self, cue: impl Into<String>) -> Self {
        self.label_cue = cue.into();
        self
    }

    pub fn with_prompt_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prompt_prefix = Some(prefix.into());
        self
    }

    /// Full example template with a `{label}` placeholder.
    pub fn example_template(&self) -> String {
        format!("{}{} {{label}}{}", self.input_template, self.label_cue, self.separator)
    }

    /// Query template: the example template cut right after the label cue.
    pub fn query_template(&self) -> String {
        format!("{}{}", self.input_template, self.label_cue)
    }

    /// Number of input fields the template expects.
    pub fn arity(&self) -> Result<usize, TemplateError> {
        let mut max_field = 0;
        for piece in self.pieces()? {
            if let Piece::Field(i) = piece {
                max_field = max_field.max(i + 1);
            }
        }
        Ok(max_field)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.label_cue.is_empty() || self.input_template.contains(&self.label_cue) {
            return Err(TemplateError::BadCue);
        }
        self.arity().map(|_| ())
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>, TemplateError> {
        let mut pieces = Vec::new();
        let mut rest = self.input_template.as_str();
        while let Some(open) = rest.find('{') {
            if open > 0 {
                pieces.push(Piece::Literal(&rest[..open]));
            }
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| TemplateError::Unterminated(self.input_template.clone()))?;
            let field = match &after[..close] {
                "text" | "text1" => 0,
                "text2" => 1,
                other => return Err(TemplateError::UnknownPlaceholder(other.to_string())),
            };
            pieces.push(Piece::Field(field));
            rest = &after[close + 1..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Literal(rest));
        }
        Ok(pieces)
    }

    fn render_inputs(&self, inputs: &[String], out: &mut String) -> Result<(), TemplateError> {
        let expected = self.arity()?;
        if expected != inputs.len() {
            return Err(TemplateError::Arity { expected, got: inputs.len() });
        }
        for piece in self.pieces()? {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Field(i) => out.push_str(&inputs[i]),
            }
        }
        Ok(())
    }

    /// Query rendering: inputs followed by the label cue, no trailing space.
    pub fn render_query(&self, inputs: &[String]) -> Result<String, TemplateError> {
        let mut out = String::new();
        self.render_inputs(inputs, &mut out)?;
        out.push_str(&self.label_cue);
        Ok(out)
    }
}

/// Renders one complete in-context example.
pub fn render_example(
    template: &TemplateSpec,
    inputs: &[String],
    label: &str,
) -> Result<String, TemplateError> {
    let mut out = template.render_query(inputs)?;
    out.push(' ');
    out.push_str(label);
    out.push_str(&template.separator);
    Ok(out)
}

/// Label indices shown in the prompt together with the names they render as.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub indices: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Labeling {
    /// The dataset's own labels for `order`.
    pub fn default_for(dataset: &TaskDataset, order: &[usize]) -> Self {
        Self {
            indices: order.iter().map(|&i| dataset.examples()[i].label).collect(),
            class_names: dataset.class_names().to_vec(),
        }
    }

    pub fn name(&self, position: usize) -> &str {
        &self.class_names[self.indices[position]]
    }
}

/// Character layout of one rendered example inside [`AssembledInput::text`].
///
/// `start..cue_end` is everything up to and including the label cue,
/// `label` is the label string (after the single space), and `end` is the
/// end of the trailing separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub cue_end: usize,
    pub label: Range<usize>,
    pub end: usize,
}

impl Segment {
    pub fn pre_label(&self) -> Range<usize> {
        self.start..self.cue_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledInput {
    pub text: String,
    pub prompt_span: Option<Range<usize>>,
    pub segments: Vec<Segment>,
    pub example_order: Vec<usize>,
    /// Span of the trailing query rendering in classic mode; it ends at the
    /// label cue and is always the end of `text`.
    pub query: Option<Range<usize>>,
}

impl AssembledInput {
    pub fn label_text(&self, i: usize) -> &str {
        &self.text[self.segments[i].label.clone()]
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Concatenates `order`'s examples, each rendered with the label chosen by
/// `labeling`, after an optional prompt.
///
/// `prompt` overrides `template.prompt_prefix` when given. Repeated indices
/// in `order` are allowed (repeated-query experiments rely on them).
pub fn assemble(
    dataset: &TaskDataset,
    order: &[usize],
    labeling: &Labeling,
    template: &TemplateSpec,
    prompt: Option<&str>,
) -> Result<AssembledInput, AssembleError> {
    if order.is_empty() {
        return Err(AssembleError::Empty);
    }
    build(dataset, order, labeling, template, prompt, None)
}

/// Classic single-query mode: the context examples followed by the query
/// rendering, which ends exactly at the label cue. The context may be empty
/// (zero-shot).
pub fn assemble_with_query(
    dataset: &TaskDataset,
    order: &[usize],
    labeling: &Labeling,
    template: &TemplateSpec,
    prompt: Option<&str>,
    query_inputs: &[String],
) -> Result<AssembledInput, AssembleError> {
    build(dataset, order, labeling, template, prompt, Some(query_inputs))
}

fn build(
    dataset: &TaskDataset,
    order: &[usize],
    labeling: &Labeling,
    template: &TemplateSpec,
    prompt: Option<&str>,
    query_inputs: Option<&[String]>,
) -> Result<AssembledInput, AssembleError> {
    if labeling.indices.len() != order.len() {
        return Err(AssembleError::LabelCount { order: order.len(), labels: labeling.indices.len() });
    }
    let mut text = String::new();
    let prompt = prompt.or(template.prompt_prefix.as_deref());
    let prompt_span = prompt.filter(|p| !p.is_empty()).map(|p| {
        text.push_str(p);
        0..p.len()
    });
    let mut segments = Vec::with_capacity(order.len());
    for (position, &index) in order.iter().enumerate() {
        let example = dataset.examples().get(index).ok_or(AssembleError::IndexOutOfRange(index))?;
        let label_index = labeling.indices[position];
        let label = labeling.class_names.get(label_index).ok_or(AssembleError::UnknownLabel {
            label: label_index,
            classes: labeling.class_names.len(),
        })?;
        let start = text.len();
        template.render_inputs(&example.inputs, &mut text)?;
        text.push_str(&template.label_cue);
        let cue_end = text.len();
        text.push(' ');
        let label_start = text.len();
        text.push_str(label);
        let label_end = text.len();
        text.push_str(&template.separator);
        segments.push(Segment { start, cue_end, label: label_start..label_end, end: text.len() });
    }
    let query = match query_inputs {
        Some(inputs) => {
            let start = text.len();
            text.push_str(&template.render_query(inputs)?);
            Some(start..text.len())
        }
        None => None,
    };
    if segments.is_empty() && query.is_none() {
        return Err(AssembleError::Empty);
    }
    Ok(AssembledInput { text, prompt_span, segments, example_order: order.to_vec(), query })
}

/// Instruction prefixes that announce a label relation to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Spells the mapping out: "negative means positive and positive means negative".
    Instruct,
    Ignore,
    Invert,
}

impl PromptKind {
    /// Prompt text for a relation in which class `c` is shown as `shown_as[c]`.
    pub fn render(self, class_names: &[String], shown_as: &[String]) -> String {
        let body = match self {
            PromptKind::Instruct => {
                let clauses: Vec<String> = class_names
                    .iter()
                    .zip(shown_as)
                    .map(|(from, to)| format!("{from} means {to}"))
                    .collect();
                match clauses.split_last() {
                    Some((last, rest)) if !rest.is_empty() => {
                        format!("{} and {last}", rest.join(", "))
                    }
                    Some((last, _)) => last.clone(),
                    None => String::new(),
                }
            }
            PromptKind::Ignore => "ignore all prior knowledge".to_string(),
            PromptKind::Invert => "flip the meaning for all answers".to_string(),
        };
        format!("In the following, {body}.{EXAMPLE_SEPARATOR}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    fn sst2() -> TaskDataset {
        TaskDataset::new(
            vec![
                Example { inputs: vec![s("I am happy")], label: 1 },
                Example { inputs: vec![s("I am sad")], label: 0 },
                Example { inputs: vec![s("what a film")], label: 1 },
            ],
            vec![s("negative"), s("positive")],
        )
        .unwrap()
    }

    #[test]
    fn renders_single_sentence_example() {
        let out = render_example(&TemplateSpec::sentence(), &[s("I am happy")], "positive").unwrap();
        assert_eq!(out, "Sentence: 'I am happy'\nAnswer: positive\n\n");
    }

    #[test]
    fn renders_question_pair_example() {
        let out =
            render_example(&TemplateSpec::question_pair(), &[s("Q1 text"), s("Q2 text")], "yes")
                .unwrap();
        assert_eq!(out, "Question 1: 'Q1 text'\nQuestion 2: 'Q2 text'\nAnswer: yes\n\n");
    }

    #[test]
    fn renders_empty_input() {
        let out = render_example(&TemplateSpec::sentence(), &[s("")], "negative").unwrap();
        assert_eq!(out, "Sentence: ''\nAnswer: negative\n\n");
    }

    #[test]
    fn arity_mismatch_is_an_error() {
        let err = render_example(&TemplateSpec::sentence_pair(), &[s("only one")], "x").unwrap_err();
        assert_eq!(err, TemplateError::Arity { expected: 2, got: 1 });
    }

    #[test]
    fn example_template_is_query_template_plus_label() {
        for t in [TemplateSpec::sentence(), TemplateSpec::sentence_pair(), TemplateSpec::question_pair()] {
            assert_eq!(t.example_template(), format!("{} {{label}}\n\n", t.query_template()));
            t.validate().unwrap();
        }
    }

    #[test]
    fn query_has_no_trailing_whitespace() {
        let q = TemplateSpec::sentence().render_query(&[s("I am sad")]).unwrap();
        assert_eq!(q, "Sentence: 'I am sad'\nAnswer:");
    }

    #[test]
    fn assemble_records_label_spans() {
        let data = sst2();
        let order = [0, 1];
        let labels = Labeling::default_for(&data, &order);
        let a = assemble(&data, &order, &labels, &TemplateSpec::sentence(), None).unwrap();
        assert_eq!(
            a.text,
            "Sentence: 'I am happy'\nAnswer: positive\n\nSentence: 'I am sad'\nAnswer: negative\n\n"
        );
        assert_eq!(a.segments.len(), 2);
        assert_eq!(a.label_text(0), "positive");
        assert_eq!(a.label_text(1), "negative");
        assert_eq!(a.segments[0].start, 0);
        assert_eq!(a.segments[0].end, a.segments[1].start);
        assert_eq!(a.segments[1].end, a.text.len());
        assert!(a.text[a.segments[0].pre_label()].ends_with("Answer:"));
    }

    #[test]
    fn assemble_with_prompt_prefix() {
        let data = sst2();
        let order = [0, 1];
        let labels = Labeling::default_for(&data, &order);
        let prompt = "In the following, negative means positive and positive means negative. ";
        let a = assemble(&data, &order, &labels, &TemplateSpec::sentence(), Some(prompt)).unwrap();
        assert_eq!(a.prompt_span, Some(0..prompt.len()));
        assert!(a.text.starts_with(prompt));
        assert_eq!(a.segments[0].start, prompt.len());
    }

    #[test]
    fn permutation_changes_text_not_segments() {
        let data = sst2();
        let t = TemplateSpec::sentence();
        let blocks = |order: &[usize]| {
            let a = assemble(&data, order, &Labeling::default_for(&data, order), &t, None).unwrap();
            let mut parts: Vec<String> =
                a.segments.iter().map(|sg| a.text[sg.start..sg.end].to_string()).collect();
            parts.sort();
            (a.text, parts)
        };
        let (t1, p1) = blocks(&[2, 0, 1]);
        let (t2, p2) = blocks(&[0, 1, 2]);
        assert_ne!(t1, t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn empty_order_is_rejected() {
        let data = sst2();
        let labels = Labeling::default_for(&data, &[]);
        let err = assemble(&data, &[], &labels, &TemplateSpec::sentence(), None).unwrap_err();
        assert_eq!(err, AssembleError::Empty);
    }

    #[test]
    fn zero_shot_query() {
        let data = sst2();
        let labels = Labeling::default_for(&data, &[]);
        let a = assemble_with_query(&data, &[], &labels, &TemplateSpec::sentence(), None, &[s("meh")])
            .unwrap();
        assert_eq!(a.text, "Sentence: 'meh'\nAnswer:");
        assert_eq!(a.query, Some(0..a.text.len()));
    }

    #[test]
    fn instruct_prompt_lists_the_mapping() {
        let names = vec![s("negative"), s("positive")];
        let flipped = vec![s("positive"), s("negative")];
        assert_eq!(
            PromptKind::Instruct.render(&names, &flipped),
            "In the following, negative means positive and positive means negative.\n\n"
        );
        let fp = vec![s("negative"), s("neutral"), s("positive")];
        let rot = vec![s("neutral"), s("positive"), s("negative")];
        assert_eq!(
            PromptKind::Instruct.render(&fp, &rot),
            "In the following, negative means neutral, neutral means positive and positive means negative.\n\n"
        );
        assert_eq!(
            PromptKind::Invert.render(&names, &flipped),
            "In the following, flip the meaning for all answers.\n\n"
        );
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            TaskDataset::new(vec![], vec![s("a")]),
            Err(DatasetError::TooFewClasses(1))
        ));
        assert!(matches!(
            TaskDataset::new(vec![], vec![s("a"), s("a")]),
            Err(DatasetError::DuplicateClass(_))
        ));
        assert!(matches!(
            TaskDataset::new(vec![Example { inputs: vec![s("x")], label: 2 }], vec![s("a"), s("b")]),
            Err(DatasetError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            TaskDataset::with_frequencies(vec![], vec![s("a"), s("b")], vec![0.5, 0.6]),
            Err(DatasetError::BadFrequencies(_))
        ));
        let d = sst2();
        assert_eq!(d.class_frequencies(), &[1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn jsonl_round_trip() {
        let src = "{\"class_names\":[\"negative\",\"positive\"]}\n\
                   {\"text\":\"good\",\"label\":\"positive\"}\n\
                   \n\
                   {\"text\":\"bad\",\"label\":0}\n";
        let d = TaskDataset::from_jsonl_reader(src.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.examples()[0].label, 1);
        assert_eq!(d.class_frequencies(), &[0.5, 0.5]);
        let again = TaskDataset::from_jsonl_reader(d.to_jsonl().as_bytes()).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn jsonl_pair_records_and_errors() {
        let src = "{\"class_names\":[\"no\",\"yes\"]}\n{\"text1\":\"a\",\"text2\":\"b\",\"label\":\"yes\"}\n";
        let d = TaskDataset::from_jsonl_reader(src.as_bytes()).unwrap();
        assert_eq!(d.arity(), 2);
        let bad = "{\"class_names\":[\"no\",\"yes\"]}\n{\"text\":\"a\",\"label\":\"maybe\"}\n";
        assert!(matches!(
            TaskDataset::from_jsonl_reader(bad.as_bytes()),
            Err(DatasetError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            TaskDataset::from_jsonl_reader("".as_bytes()),
            Err(DatasetError::MissingHeader)
        ));
    }
}
