//! Synthetic tasks and config builders shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use icl_dynamics::runner::ExperimentConfig;
use icl_dynamics::verbalize::{Example, TaskDataset};

pub const NEGATIVE_WORDS: [&str; 4] = ["bad", "awful", "dull", "grim"];
pub const POSITIVE_WORDS: [&str; 4] = ["good", "great", "fine", "bright"];
const NOUNS: [&str; 10] = ["film", "story", "plot", "cast", "score", "ending", "scene", "script", "actor", "song"];

pub fn s(v: &str) -> String {
    v.to_string()
}

/// Binary sentiment task: every input contains exactly one keyword of its
/// class, so the keyword is the latent class the Bayesian backend reads.
/// At most 40 examples per class.
pub fn sentiment(negatives: usize, positives: usize) -> TaskDataset {
    let sentences = |words: &[&str], n: usize| -> Vec<String> {
        assert!(n <= words.len() * NOUNS.len());
        NOUNS
            .iter()
            .flat_map(|noun| words.iter().map(move |w| format!("a {w} {noun}")))
            .take(n)
            .collect()
    };
    let mut examples = Vec::new();
    for text in sentences(&NEGATIVE_WORDS, negatives) {
        examples.push(Example { inputs: vec![text], label: 0 });
    }
    for text in sentences(&POSITIVE_WORDS, positives) {
        examples.push(Example { inputs: vec![text], label: 1 });
    }
    TaskDataset::new(examples, vec![s("negative"), s("positive")]).unwrap()
}

pub fn keywords() -> Vec<Vec<String>> {
    vec![NEGATIVE_WORDS.map(s).to_vec(), POSITIVE_WORDS.map(s).to_vec()]
}

pub fn keywords_toml() -> String {
    let list = |w: &[&str]| w.iter().map(|x| format!("\"{x}\"")).collect::<Vec<_>>().join(", ");
    format!("[[{}], [{}]]", list(&NEGATIVE_WORDS), list(&POSITIVE_WORDS))
}

pub fn write_dataset(dir: &Path, dataset: &TaskDataset) -> std::path::PathBuf {
    let path = dir.join("data.jsonl");
    fs::write(&path, dataset.to_jsonl()).unwrap();
    path
}

/// Config with the given backend table body and transform tables; paths are
/// absolute so the config can be used without a file on disk.
pub fn config(
    dataset: &Path,
    out: &Path,
    backend: &str,
    transforms: &[(&str, &str)],
    repetitions: usize,
    examples: usize,
    extra: &str,
) -> ExperimentConfig {
    let mut text = format!(
        "name = \"test\"\nrepetitions = {repetitions}\nseed = 7\noutput_dir = {out:?}\n{extra}\n\
         [task]\ndataset = {dataset:?}\nmax_examples = {examples}\n\n[backend]\n{backend}\n",
        out = out.to_str().unwrap(),
        dataset = dataset.to_str().unwrap(),
    );
    for (name, transform) in transforms {
        text.push_str(&format!("\n[[transforms]]\nname = \"{name}\"\ntransform = {transform}\n"));
    }
    ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub fn bayesian(prior: f64, noise: f64) -> String {
    format!("kind = \"bayesian\"\nprior_identity = {prior}\nnoise = {noise}\nkeywords = {}", keywords_toml())
}

pub const ECHO: &str = "kind = \"echo\"";
