//! Closed-vocabulary word tokenizer used by the reference models.
//!
//! Text is split into word runs, single punctuation characters and whitespace
//! runs. In [`WhitespaceMode::Drop`] whitespace vanishes, so `"positive"` and
//! `" positive"` share one token. In [`WhitespaceMode::Merge`] a single space
//! in front of a word is glued onto it (`"Ġpositive"`), and whitespace not
//! followed by text becomes its own token, so a trailing space after a label
//! cue produces an extra token that disappears once the label is appended.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{BackendError, TokenId, Tokenizer};

/// Marker prefixed to a piece that absorbed one leading space.
pub const SPACE_MARKER: char = 'Ġ';
pub const UNK_PIECE: &str = "<unk>";
pub const UNK_ID: TokenId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhitespaceMode {
    #[default]
    Drop,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Word,
    Space,
    Punct,
}

fn class_of(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphanumeric() || c == '_' {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

/// Splits `text` into vocabulary pieces.
pub fn pre_tokenize(text: &str, mode: WhitespaceMode) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut pieces = Vec::new();
    let mut glue_space = false;
    let mut i = 0;
    while i < chars.len() {
        let class = class_of(chars[i]);
        let mut j = i + 1;
        match class {
            CharClass::Word => {
                while j < chars.len() && class_of(chars[j]) == CharClass::Word {
                    j += 1;
                }
            }
            CharClass::Space => {
                while j < chars.len() && class_of(chars[j]) == CharClass::Space {
                    j += 1;
                }
            }
            CharClass::Punct => {}
        }
        let run: String = chars[i..j].iter().collect();
        match class {
            CharClass::Space => {
                if mode == WhitespaceMode::Merge {
                    let followed = j < chars.len();
                    if followed && run.ends_with(' ') {
                        let head = &run[..run.len() - 1];
                        if !head.is_empty() {
                            pieces.push(head.to_string());
                        }
                        glue_space = true;
                    } else {
                        pieces.push(run);
                    }
                }
            }
            _ => {
                if glue_space {
                    pieces.push(format!("{SPACE_MARKER}{run}"));
                    glue_space = false;
                } else {
                    pieces.push(run);
                }
            }
        }
        i = j;
    }
    pieces
}

/// Piece-to-id table. Id 0 is always the unknown piece.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    ids: HashMap<String, TokenId>,
    pieces: BTreeMap<TokenId, String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut vocab = Self { ids: HashMap::new(), pieces: BTreeMap::new() };
        vocab.ids.insert(UNK_PIECE.to_string(), UNK_ID);
        vocab.pieces.insert(UNK_ID, UNK_PIECE.to_string());
        vocab
    }
}

impl Vocabulary {
    /// Collects every piece of `texts`, numbering them in first-seen order.
    pub fn from_texts<'a>(mode: WhitespaceMode, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::default();
        for text in texts {
            for piece in pre_tokenize(text, mode) {
                vocab.add(&piece);
            }
        }
        vocab
    }

    /// Vocabulary with explicitly numbered pieces.
    ///
    /// # Panics
    /// If an id or piece is assigned twice, or id 0 is used.
    pub fn from_pieces<S: Into<String>>(pieces: impl IntoIterator<Item = (S, TokenId)>) -> Self {
        let mut vocab = Self::default();
        for (piece, id) in pieces {
            let piece = piece.into();
            assert!(id != UNK_ID, "id 0 is reserved for {UNK_PIECE}");
            assert!(!vocab.pieces.contains_key(&id), "id {id} assigned twice");
            assert!(vocab.ids.insert(piece.clone(), id).is_none(), "piece `{piece}` assigned twice");
            vocab.pieces.insert(id, piece);
        }
        vocab
    }

    /// Adds `piece` if missing and returns its id.
    pub fn add(&mut self, piece: &str) -> TokenId {
        if let Some(&id) = self.ids.get(piece) {
            return id;
        }
        let id = self.pieces.keys().next_back().map_or(1, |&last| last + 1);
        self.ids.insert(piece.to_string(), id);
        self.pieces.insert(id, piece.to_string());
        id
    }

    pub fn extend<'a>(&mut self, mode: WhitespaceMode, texts: impl IntoIterator<Item = &'a str>) {
        for text in texts {
            for piece in pre_tokenize(text, mode) {
                self.add(&piece);
            }
        }
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(&id).map(String::as_str)
    }

    /// One past the largest id.
    pub fn size(&self) -> usize {
        self.pieces.keys().next_back().map_or(1, |&last| last as usize + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTokenizer {
    vocab: Vocabulary,
    mode: WhitespaceMode,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary, mode: WhitespaceMode) -> Self {
        Self { vocab, mode }
    }

    /// Tokenizer whose vocabulary covers every piece of `texts`.
    pub fn from_texts<'a>(mode: WhitespaceMode, texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(Vocabulary::from_texts(mode, texts), mode)
    }

    pub fn mode(&self) -> WhitespaceMode {
        self.mode
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Ids of `word` both with and without a glued leading space.
    pub fn word_ids(&self, word: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        for candidate in [word.to_string(), format!("{SPACE_MARKER}{word}")] {
            if let Some(id) = self.vocab.id(&candidate) {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids
    }
}

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        Ok(pre_tokenize(text, self.mode)
            .iter()
            .map(|piece| self.vocab.id(piece).unwrap_or(UNK_ID))
            .collect())
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, BackendError> {
        let mut out = String::new();
        for &id in ids {
            let piece = self
                .vocab
                .piece(id)
                .ok_or(BackendError::UnknownToken { id, vocab: self.vocab.size() })?;
            match self.mode {
                WhitespaceMode::Merge => match piece.strip_prefix(SPACE_MARKER) {
                    Some(rest) => {
                        out.push(' ');
                        out.push_str(rest);
                    }
                    None => out.push_str(piece),
                },
                WhitespaceMode::Drop => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
        Ok(out)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_mode_glues_single_space() {
        assert_eq!(pre_tokenize("Answer: positive", WhitespaceMode::Merge), ["Answer", ":", "Ġpositive"]);
        assert_eq!(pre_tokenize("Answer: ", WhitespaceMode::Merge), ["Answer", ":", " "]);
        assert_eq!(
            pre_tokenize("x\n\nAnswer:  y", WhitespaceMode::Merge),
            ["x", "\n\n", "Answer", ":", " ", "Ġy"]
        );
    }

    #[test]
    fn drop_mode_discards_whitespace() {
        assert_eq!(pre_tokenize("Answer: positive\n\n", WhitespaceMode::Drop), ["Answer", ":", "positive"]);
        assert_eq!(pre_tokenize("'I am'", WhitespaceMode::Drop), ["'", "I", "am", "'"]);
    }

    #[test]
    fn unknown_pieces_map_to_unk() {
        let t = WordTokenizer::from_texts(WhitespaceMode::Drop, ["hello world"]);
        assert_eq!(t.tokenize("hello there").unwrap(), vec![1, UNK_ID]);
        assert_eq!(t.vocab_size(), 3);
    }

    #[test]
    fn merge_mode_detokenize_round_trips() {
        let text = "Sentence: 'I am happy'\nAnswer: positive\n\n";
        let t = WordTokenizer::from_texts(WhitespaceMode::Merge, [text]);
        let ids = t.tokenize(text).unwrap();
        assert_eq!(t.detokenize(&ids).unwrap(), text);
    }

    #[test]
    fn explicit_ids() {
        let v = Vocabulary::from_pieces([("Answer", 20309), (":", 37)]);
        assert_eq!(v.size(), 20310);
        assert_eq!(v.id(":"), Some(37));
        assert_eq!(v.piece(20309), Some("Answer"));
    }

    #[test]
    fn prefix_tokens_are_stable_at_piece_boundaries() {
        let text = "Sentence: 'a b'\nAnswer: positive\n\nSentence: 'c'\nAnswer: negative\n\n";
        for mode in [WhitespaceMode::Drop, WhitespaceMode::Merge] {
            let t = WordTokenizer::from_texts(mode, [text]);
            let full = t.tokenize(text).unwrap();
            for (cut, _) in text.match_indices("Answer:") {
                let prefix = &text[..cut + "Answer:".len()];
                let p = t.tokenize(prefix).unwrap();
                assert_eq!(&full[..p.len()], p.as_slice());
            }
        }
    }
}
