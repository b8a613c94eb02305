//! Tokenization, vocabulary management and fixed-length input encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledSentence};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Default sequence length at desk scale.
pub const DEFAULT_SEQ_LEN: usize = 32;

/// Splits raw text into tokens. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercases, splits on whitespace and emits every punctuation character
/// as its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasicTokenizer;

impl Tokenizer for BasicTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut current = String::new();
        for ch in text.chars() {
            if ch.is_whitespace() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            } else if ch.is_alphanumeric() {
                current.extend(ch.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }
}

/// Bidirectional token/id map. Ids `0..4` are `[PAD] [UNK] [CLS] [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const CLS_ID: usize = 2;
    pub const SEP_ID: usize = 3;
    const SPECIALS: [&'static str; 4] = [PAD, UNK, CLS, SEP];

    /// Builds a vocabulary from an ordered token list whose first four
    /// entries are the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != Self::SPECIALS {
            return Err(Error::Input(format!(
                "vocabulary must start with {:?}",
                Self::SPECIALS
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// The four specials plus the `max_size - 4` most frequent tokens of
    /// `corpus`; frequency ties are broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize, tokenizer: &dyn Tokenizer) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        if max_size < 5 {
            return Err(Error::Config(format!("vocabulary size {max_size} below minimum 5")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for sentence in corpus {
            for tok in tokenizer.tokenize(sentence.as_ref()) {
                if !Self::SPECIALS.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = Self::SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(max_size - 4).map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Fixed-length id sequence `[CLS] body [SEP] [PAD]...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub token_ids: Vec<usize>,
    /// 1 on real positions, 0 on padding.
    pub segment_ids: Vec<usize>,
    pub true_length: usize,
    pub label: Option<Label>,
}

impl EncodedInput {
    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// Encodes `sentence` to length `seq_len`, truncating the body to
/// `seq_len - 2` tokens. An empty body becomes a single `[UNK]`.
pub fn encode(sentence: &str, vocab: &Vocab, tokenizer: &dyn Tokenizer, seq_len: usize) -> Result<EncodedInput> {
    if seq_len < 2 {
        return Err(Error::Config(format!("sequence length {seq_len} must be at least 2")));
    }
    let mut body: Vec<usize> = tokenizer
        .tokenize(sentence)
        .iter()
        .map(|t| vocab.id(t).unwrap_or(Vocab::UNK_ID))
        .collect();
    if body.is_empty() {
        body.push(Vocab::UNK_ID);
    }
    body.truncate(seq_len - 2);

    let mut token_ids = Vec::with_capacity(seq_len);
    token_ids.push(Vocab::CLS_ID);
    token_ids.extend_from_slice(&body);
    token_ids.push(Vocab::SEP_ID);
    let true_length = token_ids.len();
    token_ids.resize(seq_len, Vocab::PAD_ID);

    let segment_ids = (0..seq_len).map(|i| usize::from(i < true_length)).collect();
    Ok(EncodedInput {
        token_ids,
        segment_ids,
        true_length,
        label: None,
    })
}

/// Encodes labeled sentences, carrying their labels.
pub fn encode_labeled(
    sentences: &[LabeledSentence],
    vocab: &Vocab,
    tokenizer: &dyn Tokenizer,
    seq_len: usize,
) -> Result<Vec<EncodedInput>> {
    sentences
        .iter()
        .map(|s| Ok(encode(&s.text, vocab, tokenizer, seq_len)?.with_label(s.label)))
        .collect()
}

/// Body tokens of an encoded input, without specials or padding.
pub fn decode(input: &EncodedInput, vocab: &Vocab) -> Vec<String> {
    input.token_ids[1..input.true_length.saturating_sub(1)]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK).to_owned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(corpus: &[&str], size: usize) -> Vocab {
        Vocab::build(corpus, size, &BasicTokenizer).unwrap()
    }

    #[test]
    fn frequency_ranked_vocab() {
        let v = vocab_of(&["a a b"], 6);
        assert_eq!(v.tokens(), &[PAD, UNK, CLS, SEP, "a", "b"]);
    }

    #[test]
    fn single_token_vocab() {
        let v = vocab_of(&["x"], 5);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("x"), Some(4));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            Vocab::build(&empty, 10, &BasicTokenizer),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = vocab_of(&["b a c c"], 6);
        assert_eq!(v.tokens()[4..], ["c", "a"]);
    }

    #[test]
    fn encode_short_sentence() {
        let v = vocab_of(&["a b"], 10);
        let e = encode("a b", &v, &BasicTokenizer, 5).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(e.token_ids, vec![Vocab::CLS_ID, a, b, Vocab::SEP_ID, Vocab::PAD_ID]);
        assert_eq!(e.true_length, 4);
        assert_eq!(e.segment_ids, vec![1, 1, 1, 1, 0]);
    }

    #[test]
    fn encode_truncates_body() {
        let long = vec!["w"; 100].join(" ");
        let v = vocab_of(&[long.as_str()], 10);
        let e = encode(&long, &v, &BasicTokenizer, 10).unwrap();
        assert_eq!(e.true_length, 10);
        assert_eq!(decode(&e, &v).len(), 8);
        assert_eq!(e.token_ids[9], Vocab::SEP_ID);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = vocab_of(&["a"], 10);
        let e = encode("zzz", &v, &BasicTokenizer, 6).unwrap();
        assert_eq!(e.token_ids[1], Vocab::UNK_ID);
    }

    #[test]
    fn empty_sentence_gets_unk_body() {
        let v = vocab_of(&["a"], 10);
        let e = encode("   ", &v, &BasicTokenizer, 4).unwrap();
        assert_eq!(e.token_ids, vec![Vocab::CLS_ID, Vocab::UNK_ID, Vocab::SEP_ID, Vocab::PAD_ID]);
    }

    #[test]
    fn seq_len_below_two_is_a_config_error() {
        let v = vocab_of(&["a"], 10);
        assert!(matches!(encode("a", &v, &BasicTokenizer, 1), Err(Error::Config(_))));
    }

    #[test]
    fn punctuation_is_split() {
        let toks = BasicTokenizer.tokenize("The U.S. loses, millions!");
        assert_eq!(toks, ["the", "u", ".", "s", ".", "loses", ",", "millions", "!"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = vocab_of(&["the cat sat on the mat"], 20);
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }
}
