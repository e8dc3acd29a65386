use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{word_graphemes, Lexicon, LexiconError};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ index bijection with the four specials at indices 0–3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub type GraphemeVocab = Vocab;
pub type PhonemeVocab = Vocab;

impl TryFrom<Vec<String>> for Vocab {
    type Error = LexiconError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..4] != SPECIAL_TOKENS {
            return Err(LexiconError::Vocab(
                "vocabulary must start with the four special tokens".into(),
            ));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(LexiconError::Vocab("duplicate token in vocabulary".into()));
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials followed by `symbols` in sorted order.
    pub fn from_symbols<I: IntoIterator<Item = String>>(symbols: I) -> Self {
        let distinct: BTreeSet<String> = symbols
            .into_iter()
            .filter(|s| !SPECIAL_TOKENS.contains(&s.as_str()))
            .collect();
        let tokens: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(distinct)
            .collect();
        Self::try_from(tokens).expect("specials are distinct")
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

    /// Unknown tokens map to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    /// Drops special ids.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= SPECIAL_TOKENS.len())
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }
}

/// Grapheme and phoneme vocabularies of a lexicon.
pub fn build_vocabularies(lex: &Lexicon) -> Result<(GraphemeVocab, PhonemeVocab), LexiconError> {
    if lex.is_empty() {
        return Err(LexiconError::Vocab("lexicon is empty".into()));
    }
    let graphemes = lex.entries().iter().flat_map(|e| word_graphemes(&e.word));
    let phonemes = lex.phoneme_counts().keys().cloned();
    Ok((
        Vocab::from_symbols(graphemes),
        Vocab::from_symbols(phonemes),
    ))
}
