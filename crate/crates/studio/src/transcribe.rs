use std::collections::{BTreeMap, HashMap};

use phonostudio::lexicon::{normalize_word, Lexicon, PhonemeSequence};
use phonostudio::models::Seq2SeqModel;
use serde::{Deserialize, Serialize};

use crate::StudioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Lexicon,
    Model,
    /// The token was punctuation only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTranscription {
    pub word: String,
    pub phonemes: PhonemeSequence,
    pub provenance: Provenance,
}

struct Language {
    model: Seq2SeqModel,
    /// First pronunciation of each lexicon word.
    lexicon: HashMap<String, PhonemeSequence>,
}

/// Read-only G2P front end shared by concurrent requests.
pub struct Transcriber {
    languages: BTreeMap<String, Language>,
    strip_chars: Vec<char>,
}

impl Transcriber {
    pub fn new(strip_chars: &str) -> Self {
        Self {
            languages: BTreeMap::new(),
            strip_chars: strip_chars.chars().collect(),
        }
    }

    pub fn add_language(&mut self, code: &str, model: Seq2SeqModel, lexicon: Option<&Lexicon>) {
        let lexicon = lexicon
            .map(|lex| {
                lex.entries()
                    .iter()
                    .filter_map(|e| Some((e.word.clone(), e.pronunciations.first()?.clone())))
                    .collect()
            })
            .unwrap_or_default();
        self.languages
            .insert(code.to_string(), Language { model, lexicon });
    }

    pub fn languages(&self) -> Vec<&str> {
        self.languages.keys().map(String::as_str).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    /// One normalized word per whitespace-delimited token: lowercased, with
    /// strip characters removed from both ends. Punctuation-only tokens
    /// become empty strings so positions line up with the input.
    pub fn words(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| normalize_word(t.trim_matches(|c| self.strip_chars.contains(&c))))
            .collect()
    }

    /// Exact lexicon lookup first, greedy model decoding otherwise.
    pub fn transcribe(
        &self,
        text: &str,
        language: &str,
    ) -> Result<Vec<WordTranscription>, StudioError> {
        if self.languages.is_empty() {
            return Err(StudioError::ServiceUnavailable(
                "no G2P model is loaded".into(),
            ));
        }
        let lang = self.languages.get(language).ok_or_else(|| {
            StudioError::NotFound(format!(
                "no model for language {language:?} (loaded: {:?})",
                self.languages()
            ))
        })?;
        let words = self.words(text);
        let mut oov: Vec<&str> = words
            .iter()
            .filter(|w| !w.is_empty() && !lang.lexicon.contains_key(*w))
            .map(String::as_str)
            .collect();
        oov.sort_unstable();
        oov.dedup();
        // Words longer than the model accepts come back empty.
        let (fits, too_long): (Vec<&str>, Vec<&str>) = oov
            .into_iter()
            .partition(|w| lang.model.source_ids(w).is_ok());
        let decoded = lang
            .model
            .greedy_decode_batch(&fits)
            .map_err(|e| StudioError::BadRequest(e.to_string()))?;
        let mut decoded: HashMap<&str, PhonemeSequence> = fits.into_iter().zip(decoded).collect();
        decoded.extend(too_long.into_iter().map(|w| (w, Vec::new())));
        Ok(words
            .iter()
            .map(|w| {
                let (phonemes, provenance) = match lang.lexicon.get(w) {
                    _ if w.is_empty() => (Vec::new(), Provenance::None),
                    Some(p) => (p.clone(), Provenance::Lexicon),
                    None => (decoded[w.as_str()].clone(), Provenance::Model),
                };
                WordTranscription {
                    word: w.clone(),
                    phonemes,
                    provenance,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_STRIP_CHARS;

    #[test]
    fn words_line_up_with_whitespace_tokens() {
        let t = Transcriber::new(DEFAULT_STRIP_CHARS);
        assert_eq!(
            t.words("Cat, cat. — DON'T (well-known)"),
            ["cat", "cat", "", "don't", "well-known"]
        );
        assert_eq!(t.words("  "), Vec::<String>::new());
    }

    #[test]
    fn empty_transcriber_is_unavailable() {
        let t = Transcriber::new("");
        assert!(matches!(
            t.transcribe("a", "en"),
            Err(StudioError::ServiceUnavailable(_))
        ));
    }
}
