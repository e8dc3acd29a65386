//! Levenshtein distance and word/phoneme error rates.
//!
//! Words with several reference pronunciations are scored against the
//! reference closest to the hypothesis. WER counts words whose hypothesis
//! matches no reference exactly; PER is the summed minimum edit distance over
//! the summed length of the chosen references.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lexicon::PhonemeSequence;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("word {0:?} has no reference pronunciation")]
    NoReference(String),
    #[error("cannot aggregate an empty set of scores")]
    Empty,
}

/// Unit-cost edit distance over tokens.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, x) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Closest reference to `hypothesis`. Ties go to the shorter reference, then
/// to the lexicographically smaller token sequence.
pub fn score_word<'r>(
    hypothesis: &[String],
    references: &'r [PhonemeSequence],
) -> Result<(usize, &'r PhonemeSequence), MetricsError> {
    references
        .iter()
        .map(|r| (levenshtein(hypothesis, r), r))
        .min_by(|(da, ra), (db, rb)| {
            da.cmp(db)
                .then(ra.len().cmp(&rb.len()))
                .then_with(|| ra.cmp(rb))
        })
        .ok_or_else(|| MetricsError::NoReference(hypothesis.join(" ")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    pub hypothesis: PhonemeSequence,
    pub best_reference: PhonemeSequence,
    pub edit_distance: usize,
}

impl WordScore {
    pub fn new(
        word: &str,
        hypothesis: PhonemeSequence,
        references: &[PhonemeSequence],
    ) -> Result<Self, MetricsError> {
        let (edit_distance, best) = score_word(&hypothesis, references)
            .map_err(|_| MetricsError::NoReference(word.to_string()))?;
        Ok(Self {
            word: word.to_string(),
            best_reference: best.clone(),
            hypothesis,
            edit_distance,
        })
    }
}

/// Aggregate error rates, both in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub per: f64,
    pub n_words: usize,
    pub per_word: Vec<WordScore>,
}

pub fn aggregate(scored: Vec<WordScore>) -> Result<EvalReport, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::Empty);
    }
    let wrong = scored.iter().filter(|s| s.edit_distance > 0).count();
    let edits: usize = scored.iter().map(|s| s.edit_distance).sum();
    let ref_len: usize = scored.iter().map(|s| s.best_reference.len()).sum();
    let per = if ref_len == 0 {
        0.0
    } else {
        100.0 * edits as f64 / ref_len as f64
    };
    Ok(EvalReport {
        wer: 100.0 * wrong as f64 / scored.len() as f64,
        per,
        n_words: scored.len(),
        per_word: scored,
    })
}

impl EvalReport {
    /// Aligned text table: a WER/PER summary followed by the mis-transcribed words.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>8}",
            "model", "words", "WER", "PER"
        );
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8.2} {:>8.2}",
            label, self.n_words, self.wer, self.per
        );
        let errors: Vec<&WordScore> = self
            .per_word
            .iter()
            .filter(|s| s.edit_distance > 0)
            .collect();
        if !errors.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<20} {:<28} {:<28} {:>4}",
                "word", "hypothesis", "reference", "dist"
            );
            for s in errors {
                let _ = writeln!(
                    out,
                    "{:<20} {:<28} {:<28} {:>4}",
                    s.word,
                    s.hypothesis.join(" "),
                    s.best_reference.join(" "),
                    s.edit_distance
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(&seq("k æ t"), &seq("k æ t")), 0);
        assert_eq!(levenshtein(&seq(""), &seq("a b c")), 3);
        assert_eq!(levenshtein(&seq("k a t"), &seq("k æ t s")), 2);
        assert_eq!(levenshtein(&seq("t͡ʃ a"), &seq("t ʃ a")), 2);
    }

    #[test]
    fn score_word_picks_matching_variant() {
        let refs = vec![seq("a b"), seq("k æ t"), seq("x y z")];
        assert_eq!(score_word(&seq("k æ t"), &refs).unwrap(), (0, &refs[1]));
        let refs = vec![seq("a b"), seq("a b c")];
        assert_eq!(score_word(&seq("a b c"), &refs).unwrap(), (0, &refs[1]));
    }

    #[test]
    fn score_word_tie_break_is_deterministic() {
        let refs = vec![seq("k o t"), seq("k a t")];
        let (d, r) = score_word(&seq("k u t"), &refs).unwrap();
        assert_eq!(d, 1);
        assert_eq!(r, &seq("k a t"));
        let rev: Vec<_> = refs.iter().rev().cloned().collect();
        assert_eq!(score_word(&seq("k u t"), &rev).unwrap().1, &seq("k a t"));
        // shorter reference wins before token order
        let refs = vec![seq("a a x"), seq("b x")];
        assert_eq!(score_word(&seq("x"), &refs).unwrap().1, &seq("b x"));
    }

    #[test]
    fn score_word_requires_references() {
        assert!(matches!(
            score_word(&seq("a"), &[]),
            Err(MetricsError::NoReference(_))
        ));
    }

    fn ws(dist_refs: &[(usize, usize)]) -> Vec<WordScore> {
        dist_refs
            .iter()
            .enumerate()
            .map(|(i, &(d, len))| WordScore {
                word: format!("w{i}"),
                hypothesis: vec![],
                best_reference: vec!["a".into(); len],
                edit_distance: d,
            })
            .collect()
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate(ws(&[(0, 3), (0, 4)])).unwrap();
        assert_eq!((r.wer, r.per), (0.0, 0.0));
        let r = aggregate(ws(&[(1, 5), (0, 5), (0, 5), (0, 5)])).unwrap();
        assert_eq!((r.wer, r.per), (25.0, 5.0));
        let r = aggregate(ws(&[(4, 4)])).unwrap();
        assert_eq!((r.wer, r.per), (100.0, 100.0));
        assert_eq!(aggregate(vec![]), Err(MetricsError::Empty));
    }

    #[test]
    fn table_lists_errors() {
        let scored = vec![WordScore::new("cat", seq("k a t"), &[seq("k æ t")]).unwrap()];
        let t = aggregate(scored).unwrap().to_table("cnn");
        assert!(t.contains("100.00"));
        assert!(t.contains("k æ t"));
    }
}
