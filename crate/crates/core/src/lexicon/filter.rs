use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{rebuilt, tally, word_graphemes, IngestStats, Lexicon, LexiconEntry};

/// Outcome of [`apply_filters`]. All counts are (word, pronunciation) pairs
/// except `surviving_words`, so that
/// `surviving_entries = input_records - removed_* - collapsed_duplicates`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_records: usize,
    pub removed_bad_grapheme: usize,
    pub removed_length_ratio: usize,
    pub removed_rare_phoneme: usize,
    pub collapsed_duplicates: usize,
    pub stress_symbols_stripped: usize,
    pub surviving_entries: usize,
    pub surviving_words: usize,
}

impl FilterReport {
    pub fn reconciles(&self) -> bool {
        self.input_records
            == self.surviving_entries
                + self.removed_bad_grapheme
                + self.removed_length_ratio
                + self.removed_rare_phoneme
                + self.collapsed_duplicates
    }
}

/// Removes, in order: entries with graphemes outside the alphabet,
/// pronunciations longer than `length_ratio_max` tokens per grapheme, and
/// pronunciations using a phoneme seen fewer than `phoneme_min_count` times.
///
/// The rare-phoneme rule is repeated until no phoneme falls below the
/// minimum, so the result satisfies the count invariant and a second call is
/// a no-op.
pub fn apply_filters(lex: Lexicon) -> (Lexicon, FilterReport) {
    let spec = lex.spec.clone();
    let IngestStats {
        records_read,
        collapsed_duplicates,
        stress_symbols_stripped,
        ..
    } = lex.ingest;
    let mut report = FilterReport {
        input_records: records_read,
        collapsed_duplicates,
        stress_symbols_stripped,
        ..Default::default()
    };

    let mut entries: Vec<LexiconEntry> = Vec::with_capacity(lex.entries.len());
    for mut entry in lex.entries {
        let graphemes = word_graphemes(&entry.word);
        if graphemes.iter().any(|g| !spec.alphabet.contains(g)) {
            report.removed_bad_grapheme += entry.pronunciations.len();
            continue;
        }
        let cap = spec.length_ratio_max * graphemes.len() as f64;
        let before = entry.pronunciations.len();
        entry.pronunciations.retain(|p| p.len() as f64 <= cap);
        report.removed_length_ratio += before - entry.pronunciations.len();
        if !entry.pronunciations.is_empty() {
            entries.push(entry);
        }
    }

    loop {
        let counts: BTreeMap<String, usize> = tally(&entries);
        let rare = |p: &Vec<String>| p.iter().any(|tok| counts[tok] < spec.phoneme_min_count);
        let mut removed = 0;
        for entry in &mut entries {
            let before = entry.pronunciations.len();
            entry.pronunciations.retain(|p| !rare(p));
            removed += before - entry.pronunciations.len();
        }
        if removed == 0 {
            break;
        }
        report.removed_rare_phoneme += removed;
        entries.retain(|e| !e.pronunciations.is_empty());
    }

    let out = rebuilt(spec, entries);
    report.surviving_entries = out.pronunciation_count();
    report.surviving_words = out.len();
    (out, report)
}
