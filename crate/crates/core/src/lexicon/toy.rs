//! Deterministic synthetic lexicon with a small, context-sensitive spelling
//! system. Used for fixtures, smoke runs and overfit checks.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LanguageSpec, Lexicon, LexiconEntry, Source};

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "sh", "th", "ph",
    "",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ee", "oo", "ai"];
const CODAS: &[&str] = &["", "", "", "n", "s", "t", "x", "ng", "ck", "l"];

/// Phonemic transcription of a spelling under the toy rules.
pub fn transcribe(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        let pair = next.map(|n| (c, n));
        let (phones, used): (&[&str], usize) = match pair {
            Some(('c', 'h')) => (&["tʃ"], 2),
            Some(('s', 'h')) => (&["ʃ"], 2),
            Some(('t', 'h')) => (&["θ"], 2),
            Some(('p', 'h')) => (&["f"], 2),
            Some(('n', 'g')) => (&["ŋ"], 2),
            Some(('c', 'k')) => (&["k"], 2),
            Some(('e', 'e')) => (&["iː"], 2),
            Some(('o', 'o')) => (&["uː"], 2),
            Some(('a', 'i')) => (&["aɪ"], 2),
            _ => match c {
                'c' if matches!(next, Some('e' | 'i')) => (&["s"], 1),
                'c' => (&["k"], 1),
                'g' if matches!(next, Some('e' | 'i')) => (&["dʒ"], 1),
                'x' => (&["k", "s"], 1),
                'e' if next.is_none() && i > 1 => (&[], 1),
                'a' => (&["æ"], 1),
                'e' => (&["ɛ"], 1),
                'i' => (&["ɪ"], 1),
                'o' => (&["ɒ"], 1),
                'u' => (&["ʌ"], 1),
                'r' => (&["ɹ"], 1),
                _ => {
                    out.push(match c {
                        'b' => "b",
                        'd' => "d",
                        'f' => "f",
                        'g' => "g",
                        'k' => "k",
                        'l' => "l",
                        'm' => "m",
                        'n' => "n",
                        'p' => "p",
                        's' => "s",
                        't' => "t",
                        'v' => "v",
                        _ => "ʔ",
                    });
                    i += 1;
                    continue;
                }
            },
        };
        out.extend_from_slice(phones);
        i += used;
    }
    out.into_iter().map(String::from).collect()
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
    w
}

pub fn toy_spec() -> LanguageSpec {
    let mut spec =
        LanguageSpec::new("tx", "abcdefghijklmnopqrstuvwxyz", "ˈˌ").expect("valid toy spec");
    spec.phoneme_min_count = 1;
    spec
}

/// `n` distinct words of at most `max_len` letters with their toy transcriptions.
pub fn toy_lexicon(n: usize, max_len: usize, seed: u64) -> Lexicon {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(n);
    let mut attempts = 0;
    while entries.len() < n && attempts < n * 1000 {
        attempts += 1;
        let w = random_word(&mut rng);
        if w.len() > max_len || w.len() < 2 || !seen.insert(w.clone()) {
            continue;
        }
        let pron = transcribe(&w);
        if pron.is_empty() {
            continue;
        }
        entries.push(LexiconEntry {
            word: w,
            pronunciations: vec![pron],
            source: Source::WiktionaryTsv,
        });
    }
    Lexicon::from_entries(toy_spec(), entries)
}
