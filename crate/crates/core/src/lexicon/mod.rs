//! Pronunciation lexicons: ingestion, cleaning, filtering and splitting.
//!
//! Two input formats are supported. Wiktionary extracts are UTF-8 files of
//! `word<TAB>ipa` lines, one pronunciation per line; repeated words collect
//! several pronunciations. CMUdict 0.7b files are `WORD  PH1 PH2 ...` lines
//! with `WORD(n)` variant markers and vowel stress digits.

mod filter;
mod ipa;
pub mod toy;
mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use filter::{apply_filters, FilterReport};
pub use ipa::{tokenize_ipa, tokenize_ipa_counted, word_graphemes};
pub use vocab::{
    build_vocabularies, GraphemeVocab, PhonemeVocab, Vocab, EOS, PAD, SOS, SPECIAL_TOKENS, UNK,
};

/// Ordered phoneme tokens of one pronunciation.
pub type PhonemeSequence = Vec<String>;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("pronunciation is empty after stripping: {0:?}")]
    EmptyPronunciation(String),
    #[error("cannot split lexicon: {0}")]
    Split(String),
    #[error("cannot build vocabulary: {0}")]
    Vocab(String),
    #[error("invalid language spec: {0}")]
    InvalidSpec(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    WiktionaryTsv,
    Cmudict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    #[serde(rename = "prons")]
    pub pronunciations: Vec<PhonemeSequence>,
    pub source: Source,
}

pub const DEFAULT_PHONEME_MIN_COUNT: usize = 100;
pub const DEFAULT_LENGTH_RATIO_MAX: f64 = 2.5;

/// Per-language cleaning rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LanguageSpecFile", into = "LanguageSpecFile")]
pub struct LanguageSpec {
    pub language_code: String,
    pub alphabet: BTreeSet<String>,
    pub stress_symbols: BTreeSet<char>,
    pub phoneme_min_count: usize,
    pub length_ratio_max: f64,
}

/// On-disk form: alphabet and stress symbols as plain strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LanguageSpecFile {
    language_code: String,
    alphabet: String,
    #[serde(default)]
    stress_symbols: String,
    #[serde(default = "default_min_count")]
    phoneme_min_count: usize,
    #[serde(default = "default_ratio")]
    length_ratio_max: f64,
}

fn default_min_count() -> usize {
    DEFAULT_PHONEME_MIN_COUNT
}

fn default_ratio() -> f64 {
    DEFAULT_LENGTH_RATIO_MAX
}

impl TryFrom<LanguageSpecFile> for LanguageSpec {
    type Error = LexiconError;

    fn try_from(f: LanguageSpecFile) -> Result<Self, Self::Error> {
        let mut spec = LanguageSpec::new(&f.language_code, &f.alphabet, &f.stress_symbols)?;
        spec.phoneme_min_count = f.phoneme_min_count;
        spec.length_ratio_max = f.length_ratio_max;
        spec.validate()?;
        Ok(spec)
    }
}

impl From<LanguageSpec> for LanguageSpecFile {
    fn from(s: LanguageSpec) -> Self {
        Self {
            language_code: s.language_code,
            alphabet: s.alphabet.into_iter().collect(),
            stress_symbols: s.stress_symbols.into_iter().collect(),
            phoneme_min_count: s.phoneme_min_count,
            length_ratio_max: s.length_ratio_max,
        }
    }
}

impl LanguageSpec {
    /// Spec with default thresholds. The alphabet is lowercased and split into graphemes.
    pub fn new(
        language_code: &str,
        alphabet: &str,
        stress_symbols: &str,
    ) -> Result<Self, LexiconError> {
        let alphabet = word_graphemes(&alphabet.to_lowercase())
            .into_iter()
            .filter(|g| !g.trim().is_empty())
            .collect();
        let spec = Self {
            language_code: language_code.to_string(),
            alphabet,
            stress_symbols: stress_symbols
                .chars()
                .filter(|c| !c.is_whitespace())
                .collect(),
            phoneme_min_count: DEFAULT_PHONEME_MIN_COUNT,
            length_ratio_max: DEFAULT_LENGTH_RATIO_MAX,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rules for CMUdict: letters plus apostrophe, no phoneme or length filtering.
    pub fn cmudict() -> Self {
        let mut spec =
            Self::new("en", "abcdefghijklmnopqrstuvwxyz'", "").expect("valid builtin spec");
        spec.phoneme_min_count = 1;
        spec.length_ratio_max = 10.0;
        spec
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        if self.alphabet.is_empty() {
            return Err(LexiconError::InvalidSpec("alphabet is empty".into()));
        }
        if self.phoneme_min_count < 1 {
            return Err(LexiconError::InvalidSpec(
                "phoneme_min_count must be at least 1".into(),
            ));
        }
        if !(self.length_ratio_max > 1.0) {
            return Err(LexiconError::InvalidSpec(format!(
                "length_ratio_max must exceed 1, got {}",
                self.length_ratio_max
            )));
        }
        Ok(())
    }

    pub fn is_stress(&self, c: char) -> bool {
        self.stress_symbols.contains(&c)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.into(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Bookkeeping carried from ingestion into the first [`apply_filters`] report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub records_read: usize,
    pub collapsed_duplicates: usize,
    pub stress_symbols_stripped: usize,
    /// Lines rejected outright by the format's word rules (CMUdict only).
    pub discarded_at_ingest: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub spec: LanguageSpec,
    entries: Vec<LexiconEntry>,
    phoneme_counts: BTreeMap<String, usize>,
    ingest: IngestStats,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    spec: LanguageSpec,
    entries: Vec<LexiconEntry>,
}

fn tally(entries: &[LexiconEntry]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for p in entries.iter().flat_map(|e| &e.pronunciations).flatten() {
        *counts.entry(p.clone()).or_insert(0) += 1;
    }
    counts
}

impl Lexicon {
    /// Builds a lexicon from entries, collapsing repeated words and identical
    /// pronunciations and dropping empty ones.
    pub fn from_entries(
        spec: LanguageSpec,
        entries: impl IntoIterator<Item = LexiconEntry>,
    ) -> Self {
        let mut builder = Builder::default();
        for e in entries {
            for p in e.pronunciations {
                builder.add(&e.word, p, e.source);
            }
        }
        builder.finish(spec, 0)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn phoneme_counts(&self) -> &BTreeMap<String, usize> {
        &self.phoneme_counts
    }

    pub fn ingest_stats(&self) -> IngestStats {
        self.ingest
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of (word, pronunciation) pairs.
    pub fn pronunciation_count(&self) -> usize {
        self.entries.iter().map(|e| e.pronunciations.len()).sum()
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        let key = normalize_word(word);
        self.entries.iter().find(|e| e.word == key)
    }

    /// Index from word to entry, for repeated lookups.
    pub fn word_index(&self) -> HashMap<&str, &LexiconEntry> {
        self.entries.iter().map(|e| (e.word.as_str(), e)).collect()
    }

    /// First `n` entries (or all), keeping spec.
    pub fn truncated(&self, n: usize) -> Lexicon {
        Lexicon::from_entries(self.spec.clone(), self.entries.iter().take(n).cloned())
    }

    pub fn to_json(&self) -> Result<String, LexiconError> {
        let file = LexiconFile {
            spec: self.spec.clone(),
            entries: self.entries.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(text)?;
        Ok(Self::from_entries(file.spec, file.entries))
    }

    pub fn load_json(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn with_entries(&self, entries: Vec<LexiconEntry>) -> Lexicon {
        rebuilt(self.spec.clone(), entries)
    }
}

/// Lexicon over already-clean entries; ingestion stats restart at the pair count.
fn rebuilt(spec: LanguageSpec, entries: Vec<LexiconEntry>) -> Lexicon {
    let phoneme_counts = tally(&entries);
    let pairs = entries.iter().map(|e| e.pronunciations.len()).sum();
    Lexicon {
        spec,
        entries,
        phoneme_counts,
        ingest: IngestStats {
            records_read: pairs,
            ..Default::default()
        },
    }
}

/// Lowercased NFC form used for every stored word.
pub fn normalize_word(word: &str) -> String {
    word.trim().to_lowercase().nfc().collect()
}

#[derive(Default)]
struct Builder {
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
    records: usize,
    collapsed: usize,
    discarded: usize,
}

impl Builder {
    fn add(&mut self, word: &str, pron: PhonemeSequence, source: Source) {
        if pron.is_empty() || word.is_empty() {
            return;
        }
        self.records += 1;
        let idx = *self.index.entry(word.to_string()).or_insert_with(|| {
            self.entries.push(LexiconEntry {
                word: word.to_string(),
                pronunciations: Vec::new(),
                source,
            });
            self.entries.len() - 1
        });
        let entry = &mut self.entries[idx];
        if entry.pronunciations.contains(&pron) {
            self.collapsed += 1;
        } else {
            entry.pronunciations.push(pron);
        }
    }

    fn finish(self, spec: LanguageSpec, stress_stripped: usize) -> Lexicon {
        let phoneme_counts = tally(&self.entries);
        Lexicon {
            spec,
            entries: self.entries,
            phoneme_counts,
            ingest: IngestStats {
                records_read: self.records,
                collapsed_duplicates: self.collapsed,
                stress_symbols_stripped: stress_stripped,
                discarded_at_ingest: self.discarded,
            },
        }
    }
}

fn open(path: &Path) -> Result<fs::File, LexiconError> {
    fs::File::open(path).map_err(|source| LexiconError::Io {
        path: path.into(),
        source,
    })
}

/// Loads `word<TAB>ipa` lines. Blank lines are skipped.
pub fn load_wiktionary_tsv(path: &Path, spec: &LanguageSpec) -> Result<Lexicon, LexiconError> {
    let reader = BufReader::new(open(path)?);
    parse_wiktionary_tsv(reader, spec).map_err(|e| match e {
        LexiconError::Io { source, .. } => LexiconError::Io {
            path: path.into(),
            source,
        },
        other => other,
    })
}

pub fn parse_wiktionary_tsv<R: BufRead>(
    reader: R,
    spec: &LanguageSpec,
) -> Result<Lexicon, LexiconError> {
    let mut builder = Builder::default();
    let mut stripped = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| LexiconError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(LexiconError::Parse {
                line: n + 1,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let word = normalize_word(fields[0]);
        if word.is_empty() {
            return Err(LexiconError::Parse {
                line: n + 1,
                message: "empty word".into(),
            });
        }
        let (pron, s) = tokenize_ipa_counted(fields[1], spec).map_err(|e| LexiconError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        stripped += s;
        builder.add(&word, pron, Source::WiktionaryTsv);
    }
    Ok(builder.finish(spec.clone(), stripped))
}

/// Loads a CMUdict 0.7b file, discarding words with digits or symbols other
/// than the apostrophe and removing vowel stress digits.
pub fn load_cmudict(path: &Path) -> Result<Lexicon, LexiconError> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|source| LexiconError::Io {
            path: path.into(),
            source,
        })?;
    // 0.7b contains a handful of Latin-1 bytes; those words are discarded anyway.
    Ok(parse_cmudict(&String::from_utf8_lossy(&bytes)))
}

pub fn parse_cmudict(text: &str) -> Lexicon {
    let mut builder = Builder::default();
    let mut stripped = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;;") {
            continue;
        }
        let mut parts = line.split_whitespace();
        let Some(head) = parts.next() else { continue };
        let word = strip_variant_marker(head).to_lowercase();
        if word.is_empty() || !word.chars().all(|c| c.is_ascii_lowercase() || c == '\'') {
            builder.discarded += 1;
            continue;
        }
        let pron: Vec<String> = parts
            .map(|p| {
                let base = p.trim_end_matches(|c: char| c.is_ascii_digit());
                stripped += p.len() - base.len();
                base.to_string()
            })
            .collect();
        builder.add(&word, pron, Source::Cmudict);
    }
    builder.finish(LanguageSpec::cmudict(), stripped)
}

fn strip_variant_marker(head: &str) -> &str {
    match head.rfind('(') {
        Some(i)
            if head.ends_with(')')
                && head[i + 1..head.len() - 1]
                    .chars()
                    .all(|c| c.is_ascii_digit())
                && i > 0 =>
        {
            &head[..i]
        }
        _ => head,
    }
}

/// Seeded entry-level split. Returns `(train, test)`.
pub fn split_train_test(
    lex: &Lexicon,
    test_fraction: f64,
    seed: u64,
) -> Result<(Lexicon, Lexicon), LexiconError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(LexiconError::Split(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = lex.len();
    if n < 2 {
        return Err(LexiconError::Split(format!(
            "need at least 2 entries, have {n}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (i, e) in lex.entries.iter().enumerate() {
        if test_ids.contains(&i) {
            test.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((lex.with_entries(train), lex.with_entries(test)))
}
