#![allow(dead_code)]

use std::path::Path;

use phonostudio::lexicon::FilterReport;

/// Spec used by the planted fixture: lowercase ASCII, stress marks ˈ and ˌ,
/// phonemes must occur at least 3 times, at most 2 phonemes per grapheme.
pub const PLANTED_SPEC: &str = r#"{
  "language_code": "xx",
  "alphabet": "abcdefghijklmnopqrstuvwxyz",
  "stress_symbols": "ˈˌ",
  "phoneme_min_count": 3,
  "length_ratio_max": 2.0
}"#;

const CLEAN: [(&str, &str); 18] = [
    ("pat", "ˈpat"),
    ("tap", "tap"),
    ("apt", "apt"),
    ("tan", "ˈtan"),
    ("ant", "ant"),
    ("nap", "nap"),
    ("pan", "pan"),
    ("tin", "tin"),
    ("nit", "nit"),
    ("pin", "pin"),
    ("kit", "ˌkit"),
    ("tick", "tik"),
    ("skip", "skip"),
    ("sip", "sip"),
    ("kiss", "kis"),
    ("mom", "mom"),
    ("moss", "mos"),
    ("spot", "spot"),
];

/// Violations planted into the clean words, one record each.
const BAD_GRAPHEME: [(&str, &str); 3] = [("café", "kafe"), ("naïve", "naiv"), ("x1", "ks")];
const TOO_LONG: [(&str, &str); 2] = [("at", "patkis"), ("ok", "okatin")];
/// "z" and "u" occur nowhere else, so removing this record leaves every
/// other count untouched.
const RARE: (&str, &str) = ("zoo", "zu");
const DUPLICATES: [(&str, &str); 2] = [("pat", "pat"), ("tan", "ˈtan")];

/// Wiktionary-style TSV with the planted violations interleaved.
pub fn planted_tsv() -> String {
    let mut lines: Vec<(&str, &str)> = CLEAN.to_vec();
    lines.insert(3, BAD_GRAPHEME[0]);
    lines.insert(7, TOO_LONG[0]);
    lines.insert(9, DUPLICATES[0]);
    lines.insert(11, BAD_GRAPHEME[1]);
    lines.insert(13, RARE);
    lines.insert(15, TOO_LONG[1]);
    lines.push(DUPLICATES[1]);
    lines.push(BAD_GRAPHEME[2]);
    lines.iter().map(|(w, p)| format!("{w}\t{p}\n")).collect()
}

/// Report implied by the construction above.
pub fn planted_expected() -> FilterReport {
    let stress = |s: &str| s.chars().filter(|c| "ˈˌ".contains(*c)).count();
    let all = CLEAN
        .iter()
        .chain(&BAD_GRAPHEME)
        .chain(&TOO_LONG)
        .chain([&RARE])
        .chain(&DUPLICATES);
    FilterReport {
        input_records: CLEAN.len() + BAD_GRAPHEME.len() + TOO_LONG.len() + 1 + DUPLICATES.len(),
        removed_bad_grapheme: BAD_GRAPHEME.len(),
        removed_length_ratio: TOO_LONG.len(),
        removed_rare_phoneme: 1,
        collapsed_duplicates: DUPLICATES.len(),
        stress_symbols_stripped: all.map(|(_, p)| stress(p)).sum(),
        surviving_entries: CLEAN.len(),
        surviving_words: CLEAN.len(),
    }
}

pub fn clean_words() -> Vec<&'static str> {
    CLEAN.iter().map(|(w, _)| *w).collect()
}

pub fn write_planted(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = dir.join("spec.json");
    let tsv = dir.join("planted.tsv");
    std::fs::write(&spec, PLANTED_SPEC).unwrap();
    std::fs::write(&tsv, planted_tsv()).unwrap();
    (spec, tsv)
}
