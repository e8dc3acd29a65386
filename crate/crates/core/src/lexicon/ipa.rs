//! Phoneme tokenization of IPA strings.

use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use super::{LanguageSpec, LexiconError};

const TIE_BARS: [char; 2] = ['\u{0361}', '\u{035C}'];

/// Spacing modifier letters that qualify the preceding phone (length,
/// aspiration, secondary articulation, ejective, rhoticity).
const ATTACHING_MODIFIERS: &[char] = &[
    'ː', 'ˑ', 'ʰ', 'ʷ', 'ʲ', 'ˠ', 'ˤ', 'ⁿ', 'ˡ', 'ʼ', 'ˀ', '˞', 'ʱ', 'ᵝ', 'ᶣ',
];

/// Splits an IPA transcription into phoneme tokens, dropping stress marks.
pub fn tokenize_ipa(raw: &str, spec: &LanguageSpec) -> Result<Vec<String>, LexiconError> {
    tokenize_ipa_counted(raw, spec).map(|(tokens, _)| tokens)
}

/// Like [`tokenize_ipa`], also returning how many stress marks were removed.
pub fn tokenize_ipa_counted(
    raw: &str,
    spec: &LanguageSpec,
) -> Result<(Vec<String>, usize), LexiconError> {
    let normalized: String = raw.nfc().collect();
    let mut tokens: Vec<String> = Vec::new();
    let mut stripped = 0;
    let mut separated = true;
    for cluster in normalized.graphemes(true) {
        if cluster.chars().all(char::is_whitespace) {
            separated = true;
            continue;
        }
        let kept: String = cluster
            .chars()
            .filter(|c| {
                let stress = spec.is_stress(*c);
                stripped += usize::from(stress);
                !stress
            })
            .collect();
        if kept.is_empty() {
            continue;
        }
        let joins_previous = match tokens.last() {
            Some(prev) if prev.ends_with(TIE_BARS) => true,
            Some(_) if !separated => kept
                .chars()
                .next()
                .is_some_and(|c| ATTACHING_MODIFIERS.contains(&c)),
            _ => false,
        };
        if joins_previous {
            tokens.last_mut().unwrap().push_str(&kept);
        } else {
            tokens.push(kept);
        }
        separated = false;
    }
    if tokens.is_empty() {
        return Err(LexiconError::EmptyPronunciation(raw.to_string()));
    }
    Ok((tokens, stripped))
}

/// Orthographic graphemes of a word: extended grapheme clusters of its NFC form.
pub fn word_graphemes(word: &str) -> Vec<String> {
    let normalized: String = word.nfc().collect();
    normalized.graphemes(true).map(str::to_string).collect()
}
