use std::fs;
use std::path::Path;

use phonostudio::lexicon::PhonemeSequence;
use serde::{Deserialize, Serialize};

use crate::StudioError;

/// Separates words on a line of the phonetic sidecar file.
pub const SIDECAR_WORD_SEPARATOR: char = '|';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub index: usize,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    /// One phoneme sequence per whitespace-delimited word of `text`.
    pub phonetic: Option<Vec<PhonemeSequence>>,
}

impl Prompt {
    pub fn words(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }

    pub fn set_phonetic(&mut self, phonetic: Vec<PhonemeSequence>) -> Result<(), StudioError> {
        let n = self.words().len();
        if phonetic.len() != n {
            return Err(StudioError::BadRequest(format!(
                "prompt {} has {n} words but {} transcriptions were given",
                self.index,
                phonetic.len()
            )));
        }
        self.phonetic = Some(phonetic);
        Ok(())
    }
}

/// One prompt per non-blank line.
pub fn parse_prompts(text: &str) -> Result<Vec<Prompt>, StudioError> {
    let prompts: Vec<Prompt> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(index, l)| Prompt {
            index,
            text: l.to_string(),
            phonetic: None,
        })
        .collect();
    if prompts.is_empty() {
        return Err(StudioError::Config("prompt file has no prompts".into()));
    }
    Ok(prompts)
}

/// Attaches a sidecar with one line per prompt; words are separated by `|`
/// and phonemes by whitespace. An empty line leaves the prompt without a
/// transcription.
pub fn attach_sidecar(prompts: &mut [Prompt], sidecar: &str) -> Result<(), StudioError> {
    let mut lines: Vec<&str> = sidecar.lines().map(str::trim).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.len() > prompts.len() {
        return Err(StudioError::Config(format!(
            "phonetic file has {} lines for {} prompts",
            lines.len(),
            prompts.len()
        )));
    }
    for (prompt, line) in prompts.iter_mut().zip(lines) {
        if line.is_empty() {
            continue;
        }
        let words: Vec<PhonemeSequence> = line
            .split(SIDECAR_WORD_SEPARATOR)
            .map(|w| w.split_whitespace().map(String::from).collect())
            .collect();
        prompt
            .set_phonetic(words)
            .map_err(|e| StudioError::Config(format!("phonetic line {}: {e}", prompt.index + 1)))?;
    }
    Ok(())
}

pub fn load_prompts(path: &Path, sidecar: Option<&Path>) -> Result<Vec<Prompt>, StudioError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| StudioError::Config(format!("{}: {e}", p.display())))
    };
    let mut prompts = parse_prompts(&read(path)?)?;
    if let Some(s) = sidecar {
        attach_sidecar(&mut prompts, &read(s)?)?;
    }
    Ok(prompts)
}

pub fn sidecar_line(phonetic: &[PhonemeSequence]) -> String {
    phonetic
        .iter()
        .map(|w| w.join(" "))
        .collect::<Vec<_>>()
        .join(" | ")
}
