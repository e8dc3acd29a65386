use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use phonostudio::audio::{
    compute_spectrogram, decode_wav, encode_wav, min_max_envelope, peak_level, peak_normalize,
    trim_silence, AudioError, TrimConfig, Waveform, DEFAULT_WINDOW,
};
use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::prompts::Prompt;
use crate::StudioError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAX_WAVEFORM_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeCopy {
    pub file: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub prompt_index: usize,
    /// File name inside the storage directory.
    pub file: String,
    pub peak_dbfs: f64,
    pub duration_s: f64,
    pub samples: usize,
    pub sample_rate: u32,
    pub bit_depth: u16,
    pub normalized: bool,
    pub trimmed: bool,
    pub recorded_at: String,
    pub safe_copies: Vec<SafeCopy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordingStatus {
    None,
    Recorded,
    SafeCopied,
}

#[derive(Debug, Clone, Serialize)]
pub struct PromptView<'a> {
    #[serde(flatten)]
    pub prompt: &'a Prompt,
    pub status: RecordingStatus,
    pub recording: Option<&'a RecordingMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformView {
    pub prompt_index: usize,
    pub points: usize,
    /// Number of samples in the stored file.
    pub samples: usize,
    pub sample_rate: u32,
    pub duration_s: f64,
    /// `(min, max)` of each slice.
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    session_id: String,
    config: SessionConfig,
    prompts: Vec<Prompt>,
    recordings: Vec<RecordingMeta>,
}

#[derive(Debug)]
pub struct Session {
    pub session_id: String,
    pub config: SessionConfig,
    pub prompts: Vec<Prompt>,
    pub recordings: BTreeMap<usize, RecordingMeta>,
}

fn now() -> String {
    chrono::Utc::now()
        .format("%Y-%m-%dT%H:%M:%S%.6fZ")
        .to_string()
}

fn atomic_write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), StudioError> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name))
        .map_err(|e| StudioError::Storage(e.to_string()))?;
    Ok(())
}

fn media_error(e: AudioError) -> StudioError {
    StudioError::UnsupportedMedia(e.to_string())
}

impl Session {
    /// Opens the session stored in `config.storage_dir`, resuming recordings
    /// and saved transcriptions from an existing manifest.
    pub fn open(config: SessionConfig, mut prompts: Vec<Prompt>) -> Result<Self, StudioError> {
        config.validate()?;
        config.prepare_storage()?;
        let manifest_path = config.storage_dir.join(MANIFEST_FILE);
        let mut session_id = uuid::Uuid::new_v4().to_string();
        let mut recordings = BTreeMap::new();
        if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path)?;
            let old: Manifest = serde_json::from_str(&text)
                .map_err(|e| StudioError::Config(format!("{}: {e}", manifest_path.display())))?;
            session_id = old.session_id;
            for meta in old.recordings {
                let matches = prompts
                    .get(meta.prompt_index)
                    .is_some_and(|p| p.text == old.prompts[meta.prompt_index].text);
                if matches && config.storage_dir.join(&meta.file).exists() {
                    recordings.insert(meta.prompt_index, meta);
                } else {
                    log::warn!(
                        "dropping stale recording entry for prompt {}",
                        meta.prompt_index
                    );
                }
            }
            for (p, q) in prompts.iter_mut().zip(&old.prompts) {
                if p.phonetic.is_none() && p.text == q.text {
                    p.phonetic = q.phonetic.clone();
                }
            }
        }
        let session = Self {
            session_id,
            config,
            prompts,
            recordings,
        };
        session.write_manifest()?;
        Ok(session)
    }

    pub fn storage_dir(&self) -> &Path {
        &self.config.storage_dir
    }

    pub fn path_of(&self, file: &str) -> PathBuf {
        self.config.storage_dir.join(file)
    }

    /// Replaces the manifest with a complete new copy via rename.
    pub fn write_manifest(&self) -> Result<(), StudioError> {
        let manifest = Manifest {
            session_id: self.session_id.clone(),
            config: self.config.clone(),
            prompts: self.prompts.clone(),
            recordings: self.recordings.values().cloned().collect(),
        };
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| StudioError::Storage(e.to_string()))?;
        atomic_write(self.storage_dir(), MANIFEST_FILE, &json)
    }

    pub fn prompt(&self, i: usize) -> Result<&Prompt, StudioError> {
        self.prompts.get(i).ok_or_else(|| {
            StudioError::NotFound(format!("prompt {i} (session has {})", self.prompts.len()))
        })
    }

    pub fn prompt_mut(&mut self, i: usize) -> Result<&mut Prompt, StudioError> {
        let n = self.prompts.len();
        self.prompts
            .get_mut(i)
            .ok_or_else(|| StudioError::NotFound(format!("prompt {i} (session has {n})")))
    }

    pub fn status(&self, i: usize) -> RecordingStatus {
        match self.recordings.get(&i) {
            None => RecordingStatus::None,
            Some(m) if m.safe_copies.is_empty() => RecordingStatus::Recorded,
            Some(_) => RecordingStatus::SafeCopied,
        }
    }

    pub fn prompt_view(&self, i: usize) -> Result<PromptView<'_>, StudioError> {
        Ok(PromptView {
            prompt: self.prompt(i)?,
            status: self.status(i),
            recording: self.recordings.get(&i),
        })
    }

    pub fn summary(&self) -> serde_json::Value {
        let count = |s: RecordingStatus| {
            (0..self.prompts.len())
                .filter(|&i| self.status(i) == s)
                .count()
        };
        serde_json::json!({
            "session_id": self.session_id,
            "prompt_count": self.prompts.len(),
            "recorded": self.recordings.len(),
            "safe_copied": count(RecordingStatus::SafeCopied),
            "sample_rate": self.config.sample_rate,
            "bit_depth": self.config.bit_depth,
            "auto_trim": self.config.auto_trim,
            "auto_normalize": self.config.auto_normalize,
            "normalize_target_dbfs": self.config.normalize_target_dbfs,
            "trim_threshold_dbfs": self.config.trim_threshold_dbfs,
        })
    }

    pub fn recording(&self, i: usize) -> Result<&RecordingMeta, StudioError> {
        self.prompt(i)?;
        self.recordings
            .get(&i)
            .ok_or_else(|| StudioError::NotFound(format!("no recording for prompt {i}")))
    }

    /// Stores a WAV upload as the prompt's recording, after optional trimming
    /// and normalization. Safe copies of earlier takes are kept.
    pub fn record(&mut self, i: usize, wav: &[u8]) -> Result<RecordingMeta, StudioError> {
        self.prompt(i)?;
        let mut wf = decode_wav(wav).map_err(media_error)?;
        if wf.sample_rate != self.config.sample_rate {
            return Err(StudioError::RateMismatch {
                expected: self.config.sample_rate,
                got: wf.sample_rate,
            });
        }
        if wf.is_empty() {
            return Err(StudioError::UnsupportedMedia(
                "recording has no samples".into(),
            ));
        }
        let mut trimmed = false;
        if self.config.auto_trim {
            let cfg = TrimConfig {
                threshold_dbfs: self.config.trim_threshold_dbfs,
                ..TrimConfig::default()
            };
            let t = trim_silence(&wf, &cfg).map_err(media_error)?;
            // A take with no frame above the threshold is kept whole.
            if !t.silent {
                wf = t.waveform;
                trimmed = true;
            }
        }
        let mut normalized = false;
        if self.config.auto_normalize && wf.samples.iter().any(|&s| s != 0.0) {
            wf = peak_normalize(&wf, self.config.normalize_target_dbfs).map_err(media_error)?;
            normalized = true;
        }
        let bytes = encode_wav(&wf, self.config.bit_depth).map_err(media_error)?;
        let stored = decode_wav(&bytes).map_err(media_error)?;
        let file = format!("{i:05}.wav");
        atomic_write(self.storage_dir(), &file, &bytes)?;
        let safe_copies = self
            .recordings
            .get(&i)
            .map(|m| m.safe_copies.clone())
            .unwrap_or_default();
        let meta = RecordingMeta {
            prompt_index: i,
            file,
            peak_dbfs: peak_level(&stored).map_err(media_error)?,
            duration_s: stored.duration_s(),
            samples: stored.len(),
            sample_rate: stored.sample_rate,
            bit_depth: self.config.bit_depth,
            normalized,
            trimmed,
            recorded_at: now(),
            safe_copies,
        };
        self.recordings.insert(i, meta.clone());
        self.write_manifest()?;
        Ok(meta)
    }

    /// Copies the current take to `{i:05}.safe.{timestamp}.wav`. Existing
    /// files are never overwritten.
    pub fn safe_copy(&mut self, i: usize) -> Result<SafeCopy, StudioError> {
        let current = self.path_of(&self.recording(i)?.file);
        let bytes = fs::read(&current)?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ").to_string();
        let mut attempt = 0;
        let file = loop {
            let name = match attempt {
                0 => format!("{i:05}.safe.{stamp}.wav"),
                n => format!("{i:05}.safe.{stamp}-{n}.wav"),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(self.storage_dir())?;
            tmp.write_all(&bytes)?;
            tmp.as_file().sync_all()?;
            match tmp.persist_noclobber(self.path_of(&name)) {
                Ok(_) => break name,
                Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => attempt += 1,
                Err(e) => return Err(StudioError::Storage(e.error.to_string())),
            }
        };
        let copy = SafeCopy {
            file,
            created_at: now(),
        };
        self.recordings
            .get_mut(&i)
            .expect("checked above")
            .safe_copies
            .push(copy.clone());
        self.write_manifest()?;
        Ok(copy)
    }

    pub fn recording_bytes(&self, i: usize) -> Result<Vec<u8>, StudioError> {
        Ok(fs::read(self.path_of(&self.recording(i)?.file))?)
    }

    pub fn load_recording(&self, i: usize) -> Result<Waveform, StudioError> {
        decode_wav(&self.recording_bytes(i)?).map_err(|e| StudioError::Storage(e.to_string()))
    }

    pub fn waveform(&self, i: usize, points: usize) -> Result<WaveformView, StudioError> {
        if points == 0 || points > MAX_WAVEFORM_POINTS {
            return Err(StudioError::BadRequest(format!(
                "points must be in 1..={MAX_WAVEFORM_POINTS}"
            )));
        }
        let wf = self.load_recording(i)?;
        Ok(WaveformView {
            prompt_index: i,
            points,
            samples: wf.len(),
            sample_rate: wf.sample_rate,
            duration_s: wf.duration_s(),
            pairs: min_max_envelope(&wf.samples, points),
        })
    }

    /// Spectrogram JSON; `hop` defaults to a quarter window.
    pub fn spectrogram(
        &self,
        i: usize,
        window: Option<usize>,
        hop: Option<usize>,
    ) -> Result<serde_json::Value, StudioError> {
        let wf = self.load_recording(i)?;
        let window = window.unwrap_or(DEFAULT_WINDOW);
        let hop = hop.unwrap_or((window / 4).max(1));
        let spec = compute_spectrogram(&wf, window, hop)
            .map_err(|e| StudioError::BadRequest(e.to_string()))?;
        let mut json = spec.to_json();
        json["prompt_index"] = i.into();
        Ok(json)
    }
}
