//! Mono PCM audio: WAV I/O, peak metering, peak normalization, silence
//! trimming and spectrograms.

mod spectrogram;
mod wav;

use serde::{Deserialize, Serialize};

pub use spectrogram::{compute_spectrogram, hann, Spectrogram, DEFAULT_WINDOW, MAGNITUDE_EPS};
pub use wav::{
    decode_wav, encode_wav, quantize, read_wav, read_wav_file, write_wav, write_wav_file,
};

pub const SUPPORTED_DEPTHS: [u16; 3] = [16, 24, 32];
/// Level reported for digital silence.
pub const SILENCE_FLOOR_DBFS: f64 = -120.0;
pub const DEFAULT_NORMALIZE_DBFS: f64 = -3.0;
pub const DEFAULT_TRIM_THRESHOLD_DBFS: f64 = -40.0;
pub const DEFAULT_GUARD_MS: f64 = 100.0;
pub const DEFAULT_FRAME_MS: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty audio")]
    EmptyAudio,
    #[error("cannot normalize: {0}")]
    Normalize(String),
    #[error("invalid audio parameter: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_bit_depth: u16,
}

impl Waveform {
    /// Rejects samples outside [-1, 1] and a zero sample rate.
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        source_bit_depth: u16,
    ) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::Config("sample rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(AudioError::Config(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_bit_depth,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            source_bit_depth: self.source_bit_depth,
        }
    }
}

fn max_abs(samples: &[f64]) -> f64 {
    samples.iter().fold(0.0, |m, s| m.max(s.abs()))
}

pub fn amplitude_to_dbfs(a: f64) -> f64 {
    if a > 0.0 {
        (20.0 * a.log10()).max(SILENCE_FLOOR_DBFS)
    } else {
        SILENCE_FLOOR_DBFS
    }
}

/// Peak level in dBFS, floored at -120.
pub fn peak_level(wf: &Waveform) -> Result<f64, AudioError> {
    if wf.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    Ok(amplitude_to_dbfs(max_abs(&wf.samples)))
}

/// Uniform gain bringing the peak to `target_dbfs`.
pub fn peak_normalize(wf: &Waveform, target_dbfs: f64) -> Result<Waveform, AudioError> {
    if !(target_dbfs <= 0.0) {
        return Err(AudioError::Normalize(format!(
            "target {target_dbfs} dBFS is above full scale"
        )));
    }
    let peak = max_abs(&wf.samples);
    if peak == 0.0 {
        return Err(AudioError::Normalize("signal is silent".into()));
    }
    let target = 10f64.powf(target_dbfs / 20.0);
    let gain = target / peak;
    let samples = wf
        .samples
        .iter()
        .map(|&s| {
            if s.abs() == peak {
                target.copysign(s)
            } else {
                (s * gain).clamp(-target, target)
            }
        })
        .collect();
    Ok(wf.with_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    pub threshold_dbfs: f64,
    pub guard_ms: f64,
    pub frame_ms: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            threshold_dbfs: DEFAULT_TRIM_THRESHOLD_DBFS,
            guard_ms: DEFAULT_GUARD_MS,
            frame_ms: DEFAULT_FRAME_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub waveform: Waveform,
    /// First retained sample of the input.
    pub start: usize,
    /// One past the last retained sample of the input.
    pub end: usize,
    /// No frame reached the threshold; the output is empty.
    pub silent: bool,
}

/// Removes leading and trailing runs of RMS frames below the threshold,
/// keeping a guard of whole frames around the loud region.
pub fn trim_silence(wf: &Waveform, cfg: &TrimConfig) -> Result<Trimmed, AudioError> {
    if !(cfg.threshold_dbfs < 0.0) || !(cfg.guard_ms >= 0.0) || !(cfg.frame_ms > 0.0) {
        return Err(AudioError::Config(
            "trim needs threshold < 0, guard >= 0, frame > 0".into(),
        ));
    }
    let n = wf.samples.len();
    let frame = ((wf.sample_rate as f64 * cfg.frame_ms / 1000.0).round() as usize).max(1);
    let guard = (cfg.guard_ms / cfg.frame_ms).round() as usize;
    let loud: Vec<bool> = wf
        .samples
        .chunks(frame)
        .map(|c| {
            let rms = (c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64).sqrt();
            amplitude_to_dbfs(rms) >= cfg.threshold_dbfs
        })
        .collect();
    let (Some(first), Some(last)) = (loud.iter().position(|&l| l), loud.iter().rposition(|&l| l))
    else {
        return Ok(Trimmed {
            waveform: wf.with_samples(Vec::new()),
            start: 0,
            end: 0,
            silent: true,
        });
    };
    let start = first.saturating_sub(guard) * frame;
    let end = ((last + 1 + guard) * frame).min(n);
    Ok(Trimmed {
        waveform: wf.with_samples(wf.samples[start..end].to_vec()),
        start,
        end,
        silent: false,
    })
}

/// Exactly `points` (min, max) pairs over equal slices of the signal. When
/// there are fewer samples than points, slices repeat the nearest sample.
pub fn min_max_envelope(samples: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = samples.len();
    (0..points)
        .map(|i| {
            if n == 0 {
                return (0.0, 0.0);
            }
            let lo = i * n / points;
            let hi = ((i + 1) * n / points).max(lo + 1);
            samples[lo..hi]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                })
        })
        .collect()
}
