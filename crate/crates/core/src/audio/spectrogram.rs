use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioError, Waveform};

pub const DEFAULT_WINDOW: usize = 512;
/// Added to magnitudes before taking the log; sets the silence floor at -200 dB.
pub const MAGNITUDE_EPS: f64 = 1e-10;

/// Magnitude STFT in dB, stored row-major as `frames x bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub db: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.db[i * self.bins..(i + 1) * self.bins]
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.window_size as f64
    }

    pub fn frame_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Bin with the largest magnitude in frame `i` (lowest index on ties).
    pub fn peak_bin(&self, i: usize) -> usize {
        let row = self.frame(i);
        (0..self.bins).fold(0, |best, b| if row[b] > row[best] { b } else { best })
    }

    /// JSON with axis metadata and the dB matrix as nested rows.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<&[f64]> = (0..self.frames).map(|i| self.frame(i)).collect();
        serde_json::json!({
            "frames": self.frames,
            "bins": self.bins,
            "window_size": self.window_size,
            "hop": self.hop,
            "sample_rate": self.sample_rate,
            "bin_hz": self.bin_hz(),
            "frame_seconds": self.frame_seconds(),
            "db": rows,
        })
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn compute_spectrogram(
    wf: &Waveform,
    window: usize,
    hop: usize,
) -> Result<Spectrogram, AudioError> {
    if window < 2 || !window.is_power_of_two() {
        return Err(AudioError::Config(format!(
            "window {window} is not a power of two"
        )));
    }
    if hop == 0 || hop > window {
        return Err(AudioError::Config(format!(
            "hop {hop} outside 1..={window}"
        )));
    }
    let bins = window / 2 + 1;
    let n = wf.samples.len();
    let frames = if n >= window {
        (n - window) / hop + 1
    } else {
        0
    };
    let taper = hann(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut db = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let chunk = &wf.samples[f * hop..f * hop + window];
        for ((slot, &s), &w) in buf.iter_mut().zip(chunk).zip(&taper) {
            *slot = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        db.extend(
            buf[..bins]
                .iter()
                .map(|c| 20.0 * (c.norm() + MAGNITUDE_EPS).log10()),
        );
    }
    Ok(Spectrogram {
        frames,
        bins,
        window_size: window,
        hop,
        sample_rate: wf.sample_rate,
        db,
    })
}
