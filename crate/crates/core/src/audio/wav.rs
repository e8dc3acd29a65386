//! RIFF/WAVE PCM codec for 16, 24 and 32-bit integer samples.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AudioError, Waveform, SUPPORTED_DEPTHS};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn format_err(msg: impl Into<String>) -> AudioError {
    AudioError::Format(msg.into())
}

fn truncated(what: &str) -> AudioError {
    AudioError::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("truncated {what}"),
    ))
}

struct Fmt {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Fmt, AudioError> {
    if body.len() < 16 {
        return Err(format_err("fmt chunk shorter than 16 bytes"));
    }
    let mut format = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if format == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(format_err("extensible fmt chunk too short"));
        }
        // First two bytes of the sub-format GUID carry the format tag.
        format = u16_at(body, 24);
    }
    if format != FORMAT_PCM {
        return Err(format_err(format!(
            "format tag {format} is not integer PCM"
        )));
    }
    if !SUPPORTED_DEPTHS.contains(&bits) {
        return Err(format_err(format!("unsupported bit depth {bits}")));
    }
    if channels == 0 || sample_rate == 0 {
        return Err(format_err("zero channels or sample rate"));
    }
    Ok(Fmt {
        channels,
        sample_rate,
        bits,
    })
}

fn decode_sample(b: &[u8], bits: u16) -> i32 {
    match bits {
        16 => i16::from_le_bytes([b[0], b[1]]) as i32,
        24 => i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8,
        _ => i32::from_le_bytes([b[0], b[1], b[2], b[3]]),
    }
}

/// Decodes a complete WAV file held in memory. Multi-channel input keeps
/// channel 0.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    if bytes.len() < 12 {
        return Err(truncated("RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .ok_or_else(|| format_err("chunk size overflow"))?;
        if id == b"data" {
            let f = fmt.ok_or_else(|| format_err("data chunk before fmt chunk"))?;
            if end > bytes.len() {
                return Err(truncated("data chunk"));
            }
            return decode_data(&bytes[start..end], &f);
        }
        if end > bytes.len() {
            return Err(truncated("chunk"));
        }
        if id == b"fmt " {
            fmt = Some(parse_fmt(&bytes[start..end])?);
        }
        pos = end + (size & 1);
    }
    match fmt {
        Some(_) => Err(truncated("file: no data chunk")),
        None => Err(truncated("file: no fmt chunk")),
    }
}

fn decode_data(data: &[u8], f: &Fmt) -> Result<Waveform, AudioError> {
    let width = (f.bits / 8) as usize;
    let frame = width * f.channels as usize;
    if data.len() % frame != 0 {
        return Err(truncated("sample frame"));
    }
    if f.channels > 1 {
        log::warn!("{}-channel audio: keeping channel 0", f.channels);
    }
    let scale = (1u64 << (f.bits - 1)) as f64;
    let samples = data
        .chunks_exact(frame)
        .map(|fr| decode_sample(&fr[..width], f.bits) as f64 / scale)
        .collect();
    Waveform::new(samples, f.sample_rate, f.bits)
}

pub fn read_wav<R: Read>(mut r: R) -> Result<Waveform, AudioError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

pub fn read_wav_file(path: &Path) -> Result<Waveform, AudioError> {
    read_wav(BufReader::new(File::open(path)?))
}

/// Integer code of a sample: scaled by 2^(depth-1), rounded half away from
/// zero, saturated to the representable range.
pub fn quantize(sample: f64, bits: u16) -> i32 {
    let scale = (1i64 << (bits - 1)) as f64;
    let v = (sample * scale).round();
    v.clamp(-scale, scale - 1.0) as i32
}

pub fn encode_wav(wf: &Waveform, bits: u16) -> Result<Vec<u8>, AudioError> {
    if !SUPPORTED_DEPTHS.contains(&bits) {
        return Err(format_err(format!("unsupported bit depth {bits}")));
    }
    let width = (bits / 8) as u32;
    let data_len = wf.samples.len() as u64 * width as u64;
    if data_len + 36 > u32::MAX as u64 {
        return Err(format_err("audio too long for a RIFF container"));
    }
    let data_len = data_len as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wf.sample_rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wf.samples {
        let q = quantize(s, bits).to_le_bytes();
        match bits {
            16 => out.extend_from_slice(&q[..2]),
            24 => out.extend_from_slice(&q[..3]),
            _ => out.extend_from_slice(&q),
        }
    }
    Ok(out)
}

pub fn write_wav<W: Write>(mut w: W, wf: &Waveform, bits: u16) -> Result<(), AudioError> {
    w.write_all(&encode_wav(wf, bits)?)?;
    Ok(())
}

pub fn write_wav_file(path: &Path, wf: &Waveform, bits: u16) -> Result<(), AudioError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_wav(&mut w, wf, bits)?;
    w.flush()?;
    Ok(())
}
