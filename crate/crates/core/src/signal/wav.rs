//! RIFF PCM WAV read/write: mono, 16-bit little-endian, 16 kHz.

use super::Waveform;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const REQUIRED_RATE: u32 = 16000;

/// Write samples as 16-bit PCM. Values are clamped to [-1, 1] and scaled by
/// 32767 so a full-scale signal survives the round trip.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let mut bytes = Vec::with_capacity(44 + 2 * w.samples.len());
    let data_len = (2 * w.samples.len()) as u32;
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&w.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let clipped = s.clamp(-1.0, 1.0);
        let q = (clipped * 32767.0).round() as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if *at + n > buf.len() {
        return Err(Error::Parse(format!("truncated WAV: expected {what}")));
    }
    let out = &buf[*at..*at + n];
    *at += n;
    Ok(out)
}

fn u16le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn u32le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Load a mono 16-bit 16 kHz PCM WAV, scaling samples by 1/32768.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut at = 0usize;
    if take(&buf, &mut at, 4, "RIFF tag")? != b"RIFF" {
        return Err(Error::Parse("not a RIFF file".into()));
    }
    take(&buf, &mut at, 4, "RIFF size")?;
    if take(&buf, &mut at, 4, "WAVE tag")? != b"WAVE" {
        return Err(Error::Parse("not a WAVE file".into()));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while at < buf.len() {
        let id = take(&buf, &mut at, 4, "chunk id")?.to_vec();
        let size = u32le(take(&buf, &mut at, 4, "chunk size")?) as usize;
        let body = take(&buf, &mut at, size, "chunk body")?;
        match &id[..] {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Parse("fmt chunk too short".into()));
                }
                fmt = Some((u16le(&body[0..2]), u16le(&body[2..4]), u32le(&body[4..8]), u16le(&body[14..16])));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        if size % 2 == 1 && at < buf.len() {
            at += 1; // RIFF chunks are word-aligned
        }
    }
    let Some((audio_format, channels, sample_rate, bits)) = fmt else {
        return Err(Error::Parse("missing fmt chunk".into()));
    };
    let Some(data) = data else {
        return Err(Error::Parse("missing data chunk".into()));
    };
    if audio_format != 1 {
        return Err(Error::Format(format!("audio_format: expected PCM (1), got {audio_format}")));
    }
    if channels != 1 {
        return Err(Error::Format(format!("channels: expected mono (1), got {channels}")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("bits_per_sample: expected 16, got {bits}")));
    }
    if sample_rate != REQUIRED_RATE {
        return Err(Error::Format(format!("sample_rate: expected {REQUIRED_RATE}, got {sample_rate}")));
    }
    if data.len() % 2 != 0 {
        return Err(Error::Parse("truncated WAV: odd data chunk length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sfevc-wav-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn silence_roundtrip() {
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let p = tmp("silence.wav");
        write_wav(&p, &w).unwrap();
        let back = load_wav(&p).unwrap();
        assert_eq!(back.samples.len(), 16000);
        assert!(back.samples.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn sine_amplitude_survives_roundtrip() {
        let n = 8000;
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let p = tmp("sine.wav");
        write_wav(&p, &Waveform::new(samples, 16000).unwrap()).unwrap();
        let back = load_wav(&p).unwrap();
        let peak = back.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!((peak - 0.5).abs() <= 1.0 / 32768.0, "peak {peak}");
    }

    #[test]
    fn wrong_rate_names_field() {
        let w = Waveform::new(vec![0.0; 100], 8000).unwrap();
        let p = tmp("slow.wav");
        write_wav(&p, &w).unwrap();
        let err = load_wav(&p).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("sample_rate"));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let w = Waveform::new(vec![0.1; 100], 16000).unwrap();
        let p = tmp("trunc.wav");
        write_wav(&p, &w).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..50]).unwrap();
        assert!(matches!(load_wav(&p).unwrap_err(), Error::Parse(_)));
    }
}
