//! Per-utterance feature cache and per-speaker pitch statistics.
//!
//! One binary file per utterance: a magic tag, the framing parameters, the
//! speaker/emotion tags, then four shape-prefixed little-endian float32
//! matrices (log-mel, normalized pitch, voicing mask, mel-cepstra). All four
//! matrices share the row count of the common framing grid, so the features
//! stay time-aligned by construction. Per-speaker pitch statistics live next
//! to the cache as one JSON file keyed by speaker id; conversion needs them
//! to map normalized contours back to Hz.

use crate::binio::{push_f32s, push_str, push_u32, Cursor};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::signal::mcep::mel_cepstra;
use crate::signal::mel::{mel_spectrogram, MelFilterbank, MelSpectrogram};
use crate::signal::pitch::{extract_f0, F0Params, F0Track};
use crate::signal::pitchnorm::{normalize, SpeakerF0Stats};
use crate::signal::stft::stft;
use crate::signal::Waveform;
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: &[u8; 11] = b"SFEVC-FEAT\x01";

/// Everything the model consumes for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub speaker: String,
    pub emotion: String,
    /// T x n_mels log-mel.
    pub mel: MelSpectrogram,
    /// Length T, normalized log-F0, 0.0 at unvoiced frames.
    pub pitch: Vec<f64>,
    /// Length T, 1.0 voiced / 0.0 unvoiced.
    pub voiced: Vec<f64>,
    /// T x mcep_order mel-cepstra (c0 excluded).
    pub mcep: Mat,
    pub sample_rate: u32,
    pub hop: usize,
}

impl FeatureBundle {
    pub fn t(&self) -> usize {
        self.mel.t()
    }

    /// Time alignment and mask sanity; every writer and reader goes through this.
    pub fn validate(&self) -> Result<()> {
        let t = self.t();
        if self.pitch.len() != t || self.voiced.len() != t || self.mcep.rows != t {
            return Err(Error::Internal(format!(
                "feature bundle misaligned: mel {} pitch {} voiced {} mcep {} frames",
                t,
                self.pitch.len(),
                self.voiced.len(),
                self.mcep.rows
            )));
        }
        if self.hop == 0 || self.sample_rate == 0 {
            return Err(Error::Internal("feature bundle: zero hop or sample rate".into()));
        }
        if self.voiced.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Internal("feature bundle: voicing mask not 0/1".into()));
        }
        let finite = self.mel.frames.is_finite()
            && self.mcep.is_finite()
            && self.pitch.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Internal("feature bundle: non-finite value".into()));
        }
        Ok(())
    }

    /// Pitch input for the model: T x 2 columns (normalized log-F0, voicing flag).
    pub fn pitch_channels(&self) -> Mat {
        Mat::from_fn(self.t(), 2, |r, c| if c == 0 { self.pitch[r] } else { self.voiced[r] })
    }
}

/// F0 tracker parameters implied by the config.
pub fn f0_params(cfg: &ExperimentConfig) -> F0Params {
    F0Params {
        sample_rate: cfg.sample_rate,
        hop: cfg.hop,
        frame_len: cfg.f0_frame,
        f0_min: cfg.f0_min,
        f0_max: cfg.f0_max,
        threshold: cfg.voicing_threshold,
    }
}

/// First analysis pass: the raw F0 track. Speaker statistics pool these
/// before any bundle can be built.
pub fn raw_f0(w: &Waveform, cfg: &ExperimentConfig) -> Result<F0Track> {
    extract_f0(&w.samples, &f0_params(cfg))
}

/// Full per-utterance analysis. `f0` must come from [`raw_f0`] on the same
/// waveform; `stats` place its contour in the speaker's z-score domain.
pub fn extract_features(
    w: &Waveform,
    f0: &F0Track,
    stats: &SpeakerF0Stats,
    speaker: &str,
    emotion: &str,
    cfg: &ExperimentConfig,
) -> Result<FeatureBundle> {
    let spec = stft(w, cfg.win, cfg.hop)?;
    let fb = MelFilterbank::new(cfg.n_mels, cfg.win, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
    let mel = mel_spectrogram(&spec.magnitudes(), &fb, cfg.hop)?;
    let mcep = mel_cepstra(&mel, cfg.mcep_order)?;
    if f0.t() != mel.t() {
        return Err(Error::Internal(format!(
            "framing grids diverged: {} f0 frames vs {} mel frames",
            f0.t(),
            mel.t()
        )));
    }
    let bundle = FeatureBundle {
        speaker: speaker.to_string(),
        emotion: emotion.to_string(),
        mel,
        pitch: normalize(f0, stats),
        voiced: f0.hz.iter().map(|hz| if *hz > 0.0 { 1.0 } else { 0.0 }).collect(),
        mcep,
        sample_rate: cfg.sample_rate,
        hop: cfg.hop,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn push_mat(out: &mut Vec<u8>, rows: usize, cols: usize, values: impl Iterator<Item = f64>) {
    push_u32(out, rows as u32);
    push_u32(out, cols as u32);
    push_f32s(out, values);
}

fn read_mat(c: &mut Cursor, what: &str) -> Result<Mat> {
    let rows = c.u32(what)? as usize;
    let cols = c.u32(what)? as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| {
        Error::Format(format!("feature cache: {what} shape {rows}x{cols} overflows"))
    })?;
    Ok(Mat { rows, cols, data: c.f32s(n, what)? })
}

pub fn to_bytes(b: &FeatureBundle) -> Result<Vec<u8>> {
    b.validate()?;
    let t = b.t();
    let mut out = Vec::with_capacity(64 + 4 * t * (b.mel.n_mels() + b.mcep.cols + 2));
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, b.sample_rate);
    push_u32(&mut out, b.hop as u32);
    push_str(&mut out, &b.speaker);
    push_str(&mut out, &b.emotion);
    push_mat(&mut out, t, b.mel.n_mels(), b.mel.frames.data.iter().copied());
    push_mat(&mut out, t, 1, b.pitch.iter().copied());
    push_mat(&mut out, t, 1, b.voiced.iter().copied());
    push_mat(&mut out, t, b.mcep.cols, b.mcep.data.iter().copied());
    Ok(out)
}

pub fn write_bundle(path: &Path, b: &FeatureBundle) -> Result<()> {
    std::fs::write(path, to_bytes(b)?)?;
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<FeatureBundle> {
    let mut c = Cursor::new(bytes, "feature cache");
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("feature cache: bad magic".into()));
    }
    let sample_rate = c.u32("sample_rate")?;
    let hop = c.u32("hop")? as usize;
    if sample_rate == 0 || hop == 0 {
        return Err(Error::Format("feature cache: zero hop or sample rate".into()));
    }
    let speaker = c.string("speaker tag")?;
    let emotion = c.string("emotion tag")?;
    let mel = read_mat(&mut c, "mel matrix")?;
    let pitch = read_mat(&mut c, "pitch matrix")?;
    let voiced = read_mat(&mut c, "voicing matrix")?;
    let mcep = read_mat(&mut c, "mcep matrix")?;
    c.finish()?;
    for (m, name) in [(&pitch, "pitch"), (&voiced, "voicing")] {
        if m.cols != 1 {
            return Err(Error::Format(format!(
                "feature cache: {name} matrix has {} columns, want 1",
                m.cols
            )));
        }
    }
    let bundle = FeatureBundle {
        speaker,
        emotion,
        mel: MelSpectrogram { frames: mel, hop_s: hop as f64 / sample_rate as f64 },
        pitch: pitch.data,
        voiced: voiced.data,
        mcep,
        sample_rate,
        hop,
    };
    bundle
        .validate()
        .map_err(|e| Error::Format(format!("feature cache: {e}")))?;
    Ok(bundle)
}

pub fn read_bundle(path: &Path) -> Result<FeatureBundle> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Speaker stats sidecar, one JSON object keyed by speaker id. BTreeMap keeps
/// the serialization order (and therefore the artifact bytes) deterministic.
pub fn write_speaker_stats(path: &Path, stats: &BTreeMap<String, SpeakerF0Stats>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(stats)
        .map_err(|e| Error::Internal(format!("speaker stats serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_speaker_stats(path: &Path) -> Result<BTreeMap<String, SpeakerF0Stats>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: bad speaker stats: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Values exactly representable in f32 so roundtrips compare with ==.
    fn sample_bundle(t: usize) -> FeatureBundle {
        let q = |v: f64| (v as f32) as f64;
        FeatureBundle {
            speaker: "s1".into(),
            emotion: "happy".into(),
            mel: MelSpectrogram {
                frames: Mat::from_fn(t, 6, |r, c| q((r * 6 + c) as f64 * 0.015625 - 3.0)),
                hop_s: 256.0 / 16000.0,
            },
            pitch: (0..t).map(|r| q(r as f64 * 0.25 - 1.0)).collect(),
            voiced: (0..t).map(|r| if r % 3 == 0 { 0.0 } else { 1.0 }).collect(),
            mcep: Mat::from_fn(t, 4, |r, c| q((r + c) as f64 * -0.125)),
            sample_rate: 16000,
            hop: 256,
        }
    }

    #[test]
    fn roundtrip_preserves_values_and_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.feat");
        let bundle = sample_bundle(7);
        write_bundle(&path, &bundle).unwrap();
        let back = read_bundle(&path).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.pitch_channels().cols, 2);
        assert_eq!(back.pitch_channels().rows, 7);
    }

    #[test]
    fn storage_quantizes_to_f32() {
        let mut bundle = sample_bundle(3);
        bundle.pitch[0] = 0.1;
        let back = from_bytes(&to_bytes(&bundle).unwrap()).unwrap();
        assert_eq!(back.pitch[0], 0.1f32 as f64);
        assert_ne!(back.pitch[0], 0.1);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = to_bytes(&sample_bundle(3)).unwrap();
        bytes[0] = b'X';
        let err = from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = to_bytes(&sample_bundle(3)).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
    }

    #[test]
    fn trailing_bytes_are_a_format_error() {
        let mut bytes = to_bytes(&sample_bundle(3)).unwrap();
        bytes.push(0);
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn misaligned_bundle_refuses_to_serialize() {
        let mut bundle = sample_bundle(4);
        bundle.mcep = Mat::zeros(3, 4);
        let err = to_bytes(&bundle).unwrap_err();
        assert!(err.to_string().contains("misaligned"), "{err}");
    }

    #[test]
    fn extraction_shares_one_framing_grid() {
        let cfg = ExperimentConfig::default();
        let sr = cfg.sample_rate as f64;
        // Vibrato keeps the log-F0 spread above the flat-contour guard.
        let samples: Vec<f64> = (0..8000)
            .map(|i| {
                let t = i as f64 / sr;
                let f = 200.0 + 8.0 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
                (2.0 * std::f64::consts::PI * f * t).sin() * 0.4
            })
            .collect();
        let w = Waveform::new(samples, cfg.sample_rate).unwrap();
        let f0 = raw_f0(&w, &cfg).unwrap();
        let stats = crate::signal::pitchnorm::speaker_stats(&[&f0]).unwrap();
        let b = extract_features(&w, &f0, &stats, "s0", "neutral", &cfg).unwrap();
        assert_eq!(b.t(), crate::signal::frame_count(8000, cfg.hop));
        assert_eq!(b.mcep.cols, cfg.mcep_order);
        assert_eq!(b.mel.n_mels(), cfg.n_mels);
        for t in 0..b.t() {
            assert_eq!(b.voiced[t] > 0.5, f0.is_voiced(t));
            if b.voiced[t] == 0.0 {
                assert_eq!(b.pitch[t], 0.0);
            }
        }
    }

    #[test]
    fn speaker_stats_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speaker_stats.json");
        let mut stats = BTreeMap::new();
        stats.insert(
            "s0".to_string(),
            SpeakerF0Stats { mean_log: 5.170_483_995_038_151, std_log: 0.123_456_789_012, voiced_frames: 412 },
        );
        stats.insert(
            "s1".to_string(),
            SpeakerF0Stats { mean_log: 4.9, std_log: 0.2, voiced_frames: 99 },
        );
        write_speaker_stats(&path, &stats).unwrap();
        let back = read_speaker_stats(&path).unwrap();
        assert_eq!(back, stats);
        // Deterministic bytes: rewrite matches the first serialization.
        let first = std::fs::read(&path).unwrap();
        write_speaker_stats(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }
}
