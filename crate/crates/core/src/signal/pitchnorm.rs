//! Per-speaker z-score normalization of log-F0.
//!
//! Stats pool every voiced frame a speaker produced (population variance).
//! Normalized contours carry 0.0 at unvoiced frames, which is the speaker
//! mean after normalization.

use crate::error::{Error, Result};
use crate::signal::pitch::F0Track;
use serde::{Deserialize, Serialize};

pub const MIN_VOICED_FRAMES: usize = 10;
pub const MIN_STD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerF0Stats {
    pub mean_log: f64,
    pub std_log: f64,
    pub voiced_frames: usize,
}

pub fn speaker_stats(tracks: &[&F0Track]) -> Result<SpeakerF0Stats> {
    let logs: Vec<f64> = tracks
        .iter()
        .flat_map(|t| t.hz.iter())
        .filter(|hz| **hz > 0.0)
        .map(|hz| hz.ln())
        .collect();
    let n = logs.len();
    if n < MIN_VOICED_FRAMES {
        return Err(Error::Data(format!(
            "f0 normalization: {n} voiced frames, need at least {MIN_VOICED_FRAMES}"
        )));
    }
    let mean = logs.iter().sum::<f64>() / n as f64;
    let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < MIN_STD {
        return Err(Error::Data(format!(
            "f0 normalization: log-f0 std {std:.2e} below {MIN_STD:.0e}, contour is flat"
        )));
    }
    Ok(SpeakerF0Stats { mean_log: mean, std_log: std, voiced_frames: n })
}

/// Normalized log-F0 per frame, 0.0 where unvoiced.
pub fn normalize(track: &F0Track, stats: &SpeakerF0Stats) -> Vec<f64> {
    track
        .hz
        .iter()
        .map(|hz| if *hz > 0.0 { (hz.ln() - stats.mean_log) / stats.std_log } else { 0.0 })
        .collect()
}

/// Inverse map for a voiced frame's normalized value.
pub fn denormalize(value: f64, stats: &SpeakerF0Stats) -> f64 {
    (stats.mean_log + value * stats.std_log).exp()
}
