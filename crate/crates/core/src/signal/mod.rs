//! Waveform I/O and acoustic feature extraction.
//!
//! All per-frame features (STFT, F0) share one framing rule: frames are
//! centered at `t * hop` with reflect padding of half a window on both ends,
//! giving `T = len/hop + 1` frames. Mel, pitch and mel-cepstra therefore agree
//! on T for one utterance by construction.

pub mod griffin_lim;
pub mod mcep;
pub mod mel;
pub mod pitch;
pub mod pitchnorm;
pub mod stft;
pub mod wav;

use crate::error::{Error, Result};

/// Raw speech signal, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Internal("waveform contains non-finite samples".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }
}

/// Frames produced by the shared centered framing rule.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Reflect an out-of-range index back into [0, len).
fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut r = i % period;
    if r < 0 {
        r += period;
    }
    if r >= len as isize {
        r = period - r;
    }
    r as usize
}

/// Extract `frame_len` samples starting at signal index `start` (possibly
/// negative), reflecting at both edges.
pub fn reflect_frame(x: &[f64], start: isize, frame_len: usize) -> Vec<f64> {
    (0..frame_len as isize)
        .map(|k| x[reflect_index(start + k, x.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_matches_hop_grid() {
        assert_eq!(frame_count(16000, 256), 63);
        assert_eq!(frame_count(256, 256), 2);
        assert_eq!(frame_count(255, 256), 1);
    }

    #[test]
    fn reflect_indexing_mirrors_without_edge_repeat() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(reflect_frame(&x, -2, 4), vec![2.0, 1.0, 0.0, 1.0]);
        assert_eq!(reflect_frame(&x, 2, 4), vec![2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn reflect_survives_pad_longer_than_signal() {
        let x = [1.0, 2.0];
        let f = reflect_frame(&x, -5, 10);
        assert_eq!(f.len(), 10);
        assert!(f.iter().all(|v| *v == 1.0 || *v == 2.0));
    }
}
