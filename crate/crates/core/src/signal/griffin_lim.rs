//! Griffin-Lim phase reconstruction from magnitude spectrograms.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::signal::stft::{istft, stft};
use crate::signal::Waveform;
use rustfft::num_complex::Complex64;

/// Reconstruct a waveform from a T x bins magnitude matrix.
///
/// Zero-phase start, then the classic alternating projection: resynthesize,
/// re-analyze, keep the new phase, restore the target magnitudes.
pub fn griffin_lim(
    mag: &Mat,
    win: usize,
    hop: usize,
    iters: usize,
    out_len: usize,
    sample_rate: u32,
) -> Result<Vec<f64>> {
    let bins = win / 2 + 1;
    if mag.cols != bins {
        return Err(Error::Internal(format!("griffin_lim: {} cols, expected {bins} bins", mag.cols)));
    }
    if mag.rows == 0 {
        return Err(Error::Data("griffin_lim: empty spectrogram".into()));
    }
    if mag.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Data("griffin_lim: magnitudes must be finite and non-negative".into()));
    }
    let mut frames: Vec<Vec<Complex64>> = (0..mag.rows)
        .map(|t| mag.row(t).iter().map(|m| Complex64::new(*m, 0.0)).collect())
        .collect();
    let mut x = istft(&frames, win, hop, out_len)?;
    for _ in 0..iters {
        let wave = Waveform { samples: x, sample_rate };
        let analyzed = stft(&wave, win, hop)?;
        let t_common = analyzed.frames.len().min(mag.rows);
        for (t, frame) in frames.iter_mut().enumerate().take(t_common) {
            for (k, cell) in frame.iter_mut().enumerate() {
                let c = analyzed.frames[t][k];
                let norm = c.norm();
                let target = mag.get(t, k);
                *cell = if norm > 1e-12 {
                    c * (target / norm)
                } else {
                    Complex64::new(target, 0.0)
                };
            }
        }
        x = istft(&frames, win, hop, out_len)?;
    }
    Ok(x)
}

/// Spectral distance between a target magnitude matrix and a signal's own
/// analysis, relative to the target norm. Convergence measure for tests.
pub fn spectral_error(mag: &Mat, x: &[f64], win: usize, hop: usize, sample_rate: u32) -> Result<f64> {
    let wave = Waveform { samples: x.to_vec(), sample_rate };
    let got = stft(&wave, win, hop)?.magnitudes();
    let t_common = got.rows.min(mag.rows);
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..t_common {
        for k in 0..mag.cols {
            num += (got.get(t, k) - mag.get(t, k)).powi(2);
            den += mag.get(t, k).powi(2);
        }
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).sqrt())
}
