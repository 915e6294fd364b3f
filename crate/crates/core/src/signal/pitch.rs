//! F0 tracking by normalized autocorrelation.
//!
//! Frames share the STFT grid (same hop, reflect-centered), so the F0 track
//! lines up one-to-one with mel frames. Unvoiced frames carry 0 Hz.

use crate::error::{Error, Result};
use crate::signal::{frame_count, reflect_frame};

#[derive(Debug, Clone, Copy)]
pub struct F0Params {
    pub sample_rate: u32,
    pub hop: usize,
    pub frame_len: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Normalized-autocorrelation voicing threshold.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    /// Hz per frame, 0.0 where unvoiced.
    pub hz: Vec<f64>,
}

impl F0Track {
    pub fn t(&self) -> usize {
        self.hz.len()
    }

    pub fn is_voiced(&self, t: usize) -> bool {
        self.hz[t] > 0.0
    }

    pub fn voiced_count(&self) -> usize {
        self.hz.iter().filter(|v| **v > 0.0).count()
    }
}

/// RMS below this is treated as digital silence.
const SILENCE_RMS: f64 = 1e-5;

pub fn extract_f0(samples: &[f64], p: &F0Params) -> Result<F0Track> {
    if samples.is_empty() {
        return Err(Error::Data("pitch: empty signal".into()));
    }
    let sr = p.sample_rate as f64;
    if !(0.0 < p.f0_min && p.f0_min < p.f0_max && p.f0_max < sr / 2.0) {
        return Err(Error::Config("pitch: need 0 < f0_min < f0_max < nyquist".into()));
    }
    let tau_min = (sr / p.f0_max).floor().max(2.0) as usize;
    let tau_max = (sr / p.f0_min).ceil() as usize;
    if tau_max + 2 > p.frame_len {
        return Err(Error::Config(format!(
            "pitch: frame_len {} too short for f0_min {} (needs > {})",
            p.frame_len,
            p.f0_min,
            tau_max + 2
        )));
    }
    let t_frames = frame_count(samples.len(), p.hop);
    let half = p.frame_len as isize / 2;
    let mut hz = Vec::with_capacity(t_frames);
    let mut r = vec![0.0; tau_max + 2];
    for t in 0..t_frames {
        let start = (t * p.hop) as isize - half;
        let mut frame = reflect_frame(samples, start, p.frame_len);
        let mean = frame.iter().sum::<f64>() / p.frame_len as f64;
        for v in frame.iter_mut() {
            *v -= mean;
        }
        hz.push(frame_f0(&frame, tau_min, tau_max, p.threshold, sr, &mut r));
    }
    Ok(F0Track { hz: median_smooth(&hz, 2) })
}

/// Median over nearby voiced frames, voicing decisions untouched. A frame
/// dominated by one strong harmonic can pass the peak cut at a fraction of
/// the true period and report a multiple of the real F0. Such errors come
/// isolated, and the median of a monotone window is its center, so smooth
/// contours pass through unchanged while lone jumps snap back. Even-sized
/// windows at voiced-run edges take the lower middle, since the errors
/// being removed are upward.
fn median_smooth(hz: &[f64], radius: usize) -> Vec<f64> {
    let mut out = hz.to_vec();
    for t in 0..hz.len() {
        if hz[t] <= 0.0 {
            continue;
        }
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(hz.len() - 1);
        let mut w: Vec<f64> = hz[lo..=hi].iter().copied().filter(|v| *v > 0.0).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out[t] = w[(w.len() - 1) / 2];
    }
    out
}

fn frame_f0(x: &[f64], tau_min: usize, tau_max: usize, threshold: f64, sr: f64, r: &mut [f64]) -> f64 {
    let l = x.len();
    // prefix sums of squares make both normalization terms O(1) per lag
    let mut sumsq = vec![0.0; l + 1];
    for (i, v) in x.iter().enumerate() {
        sumsq[i + 1] = sumsq[i] + v * v;
    }
    if (sumsq[l] / l as f64).sqrt() < SILENCE_RMS {
        return 0.0;
    }
    let hi = (tau_max + 1).min(l - 1);
    for tau in (tau_min - 1)..=hi {
        let mut num = 0.0;
        for n in 0..l - tau {
            num += x[n] * x[n + tau];
        }
        let e0 = sumsq[l - tau];
        let e1 = sumsq[l] - sumsq[tau];
        let den = (e0 * e1).sqrt();
        r[tau] = if den < 1e-20 { 0.0 } else { num / den };
    }
    // local maxima strictly inside [tau_min, min(tau_max, hi-1)]
    let mut peaks: Vec<usize> = Vec::new();
    let mut r_max = f64::NEG_INFINITY;
    for tau in tau_min..=tau_max.min(hi - 1) {
        if r[tau] > r[tau - 1] && r[tau] >= r[tau + 1] {
            peaks.push(tau);
            if r[tau] > r_max {
                r_max = r[tau];
            }
        }
    }
    if peaks.is_empty() || r_max < threshold {
        return 0.0;
    }
    // smallest lag close to the best peak, so one-octave-down peaks lose
    let cut = threshold.max(0.9 * r_max);
    let tau = *peaks.iter().find(|t| r[**t] >= cut).unwrap();
    // parabolic refinement over (tau-1, tau, tau+1)
    let (a, b, c) = (r[tau - 1], r[tau], r[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() < 1e-20 { 0.0 } else { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) };
    let f0 = sr / (tau as f64 + shift);
    f0.clamp(sr / tau_max as f64, sr / tau_min as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params() -> F0Params {
        F0Params {
            sample_rate: 16000,
            hop: 256,
            frame_len: 1024,
            f0_min: 40.0,
            f0_max: 600.0,
            threshold: 0.3,
        }
    }

    fn sine(freq: f64, secs: f64) -> Vec<f64> {
        let n = (16000.0 * secs) as usize;
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin() * 0.4)
            .collect()
    }

    #[test]
    fn pure_tone_tracked_within_half_hz() {
        let track = extract_f0(&sine(200.0, 1.0), &params()).unwrap();
        assert_eq!(track.t(), 63);
        assert!(track.voiced_count() == track.t());
        for t in 0..track.t() {
            assert!((track.hz[t] - 200.0).abs() < 0.5, "frame {t}: {}", track.hz[t]);
        }
    }

    #[test]
    fn harmonic_stack_avoids_octave_errors() {
        let n = 16000;
        let wave: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                (1..=5)
                    .map(|k| {
                        (2.0 * std::f64::consts::PI * 180.0 * k as f64 * t).sin() / k as f64
                    })
                    .sum::<f64>()
                    * 0.2
            })
            .collect();
        let track = extract_f0(&wave, &params()).unwrap();
        for t in 0..track.t() {
            assert!(track.is_voiced(t));
            assert!((track.hz[t] - 180.0).abs() < 2.0, "frame {t}: {}", track.hz[t]);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let track = extract_f0(&vec![0.0; 8000], &params()).unwrap();
        assert_eq!(track.voiced_count(), 0);
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = crate::rng::rng(7);
        let wave: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.3..0.3)).collect();
        let track = extract_f0(&wave, &params()).unwrap();
        assert!(
            track.voiced_count() * 10 < track.t(),
            "{} of {} voiced",
            track.voiced_count(),
            track.t()
        );
    }

    #[test]
    fn chirp_follows_instantaneous_frequency() {
        let secs = 2.0;
        let n = (16000.0 * secs) as usize;
        let (f_lo, f_hi) = (120.0, 320.0);
        let mut phase = 0.0f64;
        let mut wave = Vec::with_capacity(n);
        for i in 0..n {
            let f = f_lo + (f_hi - f_lo) * i as f64 / n as f64;
            phase += 2.0 * std::f64::consts::PI * f / 16000.0;
            wave.push(phase.sin() * 0.4);
        }
        let track = extract_f0(&wave, &params()).unwrap();
        for t in 2..track.t() - 2 {
            let center = (t * 256) as f64;
            let f = f_lo + (f_hi - f_lo) * center / n as f64;
            assert!(track.is_voiced(t), "frame {t} unvoiced");
            assert!((track.hz[t] - f).abs() / f < 0.05, "frame {t}: {} vs {f}", track.hz[t]);
        }
    }

    #[test]
    fn lone_harmonic_jump_is_snapped_back() {
        let raw = vec![0.0, 110.0, 112.0, 452.0, 113.0, 114.0, 0.0];
        let out = median_smooth(&raw, 2);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[6], 0.0);
        assert_eq!(out[3], 113.0);
        assert!((out[2] - 112.0).abs() < 3.0);
    }

    #[test]
    fn monotone_contour_survives_smoothing() {
        let raw: Vec<f64> = (0..20).map(|i| 100.0 + 2.0 * i as f64).collect();
        let out = median_smooth(&raw, 2);
        for t in 2..18 {
            assert_eq!(out[t], raw[t], "interior frame {t} moved");
        }
    }

    #[test]
    fn tone_below_search_range_is_unvoiced() {
        let track = extract_f0(&sine(30.0, 1.0), &params()).unwrap();
        assert_eq!(track.voiced_count(), 0);
    }

    #[test]
    fn short_frame_rejected() {
        let mut p = params();
        p.frame_len = 256;
        assert!(extract_f0(&sine(200.0, 0.5), &p).is_err());
    }
}
