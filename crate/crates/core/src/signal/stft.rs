//! Short-time Fourier transform and its inverse.
//!
//! Frames are centered on the `t * hop` grid (reflect padding of win/2), so
//! `T = len/hop + 1`. The inverse uses window-squared overlap-add, which
//! reconstructs the analyzed signal exactly for any window.

use super::{frame_count, reflect_frame, Waveform};
use crate::error::{Error, Result};
use crate::mat::Mat;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Debug, Clone)]
pub struct Stft {
    /// T frames of win/2+1 complex bins.
    pub frames: Vec<Vec<Complex64>>,
    pub win: usize,
    pub hop: usize,
}

impl Stft {
    pub fn t(&self) -> usize {
        self.frames.len()
    }

    pub fn bins(&self) -> usize {
        self.win / 2 + 1
    }

    /// T x bins magnitude matrix.
    pub fn magnitudes(&self) -> Mat {
        let bins = self.bins();
        let mut m = Mat::zeros(self.t(), bins);
        for (t, frame) in self.frames.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                m.set(t, k, c.norm());
            }
        }
        m
    }
}

/// Periodic Hann window.
pub fn hann(win: usize) -> Vec<f64> {
    (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
        .collect()
}

fn check_params(win: usize, hop: usize) -> Result<()> {
    if !win.is_power_of_two() {
        return Err(Error::Config(format!("stft win must be a power of two, got {win}")));
    }
    if hop == 0 || win % hop != 0 {
        return Err(Error::Config(format!("stft hop must divide win ({win} / {hop})")));
    }
    Ok(())
}

pub fn stft(w: &Waveform, win: usize, hop: usize) -> Result<Stft> {
    check_params(win, hop)?;
    if w.samples.is_empty() {
        return Err(Error::Data("stft: empty waveform".into()));
    }
    let window = hann(win);
    let t_total = frame_count(w.samples.len(), hop);
    let fft = FftPlanner::new().plan_fft_forward(win);
    let half = (win / 2) as isize;
    let mut frames = Vec::with_capacity(t_total);
    let mut buf = vec![Complex64::default(); win];
    for t in 0..t_total {
        let start = (t * hop) as isize - half;
        let samples = reflect_frame(&w.samples, start, win);
        for (b, (s, wv)) in buf.iter_mut().zip(samples.iter().zip(&window)) {
            *b = Complex64::new(s * wv, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..win / 2 + 1].to_vec());
    }
    Ok(Stft { frames, win, hop })
}

/// Window-squared overlap-add inverse. `out_len` trims the result back to the
/// original sample count (frames cover `(T-1)*hop + win` padded samples).
pub fn istft(frames: &[Vec<Complex64>], win: usize, hop: usize, out_len: usize) -> Result<Vec<f64>> {
    check_params(win, hop)?;
    if frames.is_empty() {
        return Err(Error::Data("istft: no frames".into()));
    }
    let bins = win / 2 + 1;
    let window = hann(win);
    let fft = FftPlanner::new().plan_fft_inverse(win);
    let padded_len = (frames.len() - 1) * hop + win;
    let mut acc = vec![0.0; padded_len];
    let mut den = vec![0.0; padded_len];
    let mut buf = vec![Complex64::default(); win];
    for (t, frame) in frames.iter().enumerate() {
        if frame.len() != bins {
            return Err(Error::Internal(format!(
                "istft: frame {t} has {} bins, expected {bins}",
                frame.len()
            )));
        }
        buf[..bins].copy_from_slice(frame);
        for k in bins..win {
            buf[k] = frame[win - k].conj();
        }
        fft.process(&mut buf);
        let base = t * hop;
        for j in 0..win {
            let y = buf[j].re / win as f64;
            acc[base + j] += window[j] * y;
            den[base + j] += window[j] * window[j];
        }
    }
    let half = win / 2;
    let mut out = vec![0.0; out_len];
    for (n, o) in out.iter_mut().enumerate() {
        let p = n + half;
        if p < padded_len && den[p] > 1e-12 {
            *o = acc[p] / den[p];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (16000.0 * secs) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn zero_waveform_gives_zero_magnitudes() {
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let s = stft(&w, 1024, 256).unwrap();
        assert_eq!(s.t(), 4000 / 256 + 1);
        assert!(s.magnitudes().data.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn empty_waveform_is_an_error() {
        let w = Waveform::new(vec![], 16000).unwrap();
        assert!(stft(&w, 1024, 256).is_err());
    }

    #[test]
    fn matches_direct_dft_on_one_frame() {
        let mut rng = crate::rng::rng(7);
        let samples: Vec<f64> = (0..4096).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let win = 1024;
        let s = stft(&w, win, 256).unwrap();
        // Frame 6 is interior: starts at 6*256 - 512 = 1024, no padding involved.
        let t = 6;
        let start = t * 256 - win / 2;
        let window = hann(win);
        for k in [0usize, 3, 17, 250, 512] {
            let mut re = 0.0;
            let mut im = 0.0;
            for n in 0..win {
                let x = samples[start + n] * window[n];
                let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / win as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            let got = s.frames[t][k];
            assert!(
                (got.re - re).abs() < 1e-8 && (got.im - im).abs() < 1e-8,
                "bin {k}: got {got}, oracle {re}+{im}i"
            );
        }
    }

    #[test]
    fn sine_at_exact_bin_concentrates_energy() {
        let k = 32; // 32 * 16000/1024 = 500 Hz
        let freq = k as f64 * 16000.0 / 1024.0;
        let s = stft(&sine(freq, 0.5, 0.7), 1024, 256).unwrap();
        let mags = s.magnitudes();
        let t = s.t() / 2;
        let total: f64 = mags.row(t).iter().map(|m| m * m).sum();
        let local: f64 = (k - 1..=k + 1).map(|b| mags.get(t, b).powi(2)).sum();
        assert!(local >= 0.9 * total, "local {local} vs total {total}");
    }

    #[test]
    fn parseval_holds_per_frame() {
        let mut rng = crate::rng::rng(11);
        let samples: Vec<f64> = (0..4096).map(|_| rng.random_range(-0.7..0.7)).collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let win = 1024;
        let s = stft(&w, win, 256).unwrap();
        let t = 5;
        let start = t * 256 - win / 2;
        let window = hann(win);
        let time_energy: f64 = (0..win).map(|n| (samples[start + n] * window[n]).powi(2)).sum();
        let f = &s.frames[t];
        let freq_energy = (f[0].norm_sqr()
            + f[win / 2].norm_sqr()
            + 2.0 * f[1..win / 2].iter().map(|c| c.norm_sqr()).sum::<f64>())
            / win as f64;
        let rel = (time_energy - freq_energy).abs() / time_energy;
        assert!(rel < 1e-6, "relative Parseval error {rel}");
    }

    #[test]
    fn istft_inverts_stft_exactly() {
        let mut rng = crate::rng::rng(3);
        let samples: Vec<f64> = (0..5000).map(|_| rng.random_range(-0.9..0.9)).collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let s = stft(&w, 1024, 256).unwrap();
        let back = istft(&s.frames, 1024, 256, samples.len()).unwrap();
        let max_err = samples
            .iter()
            .zip(&back)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(max_err < 1e-9, "max reconstruction error {max_err}");
    }
}
