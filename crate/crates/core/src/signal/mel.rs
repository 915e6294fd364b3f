//! Triangular mel filterbank, log-mel spectrograms, and the pseudo-inverse
//! used by Griffin-Lim.
//!
//! Filter centers are mel-uniform on [fmin, fmax]. The first filter keeps a
//! flat unit shoulder below its center so every FFT bin under fmax carries
//! positive weight (nothing in the corpus lives below fmin anyway).

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const LOG_FLOOR: f64 = 1e-5;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// n_mels x n_bins weights, row-major.
    pub weights: Mat,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        if n_mels < 1 {
            return Err(Error::Config("mel: n_mels must be >= 1".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
            return Err(Error::Config(format!("mel: need 0 <= fmin < fmax <= {nyquist}")));
        }
        let n_bins = n_fft / 2 + 1;
        let mel_lo = hz_to_mel(fmin);
        let mel_hi = hz_to_mel(fmax);
        let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(mel_lo + step * i as f64)).collect();
        let mut weights = Mat::zeros(n_mels, n_bins);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let w = if f < center {
                    if m == 0 {
                        1.0 // flat shoulder: covers every bin down to DC
                    } else {
                        (f - left) / (center - left)
                    }
                } else {
                    (right - f) / (right - center)
                };
                if w > 0.0 {
                    weights.set(m, k, w);
                }
            }
        }
        Ok(MelFilterbank { weights, sample_rate, n_fft, fmin, fmax })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows
    }

    /// Triangle peak frequency of each band, in Hz, lowest first.
    pub fn band_centers_hz(&self) -> Vec<f64> {
        band_centers_hz(self.n_mels(), self.fmin, self.fmax)
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols
    }

    /// Power spectrum frame -> mel energies.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .rows_iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }

    /// Right pseudo-inverse W^T (W W^T)^-1, for mapping mel energies back to
    /// an approximate power spectrum.
    pub fn pseudo_inverse(&self) -> Result<Mat> {
        let n = self.n_mels();
        let bins = self.n_bins();
        // gram = W W^T (n x n)
        let mut gram = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = self
                    .weights
                    .row(i)
                    .iter()
                    .zip(self.weights.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                gram.set(i, j, v);
                gram.set(j, i, v);
            }
        }
        let inv = invert(&gram)?;
        // pinv = W^T inv (bins x n)
        let mut pinv = Mat::zeros(bins, n);
        for k in 0..bins {
            for j in 0..n {
                let mut v = 0.0;
                for i in 0..n {
                    v += self.weights.get(i, k) * inv.get(i, j);
                }
                pinv.set(k, j, v);
            }
        }
        Ok(pinv)
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &Mat) -> Result<Mat> {
    let n = a.rows;
    debug_assert_eq!(a.rows, a.cols);
    let mut aug = Mat::zeros(n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            aug.set(r, c, a.get(r, c));
        }
        aug.set(r, n + r, 1.0);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug.get(i, col).abs().total_cmp(&aug.get(j, col).abs()))
            .unwrap();
        if aug.get(pivot, col).abs() < 1e-12 {
            return Err(Error::Internal("mel: filterbank gram matrix is singular".into()));
        }
        if pivot != col {
            for c in 0..2 * n {
                let tmp = aug.get(col, c);
                aug.set(col, c, aug.get(pivot, c));
                aug.set(pivot, c, tmp);
            }
        }
        let p = aug.get(col, col);
        for c in 0..2 * n {
            aug.set(col, c, aug.get(col, c) / p);
        }
        for r in 0..n {
            if r != col {
                let factor = aug.get(r, col);
                if factor != 0.0 {
                    for c in 0..2 * n {
                        aug.set(r, c, aug.get(r, c) - factor * aug.get(col, c));
                    }
                }
            }
        }
    }
    let mut out = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, aug.get(r, n + c));
        }
    }
    Ok(out)
}

/// Log-compressed mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// T x n_mels, log(mel_power + 1e-5).
    pub frames: Mat,
    /// Hop in seconds.
    pub hop_s: f64,
}

impl MelSpectrogram {
    pub fn t(&self) -> usize {
        self.frames.rows
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols
    }
}

/// T x bins magnitude matrix -> log-mel spectrogram (power-domain filterbank).
pub fn mel_spectrogram(stft_mag: &Mat, fb: &MelFilterbank, hop: usize) -> Result<MelSpectrogram> {
    if stft_mag.cols != fb.n_bins() {
        return Err(Error::Internal(format!(
            "mel: magnitude bins {} != filterbank bins {}",
            stft_mag.cols,
            fb.n_bins()
        )));
    }
    let mut frames = Mat::zeros(stft_mag.rows, fb.n_mels());
    let mut power = vec![0.0; stft_mag.cols];
    for t in 0..stft_mag.rows {
        for (p, m) in power.iter_mut().zip(stft_mag.row(t)) {
            *p = m * m;
        }
        for (c, e) in fb.apply(&power).into_iter().enumerate() {
            frames.set(t, c, (e + LOG_FLOOR).ln());
        }
    }
    Ok(MelSpectrogram { frames, hop_s: hop as f64 / fb.sample_rate as f64 })
}

/// Triangle peak frequencies for a mel filterbank over [fmin, fmax], in Hz.
/// Works without the weight matrix so analysis code can map band indices to
/// frequencies from config values alone.
pub fn band_centers_hz(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let mel_lo = hz_to_mel(fmin);
    let step = (hz_to_mel(fmax) - mel_lo) / (n_mels + 1) as f64;
    (0..n_mels).map(|i| mel_to_hz(mel_lo + step * (i + 1) as f64)).collect()
}

/// Invert a log-mel spectrogram to a linear magnitude matrix (clipped at 0).
pub fn mel_to_magnitudes(mel: &MelSpectrogram, fb: &MelFilterbank) -> Result<Mat> {
    let pinv = fb.pseudo_inverse()?;
    let mut mags = Mat::zeros(mel.t(), fb.n_bins());
    for t in 0..mel.t() {
        let energies: Vec<f64> = mel.frames.row(t).iter().map(|v| (v.exp() - LOG_FLOOR).max(0.0)).collect();
        for k in 0..fb.n_bins() {
            let p: f64 = pinv.row(k).iter().zip(&energies).map(|(w, e)| w * e).sum();
            mags.set(t, k, p.max(0.0).sqrt());
        }
    }
    Ok(mags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fb() -> MelFilterbank {
        MelFilterbank::new(80, 1024, 16000, 40.0, 7600.0).unwrap()
    }

    #[test]
    fn zero_input_hits_log_floor() {
        let mags = Mat::zeros(3, 513);
        let mel = mel_spectrogram(&mags, &fb(), 256).unwrap();
        assert!(mel.frames.data.iter().all(|v| *v == LOG_FLOOR.ln()));
    }

    #[test]
    fn rows_positive_and_all_bins_below_fmax_covered() {
        let fb = fb();
        for m in 0..fb.n_mels() {
            let sum: f64 = fb.weights.row(m).iter().sum();
            assert!(sum > 0.0, "filter {m} sums to {sum}");
        }
        for k in 0..fb.n_bins() {
            let f = k as f64 * 16000.0 / 1024.0;
            if f < 7600.0 {
                let col: f64 = (0..fb.n_mels()).map(|m| fb.weights.get(m, k)).sum();
                assert!(col > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn band_centers_match_filter_argmax_and_are_increasing() {
        let fb = fb();
        let centers = fb.band_centers_hz();
        assert_eq!(centers.len(), 80);
        assert!(centers.windows(2).all(|w| w[0] < w[1]));
        assert!(centers[0] > 40.0 && centers[79] < 7600.0);
        let bin_hz = 16000.0 / 1024.0;
        for (m, c) in centers.iter().enumerate() {
            let argmax = (0..fb.n_bins())
                .max_by(|&a, &b| fb.weights.get(m, a).total_cmp(&fb.weights.get(m, b)))
                .unwrap();
            // peak bin sits within one FFT bin of the analytic center
            assert!(
                (argmax as f64 * bin_hz - c).abs() <= bin_hz,
                "band {m}: argmax {argmax} vs center {c}"
            );
        }
    }

    #[test]
    fn scaling_never_decreases_cells() {
        let mut rng = crate::rng::rng(5);
        let mags = Mat::from_fn(4, 513, |_, _| rng.random_range(0.0..2.0));
        let scaled = Mat::from_fn(4, 513, |r, c| mags.get(r, c) * 1.7);
        let a = mel_spectrogram(&mags, &fb(), 256).unwrap();
        let b = mel_spectrogram(&scaled, &fb(), 256).unwrap();
        for (x, y) in a.frames.data.iter().zip(&b.frames.data) {
            assert!(y >= x);
        }
    }

    #[test]
    fn white_noise_is_flat_after_area_normalization() {
        let fb = fb();
        let draws = 200;
        let mut rng = crate::rng::rng(23);
        let mut acc = vec![0.0; fb.n_mels()];
        for _ in 0..draws {
            let power: Vec<f64> = (0..513)
                .map(|_| {
                    // complex Gaussian bin power: exponential with mean 1
                    let u: f64 = rng.random_range(1e-12..1.0);
                    -u.ln()
                })
                .collect();
            for (a, e) in acc.iter_mut().zip(fb.apply(&power)) {
                *a += e;
            }
        }
        let normalized: Vec<f64> = (0..fb.n_mels())
            .map(|m| {
                let area: f64 = fb.weights.row(m).iter().sum();
                acc[m] / draws as f64 / area
            })
            .collect();
        let mean = normalized.iter().sum::<f64>() / normalized.len() as f64;
        for (m, v) in normalized.iter().enumerate() {
            assert!((v - mean).abs() / mean < 0.2, "filter {m}: {v} vs mean {mean}");
        }
    }

    #[test]
    fn pseudo_inverse_recovers_smooth_spectra() {
        let fb = fb();
        // smooth spectrum inside [fmin, fmax]
        let power: Vec<f64> = (0..513)
            .map(|k| {
                let f = k as f64 * 16000.0 / 1024.0;
                (-(f - 1000.0).powi(2) / (2.0 * 800.0f64.powi(2))).exp() + 0.1
            })
            .collect();
        let mel = fb.apply(&power);
        let pinv = fb.pseudo_inverse().unwrap();
        // W * pinv * mel should reproduce mel (right inverse property)
        let back: Vec<f64> = (0..513)
            .map(|k| pinv.row(k).iter().zip(&mel).map(|(w, e)| w * e).sum())
            .collect();
        let mel2 = fb.apply(&back);
        for (a, b) in mel.iter().zip(&mel2) {
            assert!((a - b).abs() / a.abs().max(1e-9) < 1e-6, "{a} vs {b}");
        }
    }
}
