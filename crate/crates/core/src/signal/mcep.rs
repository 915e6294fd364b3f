//! Mel-cepstral coefficients: orthonormal DCT-II over the log-mel frame,
//! keeping coefficients 1..=order (the energy term c0 is excluded).

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::signal::mel::MelSpectrogram;

/// Orthonormal DCT-II basis row for coefficient k over n points.
fn dct_row(k: usize, n: usize) -> Vec<f64> {
    let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    (0..n)
        .map(|j| scale * (std::f64::consts::PI / n as f64 * (j as f64 + 0.5) * k as f64).cos())
        .collect()
}

/// T x order matrix of mel-cepstra (coefficient 1 first).
pub fn mel_cepstra(mel: &MelSpectrogram, order: usize) -> Result<Mat> {
    let n = mel.n_mels();
    if order < 1 || order >= n {
        return Err(Error::Config(format!("mcep: order must be in [1, {}], got {order}", n - 1)));
    }
    let basis: Vec<Vec<f64>> = (1..=order).map(|k| dct_row(k, n)).collect();
    let mut out = Mat::zeros(mel.t(), order);
    for t in 0..mel.t() {
        let frame = mel.frames.row(t);
        for (c, row) in basis.iter().enumerate() {
            out.set(t, c, row.iter().zip(frame).map(|(b, x)| b * x).sum());
        }
    }
    Ok(out)
}
