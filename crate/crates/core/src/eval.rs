//! Objective metrics, mel-domain factor proxies, factor-recovery scoring,
//! and an exact t-SNE for embedding analysis.
//!
//! Converted speech exists only as mel-spectrograms, so every factor readout
//! here (F0, voicing, spectral tilt) is computed from the mel frames alone.
//! The same proxies run on ground-truth and converted features, which keeps
//! prototype matching free of analyzer mismatch. Sequences of different
//! lengths are aligned by linear resampling of the converted side; when
//! lengths already match the alignment is a bitwise no-op.

use std::collections::BTreeMap;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::featcache::FeatureBundle;
use crate::mat::Mat;
use crate::resample::linear_resample;
use crate::rng::{gaussian, rng};
use crate::signal::mel::{band_centers_hz, MelSpectrogram};
use serde::{Deserialize, Serialize};

/// dB per unit natural log of power.
const DB_PER_LN: f64 = 10.0 / std::f64::consts::LN_10;

/// Frame-average mel-cepstral distance prefactor: (10/ln 10) * sqrt(2).
pub const MCD_SCALE: f64 = 10.0 * std::f64::consts::SQRT_2 / std::f64::consts::LN_10;

/// Per-pair objective scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mcd_db: f64,
    /// Absent when the pair shares no co-voiced frames.
    pub f0_rmse_hz: Option<f64>,
    pub voiced_overlap: f64,
    pub n_frames: usize,
}

/// Mel-cepstral distortion in dB between coefficient sequences (frames x
/// order, c0 in column 0). c0 is excluded; the converted side is linearly
/// resampled to the reference length first.
pub fn mcd(reference: &Mat, converted: &Mat) -> Result<f64> {
    if reference.rows == 0 || converted.rows == 0 {
        return Err(Error::Data("mcd: empty coefficient sequence".into()));
    }
    if reference.cols != converted.cols {
        return Err(Error::Data(format!(
            "mcd: cepstral order mismatch, {} vs {}",
            reference.cols, converted.cols
        )));
    }
    if reference.cols < 2 {
        return Err(Error::Data("mcd: need c0 plus at least one coefficient".into()));
    }
    let aligned = linear_resample(converted, reference.rows)?;
    let mut acc = 0.0;
    for t in 0..reference.rows {
        let (a, b) = (reference.row(t), aligned.row(t));
        let mut sum = 0.0;
        for d in 1..reference.cols {
            let diff = a[d] - b[d];
            sum += diff * diff;
        }
        acc += MCD_SCALE * sum.sqrt();
    }
    Ok(acc / reference.rows as f64)
}

/// F0 agreement between two Hz contours (0 marks unvoiced frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Agreement {
    /// RMSE over co-voiced frames; absent when none exist.
    pub rmse_hz: Option<f64>,
    /// Co-voiced frames over all reference frames.
    pub overlap: f64,
}

pub fn f0_rmse(reference: &[f64], converted: &[f64]) -> Result<F0Agreement> {
    if reference.is_empty() || converted.is_empty() {
        return Err(Error::Data("f0_rmse: empty contour".into()));
    }
    let conv_mat = Mat::from_fn(converted.len(), 1, |r, _| converted[r]);
    let aligned = linear_resample(&conv_mat, reference.len())?;
    let mut co = 0usize;
    let mut sum_sq = 0.0;
    for (t, &r_hz) in reference.iter().enumerate() {
        let c_hz = aligned.get(t, 0);
        if r_hz > 0.0 && c_hz > 0.0 {
            co += 1;
            sum_sq += (r_hz - c_hz) * (r_hz - c_hz);
        }
    }
    let overlap = co as f64 / reference.len() as f64;
    let rmse_hz = if co == 0 { None } else { Some((sum_sq / co as f64).sqrt()) };
    Ok(F0Agreement { rmse_hz, overlap })
}

// ---------------------------------------------------------------------------
// Mel-domain factor proxies
// ---------------------------------------------------------------------------

/// Frames within this many dB of the loudest frame count as voiced.
const VOICING_FLOOR_DB: f64 = -35.0;
/// Harmonic comb settings: slots, per-slot decay, top of the comb range.
const COMB_HARMONICS: usize = 8;
const COMB_DECAY: f64 = 0.9;
const COMB_TOP_HZ: f64 = 1300.0;
/// Geometric candidate spacing (about a quarter semitone).
const COMB_GRID_RATIO: f64 = 1.015;
/// Tilt regression region (resonances live here; above it the synthetic
/// corpus sits under its own noise floor).
const TILT_LO_HZ: f64 = 250.0;
const TILT_HI_HZ: f64 = 3500.0;

fn frame_band_powers(mel: &MelSpectrogram, t: usize) -> Vec<f64> {
    mel.frames.row(t).iter().map(|v| v.exp()).collect()
}

/// Energy-gated voicing: a frame is voiced when its total band power is
/// within 35 dB of the loudest frame.
pub fn mel_voiced_mask(mel: &MelSpectrogram) -> Vec<bool> {
    let energy: Vec<f64> =
        (0..mel.t()).map(|t| frame_band_powers(mel, t).iter().sum()).collect();
    let max = energy.iter().cloned().fold(0.0f64, f64::max);
    let floor = max * 10f64.powf(VOICING_FLOOR_DB / 10.0);
    energy.iter().map(|e| max > 0.0 && *e > floor).collect()
}

/// Band power linearly interpolated at `hz` between triangle centers.
fn interp_power(powers: &[f64], centers: &[f64], hz: f64) -> Option<f64> {
    if hz < centers[0] || hz > *centers.last().unwrap() {
        return None;
    }
    let hi = centers.partition_point(|c| *c < hz);
    if hi == 0 {
        return Some(powers[0]);
    }
    let lo = hi - 1;
    if hi == centers.len() {
        return Some(powers[lo]);
    }
    let frac = (hz - centers[lo]) / (centers[hi] - centers[lo]);
    Some(powers[lo] * (1.0 - frac) + powers[hi] * frac)
}

/// F0 contour read from a mel-spectrogram, in Hz, 0 on unvoiced frames.
///
/// Each voiced frame is scored against a decaying harmonic comb on a
/// geometric candidate grid; the winning candidate is refined by parabolic
/// interpolation in log-frequency. The decaying weights resolve the
/// sub-harmonic ambiguity, and capping the comb at 1300 Hz keeps the score
/// driven by the resolved low harmonics.
pub fn mel_f0_proxy(mel: &MelSpectrogram, cfg: &ExperimentConfig) -> Vec<f64> {
    let centers = band_centers_hz(mel.n_mels(), cfg.fmin, cfg.fmax);
    let lo = cfg.f0_min.max(centers[0]);
    let hi = cfg.f0_max.min(*centers.last().unwrap()).max(lo * 1.1);
    let n_cand = ((hi / lo).ln() / COMB_GRID_RATIO.ln()).ceil() as usize + 1;
    let candidates: Vec<f64> = (0..n_cand).map(|i| lo * COMB_GRID_RATIO.powi(i as i32)).collect();
    let voiced = mel_voiced_mask(mel);
    let mut out = vec![0.0; mel.t()];
    let mut scores = vec![0.0; n_cand];
    for t in 0..mel.t() {
        if !voiced[t] {
            continue;
        }
        let powers = frame_band_powers(mel, t);
        for (i, &f) in candidates.iter().enumerate() {
            let mut s = 0.0;
            let mut w = 1.0;
            for h in 1..=COMB_HARMONICS {
                let hz = f * h as f64;
                if hz > COMB_TOP_HZ {
                    break;
                }
                // Each tooth scores the dB contrast between its harmonic and
                // the midpoint below it. True pitch sees peak-over-valley at
                // every tooth; a doubled candidate lands midpoints on real
                // harmonics and scores near zero; contrast is insensitive to
                // overall spectral slope, unlike summed power.
                if let (Some(p), Some(v)) = (
                    interp_power(&powers, &centers, hz),
                    interp_power(&powers, &centers, hz - 0.5 * f),
                ) {
                    s += w * DB_PER_LN * (p.max(1e-12).ln() - v.max(1e-12).ln());
                }
                w *= COMB_DECAY;
            }
            scores[i] = s;
        }
        let best = (0..n_cand).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let mut f = candidates[best];
        if best > 0 && best + 1 < n_cand {
            let (sl, sc, sr) = (scores[best - 1], scores[best], scores[best + 1]);
            let denom = sl - 2.0 * sc + sr;
            if denom.abs() > 0.0 {
                let delta = (0.5 * (sl - sr) / denom).clamp(-0.5, 0.5);
                f *= COMB_GRID_RATIO.powf(delta);
            }
        }
        out[t] = f.clamp(lo, hi);
    }
    out
}

/// Spectral tilt in dB/octave: per-frame least-squares slope of band power
/// (dB) against log2 frequency over the resonant region, averaged across
/// voiced frames. Silent input reads as 0.
pub fn mel_tilt(mel: &MelSpectrogram, cfg: &ExperimentConfig) -> f64 {
    let centers = band_centers_hz(mel.n_mels(), cfg.fmin, cfg.fmax);
    // Average power over voiced frames first: the contour sweeps harmonics
    // across bands, so the time mean approximates the envelope far better
    // than any single frame's comb-sampled snapshot.
    let voiced = mel_voiced_mask(mel);
    let mut mean_power = vec![0.0; mel.n_mels()];
    let mut n = 0usize;
    for t in 0..mel.t() {
        if !voiced[t] {
            continue;
        }
        let row = mel.frames.row(t);
        for (acc, v) in mean_power.iter_mut().zip(row) {
            *acc += v.exp();
        }
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    for p in &mut mean_power {
        *p /= n as f64;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &c) in centers.iter().enumerate() {
        if c >= TILT_LO_HZ && c <= TILT_HI_HZ {
            xs.push(c.log2());
            ys.push(DB_PER_LN * mean_power[i].max(1e-12).ln());
        }
    }
    if xs.len() < 3 {
        return 0.0;
    }
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let x_var: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    cov / x_var
}

/// Six-number summary of a normalized pitch track: mean, standard deviation,
/// 10th and 90th percentile of the voiced values, voiced fraction, and mean
/// voiced-run length as a fraction of the utterance.
pub fn f0_summary(pitch: &[f64], voiced: &[f64]) -> Vec<f64> {
    let t = pitch.len();
    let mut vals: Vec<f64> = pitch
        .iter()
        .zip(voiced)
        .filter(|(_, v)| **v > 0.5)
        .map(|(p, _)| *p)
        .collect();
    if vals.is_empty() || t == 0 {
        return vec![0.0; 6];
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    vals.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> f64 {
        let pos = q * (vals.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < vals.len() { vals[i] * (1.0 - frac) + vals[i + 1] * frac } else { vals[i] }
    };
    let mut runs = 0usize;
    let mut prev = false;
    for v in voiced {
        let now = *v > 0.5;
        if now && !prev {
            runs += 1;
        }
        prev = now;
    }
    let mean_run = vals.len() as f64 / runs as f64 / t as f64;
    vec![mean, std, quantile(0.1), quantile(0.9), n / t as f64, mean_run]
}

// ---------------------------------------------------------------------------
// Factor recovery
// ---------------------------------------------------------------------------

/// One converted utterance to score: the produced features plus the
/// identities the conversion was supposed to express, the sentence it
/// renders, and the ground-truth parallel rendition in the target emotion
/// for content scoring.
#[derive(Debug, Clone, Copy)]
pub struct RecoveryCase<'a> {
    pub bundle: &'a FeatureBundle,
    pub speaker: &'a str,
    pub emotion: &'a str,
    pub sentence: usize,
    pub content_ref: &'a FeatureBundle,
}

/// A ground-truth rendition serving as prototype material. The sentence id
/// lets scoring cancel content effects by centering each utterance against
/// the parallel renditions of the same sentence.
#[derive(Debug, Clone, Copy)]
pub struct RecoveryRef<'a> {
    pub sentence: usize,
    pub bundle: &'a FeatureBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRecovery {
    pub emotion_accuracy: f64,
    pub speaker_accuracy: f64,
    /// Mean frame-wise cosine of mel frames against the parallel rendition.
    pub content_correlation: f64,
    pub n: usize,
}

/// Utterance-level proxy readout. Silent input falls back to zeros so the
/// scoring stays total on degenerate conversions.
/// Per-utterance factor proxies: raw pitch register for the speaker axis,
/// speaker-normalized pitch offset and spectral tilt for the emotion axis.
struct Proxies {
    lnf0: f64,
    zf0: f64,
    tilt: f64,
}

fn measure(bundle: &FeatureBundle, cfg: &ExperimentConfig) -> Proxies {
    let hz = mel_f0_proxy(&bundle.mel, cfg);
    let voiced: Vec<f64> = hz.iter().copied().filter(|h| *h > 0.0).collect();
    let lnf0 = if voiced.is_empty() {
        0.0
    } else {
        voiced.iter().map(|h| h.ln()).sum::<f64>() / voiced.len() as f64
    };
    let mut z_sum = 0.0;
    let mut z_n = 0usize;
    for (p, v) in bundle.pitch.iter().zip(&bundle.voiced) {
        if *v > 0.5 {
            z_sum += p;
            z_n += 1;
        }
    }
    let zf0 = if z_n == 0 { 0.0 } else { z_sum / z_n as f64 };
    Proxies { lnf0, zf0, tilt: mel_tilt(&bundle.mel, cfg) }
}

fn frame_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Nearest-prototype factor scoring.
///
/// Every measurement is centered against the reference renditions of the
/// same (speaker, sentence) cell, which cancels register and content
/// effects: what remains of an utterance's pitch and tilt is its emotion's
/// contribution. Emotion prototypes are the per-emotion means of those
/// residuals, standardized per dimension. Speaker identity is matched on
/// the raw F0 proxy against each candidate speaker's same-sentence center,
/// so sentence effects cancel there too. Cells missing from the references
/// fall back to the speaker's overall mean.
pub fn factor_recovery(
    cases: &[RecoveryCase],
    references: &[RecoveryRef],
    cfg: &ExperimentConfig,
) -> Result<FactorRecovery> {
    if references.is_empty() {
        return Err(Error::Data("factor recovery: no reference bundles".into()));
    }
    if cases.is_empty() {
        return Err(Error::Data("factor recovery: no cases to score".into()));
    }
    let measures: Vec<Proxies> = references.iter().map(|r| measure(r.bundle, cfg)).collect();
    let mut spk_acc: BTreeMap<&str, ([f64; 3], f64)> = BTreeMap::new();
    let mut cell_acc: BTreeMap<(&str, usize), ([f64; 3], f64)> = BTreeMap::new();
    for (r, m) in references.iter().zip(&measures) {
        let v = [m.lnf0, m.zf0, m.tilt];
        let s = spk_acc.entry(r.bundle.speaker.as_str()).or_insert(([0.0; 3], 0.0));
        for (a, x) in s.0.iter_mut().zip(v) {
            *a += x;
        }
        s.1 += 1.0;
        let c = cell_acc.entry((r.bundle.speaker.as_str(), r.sentence)).or_insert(([0.0; 3], 0.0));
        for (a, x) in c.0.iter_mut().zip(v) {
            *a += x;
        }
        c.1 += 1.0;
    }
    let spk_mean: BTreeMap<&str, [f64; 3]> =
        spk_acc.iter().map(|(s, (v, n))| (*s, v.map(|x| x / n))).collect();
    let cell_mean: BTreeMap<(&str, usize), [f64; 3]> =
        cell_acc.iter().map(|(k, (v, n))| (*k, v.map(|x| x / n))).collect();
    let center = |speaker: &str, sentence: usize| -> Option<[f64; 3]> {
        cell_mean.get(&(speaker, sentence)).or_else(|| spk_mean.get(speaker)).copied()
    };

    let mut emo_acc: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    let mut residuals = Vec::with_capacity(references.len());
    for (r, m) in references.iter().zip(&measures) {
        let c = center(&r.bundle.speaker, r.sentence).unwrap();
        let resid = (m.zf0 - c[1], m.tilt - c[2]);
        residuals.push(resid);
        let e = emo_acc.entry(r.bundle.emotion.as_str()).or_insert((0.0, 0.0, 0.0));
        e.0 += resid.0;
        e.1 += resid.1;
        e.2 += 1.0;
    }
    let emo_proto: BTreeMap<&str, (f64, f64)> =
        emo_acc.iter().map(|(s, (f, t, n))| (*s, (f / n, t / n))).collect();
    let scale = |vals: Vec<f64>| -> f64 {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        var.sqrt().max(1e-9)
    };
    let s0 = scale(residuals.iter().map(|r| r.0).collect());
    let s1 = scale(residuals.iter().map(|r| r.1).collect());

    let mut emotion_hits = 0usize;
    let mut speaker_hits = 0usize;
    let mut content_sum = 0.0;
    for case in cases {
        let c = center(case.speaker, case.sentence).ok_or_else(|| {
            Error::Data(format!("factor recovery: speaker `{}` has no references", case.speaker))
        })?;
        if !emo_proto.contains_key(case.emotion) {
            return Err(Error::Data(format!(
                "factor recovery: emotion `{}` has no references",
                case.emotion
            )));
        }
        let m = measure(case.bundle, cfg);
        let spk_pred = spk_mean
            .keys()
            .min_by(|a, b| {
                let da = (center(a, case.sentence).unwrap()[0] - m.lnf0).abs();
                let db = (center(b, case.sentence).unwrap()[0] - m.lnf0).abs();
                da.total_cmp(&db)
            })
            .copied()
            .unwrap();
        let r = ((m.zf0 - c[1]) / s0, (m.tilt - c[2]) / s1);
        let emo_pred = emo_proto
            .iter()
            .min_by(|a, b| {
                let da = (a.1 .0 / s0 - r.0).powi(2) + (a.1 .1 / s1 - r.1).powi(2);
                let db = (b.1 .0 / s0 - r.0).powi(2) + (b.1 .1 / s1 - r.1).powi(2);
                da.total_cmp(&db)
            })
            .map(|(s, _)| *s)
            .unwrap();
        if spk_pred == case.speaker {
            speaker_hits += 1;
        }
        if emo_pred == case.emotion {
            emotion_hits += 1;
        }
        let aligned = linear_resample(&case.bundle.mel.frames, case.content_ref.mel.t())?;
        let mut cos = 0.0;
        for t in 0..aligned.rows {
            cos += frame_cosine(aligned.row(t), case.content_ref.mel.frames.row(t));
        }
        content_sum += cos / aligned.rows as f64;
    }
    let n = cases.len();
    Ok(FactorRecovery {
        emotion_accuracy: emotion_hits as f64 / n as f64,
        speaker_accuracy: speaker_hits as f64 / n as f64,
        content_correlation: content_sum / n as f64,
        n,
    })
}

// ---------------------------------------------------------------------------
// Silhouette
// ---------------------------------------------------------------------------

/// Mean silhouette coefficient of labeled points (rows). Singleton clusters
/// score 0 for their point.
pub fn silhouette(points: &Mat, labels: &[usize]) -> Result<f64> {
    let n = points.rows;
    if n != labels.len() {
        return Err(Error::Data(format!(
            "silhouette: {} points but {} labels",
            n,
            labels.len()
        )));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Data("silhouette: need at least two clusters".into()));
    }
    let dist = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = sums.entry(labels[j]).or_insert((0.0, 0));
            e.0 += dist(i, j);
            e.1 += 1;
        }
        let own = sums.get(&labels[i]).copied();
        let a = match own {
            Some((s, c)) if c > 0 => s / c as f64,
            _ => {
                continue; // singleton: contributes 0
            }
        };
        let b = sums
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, (s, c))| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / n as f64)
}

// ---------------------------------------------------------------------------
// Exact t-SNE
// ---------------------------------------------------------------------------

const TSNE_MAX_POINTS: usize = 2000;
const TSNE_EXAGGERATION: f64 = 12.0;
const TSNE_ETA: f64 = 200.0;

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// N x 2 embedding.
    pub embedding: Mat,
    /// KL(P || Q) right after the early-exaggeration phase ends.
    pub kl_after_exaggeration: f64,
    /// KL(P || Q) at the final iteration; never above the value above.
    pub kl_final: f64,
}

fn pairwise_sq(points: &Mat) -> Mat {
    let n = points.rows;
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.set(i, j, s);
            d.set(j, i, s);
        }
    }
    d
}

fn validate_tsne(n: usize, perplexity: f64) -> Result<()> {
    if n < 3 {
        return Err(Error::Data("tsne: need at least 3 points".into()));
    }
    if n > TSNE_MAX_POINTS {
        return Err(Error::Data(format!("tsne: {n} points exceed the {TSNE_MAX_POINTS} cap")));
    }
    if !(perplexity >= 1.0 && perplexity < n as f64 / 3.0) {
        return Err(Error::Config(format!(
            "tsne: perplexity {perplexity} out of range for {n} points (need 1 <= p < n/3)"
        )));
    }
    Ok(())
}

/// Row-normalized conditional distributions P(j|i), zero diagonal, each row
/// summing to 1. The per-point bandwidth is bisected until the row entropy
/// matches log(perplexity).
pub fn tsne_conditionals(points: &Mat, perplexity: f64) -> Result<Mat> {
    let n = points.rows;
    validate_tsne(n, perplexity)?;
    let d2 = pairwise_sq(points);
    let target_h = perplexity.ln();
    let mut p = Mat::zeros(n, n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2.get(i, j))
            .fold(f64::INFINITY, f64::min);
        let mut beta = 1.0f64;
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        for _ in 0..64 {
            let mut sum = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                *r = if j == i { 0.0 } else { (-beta * (d2.get(i, j) - dmin)).exp() };
                sum += *r;
            }
            let mut h = 0.0;
            for r in &row {
                let q = r / sum;
                if q > 0.0 {
                    h -= q * q.ln();
                }
            }
            if (h - target_h).abs() < 1e-9 {
                break;
            }
            if h > target_h {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        let sum: f64 = row.iter().sum();
        for (j, r) in row.iter().enumerate() {
            p.set(i, j, r / sum);
        }
    }
    Ok(p)
}

fn kl_divergence(p: &Mat, y: &Mat) -> f64 {
    let n = y.rows;
    let qn = q_numerators(y);
    let z: f64 = qn.data.iter().sum::<f64>().max(1e-12);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p.get(i, j);
            let qij = (qn.get(i, j) / z).max(1e-12);
            if pij > 0.0 {
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

fn q_numerators(y: &Mat) -> Mat {
    let n = y.rows;
    let mut q = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y.get(i, 0) - y.get(j, 0);
            let dy = y.get(i, 1) - y.get(j, 1);
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            q.set(i, j, v);
            q.set(j, i, v);
        }
    }
    q
}

/// Exact t-SNE to two dimensions with early exaggeration, momentum, and
/// adaptive per-coordinate gains. Deterministic in `seed`.
pub fn tsne_embed(points: &Mat, perplexity: f64, iters: usize, seed: u64) -> Result<TsneResult> {
    if iters == 0 {
        return Err(Error::Config("tsne: iters must be >= 1".into()));
    }
    let n = points.rows;
    let cond = tsne_conditionals(points, perplexity)?;
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = (cond.get(i, j) + cond.get(j, i)) / (2.0 * n as f64);
                p.set(i, j, v.max(1e-12));
            }
        }
    }
    let mut r = rng(seed);
    let mut y = Mat::from_fn(n, 2, |_, _| 1e-4 * gaussian(&mut r));
    let mut vel = Mat::zeros(n, 2);
    let mut gains = Mat::from_fn(n, 2, |_, _| 1.0);
    let exag_end = (iters / 4).clamp(1, iters);
    let mut kl_after_exaggeration = f64::NAN;
    for it in 0..iters {
        let exaggerating = it < exag_end;
        let qn = q_numerators(&y);
        let z: f64 = qn.data.iter().sum::<f64>().max(1e-12);
        let mut grad = Mat::zeros(n, 2);
        for i in 0..n {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = if exaggerating { TSNE_EXAGGERATION * p.get(i, j) } else { p.get(i, j) };
                let w = (pij - qn.get(i, j) / z) * qn.get(i, j);
                gx += w * (y.get(i, 0) - y.get(j, 0));
                gy += w * (y.get(i, 1) - y.get(j, 1));
            }
            grad.set(i, 0, 4.0 * gx);
            grad.set(i, 1, 4.0 * gy);
        }
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        for k in 0..n * 2 {
            let g = grad.data[k];
            let v = vel.data[k];
            gains.data[k] = if g * v > 0.0 { gains.data[k] * 0.8 } else { gains.data[k] + 0.2 }
                .max(0.01);
            vel.data[k] = momentum * v - TSNE_ETA * gains.data[k] * g;
            y.data[k] += vel.data[k];
        }
        for c in 0..2 {
            let mean: f64 = (0..n).map(|i| y.get(i, c)).sum::<f64>() / n as f64;
            for i in 0..n {
                y.set(i, c, y.get(i, c) - mean);
            }
        }
        if it + 1 == exag_end {
            kl_after_exaggeration = kl_divergence(&p, &y);
        }
    }
    let kl_final = kl_divergence(&p, &y);
    Ok(TsneResult { embedding: y, kl_after_exaggeration, kl_final })
}
