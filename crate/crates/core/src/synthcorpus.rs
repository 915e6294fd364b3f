//! Parametric source-filter speech generator with ground-truth factors.
//!
//! An utterance is a sequence of vowel segments separated by silent gaps.
//! Excitation is a band-limited pulse train (flat-amplitude harmonics with
//! scrambled phases) following a per-frame F0 contour, shaped by a cascade of
//! three two-pole resonators at vowel formant targets plus a dB-per-octave
//! tilt and low-level noise.
//!
//! Every controllable quantity is split the way the model wants to see it:
//! content (vowel ids) and rhythm (segment durations) are sentence identity,
//! the speaker owns base log-F0, contour range, formant scale and baseline
//! tilt, the emotion owns a log-F0 offset, a contour shape, and tilt and
//! bandwidth offsets. Emotion factors are additive in log-F0 and dB domains,
//! so the ground-truth arithmetic in tests is exact.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::{rng, subseed};
use crate::signal::wav::write_wav;
use crate::signal::Waveform;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Vowel formant targets (F1, F2, F3 in Hz), eight pseudo-phonemes.
pub const VOWELS: [[f64; 3]; 8] = [
    [800.0, 1200.0, 2500.0],
    [500.0, 1900.0, 2500.0],
    [300.0, 2300.0, 3000.0],
    [500.0, 900.0, 2400.0],
    [320.0, 800.0, 2500.0],
    [700.0, 1700.0, 2600.0],
    [550.0, 1350.0, 2450.0],
    [600.0, 1000.0, 2600.0],
];

/// Base formant bandwidths in Hz before the emotion offset.
const BASE_BW: [f64; 3] = [80.0, 110.0, 150.0];

/// Contour shapes indexed by the speaker-independent pitch factor.
pub const N_SHAPES: usize = 4;
/// Log-F0 swing of the contour shape component.
const SHAPE_AMP: f64 = 0.06;

/// F0 contour targets must stay inside this band (Hz).
pub const F0_TARGET_MIN: f64 = 80.0;
pub const F0_TARGET_MAX: f64 = 400.0;
/// Scaled formants must stay below this (Hz).
pub const MAX_FORMANT_HZ: f64 = 7600.0;

/// Tilt gains are measured relative to this frequency.
const TILT_REF_HZ: f64 = 200.0;
/// Harmonics render up to this frequency.
const HARMONIC_CAP_HZ: f64 = 7600.0;
/// Peak level after normalization.
const PEAK_TARGET: f64 = 0.5;
/// Uniform noise amplitude relative to the pre-noise peak.
const NOISE_LEVEL: f64 = 1e-3;

/// Per-speaker draws, fixed across all of a speaker's utterances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerFactors {
    /// Pitch register center (log Hz).
    pub base_log_f0: f64,
    /// Log-F0 swing applied to the sentence's segment wiggles.
    pub f0_range: f64,
    /// Multiplies every formant target.
    pub formant_scale: f64,
    /// Baseline spectral tilt (dB/octave).
    pub tilt_base: f64,
    /// Duration multiplier (rhythm jitter, not a loss target).
    pub rate: f64,
}

/// Per-emotion draws, shared by every speaker. Emotion never touches the
/// durations, so parallel renditions of a sentence by one speaker stay
/// frame-aligned across emotions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionFactors {
    /// Additive log-F0 offset.
    pub log_f0_offset: f64,
    /// Contour shape id, < N_SHAPES.
    pub shape: usize,
    /// Additive tilt (dB/octave).
    pub tilt_offset: f64,
    /// Additive formant bandwidth change (Hz).
    pub bw_offset: f64,
}

/// Sentence identity: what is said, in which rhythm skeleton, with which
/// per-segment pitch swings. Shared verbatim across the parallel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScript {
    pub phonemes: Vec<usize>,
    pub base_frames: Vec<usize>,
    /// Per-segment swing in [-1, 1], scaled by the speaker's f0_range.
    pub wiggles: Vec<f64>,
}

/// Everything that determines one utterance's audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFactors {
    /// Vowel id per segment.
    pub content: Vec<usize>,
    /// Realized frames per segment (rhythm), each >= 2.
    pub durations: Vec<usize>,
    /// Speaker-dependent pitch: (base log-F0, contour range).
    pub pitch_dep: (f64, f64),
    /// Speaker-independent pitch: (log-F0 offset, contour shape id).
    pub pitch_ind: (f64, usize),
    /// Speaker-dependent timbre: (formant scale, baseline tilt dB/oct).
    pub timbre_dep: (f64, f64),
    /// Speaker-independent timbre: (tilt offset dB/oct, bandwidth offset Hz).
    pub timbre_ind: (f64, f64),
    /// Per-segment log-F0 swing in [-1, 1].
    pub wiggles: Vec<f64>,
    /// Silent frames between segments.
    pub gap_frames: usize,
}

impl SyntheticFactors {
    pub fn n_segments(&self) -> usize {
        self.content.len()
    }

    /// Total frames, gaps included.
    pub fn total_frames(&self) -> usize {
        let voiced: usize = self.durations.iter().sum();
        voiced + self.gap_frames * self.n_segments().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.content.len();
        if n == 0 {
            return Err(Error::Data("factors: empty content sequence".into()));
        }
        if self.durations.len() != n || self.wiggles.len() != n {
            return Err(Error::Data(format!(
                "factors: {} segments but {} durations, {} wiggles",
                n,
                self.durations.len(),
                self.wiggles.len()
            )));
        }
        if let Some(d) = self.durations.iter().find(|d| **d < 2) {
            return Err(Error::Data(format!("factors: segment duration {d} < 2 frames")));
        }
        if let Some(p) = self.content.iter().find(|p| **p >= VOWELS.len()) {
            return Err(Error::Data(format!("factors: vowel id {p} out of range")));
        }
        if self.pitch_ind.1 >= N_SHAPES {
            return Err(Error::Data(format!("factors: contour shape {} out of range", self.pitch_ind.1)));
        }
        let max_formant = VOWELS
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |a, b| a.max(*b));
        if max_formant * self.timbre_dep.0 >= MAX_FORMANT_HZ {
            return Err(Error::Data(format!(
                "factors: formant scale {} pushes formants past {MAX_FORMANT_HZ} Hz",
                self.timbre_dep.0
            )));
        }
        for hz in target_f0_frames(self) {
            if hz > 0.0 && !(F0_TARGET_MIN..=F0_TARGET_MAX).contains(&hz) {
                return Err(Error::Data(format!(
                    "factors: F0 target {hz:.1} Hz outside [{F0_TARGET_MIN}, {F0_TARGET_MAX}]"
                )));
            }
        }
        Ok(())
    }

    /// Loss targets, all normalized to O(1) scale.
    pub fn pitch_ind_target(&self) -> [f64; 2] {
        [self.pitch_ind.0 / 0.14, 2.0 * self.pitch_ind.1 as f64 / (N_SHAPES - 1) as f64 - 1.0]
    }

    pub fn timbre_ind_target(&self) -> [f64; 2] {
        [self.timbre_ind.0 / 8.0, self.timbre_ind.1 / 20.0]
    }

    pub fn pitch_dep_target(&self) -> [f64; 2] {
        [(self.pitch_dep.0 - 170.0f64.ln()) / 0.45, (self.pitch_dep.1 - 0.06) / 0.02]
    }

    pub fn timbre_dep_target(&self) -> [f64; 2] {
        [(self.timbre_dep.0 - 1.0) / 0.12, (self.timbre_dep.1 + 4.0) / 2.0]
    }
}

fn shape_curve(shape: usize, u: f64) -> f64 {
    match shape {
        0 => 0.0,
        1 => 2.0 * u - 1.0,
        2 => 1.0 - 2.0 * u,
        _ => 2.0 * (PI * u).sin() - 1.0,
    }
}

/// Ground-truth F0 per frame (Hz), 0.0 during gaps. The shape curve advances
/// over voiced frames only, so gaps do not distort it.
pub fn target_f0_frames(f: &SyntheticFactors) -> Vec<f64> {
    let total_voiced: usize = f.durations.iter().sum();
    let denom = (total_voiced.saturating_sub(1)).max(1) as f64;
    let mut out = Vec::with_capacity(f.total_frames());
    let mut voiced_at = 0usize;
    for (i, &dur) in f.durations.iter().enumerate() {
        if i > 0 {
            out.extend(std::iter::repeat(0.0).take(f.gap_frames));
        }
        for j in 0..dur {
            let u = (voiced_at + j) as f64 / denom;
            let log_f0 = f.pitch_dep.0
                + f.pitch_ind.0
                + f.pitch_dep.1 * f.wiggles[i]
                + SHAPE_AMP * shape_curve(f.pitch_ind.1, u);
            out.push(log_f0.exp());
        }
        voiced_at += dur;
    }
    out
}

/// |H| of a two-pole resonator at `f`, normalized to 1 at the center.
fn resonator_mag(f: f64, center: f64, bw: f64, sr: f64) -> f64 {
    let r = (-PI * bw / sr).exp();
    let theta = 2.0 * PI * center / sr;
    let denom_mag = |w: f64| {
        let re = 1.0 - 2.0 * r * theta.cos() * w.cos() + r * r * (2.0 * w).cos();
        let im = 2.0 * r * theta.cos() * w.sin() - r * r * (2.0 * w).sin();
        re.hypot(im)
    };
    denom_mag(theta) / denom_mag(2.0 * PI * f / sr)
}

/// Harmonic amplitude at frequency `f` for one segment's filter settings.
fn harmonic_amp(f: f64, formants: &[f64; 3], bws: &[f64; 3], tilt_db_oct: f64, sr: f64) -> f64 {
    let mut a = 10.0f64.powf(tilt_db_oct * (f / TILT_REF_HZ).log2() / 20.0);
    for i in 0..3 {
        a *= resonator_mag(f, formants[i], bws[i], sr);
    }
    a
}

/// Render one utterance. Deterministic in (factors, cfg, seed); the seed only
/// feeds the additive noise floor.
pub fn generate_utterance(f: &SyntheticFactors, cfg: &ExperimentConfig, seed: u64) -> Result<Waveform> {
    f.validate()?;
    let sr = cfg.sample_rate as f64;
    let hop = cfg.hop;
    let f0_frames = target_f0_frames(f);
    let total_frames = f0_frames.len();
    let n = total_frames * hop;
    let mut x = vec![0.0f64; n];
    let mut env = vec![0.0f64; n];

    let cap_hz = HARMONIC_CAP_HZ.min(0.95 * sr / 2.0);
    let tilt = f.timbre_dep.1 + f.timbre_ind.0;
    let mut frame_at = 0usize;
    for (i, &dur) in f.durations.iter().enumerate() {
        if i > 0 {
            frame_at += f.gap_frames;
        }
        let vowel = VOWELS[f.content[i]];
        let formants = [
            vowel[0] * f.timbre_dep.0,
            vowel[1] * f.timbre_dep.0,
            vowel[2] * f.timbre_dep.0,
        ];
        let bws = [
            (BASE_BW[0] + f.timbre_ind.1).max(20.0),
            (BASE_BW[1] + f.timbre_ind.1).max(20.0),
            (BASE_BW[2] + f.timbre_ind.1).max(20.0),
        ];
        let seg_start = frame_at * hop;
        let seg_len = dur * hop;
        let fade = (seg_len / 4).min(hop).max(1);
        let mut phase = 0.0f64;
        for j in 0..dur {
            let f0 = f0_frames[frame_at + j];
            let k_max = (cap_hz / f0).floor() as usize;
            let amps: Vec<f64> = (1..=k_max)
                .map(|k| harmonic_amp(k as f64 * f0, &formants, &bws, tilt, sr))
                .collect();
            let d_phase = 2.0 * PI * f0 / sr;
            for s in 0..hop {
                let at = seg_start + j * hop + s;
                phase += d_phase;
                let mut v = 0.0;
                for (k, a) in amps.iter().enumerate() {
                    // Golden-ratio phase scramble keeps the crest factor sane.
                    let psi = 2.0 * PI * (((k + 1) as f64 * 0.618_033_988_749_895).fract());
                    v += a * ((k + 1) as f64 * phase + psi).cos();
                }
                let pos = at - seg_start;
                let e = if pos < fade {
                    0.5 - 0.5 * (PI * pos as f64 / fade as f64).cos()
                } else if pos + fade >= seg_len {
                    0.5 - 0.5 * (PI * (seg_len - pos) as f64 / fade as f64).cos()
                } else {
                    1.0
                };
                x[at] = v * e;
                env[at] = e;
            }
        }
        frame_at += dur;
    }

    let peak = x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if peak <= 0.0 {
        return Err(Error::Internal("generator produced silence".into()));
    }
    let mut noise_rng = rng(subseed(seed, "noise", &[]));
    for (v, e) in x.iter_mut().zip(&env) {
        *v += e * peak * NOISE_LEVEL * noise_rng.random_range(-1.0..1.0);
    }
    let peak = x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let scale = PEAK_TARGET / peak;
    x.iter_mut().for_each(|v| *v *= scale);
    Waveform::new(x, cfg.sample_rate)
}

/// Deterministic per-speaker draws. Registers are stratified across speakers
/// so small grids still spread the pitch space.
pub fn speaker_factors(cfg: &ExperimentConfig, i: usize) -> SpeakerFactors {
    let mut r = rng(subseed(cfg.seed, "speaker", &[i as u64]));
    let u = (i as f64 + 0.5) / cfg.speakers as f64;
    let lo = 95.0f64.ln();
    let hi = 320.0f64.ln();
    SpeakerFactors {
        base_log_f0: lo + u * (hi - lo) + r.random_range(-0.03..0.03),
        f0_range: r.random_range(0.04..0.08),
        formant_scale: r.random_range(0.88..1.12),
        tilt_base: r.random_range(-6.0..-2.0),
        rate: r.random_range(0.9..1.1),
    }
}

/// Emotion factors derived from the valence-arousal table. Arousal moves
/// pitch up; valence brightens the tilt and narrows formants. The contour
/// shape follows the emotion's position in the table.
pub fn emotion_factors(cfg: &ExperimentConfig, label: &str) -> Result<EmotionFactors> {
    let idx = cfg
        .va_table
        .iter()
        .position(|(n, _)| n == label)
        .ok_or_else(|| Error::Config(format!("emotion `{label}` missing from va_table")))?;
    let (valence, arousal) = cfg.va_table[idx].1;
    Ok(EmotionFactors {
        log_f0_offset: 0.14 * arousal,
        shape: idx % N_SHAPES,
        tilt_offset: 8.0 * valence,
        bw_offset: -20.0 * valence,
    })
}

/// Deterministic sentence identity, shared across the parallel grid.
pub fn sentence_script(cfg: &ExperimentConfig, s: usize) -> SentenceScript {
    let mut r = rng(subseed(cfg.seed, "sentence", &[s as u64]));
    let n_segs = r.random_range(cfg.segments_min..=cfg.segments_max);
    SentenceScript {
        phonemes: (0..n_segs).map(|_| r.random_range(0..VOWELS.len())).collect(),
        base_frames: (0..n_segs)
            .map(|_| r.random_range(cfg.seg_frames_min..=cfg.seg_frames_max))
            .collect(),
        wiggles: (0..n_segs).map(|_| r.random_range(-1.0..1.0)).collect(),
    }
}

/// Combine the three factor sources into one utterance's ground truth.
pub fn assemble_factors(
    spk: &SpeakerFactors,
    emo: &EmotionFactors,
    script: &SentenceScript,
    gap_frames: usize,
) -> SyntheticFactors {
    SyntheticFactors {
        content: script.phonemes.clone(),
        durations: script
            .base_frames
            .iter()
            .map(|b| ((*b as f64 * spk.rate).round() as usize).max(2))
            .collect(),
        pitch_dep: (spk.base_log_f0, spk.f0_range),
        pitch_ind: (emo.log_f0_offset, emo.shape),
        timbre_dep: (spk.formant_scale, spk.tilt_base),
        timbre_ind: (emo.tilt_offset, emo.bw_offset),
        wiggles: script.wiggles.clone(),
        gap_frames,
    }
}

/// One corpus row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub emotion: String,
    pub sentence: usize,
    /// WAV path relative to the corpus directory.
    pub wav: String,
    pub factors: SyntheticFactors,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub utterances: Vec<Utterance>,
}

impl CorpusManifest {
    pub fn find(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// The same sentence by the same speaker in another emotion.
    pub fn parallel<'a>(&'a self, of: &Utterance, emotion: &str) -> Option<&'a Utterance> {
        self.utterances
            .iter()
            .find(|u| u.speaker == of.speaker && u.sentence == of.sentence && u.emotion == emotion)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("manifest row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut utterances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let u: Utterance = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))?;
            utterances.push(u);
        }
        Ok(CorpusManifest { utterances })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    /// Every (speaker, emotion, sentence) cell of the config grid, exactly once.
    pub fn check_grid(&self, cfg: &ExperimentConfig) -> Result<()> {
        let expect = cfg.speakers * cfg.emotions.len() * cfg.sentences;
        if self.utterances.len() != expect {
            return Err(Error::Data(format!(
                "manifest has {} utterances, grid wants {expect}",
                self.utterances.len()
            )));
        }
        for s in 0..cfg.speakers {
            for emo in &cfg.emotions {
                for sent in 0..cfg.sentences {
                    let speaker = format!("s{s}");
                    let hit = self
                        .utterances
                        .iter()
                        .filter(|u| u.speaker == speaker && &u.emotion == emo && u.sentence == sent)
                        .count();
                    if hit != 1 {
                        return Err(Error::Data(format!(
                            "grid cell ({speaker}, {emo}, {sent}) appears {hit} times"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn utterance_id(speaker: usize, emotion: &str, sentence: usize) -> String {
    format!("s{speaker}_{emotion}_{sentence:03}")
}

/// Render the full parallel grid under `dir` (WAVs in `dir/wav`, manifest at
/// `dir/manifest.jsonl`). Rerunning with the same config is byte-identical.
pub fn make_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<CorpusManifest> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let speakers: Vec<SpeakerFactors> = (0..cfg.speakers).map(|i| speaker_factors(cfg, i)).collect();
    let scripts: Vec<SentenceScript> = (0..cfg.sentences).map(|s| sentence_script(cfg, s)).collect();
    let mut manifest = CorpusManifest::default();
    for (si, spk) in speakers.iter().enumerate() {
        for (ei, emo_label) in cfg.emotions.iter().enumerate() {
            let emo = emotion_factors(cfg, emo_label)?;
            for (sent, script) in scripts.iter().enumerate() {
                let factors = assemble_factors(spk, &emo, script, cfg.gap_frames);
                let seed = subseed(cfg.seed, "utterance", &[si as u64, ei as u64, sent as u64]);
                let wave = generate_utterance(&factors, cfg, seed)?;
                let id = utterance_id(si, emo_label, sent);
                let rel = format!("wav/{id}.wav");
                write_wav(&wav_dir.join(format!("{id}.wav")), &wave)?;
                manifest.utterances.push(Utterance {
                    id,
                    speaker: format!("s{si}"),
                    emotion: emo_label.clone(),
                    sentence: sent,
                    wav: rel,
                    factors,
                });
            }
        }
    }
    std::fs::write(dir.join("manifest.jsonl"), manifest.to_jsonl())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featcache::raw_f0;

    fn base_factors() -> SyntheticFactors {
        SyntheticFactors {
            content: vec![0],
            durations: vec![31],
            pitch_dep: (150.0f64.ln(), 0.0),
            pitch_ind: (0.0, 0),
            timbre_dep: (1.0, -4.0),
            timbre_ind: (0.0, 0.0),
            wiggles: vec![0.0],
            gap_frames: 2,
        }
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn flat_150hz_vowel_analyzes_back_to_150() {
        let cfg = ExperimentConfig::default();
        let w = generate_utterance(&base_factors(), &cfg, 5).unwrap();
        assert_eq!(w.samples.len(), 31 * cfg.hop);
        let f0 = raw_f0(&w, &cfg).unwrap();
        let voiced: Vec<f64> = f0.hz.iter().copied().filter(|h| *h > 0.0).collect();
        assert!(voiced.len() > 20, "only {} voiced frames", voiced.len());
        let med = median(voiced);
        assert!((med - 150.0).abs() < 3.0, "median F0 {med}");
    }

    #[test]
    fn contoured_utterance_tracks_its_target() {
        let cfg = ExperimentConfig::default();
        let mut f = base_factors();
        f.content = vec![2, 5, 1];
        f.durations = vec![12, 10, 14];
        f.wiggles = vec![0.4, -0.8, 0.2];
        f.pitch_dep = (190.0f64.ln(), 0.1);
        f.pitch_ind = (0.08, 3);
        let w = generate_utterance(&f, &cfg, 9).unwrap();
        let track = raw_f0(&w, &cfg).unwrap();
        let target = target_f0_frames(&f);
        let mut errs = Vec::new();
        for (t, &hz) in target.iter().enumerate() {
            if hz > 0.0 && track.is_voiced(t) {
                errs.push((track.hz[t] - hz).abs());
            }
        }
        assert!(errs.len() > 20, "only {} co-voiced frames", errs.len());
        let med = median(errs);
        assert!(med < 5.0, "median target error {med} Hz");
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let cfg = ExperimentConfig::default();
        let f = base_factors();
        let a = generate_utterance(&f, &cfg, 42).unwrap();
        let b = generate_utterance(&f, &cfg, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = generate_utterance(&f, &cfg, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn invalid_factors_are_domain_errors() {
        let cfg = ExperimentConfig::default();
        let empty = SyntheticFactors { content: vec![], durations: vec![], wiggles: vec![], ..base_factors() };
        assert!(generate_utterance(&empty, &cfg, 1).unwrap_err().to_string().contains("empty content"));

        let mut short = base_factors();
        short.durations = vec![1];
        assert!(generate_utterance(&short, &cfg, 1).unwrap_err().to_string().contains("< 2 frames"));

        let mut high = base_factors();
        high.pitch_dep.0 = 500.0f64.ln();
        assert!(generate_utterance(&high, &cfg, 1).unwrap_err().to_string().contains("F0 target"));

        let mut wide = base_factors();
        wide.timbre_dep.0 = 3.0;
        assert!(generate_utterance(&wide, &cfg, 1).unwrap_err().to_string().contains("formant"));
    }

    #[test]
    fn log_f0_offset_scales_mean_f0_multiplicatively() {
        let cfg = ExperimentConfig::default();
        let mut ratios = Vec::new();
        for (base, seed) in [(120.0f64, 1u64), (170.0, 2), (220.0, 3)] {
            let mut neutral = base_factors();
            neutral.content = vec![3, 6];
            neutral.durations = vec![14, 12];
            neutral.wiggles = vec![0.3, -0.5];
            neutral.pitch_dep = (base.ln(), 0.08);
            let mut raised = neutral.clone();
            raised.pitch_ind.0 = 0.3;
            let mean = |f: &SyntheticFactors, s: u64| {
                let w = generate_utterance(f, &cfg, s).unwrap();
                let t = raw_f0(&w, &cfg).unwrap();
                let v: Vec<f64> = t.hz.iter().copied().filter(|h| *h > 0.0).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            ratios.push(mean(&raised, seed) / mean(&neutral, seed));
        }
        for r in ratios {
            assert!((1.28..=1.42).contains(&r), "mean F0 ratio {r}");
        }
    }

    #[test]
    fn corpus_covers_the_grid_and_is_reproducible() {
        let mut cfg = ExperimentConfig::default();
        cfg.speakers = 2;
        cfg.emotions = vec!["neutral".into(), "happy".into()];
        cfg.sentences = 3;
        cfg.segments_min = 2;
        cfg.segments_max = 3;
        cfg.seg_frames_min = 5;
        cfg.seg_frames_max = 7;
        let dir = tempfile::tempdir().unwrap();
        let manifest = make_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.utterances.len(), 12);
        manifest.check_grid(&cfg).unwrap();
        for u in &manifest.utterances {
            assert!(dir.path().join(&u.wav).exists(), "{} missing", u.wav);
        }
        let u = manifest.find("s0_happy_002").unwrap();
        let sib = manifest.parallel(u, "neutral").unwrap();
        assert_eq!(sib.id, "s0_neutral_002");
        assert_eq!(sib.factors.content, u.factors.content);
        assert_eq!(sib.factors.pitch_dep, u.factors.pitch_dep);
        assert_ne!(sib.factors.pitch_ind, u.factors.pitch_ind);
        // same speaker, same sentence: durations identical across emotions
        assert_eq!(sib.factors.durations, u.factors.durations);

        let loaded = CorpusManifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded, manifest);

        let first_manifest = std::fs::read(dir.path().join("manifest.jsonl")).unwrap();
        let first_wav = std::fs::read(dir.path().join(&u.wav)).unwrap();
        make_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("manifest.jsonl")).unwrap(), first_manifest);
        assert_eq!(std::fs::read(dir.path().join(&u.wav)).unwrap(), first_wav);
    }

    #[test]
    fn emotion_factors_follow_the_va_table() {
        let cfg = ExperimentConfig::default();
        let neutral = emotion_factors(&cfg, "neutral").unwrap();
        assert_eq!(neutral.log_f0_offset, 0.0);
        assert_eq!(neutral.tilt_offset, 0.0);
        let happy = emotion_factors(&cfg, "happy").unwrap();
        assert!(happy.log_f0_offset > 0.0);
        assert!(happy.tilt_offset > 0.0);
        let sad = emotion_factors(&cfg, "sad").unwrap();
        assert!(sad.log_f0_offset < 0.0);
        assert!(sad.tilt_offset < 0.0);
        assert_ne!(happy.shape, sad.shape);
        assert!(emotion_factors(&cfg, "bored").is_err());
    }

    #[test]
    fn speaker_registers_are_stratified_and_stable() {
        let cfg = ExperimentConfig::default();
        let a = speaker_factors(&cfg, 0);
        let b = speaker_factors(&cfg, 3);
        assert_eq!(a, speaker_factors(&cfg, 0));
        assert!(b.base_log_f0 > a.base_log_f0 + 0.3, "registers too close");
        for i in 0..cfg.speakers {
            let s = speaker_factors(&cfg, i);
            assert!((0.88..1.12).contains(&s.formant_scale));
            assert!((-6.0..-2.0).contains(&s.tilt_base));
        }
    }

    #[test]
    fn factor_targets_are_order_one() {
        let cfg = ExperimentConfig::default();
        for i in 0..cfg.speakers {
            for emo in &cfg.emotions {
                let f = assemble_factors(
                    &speaker_factors(&cfg, i),
                    &emotion_factors(&cfg, emo).unwrap(),
                    &sentence_script(&cfg, 0),
                    cfg.gap_frames,
                );
                for v in f
                    .pitch_ind_target()
                    .iter()
                    .chain(f.timbre_ind_target().iter())
                    .chain(f.pitch_dep_target().iter())
                    .chain(f.timbre_dep_target().iter())
                {
                    assert!(v.abs() <= 2.0, "target component {v}");
                }
            }
        }
    }
}
