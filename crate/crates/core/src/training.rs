//! Losses, pairing regimes, the epoch loop, direction-filter stages, and the
//! valence-arousal conversion schedule.
//!
//! One composed pass rebuilds the target-emotion rendition of the source
//! sentence from the source utterance plus two reference bundles. The corpus
//! is frame-aligned across emotions (durations depend only on speaker and
//! sentence), so reconstruction is a plain per-frame MSE against the parallel
//! rendition; with target emotion equal to source emotion this degenerates to
//! literal self-reconstruction. Factor projection heads pin each
//! emotion-separate code to its ground-truth factor pair: the
//! speaker-independent heads to the target emotion's factors, the
//! speaker-dependent heads to the source speaker's.
//!
//! Direction filters re-train only the emotion-separate encoders and
//! projection heads on emotion pairs that move along one valence-arousal
//! axis; inference routes a conversion through the arousal filter first, then
//! the valence filter, re-analyzing the decoded mel between steps.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval;
use crate::featcache::FeatureBundle;
use crate::mat::Mat;
use crate::model::{forward, project_code, register_model, ForwardIds};
use crate::neural::{Adam, Id, ParamStore, Tape};
use crate::resample::{random_resample, RrParams};
use crate::rng::subseed;
use crate::signal::mcep::mel_cepstra;
use crate::signal::mel::MelSpectrogram;
use crate::signal::pitch::F0Track;
use crate::signal::pitchnorm::{normalize, SpeakerF0Stats};
use crate::synthcorpus::CorpusManifest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

// ---------------------------------------------------------------- losses

/// Mean squared error over all cells.
pub fn reconstruction_loss(x_hat: &Mat, x: &Mat) -> Result<f64> {
    if x_hat.rows != x.rows || x_hat.cols != x.cols {
        return Err(Error::Data(format!(
            "reconstruction: shape {}x{} vs {}x{}",
            x_hat.rows, x_hat.cols, x.rows, x.cols
        )));
    }
    if x.data.is_empty() {
        return Err(Error::Data("reconstruction: empty spectrogram".into()));
    }
    let sum: f64 = x_hat.data.iter().zip(&x.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.data.len() as f64)
}

/// Mean absolute difference between two equal-length vectors.
pub fn l1_mean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Data(format!("l1: lengths {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Speaker-independent factor loss: pitch term plus `lambda1` times the
/// timbre term, each an L1 mean between code projection and ground truth.
pub fn independent_emotion_loss(
    pitch_code: &[f64],
    pitch_target: &[f64],
    timbre_code: &[f64],
    timbre_target: &[f64],
    lambda1: f64,
) -> Result<f64> {
    Ok(l1_mean(pitch_code, pitch_target)? + lambda1 * l1_mean(timbre_code, timbre_target)?)
}

/// Speaker-dependent factor loss, same shape with `lambda2`.
pub fn dependent_feature_loss(
    pitch_code: &[f64],
    pitch_target: &[f64],
    timbre_code: &[f64],
    timbre_target: &[f64],
    lambda2: f64,
) -> Result<f64> {
    Ok(l1_mean(pitch_code, pitch_target)? + lambda2 * l1_mean(timbre_code, timbre_target)?)
}

fn mse_node(t: &mut Tape, a: Id, b: Id) -> Id {
    let d = t.sub(a, b);
    let sq = t.mul(d, d);
    t.mean_all(sq)
}

fn l1_node(t: &mut Tape, a: Id, b: Id) -> Id {
    let d = t.sub(a, b);
    let ad = t.abs(d);
    t.mean_all(ad)
}

// ---------------------------------------------------------------- dataset

/// One utterance ready for the tape: standardized log-mel, pitch channels,
/// and the four ground-truth factor pairs.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub speaker: String,
    pub emotion: String,
    pub sentence: usize,
    /// Standardized log-mel, T x n_mels.
    pub mel: Mat,
    /// (normalized log-F0, voiced flag), T x 2.
    pub pitch: Mat,
    pub pitch_ind: [f64; 2],
    pub timbre_ind: [f64; 2],
    pub pitch_dep: [f64; 2],
    pub timbre_dep: [f64; 2],
}

/// The full corpus grid with scalar mel statistics from the training split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<TrainItem>,
    pub mel_mean: f64,
    pub mel_std: f64,
    /// Emotion labels in config order.
    pub emotions: Vec<String>,
    /// Speaker ids, sorted.
    pub speakers: Vec<String>,
    /// Sentences at or past this index are held out of training.
    pub holdout_from: usize,
    index: BTreeMap<(String, String, usize), usize>,
}

impl Dataset {
    pub fn build(
        manifest: &CorpusManifest,
        bundles: &BTreeMap<String, FeatureBundle>,
        cfg: &ExperimentConfig,
    ) -> Result<Dataset> {
        if manifest.utterances.is_empty() {
            return Err(Error::Data("training: empty manifest".into()));
        }
        let holdout_from = cfg.sentences.saturating_sub(cfg.holdout_sentences);
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        let mut n = 0usize;
        for u in &manifest.utterances {
            let b = bundles
                .get(&u.id)
                .ok_or_else(|| Error::Data(format!("training: no features for `{}`", u.id)))?;
            if !cfg.emotions.iter().any(|e| e == &u.emotion) {
                return Err(Error::Data(format!(
                    "training: emotion `{}` of `{}` not in config",
                    u.emotion, u.id
                )));
            }
            if u.sentence < holdout_from {
                for v in &b.mel.frames.data {
                    sum += v;
                    sumsq += v * v;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Data(
                "training: empty training split (every sentence held out)".into(),
            ));
        }
        let mel_mean = sum / n as f64;
        let mel_std = (sumsq / n as f64 - mel_mean * mel_mean).max(0.0).sqrt().max(1e-9);

        let mut items = Vec::with_capacity(manifest.utterances.len());
        let mut index = BTreeMap::new();
        let mut speakers: Vec<String> = Vec::new();
        for u in &manifest.utterances {
            let b = &bundles[&u.id];
            let mel = Mat {
                rows: b.mel.frames.rows,
                cols: b.mel.frames.cols,
                data: b.mel.frames.data.iter().map(|v| (v - mel_mean) / mel_std).collect(),
            };
            let key = (u.speaker.clone(), u.emotion.clone(), u.sentence);
            if index.insert(key, items.len()).is_some() {
                return Err(Error::Data(format!(
                    "training: duplicate cell ({}, {}, {})",
                    u.speaker, u.emotion, u.sentence
                )));
            }
            if !speakers.contains(&u.speaker) {
                speakers.push(u.speaker.clone());
            }
            items.push(TrainItem {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                emotion: u.emotion.clone(),
                sentence: u.sentence,
                mel,
                pitch: b.pitch_channels(),
                pitch_ind: u.factors.pitch_ind_target(),
                timbre_ind: u.factors.timbre_ind_target(),
                pitch_dep: u.factors.pitch_dep_target(),
                timbre_dep: u.factors.timbre_dep_target(),
            });
        }
        speakers.sort();
        Ok(Dataset {
            items,
            mel_mean,
            mel_std,
            emotions: cfg.emotions.clone(),
            speakers,
            holdout_from,
            index,
        })
    }

    pub fn find(&self, speaker: &str, emotion: &str, sentence: usize) -> Option<usize> {
        self.index.get(&(speaker.to_string(), emotion.to_string(), sentence)).copied()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.items.len()).filter(|i| self.items[*i].sentence < self.holdout_from).collect()
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.items.len()).filter(|i| self.items[*i].sentence >= self.holdout_from).collect()
    }
}

// ---------------------------------------------------------------- pairing

/// How an epoch picks its composition pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum Pairing {
    /// Every training utterance once per epoch, target emotion cycling with
    /// the epoch so each utterance sees every direction (self included) over
    /// any window of `n_emotions` consecutive epochs.
    AllDirections,
    /// Only the listed (source emotion, target emotion) directions.
    EmotionPairs(Vec<(String, String)>),
}

/// One composed training example: source, its same-speaker target-emotion
/// parallel, and an other-speaker same-emotion reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainPair {
    pub src: usize,
    pub tgt: usize,
    pub other: usize,
}

impl TrainPair {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let n = ds.items.len();
        if self.src >= n || self.tgt >= n || self.other >= n {
            return Err(Error::Data("pair: item index out of range".into()));
        }
        let (s, t, o) = (&ds.items[self.src], &ds.items[self.tgt], &ds.items[self.other]);
        if s.speaker != t.speaker || s.sentence != t.sentence {
            return Err(Error::Data(format!(
                "pair: target `{}` is not a parallel rendition of `{}`",
                t.id, s.id
            )));
        }
        if o.emotion != s.emotion || o.sentence != s.sentence {
            return Err(Error::Data(format!(
                "pair: reference `{}` must match emotion and sentence of `{}`",
                o.id, s.id
            )));
        }
        if o.speaker == s.speaker && ds.speakers.len() > 1 {
            return Err(Error::Data(format!(
                "pair: reference `{}` must come from another speaker",
                o.id
            )));
        }
        if s.mel.rows != t.mel.rows {
            return Err(Error::Data(format!(
                "pair: renditions `{}` and `{}` are not frame-aligned",
                s.id, t.id
            )));
        }
        Ok(())
    }
}

fn cell(ds: &Dataset, speaker: &str, emotion: &str, sentence: usize) -> Result<usize> {
    ds.find(speaker, emotion, sentence).ok_or_else(|| {
        Error::Data(format!("training: grid cell ({speaker}, {emotion}, {sentence}) missing"))
    })
}

/// Other-speaker reference for the source item, cycling over speakers.
fn other_for(ds: &Dataset, src: &TrainItem, pos: usize, epoch: usize) -> Result<usize> {
    let n_spk = ds.speakers.len();
    let s_idx = ds.speakers.iter().position(|s| s == &src.speaker).expect("known speaker");
    let y_idx = (s_idx + 1 + (epoch + pos) % (n_spk - 1)) % n_spk;
    cell(ds, &ds.speakers[y_idx], &src.emotion, src.sentence)
}

/// Deterministic pair list for one epoch over the training split.
pub fn make_pairs(ds: &Dataset, pairing: &Pairing, epoch: usize) -> Result<Vec<TrainPair>> {
    let train = ds.train_indices();
    if train.is_empty() {
        return Err(Error::Data("training: empty dataset".into()));
    }
    if ds.speakers.len() < 2 {
        return Err(Error::Data(
            "training: cross-speaker references need at least two speakers".into(),
        ));
    }
    let n_emo = ds.emotions.len();
    let mut pairs = Vec::new();
    match pairing {
        Pairing::AllDirections => {
            for (pos, &i) in train.iter().enumerate() {
                let s = &ds.items[i];
                let e_idx = ds.emotions.iter().position(|e| e == &s.emotion).expect("known");
                let t_idx = (e_idx + (epoch + pos) % n_emo) % n_emo;
                let tgt = cell(ds, &s.speaker, &ds.emotions[t_idx], s.sentence)?;
                let other = other_for(ds, s, pos, epoch)?;
                pairs.push(TrainPair { src: i, tgt, other });
            }
        }
        Pairing::EmotionPairs(dirs) => {
            if dirs.is_empty() {
                return Err(Error::Data("training: empty emotion pair list".into()));
            }
            let mut pos = 0usize;
            for &i in &train {
                let s = &ds.items[i];
                for (src_emo, tgt_emo) in dirs {
                    if &s.emotion != src_emo {
                        continue;
                    }
                    let tgt = cell(ds, &s.speaker, tgt_emo, s.sentence)?;
                    let other = other_for(ds, s, pos, epoch)?;
                    pairs.push(TrainPair { src: i, tgt, other });
                    pos += 1;
                }
            }
            if pairs.is_empty() {
                return Err(Error::Data(
                    "training: no utterance matches the emotion pair list".into(),
                ));
            }
        }
    }
    Ok(pairs)
}

// ---------------------------------------------------------------- epoch loop

/// Which tensors an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Full,
    /// Emotion-separate encoders and factor projection heads only.
    EmotionSeparate,
}

impl Scope {
    fn trains(&self, name: &str) -> bool {
        match self {
            Scope::Full => true,
            Scope::EmotionSeparate => name.starts_with("enc.emo.") || name.starts_with("proj."),
        }
    }
}

/// Per-epoch loss means plus wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub recon: f64,
    pub pitch_ind: f64,
    pub timbre_ind: f64,
    pub pitch_dep: f64,
    pub timbre_dep: f64,
    pub wall_ms: u64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,loss_recon,loss_PI,loss_TI,loss_PD,loss_TD,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.recon,
            self.pitch_ind,
            self.timbre_ind,
            self.pitch_dep,
            self.timbre_dep,
            self.wall_ms
        )
    }

    /// The deterministic part of the record.
    pub fn losses(&self) -> [f64; 5] {
        [self.recon, self.pitch_ind, self.timbre_ind, self.pitch_dep, self.timbre_dep]
    }
}

fn rr_params(cfg: &ExperimentConfig) -> RrParams {
    RrParams {
        seg_min: cfg.rr_seg_min,
        seg_max: cfg.rr_seg_max,
        stretch_min: cfg.rr_stretch_min,
        stretch_max: cfg.rr_stretch_max,
    }
}

struct PairNodes {
    total: Id,
    terms: [Id; 5],
}

/// Build the composed graph and loss nodes for one pair. The rhythm stream
/// sees the raw source mel; the content and all pitch streams see freshly
/// reseeded random resamplings.
fn pair_graph(
    t: &mut Tape,
    params: &ParamStore,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    pair: &TrainPair,
    rr_seed: u64,
) -> Result<PairNodes> {
    let s = &ds.items[pair.src];
    let tg = &ds.items[pair.tgt];
    let o = &ds.items[pair.other];
    let p = rr_params(cfg);
    let x = t.input(&s.mel);
    let x_rr = t.input(&random_resample(&s.mel, subseed(rr_seed, "x", &[]), &p)?);
    let p_rr = t.input(&random_resample(&s.pitch, subseed(rr_seed, "ps", &[]), &p)?);
    let x_t = t.input(&tg.mel);
    let p_t_rr = t.input(&random_resample(&tg.pitch, subseed(rr_seed, "pt", &[]), &p)?);
    let x_y = t.input(&o.mel);
    let p_y_rr = t.input(&random_resample(&o.pitch, subseed(rr_seed, "py", &[]), &p)?);
    let ids = ForwardIds { x, x_rr, p_rr, x_t, p_t_rr, x_y, p_y_rr };
    let out = forward(t, params, cfg, &ids, tg.mel.rows);

    let target = |t: &mut Tape, v: [f64; 2]| t.input(&Mat::from_rows(&[v.to_vec()]));
    let pi_hat = project_code(t, params, "pi", out.z_zf_t);
    let ti_hat = project_code(t, params, "ti", out.z_u_t);
    let pd_hat = project_code(t, params, "pd", out.z_zf_s);
    let td_hat = project_code(t, params, "td", out.z_u_s);
    let pi_ref = target(t, tg.pitch_ind);
    let ti_ref = target(t, tg.timbre_ind);
    let pd_ref = target(t, s.pitch_dep);
    let td_ref = target(t, s.timbre_dep);

    let recon = mse_node(t, out.x_hat, x_t);
    let pi = l1_node(t, pi_hat, pi_ref);
    let ti = l1_node(t, ti_hat, ti_ref);
    let pd = l1_node(t, pd_hat, pd_ref);
    let td = l1_node(t, td_hat, td_ref);

    let ti_w = t.scale(ti, cfg.lambda1);
    let td_w = t.scale(td, cfg.lambda2);
    let ind = t.add(pi, ti_w);
    let dep = t.add(pd, td_w);
    let factors = t.add(ind, dep);
    let total = t.add(recon, factors);
    Ok(PairNodes { total, terms: [recon, pi, ti, pd, td] })
}

fn run_epoch(
    params: &mut ParamStore,
    mut opt: Option<&mut Adam>,
    scope: Scope,
    ds: &Dataset,
    pairs: &[TrainPair],
    cfg: &ExperimentConfig,
    epoch: usize,
    run_seed: u64,
) -> Result<EpochMetrics> {
    if pairs.is_empty() {
        return Err(Error::Data("training: no pairs for epoch".into()));
    }
    let start = Instant::now();
    let bs = cfg.batch_size.max(1);
    let mut sums = [0.0f64; 5];
    let mut batch: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut in_batch = 0usize;
    for (pair_idx, pair) in pairs.iter().enumerate() {
        pair.validate(ds)?;
        let rr_seed = subseed(run_seed, "rr", &[epoch as u64, pair_idx as u64]);
        let mut t = Tape::new();
        let nodes = pair_graph(&mut t, params, cfg, ds, pair, rr_seed)?;
        for (k, id) in nodes.terms.iter().enumerate() {
            sums[k] += t.scalar(*id);
        }
        if opt.is_some() {
            for (name, g) in t.backward(nodes.total) {
                if !scope.trains(&name) {
                    continue;
                }
                let acc = batch.entry(name).or_insert_with(|| vec![0.0; g.len()]);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            in_batch += 1;
            if in_batch == bs || pair_idx + 1 == pairs.len() {
                let inv = 1.0 / in_batch as f64;
                for g in batch.values_mut() {
                    for v in g.iter_mut() {
                        *v *= inv;
                    }
                }
                opt.as_mut().expect("optimizer present").step(params, &batch);
                batch.clear();
                in_batch = 0;
            }
        }
    }
    let n = pairs.len() as f64;
    Ok(EpochMetrics {
        epoch,
        recon: sums[0] / n,
        pitch_ind: sums[1] / n,
        timbre_ind: sums[2] / n,
        pitch_dep: sums[3] / n,
        timbre_dep: sums[4] / n,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// One optimization epoch over the given pairs; model updated in place.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    params: &mut ParamStore,
    opt: &mut Adam,
    scope: Scope,
    ds: &Dataset,
    pairs: &[TrainPair],
    cfg: &ExperimentConfig,
    epoch: usize,
    run_seed: u64,
) -> Result<EpochMetrics> {
    run_epoch(params, Some(opt), scope, ds, pairs, cfg, epoch, run_seed)
}

/// The same pass without optimizer steps. Takes `&mut` only to share the
/// epoch runner; parameters are never written.
pub fn eval_epoch(
    params: &mut ParamStore,
    ds: &Dataset,
    pairs: &[TrainPair],
    cfg: &ExperimentConfig,
    epoch: usize,
    run_seed: u64,
) -> Result<EpochMetrics> {
    run_epoch(params, None, Scope::Full, ds, pairs, cfg, epoch, run_seed)
}

/// Fresh model parameters plus the non-trainable mel statistics conversion
/// needs to standardize its inputs. The `norm.*` tensors never appear in a
/// gradient map, so the optimizer leaves them untouched.
pub fn init_params(cfg: &ExperimentConfig, mel_mean: f64, mel_std: f64) -> ParamStore {
    let mut ps = ParamStore::new();
    register_model(&mut ps, cfg);
    ps.add_const("norm.mel_mean", 1, 1, mel_mean);
    ps.add_const("norm.mel_std", 1, 1, mel_std);
    ps
}

/// Joint stage: all directions, full parameter scope.
pub fn train_joint(
    params: &mut ParamStore,
    opt: &mut Adam,
    ds: &Dataset,
    cfg: &ExperimentConfig,
    epochs: usize,
    run_seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let mut out = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let pairs = make_pairs(ds, &Pairing::AllDirections, epoch)?;
        let m = train_epoch(params, opt, Scope::Full, ds, &pairs, cfg, epoch, run_seed)?;
        on_epoch(&m);
        out.push(m);
    }
    Ok(out)
}

// ---------------------------------------------------------------- stages

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Arousal,
    Valence,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Arousal => "arousal",
            Axis::Valence => "valence",
        }
    }

    /// The moving coordinate of (valence, arousal) for this axis.
    fn on(&self, va: (f64, f64)) -> f64 {
        match self {
            Axis::Arousal => va.1,
            Axis::Valence => va.0,
        }
    }

    fn off(&self, va: (f64, f64)) -> f64 {
        match self {
            Axis::Arousal => va.0,
            Axis::Valence => va.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Up,
    Down,
}

impl Sign {
    pub fn name(&self) -> &'static str {
        match self {
            Sign::Up => "up",
            Sign::Down => "down",
        }
    }
}

/// A training stage: the joint backbone or one direction filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Joint,
    Direction(Axis, Sign),
}

pub const ALL_STAGES: [Stage; 5] = [
    Stage::Joint,
    Stage::Direction(Axis::Arousal, Sign::Up),
    Stage::Direction(Axis::Arousal, Sign::Down),
    Stage::Direction(Axis::Valence, Sign::Up),
    Stage::Direction(Axis::Valence, Sign::Down),
];

impl Stage {
    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "joint" => Ok(Stage::Joint),
            "arousal-up" => Ok(Stage::Direction(Axis::Arousal, Sign::Up)),
            "arousal-down" => Ok(Stage::Direction(Axis::Arousal, Sign::Down)),
            "valence-up" => Ok(Stage::Direction(Axis::Valence, Sign::Up)),
            "valence-down" => Ok(Stage::Direction(Axis::Valence, Sign::Down)),
            other => Err(Error::Usage(format!(
                "unknown stage `{other}` (expect joint, arousal-up, arousal-down, valence-up, valence-down)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::Direction(Axis::Arousal, Sign::Up) => "arousal-up",
            Stage::Direction(Axis::Arousal, Sign::Down) => "arousal-down",
            Stage::Direction(Axis::Valence, Sign::Up) => "valence-up",
            Stage::Direction(Axis::Valence, Sign::Down) => "valence-down",
        }
    }

    /// Seed stream index, stable across runs.
    pub fn seed_index(&self) -> u64 {
        ALL_STAGES.iter().position(|s| s == self).expect("listed stage") as u64
    }
}

/// Ordered (source, target) emotion pairs whose off-axis coordinate stays
/// within `off_max` and whose on-axis coordinate moves at least `on_min` in
/// the sign direction. Pure function of the table.
pub fn qualifying_pairs(
    va_table: &[(String, (f64, f64))],
    axis: Axis,
    sign: Sign,
    off_max: f64,
    on_min: f64,
) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (a, va_a) in va_table {
        for (b, va_b) in va_table {
            if a == b {
                continue;
            }
            let d_on = axis.on(*va_b) - axis.on(*va_a);
            let d_off = (axis.off(*va_b) - axis.off(*va_a)).abs();
            let moves = match sign {
                Sign::Up => d_on >= on_min,
                Sign::Down => d_on <= -on_min,
            };
            if d_off < off_max && moves {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

fn format_va_table(va_table: &[(String, (f64, f64))]) -> String {
    va_table
        .iter()
        .map(|(l, (v, a))| format!("{l}({v},{a})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One trained direction filter. `params` is a full store whose
/// emotion-separate tensors were fine-tuned for this direction; the rest
/// stays identical to the joint backbone it started from.
#[derive(Debug, Clone)]
pub struct DirectionFilter {
    pub axis: Axis,
    pub sign: Sign,
    pub params: ParamStore,
}

/// Sidecar record written next to a filter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub axis: String,
    pub sign: String,
    pub pairs: Vec<(String, String)>,
    pub va_table: Vec<(String, (f64, f64))>,
    pub checkpoint: String,
}

/// A finished direction stage.
#[derive(Debug)]
pub struct FilterRun {
    pub filter: DirectionFilter,
    pub pairs: Vec<(String, String)>,
    pub metrics: Vec<EpochMetrics>,
    pub opt: Adam,
}

/// Fine-tune the emotion-separate encoders of `base` on the emotion pairs
/// moving along (`axis`, `sign`), per the config thresholds.
#[allow(clippy::too_many_arguments)]
pub fn train_direction_filter(
    base: &ParamStore,
    ds: &Dataset,
    axis: Axis,
    sign: Sign,
    cfg: &ExperimentConfig,
    epochs: usize,
    run_seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FilterRun> {
    let table_pairs =
        qualifying_pairs(&cfg.va_table, axis, sign, cfg.off_axis_max, cfg.on_axis_min);
    let pairs: Vec<(String, String)> = table_pairs
        .into_iter()
        .filter(|(a, b)| ds.emotions.iter().any(|e| e == a) && ds.emotions.iter().any(|e| e == b))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no {}-{} emotion pairs qualify under off-axis < {} and on-axis >= {}; va_table: {}",
            axis.name(),
            sign.name(),
            cfg.off_axis_max,
            cfg.on_axis_min,
            format_va_table(&cfg.va_table)
        )));
    }
    let mut params = base.clone();
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut metrics = Vec::with_capacity(epochs);
    let pairing = Pairing::EmotionPairs(pairs.clone());
    for epoch in 0..epochs {
        let batch = make_pairs(ds, &pairing, epoch)?;
        let m = train_epoch(
            &mut params,
            &mut opt,
            Scope::EmotionSeparate,
            ds,
            &batch,
            cfg,
            epoch,
            run_seed,
        )?;
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(FilterRun { filter: DirectionFilter { axis, sign, params }, pairs, metrics, opt })
}

// ---------------------------------------------------------------- schedule

/// Filters to apply for `source` -> `target`, arousal move first. An axis
/// whose coordinate does not change contributes no filter.
pub fn build_va_schedule(
    source: &str,
    target: &str,
    va_table: &[(String, (f64, f64))],
) -> Result<Vec<(Axis, Sign)>> {
    let coord = |label: &str| {
        va_table
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, va)| *va)
            .ok_or_else(|| Error::Usage(format!("emotion `{label}` not in va_table")))
    };
    let (v_s, a_s) = coord(source)?;
    let (v_t, a_t) = coord(target)?;
    let mut out = Vec::new();
    if a_t > a_s {
        out.push((Axis::Arousal, Sign::Up));
    } else if a_t < a_s {
        out.push((Axis::Arousal, Sign::Down));
    }
    if v_t > v_s {
        out.push((Axis::Valence, Sign::Up));
    } else if v_t < v_s {
        out.push((Axis::Valence, Sign::Down));
    }
    Ok(out)
}

/// Reference bundles for one conversion.
#[derive(Debug, Clone, Copy)]
pub struct ConversionRefs<'a> {
    /// Target-emotion rendition to pair with the source (required).
    pub emotion: Option<&'a FeatureBundle>,
    /// Same-emotion rendition by another speaker; the source stands in when
    /// absent.
    pub speaker: Option<&'a FeatureBundle>,
}

fn norm_stats(params: &ParamStore) -> Result<(f64, f64)> {
    if !params.contains("norm.mel_mean") || !params.contains("norm.mel_std") {
        return Err(Error::Data("convert: parameters carry no mel statistics".into()));
    }
    Ok((params.get("norm.mel_mean").data[0], params.get("norm.mel_std").data[0]))
}

fn standardize(m: &Mat, mean: f64, std: f64) -> Mat {
    Mat { rows: m.rows, cols: m.cols, data: m.data.iter().map(|v| (v - mean) / std).collect() }
}

fn destandardize(m: &Mat, mean: f64, std: f64) -> Mat {
    Mat { rows: m.rows, cols: m.cols, data: m.data.iter().map(|v| v * std + mean).collect() }
}

/// Run the composed conversion graph once. No random resampling at
/// inference, so the output is a pure function of the inputs; its frame
/// count always equals the source's.
pub fn convert(
    params: &ParamStore,
    cfg: &ExperimentConfig,
    source: &FeatureBundle,
    refs: &ConversionRefs,
) -> Result<MelSpectrogram> {
    let emo = refs
        .emotion
        .ok_or_else(|| Error::Usage("convert: missing target-emotion reference bundle".into()))?;
    let spk = refs.speaker.unwrap_or(source);
    let (mean, std) = norm_stats(params)?;
    let x_m = standardize(&source.mel.frames, mean, std);
    let xt_m = standardize(&emo.mel.frames, mean, std);
    let xy_m = standardize(&spk.mel.frames, mean, std);
    let mut t = Tape::new();
    let x = t.input(&x_m);
    let p = t.input(&source.pitch_channels());
    let ids = ForwardIds {
        x,
        x_rr: x,
        p_rr: p,
        x_t: t.input(&xt_m),
        p_t_rr: t.input(&emo.pitch_channels()),
        x_y: t.input(&xy_m),
        p_y_rr: t.input(&spk.pitch_channels()),
    };
    let out = forward(&mut t, params, cfg, &ids, source.t());
    let frames = destandardize(&t.value_mat(out.x_hat), mean, std);
    Ok(MelSpectrogram { frames, hop_s: source.mel.hop_s })
}

/// The joint backbone plus every trained direction filter.
pub struct ScheduleModels {
    pub joint: ParamStore,
    pub filters: Vec<DirectionFilter>,
}

impl ScheduleModels {
    pub fn params_for(&self, axis: Axis, sign: Sign) -> Result<&ParamStore> {
        self.filters
            .iter()
            .find(|f| f.axis == axis && f.sign == sign)
            .map(|f| &f.params)
            .ok_or_else(|| {
                Error::Config(format!("schedule: no trained {}-{} filter", axis.name(), sign.name()))
            })
    }
}

/// Rebuild a feature bundle from a decoded mel so the next filter sees the
/// same views training saw: F0 from the harmonic-comb proxy placed back in
/// the source speaker's z-score domain, cepstra from the decoded bands.
pub fn reanalyze(
    mel: &MelSpectrogram,
    like: &FeatureBundle,
    stats: &SpeakerF0Stats,
    cfg: &ExperimentConfig,
) -> Result<FeatureBundle> {
    let track = F0Track { hz: eval::mel_f0_proxy(mel, cfg) };
    let pitch = normalize(&track, stats);
    let voiced = track.hz.iter().map(|h| if *h > 0.0 { 1.0 } else { 0.0 }).collect();
    let mcep = mel_cepstra(mel, cfg.mcep_order)?;
    Ok(FeatureBundle {
        speaker: like.speaker.clone(),
        emotion: like.emotion.clone(),
        mel: mel.clone(),
        pitch,
        voiced,
        mcep,
        sample_rate: like.sample_rate,
        hop: like.hop,
    })
}

/// Apply the direction filters in order, re-analyzing between steps. The
/// references stay pinned to the final target emotion. An empty schedule is
/// self-reconstruction through the joint backbone.
pub fn apply_schedule(
    models: &ScheduleModels,
    cfg: &ExperimentConfig,
    source: &FeatureBundle,
    stats: &SpeakerF0Stats,
    schedule: &[(Axis, Sign)],
    refs: &ConversionRefs,
) -> Result<MelSpectrogram> {
    if schedule.is_empty() {
        let self_refs = ConversionRefs { emotion: Some(source), speaker: refs.speaker };
        return convert(&models.joint, cfg, source, &self_refs);
    }
    let mut current = source.clone();
    let mut out = None;
    for (axis, sign) in schedule {
        let params = models.params_for(*axis, *sign)?;
        let mel = convert(params, cfg, &current, refs)?;
        current = reanalyze(&mel, &current, stats, cfg)?;
        out = Some(mel);
    }
    Ok(out.expect("non-empty schedule"))
}
