//! Experiment configuration: a flat INI file with dotted sections.
//!
//! One file drives every command. Loading applies the file over built-in
//! defaults, rejects unknown sections/keys, and validates each numeric field
//! against the preconditions of the module that consumes it. Serialization is
//! canonical, so `load(serialize(cfg)) == cfg` holds exactly and a config can
//! be hashed for provenance.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Per-encoder layer table (conv stack + BLSTM bottleneck + downsample).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncSpec {
    pub conv_layers: usize,
    pub conv_dim: usize,
    pub groups: usize,
    pub blstm_layers: usize,
    pub blstm_dim: usize,
    pub downsample: usize,
}

impl EncSpec {
    /// Code width produced by this encoder (both BLSTM directions).
    pub fn code_width(&self) -> usize {
        2 * self.blstm_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run_dir: String,
    // Empty path fields resolve to subdirectories of run_dir.
    pub corpus_dir: String,
    pub cache_dir: String,
    pub ckpt_dir: String,
    pub reports_dir: String,

    pub sample_rate: u32,
    pub win: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub mcep_order: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    pub f0_frame: usize,
    pub voicing_threshold: f64,
    pub griffin_lim_iters: usize,

    pub rr_seg_min: usize,
    pub rr_seg_max: usize,
    pub rr_stretch_min: f64,
    pub rr_stretch_max: f64,

    pub kernel: usize,
    pub rhythm: EncSpec,
    pub content: EncSpec,
    pub pitch: EncSpec,
    pub emo_u_s: EncSpec,
    pub emo_u_ts: EncSpec,
    pub emo_zf_s: EncSpec,
    pub emo_zf_ts: EncSpec,
    pub decoder_blstm_layers: usize,
    pub decoder_hidden: usize,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,

    pub epochs: usize,
    pub stage_epochs: usize,
    pub holdout_sentences: usize,

    pub lambda1: f64,
    pub lambda2: f64,

    pub off_axis_max: f64,
    pub on_axis_min: f64,

    /// Emotion label -> (valence, arousal), in file order.
    pub va_table: Vec<(String, (f64, f64))>,

    pub speakers: usize,
    pub emotions: Vec<String>,
    pub sentences: usize,
    pub segments_min: usize,
    pub segments_max: usize,
    pub seg_frames_min: usize,
    pub seg_frames_max: usize,
    pub gap_frames: usize,

    pub tsne_perplexity: f64,
    pub tsne_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 17,
            run_dir: "runs/default".into(),
            corpus_dir: String::new(),
            cache_dir: String::new(),
            ckpt_dir: String::new(),
            reports_dir: String::new(),

            sample_rate: 16000,
            win: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 40.0,
            fmax: 7600.0,
            mcep_order: 24,
            f0_min: 40.0,
            f0_max: 600.0,
            f0_frame: 1024,
            voicing_threshold: 0.3,
            griffin_lim_iters: 60,

            rr_seg_min: 8,
            rr_seg_max: 32,
            rr_stretch_min: 0.5,
            rr_stretch_max: 1.5,

            kernel: 5,
            rhythm: EncSpec { conv_layers: 1, conv_dim: 128, groups: 8, blstm_layers: 1, blstm_dim: 1, downsample: 8 },
            content: EncSpec { conv_layers: 3, conv_dim: 512, groups: 32, blstm_layers: 2, blstm_dim: 8, downsample: 8 },
            pitch: EncSpec { conv_layers: 1, conv_dim: 128, groups: 8, blstm_layers: 1, blstm_dim: 16, downsample: 8 },
            emo_u_s: EncSpec { conv_layers: 3, conv_dim: 512, groups: 32, blstm_layers: 2, blstm_dim: 8, downsample: 8 },
            emo_u_ts: EncSpec { conv_layers: 3, conv_dim: 256, groups: 8, blstm_layers: 1, blstm_dim: 16, downsample: 8 },
            emo_zf_s: EncSpec { conv_layers: 1, conv_dim: 128, groups: 8, blstm_layers: 1, blstm_dim: 4, downsample: 8 },
            emo_zf_ts: EncSpec { conv_layers: 3, conv_dim: 256, groups: 16, blstm_layers: 1, blstm_dim: 8, downsample: 8 },
            decoder_blstm_layers: 3,
            decoder_hidden: 256,

            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,

            epochs: 300,
            stage_epochs: 150,
            holdout_sentences: 2,

            lambda1: 1.0,
            lambda2: 1.0,

            off_axis_max: 0.25,
            on_axis_min: 0.5,

            va_table: vec![
                ("neutral".into(), (0.0, 0.0)),
                ("happy".into(), (0.8, 0.7)),
                ("sad".into(), (-0.7, -0.5)),
                ("angry".into(), (-0.6, 0.7)),
                ("surprise".into(), (0.3, 0.9)),
                ("high-tension".into(), (0.6, 0.9)),
            ],

            speakers: 4,
            emotions: vec!["neutral".into(), "happy".into(), "sad".into(), "angry".into()],
            sentences: 12,
            segments_min: 3,
            segments_max: 5,
            seg_frames_min: 5,
            seg_frames_max: 9,
            gap_frames: 2,

            tsne_perplexity: 12.0,
            tsne_iters: 400,
        }
    }
}

const SECTIONS: &[&str] = &[
    "run", "paths", "features", "rr", "model", "model.rhythm", "model.content", "model.pitch",
    "model.emo_u_s", "model.emo_u_ts", "model.emo_zf_s", "model.emo_zf_ts", "model.decoder",
    "optim", "train", "loss", "schedule", "va_table", "corpus", "eval",
];

fn bad_key(section: &str, key: &str, line: usize) -> Error {
    Error::Config(format!("unknown key `{section}.{key}` (line {line})"))
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, val: &str, line: usize) -> Result<T> {
    val.parse().map_err(|_| {
        Error::Config(format!("bad value for `{section}.{key}` (line {line}): `{val}`"))
    })
}

fn parse_pair(section: &str, key: &str, val: &str, line: usize) -> Result<(f64, f64)> {
    let parts: Vec<&str> = val.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "`{section}.{key}` (line {line}) wants `valence, arousal`, got `{val}`"
        )));
    }
    Ok((
        parse_num(section, key, parts[0], line)?,
        parse_num(section, key, parts[1], line)?,
    ))
}

impl ExperimentConfig {
    pub fn from_ini(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut va_cleared = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(stripped) = line.strip_prefix('[') {
                let Some(name) = stripped.strip_suffix(']') else {
                    return Err(Error::Parse(format!("unterminated section header (line {line_no})")));
                };
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!("unknown section `[{name}]` (line {line_no})")));
                }
                section = name.to_string();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::Parse(format!("expected `key = value` (line {line_no})")));
            };
            let key = line[..eq].trim();
            let val = line[eq + 1..].trim();
            if section == "va_table" && !va_cleared {
                cfg.va_table.clear();
                va_cleared = true;
            }
            cfg.set(&section, key, val, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_ini(&text)
    }

    fn set(&mut self, section: &str, key: &str, val: &str, ln: usize) -> Result<()> {
        let s = section;
        match s {
            "run" => match key {
                "seed" => self.seed = parse_num(s, key, val, ln)?,
                "dir" => self.run_dir = val.to_string(),
                _ => return Err(bad_key(s, key, ln)),
            },
            "paths" => match key {
                "corpus_dir" => self.corpus_dir = val.to_string(),
                "cache_dir" => self.cache_dir = val.to_string(),
                "ckpt_dir" => self.ckpt_dir = val.to_string(),
                "reports_dir" => self.reports_dir = val.to_string(),
                _ => return Err(bad_key(s, key, ln)),
            },
            "features" => match key {
                "sample_rate" => self.sample_rate = parse_num(s, key, val, ln)?,
                "win" => self.win = parse_num(s, key, val, ln)?,
                "hop" => self.hop = parse_num(s, key, val, ln)?,
                "n_mels" => self.n_mels = parse_num(s, key, val, ln)?,
                "fmin" => self.fmin = parse_num(s, key, val, ln)?,
                "fmax" => self.fmax = parse_num(s, key, val, ln)?,
                "mcep_order" => self.mcep_order = parse_num(s, key, val, ln)?,
                "f0_min" => self.f0_min = parse_num(s, key, val, ln)?,
                "f0_max" => self.f0_max = parse_num(s, key, val, ln)?,
                "f0_frame" => self.f0_frame = parse_num(s, key, val, ln)?,
                "voicing_threshold" => self.voicing_threshold = parse_num(s, key, val, ln)?,
                "griffin_lim_iters" => self.griffin_lim_iters = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "rr" => match key {
                "seg_min" => self.rr_seg_min = parse_num(s, key, val, ln)?,
                "seg_max" => self.rr_seg_max = parse_num(s, key, val, ln)?,
                "stretch_min" => self.rr_stretch_min = parse_num(s, key, val, ln)?,
                "stretch_max" => self.rr_stretch_max = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "model" => match key {
                "kernel" => self.kernel = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "model.rhythm" | "model.content" | "model.pitch" | "model.emo_u_s"
            | "model.emo_u_ts" | "model.emo_zf_s" | "model.emo_zf_ts" => {
                let enc = match s {
                    "model.rhythm" => &mut self.rhythm,
                    "model.content" => &mut self.content,
                    "model.pitch" => &mut self.pitch,
                    "model.emo_u_s" => &mut self.emo_u_s,
                    "model.emo_u_ts" => &mut self.emo_u_ts,
                    "model.emo_zf_s" => &mut self.emo_zf_s,
                    _ => &mut self.emo_zf_ts,
                };
                match key {
                    "conv_layers" => enc.conv_layers = parse_num(s, key, val, ln)?,
                    "conv_dim" => enc.conv_dim = parse_num(s, key, val, ln)?,
                    "groups" => enc.groups = parse_num(s, key, val, ln)?,
                    "blstm_layers" => enc.blstm_layers = parse_num(s, key, val, ln)?,
                    "blstm_dim" => enc.blstm_dim = parse_num(s, key, val, ln)?,
                    "downsample" => enc.downsample = parse_num(s, key, val, ln)?,
                    _ => return Err(bad_key(s, key, ln)),
                }
            }
            "model.decoder" => match key {
                "blstm_layers" => self.decoder_blstm_layers = parse_num(s, key, val, ln)?,
                "hidden" => self.decoder_hidden = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "optim" => match key {
                "lr" => self.lr = parse_num(s, key, val, ln)?,
                "beta1" => self.beta1 = parse_num(s, key, val, ln)?,
                "beta2" => self.beta2 = parse_num(s, key, val, ln)?,
                "eps" => self.adam_eps = parse_num(s, key, val, ln)?,
                "batch_size" => self.batch_size = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "train" => match key {
                "epochs" => self.epochs = parse_num(s, key, val, ln)?,
                "stage_epochs" => self.stage_epochs = parse_num(s, key, val, ln)?,
                "holdout_sentences" => self.holdout_sentences = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "loss" => match key {
                "lambda1" => self.lambda1 = parse_num(s, key, val, ln)?,
                "lambda2" => self.lambda2 = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "schedule" => match key {
                "off_axis_max" => self.off_axis_max = parse_num(s, key, val, ln)?,
                "on_axis_min" => self.on_axis_min = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "va_table" => {
                let coords = parse_pair(s, key, val, ln)?;
                if self.va_table.iter().any(|(name, _)| name == key) {
                    return Err(Error::Config(format!("duplicate va_table entry `{key}` (line {ln})")));
                }
                self.va_table.push((key.to_string(), coords));
            }
            "corpus" => match key {
                "speakers" => self.speakers = parse_num(s, key, val, ln)?,
                "emotions" => {
                    self.emotions = val.split(',').map(|e| e.trim().to_string()).filter(|e| !e.is_empty()).collect()
                }
                "sentences" => self.sentences = parse_num(s, key, val, ln)?,
                "segments_min" => self.segments_min = parse_num(s, key, val, ln)?,
                "segments_max" => self.segments_max = parse_num(s, key, val, ln)?,
                "seg_frames_min" => self.seg_frames_min = parse_num(s, key, val, ln)?,
                "seg_frames_max" => self.seg_frames_max = parse_num(s, key, val, ln)?,
                "gap_frames" => self.gap_frames = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            "eval" => match key {
                "tsne_perplexity" => self.tsne_perplexity = parse_num(s, key, val, ln)?,
                "tsne_iters" => self.tsne_iters = parse_num(s, key, val, ln)?,
                _ => return Err(bad_key(s, key, ln)),
            },
            _ => return Err(Error::Config(format!("key `{key}` outside any section (line {ln})"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return fail("features.sample_rate must be positive".into());
        }
        if !self.win.is_power_of_two() {
            return fail(format!("features.win must be a power of two, got {}", self.win));
        }
        if self.hop == 0 || self.win % self.hop != 0 {
            return fail(format!("features.hop must divide win ({} / {})", self.win, self.hop));
        }
        if self.n_mels < 1 {
            return fail("features.n_mels must be >= 1".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return fail(format!(
                "features: need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        if self.mcep_order < 1 || self.mcep_order > self.n_mels - 1 {
            return fail(format!(
                "features.mcep_order must be in 1..={}, got {}",
                self.n_mels - 1,
                self.mcep_order
            ));
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max && self.f0_max <= nyquist) {
            return fail(format!("features: bad F0 range [{}, {}]", self.f0_min, self.f0_max));
        }
        let two_periods = (2.0 * self.sample_rate as f64 / self.f0_min).ceil() as usize;
        if self.f0_frame < two_periods {
            return fail(format!(
                "features.f0_frame {} shorter than 2 periods of {} Hz ({} samples)",
                self.f0_frame, self.f0_min, two_periods
            ));
        }
        if !(self.voicing_threshold > 0.0 && self.voicing_threshold < 1.0) {
            return fail(format!("features.voicing_threshold must be in (0,1), got {}", self.voicing_threshold));
        }
        if self.griffin_lim_iters < 1 {
            return fail("features.griffin_lim_iters must be >= 1".into());
        }
        if !(1 <= self.rr_seg_min && self.rr_seg_min <= self.rr_seg_max) {
            return fail(format!("rr: need 1 <= seg_min <= seg_max, got [{}, {}]", self.rr_seg_min, self.rr_seg_max));
        }
        if !(self.rr_stretch_min > 0.0 && self.rr_stretch_min <= self.rr_stretch_max) {
            return fail(format!(
                "rr: need 0 < stretch_min <= stretch_max, got [{}, {}]",
                self.rr_stretch_min, self.rr_stretch_max
            ));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return fail(format!("model.kernel must be odd, got {}", self.kernel));
        }
        for (name, enc) in self.encoder_table() {
            if enc.conv_layers < 1 || enc.blstm_layers < 1 || enc.blstm_dim < 1 || enc.downsample < 1 {
                return fail(format!("model.{name}: layer counts and dims must be >= 1"));
            }
            if enc.groups == 0 || enc.conv_dim % enc.groups != 0 {
                return fail(format!(
                    "model.{name}: groups ({}) must divide conv_dim ({})",
                    enc.groups, enc.conv_dim
                ));
            }
        }
        if self.decoder_blstm_layers < 1 || self.decoder_hidden < 1 {
            return fail("model.decoder: blstm_layers and hidden must be >= 1".into());
        }
        if self.lr < 0.0 {
            return fail(format!("optim.lr must be >= 0, got {}", self.lr));
        }
        if !(0.0 <= self.beta1 && self.beta1 < 1.0 && 0.0 <= self.beta2 && self.beta2 < 1.0) {
            return fail(format!("optim: betas must be in [0,1), got {} / {}", self.beta1, self.beta2));
        }
        if self.adam_eps <= 0.0 {
            return fail(format!("optim.eps must be > 0, got {}", self.adam_eps));
        }
        if self.batch_size < 1 {
            return fail("optim.batch_size must be >= 1".into());
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return fail(format!("loss: lambdas must be >= 0, got {} / {}", self.lambda1, self.lambda2));
        }
        if self.off_axis_max <= 0.0 || self.on_axis_min <= 0.0 {
            return fail("schedule: thresholds must be positive".into());
        }
        if self.va_table.is_empty() {
            return fail("va_table must not be empty".into());
        }
        for (name, (v, a)) in &self.va_table {
            if !(-1.0..=1.0).contains(v) || !(-1.0..=1.0).contains(a) {
                return fail(format!("va_table.{name}: coordinates must lie in [-1, 1], got ({v}, {a})"));
            }
        }
        if self.speakers < 1 {
            return fail(format!("corpus.speakers must be >= 1, got {}", self.speakers));
        }
        if self.sentences < 1 {
            return fail(format!("corpus.sentences must be >= 1, got {}", self.sentences));
        }
        if self.emotions.is_empty() {
            return fail("corpus.emotions must list at least one emotion".into());
        }
        for emo in &self.emotions {
            if self.va(emo).is_none() {
                return fail(format!("corpus.emotions: `{emo}` missing from va_table"));
            }
        }
        if self.holdout_sentences >= self.sentences {
            return fail(format!(
                "train.holdout_sentences ({}) must be < corpus.sentences ({})",
                self.holdout_sentences, self.sentences
            ));
        }
        if !(1 <= self.segments_min && self.segments_min <= self.segments_max) {
            return fail("corpus: need 1 <= segments_min <= segments_max".into());
        }
        if !(2 <= self.seg_frames_min && self.seg_frames_min <= self.seg_frames_max) {
            return fail("corpus: need 2 <= seg_frames_min <= seg_frames_max (durations are >= 2 frames)".into());
        }
        if self.gap_frames < 1 {
            return fail("corpus.gap_frames must be >= 1".into());
        }
        if self.tsne_perplexity < 1.0 {
            return fail(format!("eval.tsne_perplexity must be >= 1, got {}", self.tsne_perplexity));
        }
        if self.tsne_iters < 1 {
            return fail("eval.tsne_iters must be >= 1".into());
        }
        Ok(())
    }

    fn encoder_table(&self) -> [(&'static str, &EncSpec); 7] {
        [
            ("rhythm", &self.rhythm),
            ("content", &self.content),
            ("pitch", &self.pitch),
            ("emo_u_s", &self.emo_u_s),
            ("emo_u_ts", &self.emo_u_ts),
            ("emo_zf_s", &self.emo_zf_s),
            ("emo_zf_ts", &self.emo_zf_ts),
        ]
    }

    /// (valence, arousal) for an emotion label, if present.
    pub fn va(&self, emotion: &str) -> Option<(f64, f64)> {
        self.va_table.iter().find(|(n, _)| n == emotion).map(|(_, c)| *c)
    }

    /// Total decoder input channels: sum of the six code widths.
    pub fn decoder_in_channels(&self) -> usize {
        self.rhythm.code_width()
            + self.content.code_width()
            + self.emo_zf_ts.code_width()
            + self.emo_zf_s.code_width()
            + self.emo_u_ts.code_width()
            + self.emo_u_s.code_width()
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(&self.run_dir)
    }

    fn sub_dir(&self, field: &str, fallback: &str) -> PathBuf {
        if field.is_empty() {
            self.run_dir().join(fallback)
        } else {
            PathBuf::from(field)
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.sub_dir(&self.corpus_dir, "corpus")
    }
    pub fn cache_dir(&self) -> PathBuf {
        self.sub_dir(&self.cache_dir, "cache")
    }
    pub fn ckpt_dir(&self) -> PathBuf {
        self.sub_dir(&self.ckpt_dir, "ckpt")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.sub_dir(&self.reports_dir, "reports")
    }

    /// Canonical INI serialization; `from_ini` of this text reproduces `self`.
    pub fn to_ini(&self) -> String {
        let mut o = String::new();
        use std::fmt::Write;
        let w = &mut o;
        writeln!(w, "[run]").unwrap();
        writeln!(w, "seed = {}", self.seed).unwrap();
        writeln!(w, "dir = {}", self.run_dir).unwrap();
        writeln!(w, "\n[paths]").unwrap();
        writeln!(w, "corpus_dir = {}", self.corpus_dir).unwrap();
        writeln!(w, "cache_dir = {}", self.cache_dir).unwrap();
        writeln!(w, "ckpt_dir = {}", self.ckpt_dir).unwrap();
        writeln!(w, "reports_dir = {}", self.reports_dir).unwrap();
        writeln!(w, "\n[features]").unwrap();
        writeln!(w, "sample_rate = {}", self.sample_rate).unwrap();
        writeln!(w, "win = {}", self.win).unwrap();
        writeln!(w, "hop = {}", self.hop).unwrap();
        writeln!(w, "n_mels = {}", self.n_mels).unwrap();
        writeln!(w, "fmin = {}", self.fmin).unwrap();
        writeln!(w, "fmax = {}", self.fmax).unwrap();
        writeln!(w, "mcep_order = {}", self.mcep_order).unwrap();
        writeln!(w, "f0_min = {}", self.f0_min).unwrap();
        writeln!(w, "f0_max = {}", self.f0_max).unwrap();
        writeln!(w, "f0_frame = {}", self.f0_frame).unwrap();
        writeln!(w, "voicing_threshold = {}", self.voicing_threshold).unwrap();
        writeln!(w, "griffin_lim_iters = {}", self.griffin_lim_iters).unwrap();
        writeln!(w, "\n[rr]").unwrap();
        writeln!(w, "seg_min = {}", self.rr_seg_min).unwrap();
        writeln!(w, "seg_max = {}", self.rr_seg_max).unwrap();
        writeln!(w, "stretch_min = {}", self.rr_stretch_min).unwrap();
        writeln!(w, "stretch_max = {}", self.rr_stretch_max).unwrap();
        writeln!(w, "\n[model]").unwrap();
        writeln!(w, "kernel = {}", self.kernel).unwrap();
        for (name, enc) in self.encoder_table() {
            writeln!(w, "\n[model.{name}]").unwrap();
            writeln!(w, "conv_layers = {}", enc.conv_layers).unwrap();
            writeln!(w, "conv_dim = {}", enc.conv_dim).unwrap();
            writeln!(w, "groups = {}", enc.groups).unwrap();
            writeln!(w, "blstm_layers = {}", enc.blstm_layers).unwrap();
            writeln!(w, "blstm_dim = {}", enc.blstm_dim).unwrap();
            writeln!(w, "downsample = {}", enc.downsample).unwrap();
        }
        writeln!(w, "\n[model.decoder]").unwrap();
        writeln!(w, "blstm_layers = {}", self.decoder_blstm_layers).unwrap();
        writeln!(w, "hidden = {}", self.decoder_hidden).unwrap();
        writeln!(w, "\n[optim]").unwrap();
        writeln!(w, "lr = {}", self.lr).unwrap();
        writeln!(w, "beta1 = {}", self.beta1).unwrap();
        writeln!(w, "beta2 = {}", self.beta2).unwrap();
        writeln!(w, "eps = {}", self.adam_eps).unwrap();
        writeln!(w, "batch_size = {}", self.batch_size).unwrap();
        writeln!(w, "\n[train]").unwrap();
        writeln!(w, "epochs = {}", self.epochs).unwrap();
        writeln!(w, "stage_epochs = {}", self.stage_epochs).unwrap();
        writeln!(w, "holdout_sentences = {}", self.holdout_sentences).unwrap();
        writeln!(w, "\n[loss]").unwrap();
        writeln!(w, "lambda1 = {}", self.lambda1).unwrap();
        writeln!(w, "lambda2 = {}", self.lambda2).unwrap();
        writeln!(w, "\n[schedule]").unwrap();
        writeln!(w, "off_axis_max = {}", self.off_axis_max).unwrap();
        writeln!(w, "on_axis_min = {}", self.on_axis_min).unwrap();
        writeln!(w, "\n[va_table]").unwrap();
        for (name, (v, a)) in &self.va_table {
            writeln!(w, "{name} = {v}, {a}").unwrap();
        }
        writeln!(w, "\n[corpus]").unwrap();
        writeln!(w, "speakers = {}", self.speakers).unwrap();
        writeln!(w, "emotions = {}", self.emotions.join(", ")).unwrap();
        writeln!(w, "sentences = {}", self.sentences).unwrap();
        writeln!(w, "segments_min = {}", self.segments_min).unwrap();
        writeln!(w, "segments_max = {}", self.segments_max).unwrap();
        writeln!(w, "seg_frames_min = {}", self.seg_frames_min).unwrap();
        writeln!(w, "seg_frames_max = {}", self.seg_frames_max).unwrap();
        writeln!(w, "gap_frames = {}", self.gap_frames).unwrap();
        writeln!(w, "\n[eval]").unwrap();
        writeln!(w, "tsne_perplexity = {}", self.tsne_perplexity).unwrap();
        writeln!(w, "tsne_iters = {}", self.tsne_iters).unwrap();
        o
    }

    /// Hex SHA-256 of the canonical serialization; used for provenance.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_ini().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn roundtrip_is_lossless() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 99;
        cfg.lr = 2.5e-4;
        cfg.va_table.push(("tender".into(), (0.6, -0.4)));
        cfg.decoder_hidden = 48;
        let text = cfg.to_ini();
        let back = ExperimentConfig::from_ini(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_ini("[features]\nwav_bits = 16\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("features.wav_bits"));
    }

    #[test]
    fn unknown_section_rejected() {
        let err = ExperimentConfig::from_ini("[vocoder]\nkind = wavenet\n").unwrap_err();
        assert!(err.to_string().contains("vocoder"));
    }

    #[test]
    fn va_table_in_file_replaces_defaults() {
        let cfg = ExperimentConfig::from_ini(
            "[va_table]\nneutral = 0, 0\ncalm = -0.2, -0.9\n[corpus]\nemotions = neutral, calm\n",
        )
        .unwrap();
        assert_eq!(cfg.va_table.len(), 2);
        assert_eq!(cfg.va("calm"), Some((-0.2, -0.9)));
        assert_eq!(cfg.va("happy"), None);
    }

    #[test]
    fn emotion_missing_from_va_table_fails() {
        let err = ExperimentConfig::from_ini("[corpus]\nemotions = neutral, bored\n").unwrap_err();
        assert!(err.to_string().contains("bored"));
    }

    #[test]
    fn zero_speakers_names_the_field() {
        let err = ExperimentConfig::from_ini("[corpus]\nspeakers = 0\n").unwrap_err();
        assert!(err.to_string().contains("corpus.speakers"));
    }

    #[test]
    fn group_divisibility_enforced() {
        let err = ExperimentConfig::from_ini("[model.content]\nconv_dim = 100\n").unwrap_err();
        assert!(err.to_string().contains("groups"));
    }

    #[test]
    fn default_decoder_input_is_90_channels() {
        assert_eq!(ExperimentConfig::default().decoder_in_channels(), 90);
    }

    #[test]
    fn f0_frame_must_cover_two_periods() {
        let err = ExperimentConfig::from_ini("[features]\nf0_frame = 512\n").unwrap_err();
        assert!(err.to_string().contains("2 periods"));
    }
}
