//! The `sfevc` command set: synth, extract, train, convert, eval.
//!
//! Each command reads one experiment config, does its work, and drops a
//! `run.json` provenance record in the run directory. Artifacts are
//! deterministic given (config, seed); only timestamps and wall-clock
//! columns vary between identical reruns.
//!
//! Exit codes: 0 success, 1 usage/config, 2 data/format, 3 internal.

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{self, f0_rmse, factor_recovery, mcd, RecoveryCase, RecoveryRef};
use crate::featcache::{
    extract_features, raw_f0, read_bundle, read_speaker_stats, write_bundle, write_speaker_stats,
    FeatureBundle,
};
use crate::mat::Mat;
use crate::neural::Adam;
use crate::rng::subseed;
use crate::signal::mel::{mel_to_magnitudes, MelFilterbank};
use crate::signal::pitch::F0Track;
use crate::signal::pitchnorm::{denormalize, speaker_stats, SpeakerF0Stats};
use crate::signal::griffin_lim::griffin_lim;
use crate::signal::wav::{load_wav, write_wav};
use crate::signal::Waveform;
use crate::synthcorpus::{make_corpus, CorpusManifest};
use crate::training::{
    apply_schedule, build_va_schedule, init_params, reanalyze, train_direction_filter,
    train_joint, ConversionRefs, Dataset, DirectionFilter, EpochMetrics, FilterManifest,
    ScheduleModels, Stage,
};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sfevc",
    version,
    about = "Source-filter emotional voice conversion on a synthetic parallel corpus"
)]
struct Cli {
    /// Experiment config (INI). Built-in defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic parallel corpus (WAV files + manifest).
    Synth {
        /// Wipe and regenerate a non-empty corpus directory.
        #[arg(long)]
        force: bool,
    },
    /// Analyze every corpus utterance into the feature cache.
    Extract,
    /// Train one stage: the joint model or one direction filter.
    Train {
        /// joint, arousal-up, arousal-down, valence-up or valence-down.
        #[arg(long, value_name = "STAGE")]
        stage: String,
    },
    /// Convert one utterance to a target emotion along its VA schedule.
    Convert {
        /// Utterance id from the corpus manifest.
        #[arg(long, value_name = "ID")]
        source: String,
        /// Emotion label from the va_table.
        #[arg(long, value_name = "LABEL")]
        target_emotion: String,
        /// Also render a waveform via Griffin-Lim.
        #[arg(long)]
        wav: bool,
    },
    /// Score converted features against references and write eval reports.
    Eval {
        /// CSV with header `pair_id,reference,converted`; entries are cache
        /// utterance ids or paths to .feat files.
        #[arg(long, value_name = "PATH")]
        pairs: PathBuf,
    },
}

/// Process entry: parse, dispatch, map errors to exit codes.
pub fn main_entry(args: Vec<String>) -> i32 {
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn run(args: Vec<String>) -> Result<i32> {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(0);
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    let cfg = effective_config(cli.config.as_deref(), cli.seed)?;
    match &cli.cmd {
        Cmd::Synth { force } => cmd_synth(&cfg, *force),
        Cmd::Extract => cmd_extract(&cfg),
        Cmd::Train { stage } => cmd_train(&cfg, stage),
        Cmd::Convert { source, target_emotion, wav } => {
            cmd_convert(&cfg, source, target_emotion, *wav)
        }
        Cmd::Eval { pairs } => cmd_eval(&cfg, pairs),
    }?;
    Ok(0)
}

fn effective_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Provenance record dropped at the run directory root by every command.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: String,
    code_version: &'a str,
    timestamp: String,
    seed: u64,
}

fn write_run_record(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_err(|e| Error::Internal(format!("system clock before epoch: {e}")))?
        .as_secs();
    let rec = RunRecord {
        command,
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION"),
        timestamp: iso_utc(secs),
        seed: cfg.seed,
    };
    let text = serde_json::to_string_pretty(&rec)
        .map_err(|e| Error::Internal(format!("run record: {e}")))?;
    std::fs::write(dir.join("run.json"), text + "\n")?;
    Ok(())
}

/// Civil date from days since 1970-01-01 (proleptic Gregorian).
fn iso_utc(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (h, m, s) = (rem / 3600, rem % 3600 / 60, rem % 60);
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(month <= 2);
    format!("{y:04}-{month:02}-{d:02}T{h:02}:{m:02}:{s:02}Z")
}

/// Attach the offending path to a file-level error, keeping exit class 2.
fn at_path(e: Error, path: &Path) -> Error {
    let p = path.display();
    match e {
        Error::Format(m) => Error::Format(format!("{p}: {m}")),
        Error::Parse(m) => Error::Parse(format!("{p}: {m}")),
        Error::Data(m) => Error::Data(format!("{p}: {m}")),
        Error::Io(m) => Error::Data(format!("{p}: {m}")),
        other => other,
    }
}

fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.corpus_dir().join("manifest.jsonl")
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<CorpusManifest> {
    let path = manifest_path(cfg);
    if !path.is_file() {
        return Err(Error::Data(format!("missing corpus manifest {} (run synth first)", path.display())));
    }
    let manifest = CorpusManifest::load(&path)?;
    manifest.check_grid(cfg)?;
    Ok(manifest)
}

fn bundle_path(cfg: &ExperimentConfig, id: &str) -> PathBuf {
    cfg.cache_dir().join(format!("{id}.feat"))
}

fn load_bundles(
    cfg: &ExperimentConfig,
    manifest: &CorpusManifest,
) -> Result<BTreeMap<String, FeatureBundle>> {
    let mut out = BTreeMap::new();
    for u in &manifest.utterances {
        let path = bundle_path(cfg, &u.id);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "no cached features at {} (run extract first)",
                path.display()
            )));
        }
        out.insert(u.id.clone(), read_bundle(&path).map_err(|e| at_path(e, &path))?);
    }
    Ok(out)
}

fn load_stats(cfg: &ExperimentConfig) -> Result<BTreeMap<String, SpeakerF0Stats>> {
    let path = cfg.cache_dir().join("speaker_stats.json");
    if !path.is_file() {
        return Err(Error::Data(format!("missing speaker stats {} (run extract first)", path.display())));
    }
    read_speaker_stats(&path).map_err(|e| at_path(e, &path))
}

fn ckpt_path(cfg: &ExperimentConfig, stage: Stage) -> PathBuf {
    cfg.ckpt_dir().join(format!("ckpt.{}.bin", stage.name()))
}

fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut text = String::from(EpochMetrics::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_synth(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let dir = cfg.corpus_dir();
    let occupied = dir.is_dir() && std::fs::read_dir(&dir)?.next().is_some();
    if occupied {
        if !force {
            return Err(Error::Usage(format!(
                "corpus directory {} is not empty; pass --force to regenerate",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    let manifest = make_corpus(cfg, &dir)?;
    write_run_record(cfg, "synth")?;
    println!(
        "synth: {} utterances ({} speakers x {} emotions x {} sentences)",
        manifest.utterances.len(),
        cfg.speakers,
        cfg.emotions.len(),
        cfg.sentences
    );
    println!("manifest: {}", manifest_path(cfg).display());
    Ok(())
}

fn cmd_extract(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let corpus = cfg.corpus_dir();
    let cache = cfg.cache_dir();
    std::fs::create_dir_all(&cache)?;
    // Pass 1: waveforms and raw F0 tracks, so speaker stats can pool every
    // rendition before any contour is normalized.
    let mut waves: BTreeMap<&str, Waveform> = BTreeMap::new();
    let mut tracks: BTreeMap<&str, F0Track> = BTreeMap::new();
    let mut missing = Vec::new();
    for u in &manifest.utterances {
        let path = corpus.join(&u.wav);
        if !path.is_file() {
            missing.push(path.display().to_string());
            continue;
        }
        let w = load_wav(&path).map_err(|e| at_path(e, &path))?;
        let f0 = raw_f0(&w, cfg).map_err(|e| at_path(e, &path))?;
        waves.insert(&u.id, w);
        tracks.insert(&u.id, f0);
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing WAV files: {}", missing.join(", "))));
    }
    let mut stats: BTreeMap<String, SpeakerF0Stats> = BTreeMap::new();
    for u in &manifest.utterances {
        if stats.contains_key(&u.speaker) {
            continue;
        }
        let spk_tracks: Vec<&F0Track> = manifest
            .utterances
            .iter()
            .filter(|v| v.speaker == u.speaker)
            .map(|v| &tracks[v.id.as_str()])
            .collect();
        stats.insert(u.speaker.clone(), speaker_stats(&spk_tracks)?);
    }
    for u in &manifest.utterances {
        let bundle = extract_features(
            &waves[u.id.as_str()],
            &tracks[u.id.as_str()],
            &stats[&u.speaker],
            &u.speaker,
            &u.emotion,
            cfg,
        )?;
        let path = bundle_path(cfg, &u.id);
        write_bundle(&path, &bundle).map_err(|e| at_path(e, &path))?;
    }
    write_speaker_stats(&cache.join("speaker_stats.json"), &stats)?;
    write_run_record(cfg, "extract")?;
    println!("extract: cached {} bundles, {} speakers", manifest.utterances.len(), stats.len());
    println!("cache: {}", cache.display());
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, stage_name: &str) -> Result<()> {
    let stage = Stage::parse(stage_name)?;
    let manifest = load_manifest(cfg)?;
    let bundles = load_bundles(cfg, &manifest)?;
    let ds = Dataset::build(&manifest, &bundles, cfg)?;
    std::fs::create_dir_all(cfg.ckpt_dir())?;
    std::fs::create_dir_all(cfg.reports_dir())?;
    let run_seed = subseed(cfg.seed, "stage", &[stage.seed_index()]);
    let metrics_path = cfg.reports_dir().join(format!("metrics.{}.csv", stage.name()));
    let progress = |m: &EpochMetrics| {
        if m.epoch == 1 || m.epoch % 25 == 0 {
            eprintln!("epoch {}: recon {:.6}", m.epoch, m.recon);
        }
    };
    match stage {
        Stage::Joint => {
            let mut params = init_params(cfg, ds.mel_mean, ds.mel_std);
            let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
            let metrics =
                train_joint(&mut params, &mut opt, &ds, cfg, cfg.epochs, run_seed, progress)?;
            write_metrics_csv(&metrics_path, &metrics)?;
            checkpoint::save(&ckpt_path(cfg, stage), &params, &opt)?;
            match metrics.last() {
                Some(last) => println!(
                    "train joint: {} epochs, final recon {:.6}",
                    metrics.len(),
                    last.recon
                ),
                None => println!("train joint: 0 epochs"),
            }
        }
        Stage::Direction(axis, sign) => {
            let joint = ckpt_path(cfg, Stage::Joint);
            if !joint.is_file() {
                return Err(Error::Usage(format!(
                    "stage {} fine-tunes the joint model; run train --stage joint first (missing {})",
                    stage.name(),
                    joint.display()
                )));
            }
            let (base, _) = checkpoint::load(&joint)?;
            let run = train_direction_filter(
                &base,
                &ds,
                axis,
                sign,
                cfg,
                cfg.stage_epochs,
                run_seed,
                progress,
            )?;
            write_metrics_csv(&metrics_path, &run.metrics)?;
            let ckpt = ckpt_path(cfg, stage);
            checkpoint::save(&ckpt, &run.filter.params, &run.opt)?;
            let fm = FilterManifest {
                axis: axis.name().to_string(),
                sign: sign.name().to_string(),
                pairs: run.pairs.clone(),
                va_table: cfg.va_table.clone(),
                checkpoint: ckpt
                    .file_name()
                    .expect("checkpoint path has a file name")
                    .to_string_lossy()
                    .into_owned(),
            };
            let text = serde_json::to_string_pretty(&fm)
                .map_err(|e| Error::Internal(format!("filter manifest: {e}")))?;
            std::fs::write(cfg.ckpt_dir().join(format!("filter.{}.json", stage.name())), text + "\n")?;
            let dirs: Vec<String> = run.pairs.iter().map(|(a, b)| format!("{a}->{b}")).collect();
            println!(
                "train {}: {} epochs on {}",
                stage.name(),
                run.metrics.len(),
                dirs.join(", ")
            );
        }
    }
    println!("metrics: {}", metrics_path.display());
    write_run_record(cfg, "train")?;
    Ok(())
}

/// Sidecar metadata written next to every converted bundle.
#[derive(Serialize)]
struct ConvertRecord {
    source: String,
    source_emotion: String,
    target_emotion: String,
    /// Direction stages applied in order; empty means self-reconstruction.
    schedule: Vec<String>,
    features: String,
    waveform: Option<String>,
}

fn cmd_convert(
    cfg: &ExperimentConfig,
    source_id: &str,
    target_emotion: &str,
    wav: bool,
) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let bundles = load_bundles(cfg, &manifest)?;
    let stats = load_stats(cfg)?;
    let u = manifest
        .find(source_id)
        .ok_or_else(|| Error::Data(format!("utterance `{source_id}` not in corpus manifest")))?;
    let schedule = build_va_schedule(&u.emotion, target_emotion, &cfg.va_table)?;
    let joint_path = ckpt_path(cfg, Stage::Joint);
    if !joint_path.is_file() {
        return Err(Error::Usage(format!(
            "missing joint checkpoint {}; run train --stage joint first",
            joint_path.display()
        )));
    }
    let (joint, _) = checkpoint::load(&joint_path)?;
    let mut filters = Vec::new();
    for (axis, sign) in &schedule {
        let st = Stage::Direction(*axis, *sign);
        let path = ckpt_path(cfg, st);
        if !path.is_file() {
            return Err(Error::Usage(format!(
                "{} -> {} routes through the {} filter; run train --stage {} first (missing {})",
                u.emotion,
                target_emotion,
                st.name(),
                st.name(),
                path.display()
            )));
        }
        let (params, _) = checkpoint::load(&path)?;
        filters.push(DirectionFilter { axis: *axis, sign: *sign, params });
    }
    let models = ScheduleModels { joint, filters };
    let src = &bundles[&u.id];
    let emo_utt = manifest.parallel(u, target_emotion).ok_or_else(|| {
        Error::Data(format!(
            "corpus has no {target_emotion} rendition of sentence {} by {}",
            u.sentence, u.speaker
        ))
    })?;
    let refs = ConversionRefs { emotion: Some(&bundles[&emo_utt.id]), speaker: None };
    let spk_stats = stats
        .get(&u.speaker)
        .ok_or_else(|| Error::Data(format!("no speaker stats for {} (run extract first)", u.speaker)))?;
    let mel = apply_schedule(&models, cfg, src, spk_stats, &schedule, &refs)?;
    let mut out = reanalyze(&mel, src, spk_stats, cfg)?;
    out.emotion = target_emotion.to_string();
    let out_dir = cfg.reports_dir().join("convert");
    std::fs::create_dir_all(&out_dir)?;
    let stem = format!("{}.to-{}", u.id, target_emotion);
    let feat_path = out_dir.join(format!("{stem}.feat"));
    write_bundle(&feat_path, &out)?;
    let stage_names: Vec<String> = schedule
        .iter()
        .map(|(a, s)| Stage::Direction(*a, *s).name().to_string())
        .collect();
    let wav_name = wav.then(|| format!("{stem}.wav"));
    let record = ConvertRecord {
        source: u.id.clone(),
        source_emotion: u.emotion.clone(),
        target_emotion: target_emotion.to_string(),
        schedule: stage_names.clone(),
        features: format!("{stem}.feat"),
        waveform: wav_name.clone(),
    };
    let text = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Internal(format!("convert record: {e}")))?;
    std::fs::write(out_dir.join(format!("{stem}.json")), text + "\n")?;
    if let Some(name) = &wav_name {
        let fb = MelFilterbank::new(cfg.n_mels, cfg.win, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
        let mag = mel_to_magnitudes(&mel, &fb)?;
        // Inverse of the framing grid: T frames cover (T-1)*hop samples.
        let out_len = (mel.t() - 1) * cfg.hop;
        let samples = griffin_lim(&mag, cfg.win, cfg.hop, cfg.griffin_lim_iters, out_len, cfg.sample_rate)?;
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
        let wave = Waveform::new(samples.iter().map(|s| s * scale).collect(), cfg.sample_rate)?;
        write_wav(&out_dir.join(name), &wave)?;
    }
    write_run_record(cfg, "convert")?;
    let route = if stage_names.is_empty() { "identity".to_string() } else { stage_names.join(", ") };
    println!("convert {}: {} -> {} via [{}]", u.id, u.emotion, target_emotion, route);
    println!("features: {}", feat_path.display());
    if let Some(name) = &wav_name {
        println!("waveform: {}", out_dir.join(name).display());
    }
    Ok(())
}

struct PairRow {
    id: String,
    reference: String,
    converted: String,
}

const PAIRS_HEADER: &str = "pair_id,reference,converted";

fn parse_pairs(text: &str) -> Result<Vec<PairRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return Err(Error::Format("pairs manifest is empty".into()));
    };
    if header.trim() != PAIRS_HEADER {
        return Err(Error::Format(format!(
            "pairs manifest header must be `{PAIRS_HEADER}`, got `{}`",
            header.trim()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Format(format!(
                "pairs manifest line {}: expected `{PAIRS_HEADER}`",
                i + 1
            )));
        }
        rows.push(PairRow {
            id: fields[0].to_string(),
            reference: fields[1].to_string(),
            converted: fields[2].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Format("pairs manifest has no rows".into()));
    }
    Ok(rows)
}

/// A pairs-manifest entry is a cache utterance id or a path to a .feat file.
fn resolve_entry(
    cfg: &ExperimentConfig,
    entry: &str,
    unmatched: &mut Vec<String>,
) -> Result<Option<FeatureBundle>> {
    let path = if entry.ends_with(".feat") { PathBuf::from(entry) } else { bundle_path(cfg, entry) };
    if !path.is_file() {
        unmatched.push(entry.to_string());
        return Ok(None);
    }
    Ok(Some(read_bundle(&path).map_err(|e| at_path(e, &path))?))
}

/// Denormalized Hz contour: speaker stats invert the z-score domain at
/// voiced frames, unvoiced frames stay 0.
fn hz_contour(
    bundle: &FeatureBundle,
    stats: &BTreeMap<String, SpeakerF0Stats>,
) -> Result<Vec<f64>> {
    let st = stats
        .get(&bundle.speaker)
        .ok_or_else(|| Error::Data(format!("no speaker stats for {} (run extract first)", bundle.speaker)))?;
    Ok(bundle
        .pitch
        .iter()
        .zip(&bundle.voiced)
        .map(|(z, v)| if *v > 0.5 { denormalize(*z, st) } else { 0.0 })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "nan".to_string(),
    }
}

fn cmd_eval(cfg: &ExperimentConfig, pairs_path: &Path) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let bundles = load_bundles(cfg, &manifest)?;
    let stats = load_stats(cfg)?;
    let text = std::fs::read_to_string(pairs_path)
        .map_err(|e| Error::Data(format!("cannot read pairs manifest {}: {e}", pairs_path.display())))?;
    let rows = parse_pairs(&text)?;
    let mut resolved: Vec<(PairRow, FeatureBundle, FeatureBundle)> = Vec::new();
    let mut unmatched = Vec::new();
    for row in rows {
        let reference = resolve_entry(cfg, &row.reference, &mut unmatched)?;
        let converted = resolve_entry(cfg, &row.converted, &mut unmatched)?;
        if let (Some(r), Some(c)) = (reference, converted) {
            resolved.push((row, r, c));
        }
    }
    if !unmatched.is_empty() {
        unmatched.sort();
        unmatched.dedup();
        return Err(Error::Data(format!("unmatched pair entries: {}", unmatched.join(", "))));
    }
    std::fs::create_dir_all(cfg.reports_dir())?;

    // Per-pair scores, then per-direction means keyed by emotion tags.
    let mut out = String::from("# alignment: linear\n");
    out.push_str("pair_id,mcd_db,f0_rmse_hz,voiced_overlap\n");
    struct DirAgg {
        mcd_sum: f64,
        rmse_sum: f64,
        rmse_n: usize,
        overlap_sum: f64,
        n: usize,
    }
    let mut dirs: BTreeMap<String, DirAgg> = BTreeMap::new();
    for (row, reference, converted) in &resolved {
        let mcd_db = mcd(&reference.mcep, &converted.mcep)?;
        let ref_hz = hz_contour(reference, &stats)?;
        let conv_hz = hz_contour(converted, &stats)?;
        let agree = f0_rmse(&ref_hz, &conv_hz)?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.id,
            mcd_db,
            fmt_opt(agree.rmse_hz),
            agree.overlap
        ));
        let key = format!("{}->{}", reference.emotion, converted.emotion);
        let agg = dirs.entry(key).or_insert(DirAgg {
            mcd_sum: 0.0,
            rmse_sum: 0.0,
            rmse_n: 0,
            overlap_sum: 0.0,
            n: 0,
        });
        agg.mcd_sum += mcd_db;
        if let Some(r) = agree.rmse_hz {
            agg.rmse_sum += r;
            agg.rmse_n += 1;
        }
        agg.overlap_sum += agree.overlap;
        agg.n += 1;
    }
    for (key, agg) in &dirs {
        let n = agg.n as f64;
        let rmse = (agg.rmse_n > 0).then(|| agg.rmse_sum / agg.rmse_n as f64);
        out.push_str(&format!(
            "mean({}),{},{},{}\n",
            key,
            agg.mcd_sum / n,
            fmt_opt(rmse),
            agg.overlap_sum / n
        ));
    }

    // Factor recovery over the rows whose reference is a corpus utterance;
    // every cached bundle serves as prototype material.
    let cases: Vec<RecoveryCase> = resolved
        .iter()
        .filter_map(|(row, reference, converted)| {
            manifest.find(&row.reference).map(|utt| RecoveryCase {
                bundle: converted,
                speaker: &utt.speaker,
                emotion: &converted.emotion,
                sentence: utt.sentence,
                content_ref: reference,
            })
        })
        .collect();
    if !cases.is_empty() {
        let refs: Vec<RecoveryRef> = manifest
            .utterances
            .iter()
            .map(|u| RecoveryRef { sentence: u.sentence, bundle: &bundles[&u.id] })
            .collect();
        let rec = factor_recovery(&cases, &refs, cfg)?;
        out.push_str(&format!(
            "# factor_recovery: n={} emotion={} speaker={} content={}\n",
            rec.n, rec.emotion_accuracy, rec.speaker_accuracy, rec.content_correlation
        ));
    }
    let eval_path = cfg.reports_dir().join("eval.csv");
    std::fs::write(&eval_path, &out)?;

    // t-SNE of utterance-level F0 summaries over the whole cache.
    let n = manifest.utterances.len();
    let mut points = Mat::zeros(n, 6);
    for (i, u) in manifest.utterances.iter().enumerate() {
        let b = &bundles[&u.id];
        let summary = eval::f0_summary(&b.pitch, &b.voiced);
        for (j, v) in summary.iter().enumerate() {
            points.set(i, j, *v);
        }
    }
    let tsne = eval::tsne_embed(
        &points,
        cfg.tsne_perplexity,
        cfg.tsne_iters,
        subseed(cfg.seed, "tsne", &[]),
    )?;
    let mut tsne_csv = String::from("id,x,y,label\n");
    for (i, u) in manifest.utterances.iter().enumerate() {
        tsne_csv.push_str(&format!(
            "{},{},{},{}\n",
            u.id,
            tsne.embedding.get(i, 0),
            tsne.embedding.get(i, 1),
            u.emotion
        ));
    }
    let tsne_path = cfg.reports_dir().join("tsne.csv");
    std::fs::write(&tsne_path, &tsne_csv)?;

    write_run_record(cfg, "eval")?;
    println!("eval: {} pairs, {} directions", resolved.len(), dirs.len());
    println!("report: {}", eval_path.display());
    println!("tsne: {}", tsne_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_utc_known_dates() {
        assert_eq!(iso_utc(0), "1970-01-01T00:00:00Z");
        assert_eq!(iso_utc(86_399), "1970-01-01T23:59:59Z");
        assert_eq!(iso_utc(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(iso_utc(1_787_270_400), "2026-08-21T00:00:00Z");
    }

    #[test]
    fn pairs_manifest_parses_and_validates() {
        let rows = parse_pairs("pair_id,reference,converted\np1, a , b\n\n# note\np2,c,d\n")
            .expect("well-formed manifest parses");
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].reference, "a");
        assert_eq!(rows[1].id, "p2");
        assert!(matches!(parse_pairs(""), Err(Error::Format(_))));
        assert!(matches!(parse_pairs("id,ref,conv\n"), Err(Error::Format(_))));
        assert!(matches!(
            parse_pairs("pair_id,reference,converted\njust,two\n"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_pairs("pair_id,reference,converted\n"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn path_attachment_keeps_exit_class() {
        let p = Path::new("/tmp/x.feat");
        let wrapped = at_path(Error::Io(std::io::Error::other("boom")), p);
        assert_eq!(wrapped.exit_code(), 2);
        assert!(wrapped.to_string().contains("x.feat"));
        let fmt = at_path(Error::Format("bad magic".into()), p);
        assert!(matches!(fmt, Error::Format(_)));
        assert!(fmt.to_string().contains("bad magic"));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let code = main_entry(vec!["sfevc".into(), "--bogus".into()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn help_exits_clean() {
        let args: Vec<String> = vec!["sfevc".into(), "--help".into()];
        match Cli::try_parse_from(&args) {
            Err(e) => assert!(matches!(e.kind(), ErrorKind::DisplayHelp)),
            Ok(_) => panic!("--help must not parse as a command"),
        }
    }
}
