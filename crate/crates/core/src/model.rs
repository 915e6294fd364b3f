//! The conversion model: seven bottlenecked encoders, a mel decoder, and the
//! factor projection heads.
//!
//! Streams and their inputs:
//! - rhythm: source mel, never randomly resampled
//! - content: randomly resampled source mel
//! - pitch: randomly resampled normalized-F0 contours, one shared encoder
//!   for source, target and reference contours
//! - four emotion-separate pair encoders: speaker rhythm (mel, ref mel),
//!   emotion rhythm (target mel, source mel), speaker pitch (pitch codes),
//!   emotion pitch (pitch codes)
//!
//! Pair encoders concatenate the second input channel-wise after linear
//! length alignment to the first. Every encoder ends in a bidirectional
//! LSTM bottleneck and keeps every 8th frame (configurable), so the decoder
//! sees narrow, short codes and must rely on the full set to reconstruct.

use crate::config::{EncSpec, ExperimentConfig};
use crate::neural::{
    blstm_stack, conv1d, group_norm, linear, Id, ParamStore, Tape,
};

pub const PITCH_CHANNELS: usize = 2;

fn register_encoder(
    ps: &mut ParamStore,
    seed: u64,
    prefix: &str,
    in_dim: usize,
    spec: &EncSpec,
    kernel: usize,
) {
    let mut dim = in_dim;
    for l in 0..spec.conv_layers {
        crate::neural::register_conv1d(ps, seed, &format!("{prefix}.conv{l}"), dim, spec.conv_dim, kernel);
        crate::neural::register_group_norm(ps, &format!("{prefix}.gn{l}"), spec.conv_dim);
        dim = spec.conv_dim;
    }
    crate::neural::register_blstm_stack(ps, seed, prefix, dim, spec.blstm_layers, spec.blstm_dim);
}

/// Conv stack, BLSTM bottleneck, then keep every `downsample`-th frame.
pub fn encoder(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id, spec: &EncSpec, kernel: usize) -> Id {
    let mut y = x;
    for l in 0..spec.conv_layers {
        y = conv1d(t, ps, &format!("{prefix}.conv{l}"), y, kernel);
        y = group_norm(t, ps, &format!("{prefix}.gn{l}"), y, spec.groups);
        y = t.relu(y);
    }
    y = blstm_stack(t, ps, prefix, y, spec.blstm_layers, spec.blstm_dim);
    let idx: Vec<usize> = (0..t.rows(y)).step_by(spec.downsample).collect();
    t.gather_rows(y, idx)
}

/// Channel-concat of `a` with `b` linearly aligned to `a`'s length, then a
/// plain encoder over the fused input.
pub fn pair_encoder(
    t: &mut Tape,
    ps: &ParamStore,
    prefix: &str,
    a: Id,
    b: Id,
    spec: &EncSpec,
    kernel: usize,
) -> Id {
    let b_aligned = t.lin_resample_rows(b, t.rows(a));
    let fused = t.concat_cols(&[a, b_aligned]);
    encoder(t, ps, prefix, fused, spec, kernel)
}

/// Nearest-neighbor upsampling of code rows onto `target_t` frames.
pub fn upsample_nearest(t: &mut Tape, code: Id, target_t: usize) -> Id {
    let l = t.rows(code);
    let idx: Vec<usize> = (0..target_t).map(|j| j * l / target_t).collect();
    t.gather_rows(code, idx)
}

pub fn register_model(ps: &mut ParamStore, cfg: &ExperimentConfig) {
    let seed = cfg.seed;
    let k = cfg.kernel;
    let m = cfg.n_mels;
    register_encoder(ps, seed, "enc.rhythm", m, &cfg.rhythm, k);
    register_encoder(ps, seed, "enc.content", m, &cfg.content, k);
    register_encoder(ps, seed, "enc.pitch", PITCH_CHANNELS, &cfg.pitch, k);
    register_encoder(ps, seed, "enc.emo.u_s", 2 * m, &cfg.emo_u_s, k);
    register_encoder(ps, seed, "enc.emo.u_ts", 2 * m, &cfg.emo_u_ts, k);
    let zf_w = cfg.pitch.code_width();
    register_encoder(ps, seed, "enc.emo.zf_s", 2 * zf_w, &cfg.emo_zf_s, k);
    register_encoder(ps, seed, "enc.emo.zf_ts", 2 * zf_w, &cfg.emo_zf_ts, k);
    crate::neural::register_blstm_stack(
        ps,
        seed,
        "dec",
        cfg.decoder_in_channels(),
        cfg.decoder_blstm_layers,
        cfg.decoder_hidden,
    );
    crate::neural::register_linear(ps, seed, "dec.out", 2 * cfg.decoder_hidden, m);
    crate::neural::register_linear(ps, seed, "proj.pi", cfg.emo_zf_ts.code_width(), 2);
    crate::neural::register_linear(ps, seed, "proj.ti", cfg.emo_u_ts.code_width(), 2);
    crate::neural::register_linear(ps, seed, "proj.pd", cfg.emo_zf_s.code_width(), 2);
    crate::neural::register_linear(ps, seed, "proj.td", cfg.emo_u_s.code_width(), 2);
}

/// Everything the loss needs from one composed pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelOut {
    pub x_hat: Id,
    pub z_zf_t: Id,
    pub z_zf_s: Id,
    pub z_u_t: Id,
    pub z_u_s: Id,
}

/// Tape inputs for one composed pass. All mels are already standardized;
/// pitch contours are (normalized log-F0, voiced flag) pairs.
#[derive(Debug, Clone, Copy)]
pub struct ForwardIds {
    /// Source mel, untouched time axis.
    pub x: Id,
    /// Source mel through random resampling.
    pub x_rr: Id,
    /// Source pitch contour through random resampling.
    pub p_rr: Id,
    /// Target-emotion mel (reconstruction side input).
    pub x_t: Id,
    /// Target-emotion pitch contour through random resampling.
    pub p_t_rr: Id,
    /// Other-speaker reference mel, same emotion and sentence as source.
    pub x_y: Id,
    /// Other-speaker reference pitch contour through random resampling.
    pub p_y_rr: Id,
}

/// Compose the full conversion graph and decode at `target_t` frames.
pub fn forward(
    t: &mut Tape,
    ps: &ParamStore,
    cfg: &ExperimentConfig,
    ids: &ForwardIds,
    target_t: usize,
) -> ModelOut {
    let k = cfg.kernel;
    let z_r = encoder(t, ps, "enc.rhythm", ids.x, &cfg.rhythm, k);
    let z_c = encoder(t, ps, "enc.content", ids.x_rr, &cfg.content, k);
    // one pitch encoder, three contours
    let z_f_s = encoder(t, ps, "enc.pitch", ids.p_rr, &cfg.pitch, k);
    let z_f_t = encoder(t, ps, "enc.pitch", ids.p_t_rr, &cfg.pitch, k);
    let z_f_y = encoder(t, ps, "enc.pitch", ids.p_y_rr, &cfg.pitch, k);
    let z_u_s = pair_encoder(t, ps, "enc.emo.u_s", ids.x, ids.x_y, &cfg.emo_u_s, k);
    let z_u_t = pair_encoder(t, ps, "enc.emo.u_ts", ids.x_t, ids.x, &cfg.emo_u_ts, k);
    let z_zf_s = pair_encoder(t, ps, "enc.emo.zf_s", z_f_s, z_f_y, &cfg.emo_zf_s, k);
    let z_zf_t = pair_encoder(t, ps, "enc.emo.zf_ts", z_f_t, z_f_s, &cfg.emo_zf_ts, k);
    let x_hat = decode(t, ps, cfg, [z_r, z_c, z_zf_t, z_zf_s, z_u_t, z_u_s], target_t);
    ModelOut { x_hat, z_zf_t, z_zf_s, z_u_t, z_u_s }
}

/// Upsample all six codes to the target length, concatenate channel-wise,
/// run the decoder stack, and map to mel channels.
pub fn decode(
    t: &mut Tape,
    ps: &ParamStore,
    cfg: &ExperimentConfig,
    codes: [Id; 6],
    target_t: usize,
) -> Id {
    let ups: Vec<Id> = codes.iter().map(|c| upsample_nearest(t, *c, target_t)).collect();
    let x = t.concat_cols(&ups);
    debug_assert_eq!(t.cols(x), cfg.decoder_in_channels());
    let y = blstm_stack(t, ps, "dec", x, cfg.decoder_blstm_layers, cfg.decoder_hidden);
    linear(t, ps, "dec.out", y)
}

/// Mean-pool a code over time and project it to the 2-dim factor space.
pub fn project_code(t: &mut Tape, ps: &ParamStore, head: &str, code: Id) -> Id {
    let pooled = t.mean_rows(code);
    linear(t, ps, &format!("proj.{head}"), pooled)
}
