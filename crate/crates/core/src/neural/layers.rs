//! Layer builders and their parameter registration.
//!
//! Every layer is a pair of functions: `register_*` creates the named
//! tensors in a [`ParamStore`], the builder wires the computation into a
//! [`Tape`] by binding those names. Shapes follow the (out x in) weight
//! convention of [`Tape::matmul_nt`].

use crate::neural::params::ParamStore;
use crate::neural::tape::{Id, Tape};

pub fn register_linear(ps: &mut ParamStore, seed: u64, prefix: &str, in_dim: usize, out_dim: usize) {
    ps.add_uniform(seed, &format!("{prefix}.w"), out_dim, in_dim, in_dim);
    ps.add_uniform(seed, &format!("{prefix}.b"), 1, out_dim, in_dim);
}

pub fn linear(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id) -> Id {
    let w = t.param(ps, &format!("{prefix}.w"));
    let b = t.param(ps, &format!("{prefix}.b"));
    let y = t.matmul_nt(x, w);
    t.add_row(y, b)
}

pub fn register_conv1d(
    ps: &mut ParamStore,
    seed: u64,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    kernel: usize,
) {
    let fan_in = in_dim * kernel;
    ps.add_uniform(seed, &format!("{prefix}.w"), out_dim, fan_in, fan_in);
    ps.add_uniform(seed, &format!("{prefix}.b"), 1, out_dim, fan_in);
}

/// Same-length 1-d convolution over the frame axis, zero-padded edges.
pub fn conv1d(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id, kernel: usize) -> Id {
    let u = t.unfold(x, kernel);
    let w = t.param(ps, &format!("{prefix}.w"));
    let b = t.param(ps, &format!("{prefix}.b"));
    let y = t.matmul_nt(u, w);
    t.add_row(y, b)
}

pub fn register_group_norm(ps: &mut ParamStore, prefix: &str, dim: usize) {
    ps.add_const(&format!("{prefix}.gamma"), 1, dim, 1.0);
    ps.add_const(&format!("{prefix}.beta"), 1, dim, 0.0);
}

pub fn group_norm(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id, groups: usize) -> Id {
    let gamma = t.param(ps, &format!("{prefix}.gamma"));
    let beta = t.param(ps, &format!("{prefix}.beta"));
    t.group_norm(x, gamma, beta, groups)
}

pub fn register_lstm_dir(ps: &mut ParamStore, seed: u64, prefix: &str, in_dim: usize, hidden: usize) {
    ps.add_uniform(seed, &format!("{prefix}.w_ih"), 4 * hidden, in_dim, in_dim);
    ps.add_uniform(seed, &format!("{prefix}.w_hh"), 4 * hidden, hidden, hidden);
    ps.add_uniform(seed, &format!("{prefix}.b"), 1, 4 * hidden, hidden);
}

/// One LSTM direction over the rows of `x`, returning the T x hidden state
/// sequence in the original row order.
pub fn lstm_dir(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id, hidden: usize, reverse: bool) -> Id {
    let steps = t.rows(x);
    let xx = if reverse { t.reverse_rows(x) } else { x };
    let w_ih = t.param(ps, &format!("{prefix}.w_ih"));
    let w_hh = t.param(ps, &format!("{prefix}.w_hh"));
    let b = t.param(ps, &format!("{prefix}.b"));
    // all input projections in one matmul; the recurrence adds per step
    let z = t.matmul_nt(xx, w_ih);
    let z = t.add_row(z, b);
    let mut h_prev = t.input_zeros(1, hidden);
    let mut c_prev = t.input_zeros(1, hidden);
    let mut hs = Vec::with_capacity(steps);
    for step in 0..steps {
        let zt = t.row_range(z, step, 1);
        let rec = t.matmul_nt(h_prev, w_hh);
        let s = t.add(zt, rec);
        let c = t.lstm_cell(s, c_prev);
        let h = t.lstm_hidden(s, c);
        hs.push(h);
        h_prev = h;
        c_prev = c;
    }
    let seq = t.concat_rows(&hs);
    if reverse {
        t.reverse_rows(seq)
    } else {
        seq
    }
}

pub fn register_blstm(ps: &mut ParamStore, seed: u64, prefix: &str, in_dim: usize, hidden: usize) {
    register_lstm_dir(ps, seed, &format!("{prefix}.fwd"), in_dim, hidden);
    register_lstm_dir(ps, seed, &format!("{prefix}.bwd"), in_dim, hidden);
}

/// Bidirectional LSTM: T x 2*hidden, forward states in the left half.
pub fn blstm(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id, hidden: usize) -> Id {
    let f = lstm_dir(t, ps, &format!("{prefix}.fwd"), x, hidden, false);
    let r = lstm_dir(t, ps, &format!("{prefix}.bwd"), x, hidden, true);
    t.concat_cols(&[f, r])
}

pub fn register_blstm_stack(
    ps: &mut ParamStore,
    seed: u64,
    prefix: &str,
    in_dim: usize,
    layers: usize,
    hidden: usize,
) {
    let mut dim = in_dim;
    for l in 0..layers {
        register_blstm(ps, seed, &format!("{prefix}.lstm{l}"), dim, hidden);
        dim = 2 * hidden;
    }
}

pub fn blstm_stack(t: &mut Tape, ps: &ParamStore, prefix: &str, x: Id, layers: usize, hidden: usize) -> Id {
    let mut y = x;
    for l in 0..layers {
        y = blstm(t, ps, &format!("{prefix}.lstm{l}"), y, hidden);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::neural::check::fd_check;
    use crate::rng::rng;
    use rand::Rng;

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng(seed);
        Mat::from_fn(rows, cols, |_, _| r.random_range(-0.8..0.8))
    }

    #[test]
    fn conv_stack_grads_match_fd() {
        let mut ps = ParamStore::new();
        register_conv1d(&mut ps, 1, "c0", 3, 8, 5);
        register_group_norm(&mut ps, "c0.gn", 8);
        register_conv1d(&mut ps, 1, "c1", 8, 6, 5);
        let x = rand_mat(9, 3, 2);
        let report = fd_check(
            &ps,
            &|t, p| {
                let xi = t.input(&x);
                let y = conv1d(t, p, "c0", xi, 5);
                let y = group_norm(t, p, "c0.gn", y, 4);
                let y = t.relu(y);
                let y = conv1d(t, p, "c1", y, 5);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            6,
            77,
        );
        assert!(report.worst_rel < 1e-6, "worst {}", report.worst_rel);
    }

    #[test]
    fn blstm_grads_match_fd() {
        let mut ps = ParamStore::new();
        register_blstm(&mut ps, 3, "rnn", 4, 3);
        let x = rand_mat(6, 4, 4);
        let report = fd_check(
            &ps,
            &|t, p| {
                let xi = t.input(&x);
                let y = blstm(t, p, "rnn", xi, 3);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            8,
            78,
        );
        assert!(report.worst_rel < 1e-6, "worst {}", report.worst_rel);
    }

    #[test]
    fn blstm_time_reversal_swaps_directions() {
        // running on reversed input with swapped direction weights must give
        // the row-reversed output with halves swapped
        let mut ps = ParamStore::new();
        register_blstm(&mut ps, 5, "rnn", 4, 3);
        let mut swapped = ParamStore::new();
        for (name, t) in &ps.tensors {
            let other = if name.contains(".fwd.") {
                name.replace(".fwd.", ".bwd.")
            } else {
                name.replace(".bwd.", ".fwd.")
            };
            swapped.tensors.insert(other, t.clone());
        }
        let x = rand_mat(7, 4, 6);
        let xrev = Mat::from_fn(7, 4, |r, c| x.get(6 - r, c));

        let mut t1 = Tape::new();
        let xi = t1.input(&x);
        let y = blstm(&mut t1, &ps, "rnn", xi, 3);
        let mut t2 = Tape::new();
        let xri = t2.input(&xrev);
        let yr = blstm(&mut t2, &swapped, "rnn", xri, 3);

        let (v1, v2) = (t1.value(y), t2.value(yr));
        for r in 0..7 {
            for c in 0..6 {
                let half_swapped = if c < 3 { c + 3 } else { c - 3 };
                let a = v1[r * 6 + c];
                let b = v2[(6 - r) * 6 + half_swapped];
                assert!((a - b).abs() < 1e-12, "row {r} col {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn blstm_stack_shapes() {
        let mut ps = ParamStore::new();
        register_blstm_stack(&mut ps, 7, "enc", 10, 2, 4);
        let x = rand_mat(5, 10, 8);
        let mut t = Tape::new();
        let xi = t.input(&x);
        let y = blstm_stack(&mut t, &ps, "enc", xi, 2, 4);
        assert_eq!(t.rows(y), 5);
        assert_eq!(t.cols(y), 8);
    }

    #[test]
    fn linear_matches_direct_compute() {
        let mut ps = ParamStore::new();
        register_linear(&mut ps, 9, "out", 3, 2);
        let x = rand_mat(4, 3, 10);
        let mut t = Tape::new();
        let xi = t.input(&x);
        let y = linear(&mut t, &ps, "out", xi);
        let w = ps.get("out.w");
        let b = ps.get("out.b");
        for r in 0..4 {
            for o in 0..2 {
                let direct: f64 =
                    (0..3).map(|k| x.get(r, k) * w.data[o * 3 + k]).sum::<f64>() + b.data[o];
                assert!((t.value(y)[r * 2 + o] - direct).abs() < 1e-14);
            }
        }
    }
}
