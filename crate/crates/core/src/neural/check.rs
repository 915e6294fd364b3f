//! Finite-difference gradient verification.

use crate::neural::params::ParamStore;
use crate::neural::tape::{Id, Tape};
use crate::rng::{rng, subseed};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub worst_rel: f64,
    pub checked: usize,
    pub skipped_small: usize,
}

/// Compare analytic gradients of the scalar `build` produces against central
/// differences, sampling `samples_per_tensor` coordinates of every tensor
/// that received a gradient. Coordinates where both sides are below 1e-10
/// are counted as skipped rather than compared.
pub fn fd_check(
    params: &ParamStore,
    build: &dyn Fn(&mut Tape, &ParamStore) -> Id,
    samples_per_tensor: usize,
    seed: u64,
) -> FdReport {
    let mut tape = Tape::new();
    let root = build(&mut tape, params);
    let grads = tape.backward(root);
    drop(tape);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut scratch = params.clone();
    for (name, g) in &grads {
        let mut r = rng(subseed(seed, name, &[]));
        let n = g.len();
        let picks: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            (0..samples_per_tensor).map(|_| r.random_range(0..n)).collect()
        };
        for i in picks {
            let orig = params.get(name).data[i];
            let h = 1e-5 * orig.abs().max(1.0);
            scratch.get_mut(name).data[i] = orig + h;
            let mut tp = Tape::new();
            let rp = build(&mut tp, &scratch);
            let fp = tp.scalar(rp);
            drop(tp);
            scratch.get_mut(name).data[i] = orig - h;
            let mut tm = Tape::new();
            let rm = build(&mut tm, &scratch);
            let fm = tm.scalar(rm);
            drop(tm);
            scratch.get_mut(name).data[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let an = g[i];
            let scale = fd.abs().max(an.abs());
            if scale < 1e-10 {
                skipped += 1;
                continue;
            }
            checked += 1;
            worst = worst.max((fd - an).abs() / scale);
        }
    }
    FdReport { worst_rel: worst, checked, skipped_small: skipped }
}
