//! Random resampling (the rhythm-destroying augmentation) and deterministic
//! linear time alignment.
//!
//! Random resampling splits the frame axis into random segments and stretches
//! each by a random factor. Segment boundaries and factors are the only
//! randomness; interpolation is plain linear. Rhythm features never pass
//! through here, only the content and pitch streams do.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::rng;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct RrParams {
    pub seg_min: usize,
    pub seg_max: usize,
    pub stretch_min: f64,
    pub stretch_max: f64,
}

impl RrParams {
    pub fn validate(&self) -> Result<()> {
        if self.seg_min < 1 || self.seg_min > self.seg_max {
            return Err(Error::Config("rr: need 1 <= seg_min <= seg_max".into()));
        }
        if !(self.stretch_min > 0.0 && self.stretch_min <= self.stretch_max) {
            return Err(Error::Config("rr: need 0 < stretch_min <= stretch_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrSegment {
    pub orig_len: usize,
    pub new_len: usize,
    pub stretch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrPlan {
    pub segments: Vec<RrSegment>,
}

impl RrPlan {
    pub fn orig_total(&self) -> usize {
        self.segments.iter().map(|s| s.orig_len).sum()
    }

    pub fn new_total(&self) -> usize {
        self.segments.iter().map(|s| s.new_len).sum()
    }
}

/// Draw segment lengths and stretch factors for `t` frames.
///
/// New lengths come from rounding the cumulative stretched length, so the
/// total never drifts from `round(sum orig_len * stretch)` no matter how many
/// segments there are. A stretch of exactly 1.0 everywhere keeps every
/// segment length unchanged.
pub fn plan(t: usize, seed: u64, p: &RrParams) -> Result<RrPlan> {
    p.validate()?;
    if t == 0 {
        return Err(Error::Data("rr: empty time axis".into()));
    }
    let mut r = rng(seed);
    let mut segments = Vec::new();
    let mut remaining = t;
    let mut cum_target = 0.0f64;
    let mut cum_assigned = 0usize;
    while remaining > 0 {
        let orig_len = r.random_range(p.seg_min..=p.seg_max).min(remaining);
        let stretch = r.random_range(p.stretch_min..=p.stretch_max);
        cum_target += orig_len as f64 * stretch;
        let new_len = (cum_target.round() as usize).saturating_sub(cum_assigned);
        cum_assigned += new_len;
        segments.push(RrSegment { orig_len, new_len, stretch });
        remaining -= orig_len;
    }
    if cum_assigned == 0 {
        // degenerate tiny input squeezed to nothing; keep one frame
        segments.last_mut().unwrap().new_len = 1;
    }
    Ok(RrPlan { segments })
}

/// Stretch each segment of `x` (rows are frames) per the plan.
pub fn apply_plan(x: &Mat, plan: &RrPlan) -> Result<Mat> {
    if plan.orig_total() != x.rows {
        return Err(Error::Internal(format!(
            "rr: plan covers {} frames, matrix has {}",
            plan.orig_total(),
            x.rows
        )));
    }
    let mut out = Mat::zeros(plan.new_total(), x.cols);
    let mut src_base = 0usize;
    let mut dst_base = 0usize;
    for seg in &plan.segments {
        for j in 0..seg.new_len {
            // center-aligned linear map; exact identity when lengths match
            let pos = (j as f64 + 0.5) * seg.orig_len as f64 / seg.new_len as f64 - 0.5;
            let pos = pos.clamp(0.0, (seg.orig_len - 1) as f64);
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let i1 = (i0 + 1).min(seg.orig_len - 1);
            let (ra, rb) = (x.row(src_base + i0), x.row(src_base + i1));
            let dst = out.row_mut(dst_base + j);
            if frac == 0.0 {
                dst.copy_from_slice(ra);
            } else {
                for ((d, a), b) in dst.iter_mut().zip(ra).zip(rb) {
                    *d = a * (1.0 - frac) + b * frac;
                }
            }
        }
        src_base += seg.orig_len;
        dst_base += seg.new_len;
    }
    Ok(out)
}

pub fn random_resample(x: &Mat, seed: u64, p: &RrParams) -> Result<Mat> {
    apply_plan(x, &plan(x.rows, seed, p)?)
}

/// Two-tap linear interpolation weights mapping `src_len` rows onto
/// `dst_len` rows, endpoint-aligned. Equal lengths give the identity map.
pub fn linear_weights(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    assert!(src_len >= 1 && dst_len >= 1);
    (0..dst_len)
        .map(|j| {
            let pos = if dst_len == 1 {
                (src_len - 1) as f64 / 2.0
            } else {
                j as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src_len - 1);
            let frac = pos - i0 as f64;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, frac)
        })
        .collect()
}

/// Resample rows of `x` to `dst_len` by endpoint-aligned linear
/// interpolation. Bitwise passthrough when the length already matches.
pub fn linear_resample(x: &Mat, dst_len: usize) -> Result<Mat> {
    if x.rows == 0 {
        return Err(Error::Data("linear_resample: empty matrix".into()));
    }
    if x.rows == dst_len {
        return Ok(x.clone());
    }
    let weights = linear_weights(x.rows, dst_len);
    let mut out = Mat::zeros(dst_len, x.cols);
    for (j, (i0, i1, frac)) in weights.into_iter().enumerate() {
        let (ra, rb) = (x.row(i0), x.row(i1));
        let dst = out.row_mut(j);
        for ((d, a), b) in dst.iter_mut().zip(ra).zip(rb) {
            *d = a * (1.0 - frac) + b * frac;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn default_params() -> RrParams {
        RrParams { seg_min: 8, seg_max: 32, stretch_min: 0.5, stretch_max: 1.5 }
    }

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = rng(seed);
        Mat::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn deterministic_per_seed() {
        let x = random_mat(100, 4, 1);
        let a = random_resample(&x, 42, &default_params()).unwrap();
        let b = random_resample(&x, 42, &default_params()).unwrap();
        assert_eq!(a.data, b.data);
        let c = random_resample(&x, 43, &default_params()).unwrap();
        assert!(a.rows != c.rows || a.data != c.data);
    }

    #[test]
    fn unit_stretch_is_bitwise_identity() {
        let p = RrParams { stretch_min: 1.0, stretch_max: 1.0, ..default_params() };
        let x = random_mat(97, 5, 2);
        for seed in 0..20 {
            let y = random_resample(&x, seed, &p).unwrap();
            assert_eq!(y.rows, x.rows);
            assert_eq!(y.data, x.data, "seed {seed}");
        }
    }

    #[test]
    fn total_length_stays_in_stretch_bounds() {
        let x = random_mat(120, 2, 3);
        let p = default_params();
        for seed in 0..200 {
            let y = random_resample(&x, seed, &p).unwrap();
            let lo = (120.0 * p.stretch_min).floor() as usize;
            let hi = (120.0 * p.stretch_max).ceil() as usize;
            assert!(y.rows >= lo && y.rows <= hi, "seed {seed}: {} rows", y.rows);
        }
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Mat::from_fn(64, 3, |_, c| c as f64 + 0.25);
        let y = random_resample(&x, 9, &default_params()).unwrap();
        for t in 0..y.rows {
            for c in 0..3 {
                assert!((y.get(t, c) - (c as f64 + 0.25)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn columns_resampled_independently() {
        let x = random_mat(80, 3, 4);
        let swapped = Mat::from_fn(80, 3, |r, c| x.get(r, 2 - c));
        let a = random_resample(&x, 7, &default_params()).unwrap();
        let b = random_resample(&swapped, 7, &default_params()).unwrap();
        for t in 0..a.rows {
            for c in 0..3 {
                assert_eq!(a.get(t, c), b.get(t, 2 - c));
            }
        }
    }

    #[test]
    fn values_stay_in_input_hull() {
        let x = random_mat(90, 2, 5);
        let (lo, hi) = x.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(*v), h.max(*v))
        });
        for seed in 0..50 {
            let y = random_resample(&x, seed, &default_params()).unwrap();
            for v in &y.data {
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn single_frame_input_survives() {
        let x = random_mat(1, 4, 6);
        let y = random_resample(&x, 0, &default_params()).unwrap();
        assert!(y.rows >= 1);
        assert_eq!(y.row(0), x.row(0));
    }

    #[test]
    fn linear_resample_identity_is_bitwise() {
        let x = random_mat(33, 6, 7);
        let y = linear_resample(&x, 33).unwrap();
        assert_eq!(x.data, y.data);
    }

    #[test]
    fn linear_resample_endpoints_pinned() {
        let x = random_mat(21, 3, 8);
        for dst in [1usize, 2, 5, 21, 40, 63] {
            let y = linear_resample(&x, dst).unwrap();
            assert_eq!(y.rows, dst);
            if dst >= 2 {
                assert_eq!(y.row(0), x.row(0));
                assert_eq!(y.row(dst - 1), x.row(20));
            }
        }
    }

    #[test]
    fn linear_resample_recovers_linear_ramps() {
        let x = Mat::from_fn(11, 1, |r, _| r as f64);
        let y = linear_resample(&x, 21).unwrap();
        for j in 0..21 {
            assert!((y.get(j, 0) - j as f64 * 0.5).abs() < 1e-12);
        }
    }
}
