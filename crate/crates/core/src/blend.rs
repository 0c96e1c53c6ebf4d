//! Triangular-window fusion of velocity differences across segment overlaps.

use crate::error::{MlvError, Result};
use crate::scalar::Scalar;
use crate::segment::SegmentPlan;
use crate::tensor::LatentSequence;

/// Triangular window `W(τ) = 1 − |1 − 2(τ + ½)/n|` over a segment of length `n`.
///
/// Evaluated as `min(2τ + 1, 2n − 2τ − 1) / n`, the same function with a
/// single rounding, so symmetric positions agree bitwise.
pub fn window_weight<S: Scalar>(tau: usize, n: usize) -> Result<S> {
    if tau >= n {
        return Err(MlvError::OutOfRange(format!(
            "window position {tau} outside segment of length {n}"
        )));
    }
    let numer = (2 * tau + 1).min(2 * n - 2 * tau - 1);
    Ok(S::from_usize_exact(numer) / S::from_usize_exact(n))
}

#[inline]
fn mix<S: Scalar>(prev: S, w_prev: S, curr: S, w_curr: S) -> S {
    (w_prev * prev + w_curr * curr) / (w_prev + w_curr)
}

/// Blends the last `k` frames of `dv_prev` with the first `k` frames of
/// `dv_curr`; row `j` weighs `dv_prev[n − k + j]` by `W(n − k + j)` and
/// `dv_curr[j]` by `W(j)`.
pub fn blend_overlap<S: Scalar>(
    dv_prev: &LatentSequence<S>,
    dv_curr: &LatentSequence<S>,
    n: usize,
    k: usize,
) -> Result<LatentSequence<S>> {
    if k == 0 || k >= n {
        return Err(MlvError::config(format!(
            "overlap {k} must satisfy 0 < k < n = {n}"
        )));
    }
    if dv_prev.frames() != n || dv_curr.frames() != n {
        return Err(MlvError::shape(format!(
            "blend inputs must have {n} frames, got {} and {}",
            dv_prev.frames(),
            dv_curr.frames()
        )));
    }
    dv_prev.check_same_shape(dv_curr, "blend inputs")?;
    let c = dv_prev.channels();
    let mut data = Vec::with_capacity(k * c);
    for j in 0..k {
        let tail = n - k + j;
        let w_prev: S = window_weight(tail, n)?;
        let w_curr: S = window_weight(j, n)?;
        debug_assert!(w_prev + w_curr > S::zero());
        for (&p, &q) in dv_prev.frame(tail).iter().zip(dv_curr.frame(j)) {
            data.push(mix(p, w_prev, q, w_curr));
        }
    }
    LatentSequence::new(k, c, data)
}

fn check_segments<S: Scalar>(plan: &SegmentPlan, dvs: &[LatentSequence<S>]) -> Result<usize> {
    if dvs.len() != plan.segment_count() {
        return Err(MlvError::shape(format!(
            "{} segment velocities for a {}-segment plan",
            dvs.len(),
            plan.segment_count()
        )));
    }
    let channels = dvs[0].channels();
    for (span, dv) in plan.spans().iter().zip(dvs) {
        if dv.frames() != span.len() || dv.channels() != channels {
            return Err(MlvError::shape(format!(
                "segment {} velocity is {}x{}, expected {}x{channels}",
                span.index,
                dv.frames(),
                dv.channels(),
                span.len()
            )));
        }
    }
    Ok(channels)
}

/// Assembles one global velocity from per-segment velocities, blending every
/// overlap in segment order.
///
/// The running buffer plays the role of the previous segment: once segment
/// `s` is blended in, its blended head is what segment `s + 1` meets. With the
/// usual geometry (`2k ≤ n`) this is the plain pairwise blend. Overlaps longer
/// than `k` (from the clamped last span) use the same formula over their full
/// length.
pub fn blend_segments<S: Scalar>(
    plan: &SegmentPlan,
    dvs: &[LatentSequence<S>],
) -> Result<LatentSequence<S>> {
    let c = check_segments(plan, dvs)?;
    let n = plan.segment_length();
    let mut buf = vec![S::zero(); plan.frames() * c];
    for (s, (span, dv)) in plan.spans().iter().zip(dvs).enumerate() {
        let fresh_from = if s == 0 {
            span.start
        } else {
            let prev = plan.span(s - 1);
            let overlap = plan.overlap_of(s)?;
            for g in overlap.clone() {
                let w_prev: S = window_weight(g - prev.start, n)?;
                let w_curr: S = window_weight(g - span.start, n)?;
                let row = &mut buf[g * c..(g + 1) * c];
                for (b, &v) in row.iter_mut().zip(dv.frame(g - span.start)) {
                    *b = mix(*b, w_prev, v, w_curr);
                }
            }
            overlap.end
        };
        for g in fresh_from..span.end {
            buf[g * c..(g + 1) * c].copy_from_slice(dv.frame(g - span.start));
        }
    }
    LatentSequence::new(plan.frames(), c, buf)
}

/// Direct splice: every frame takes the velocity of the last segment covering it.
pub fn splice_segments<S: Scalar>(
    plan: &SegmentPlan,
    dvs: &[LatentSequence<S>],
) -> Result<LatentSequence<S>> {
    let c = check_segments(plan, dvs)?;
    let mut buf = vec![S::zero(); plan.frames() * c];
    for (span, dv) in plan.spans().iter().zip(dvs) {
        buf[span.start * c..span.end * c].copy_from_slice(dv.as_slice());
    }
    LatentSequence::new(plan.frames(), c, buf)
}
