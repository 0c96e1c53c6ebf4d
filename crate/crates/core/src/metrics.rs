//! Seam and drift diagnostics on latent sequences.
//!
//! * Boundary jump: mean-squared adjacent-frame difference, taken as the
//!   maximum over each segment seam, compared against the same quantity on
//!   pairs away from any seam.
//! * Frame-skip similarity: cosine between per-frame features of consecutive
//!   segments' center frames.
//! * Temporal slice: one channel over time as an 8-bit strip.

use std::fmt::Write as _;

use crate::error::{MlvError, Result};
use crate::model::{PromptEmbedding, ToyTransformer};
use crate::scalar::Scalar;
use crate::segment::SegmentPlan;
use crate::tensor::{LatentSequence, Matrix};

/// `mean_c (z[g][c] − z[g−1][c])²` for `g ≥ 1`.
pub fn pair_jump<S: Scalar>(z: &LatentSequence<S>, g: usize) -> S {
    let c = S::from_usize_exact(z.channels());
    z.frame(g)
        .iter()
        .zip(z.frame(g - 1))
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>()
        / c
}

/// Largest [`pair_jump`] across the seam of boundary `s` (pairs ending in
/// `start_s ..= end_{s−1}`).
pub fn seam_jump<S: Scalar>(z: &LatentSequence<S>, plan: &SegmentPlan, s: usize) -> Result<S> {
    check_plan(z.frames(), plan)?;
    Ok(plan
        .seam_frames(s)?
        .map(|g| pair_jump(z, g))
        .fold(S::zero(), S::max))
}

fn check_plan(frames: usize, plan: &SegmentPlan) -> Result<()> {
    if plan.frames() != frames {
        return Err(MlvError::shape(format!(
            "plan covers {} frames, sequence has {frames}",
            plan.frames()
        )));
    }
    Ok(())
}

fn mean<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        S::zero()
    } else {
        values.iter().copied().sum::<S>() / S::from_usize_exact(values.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryJumps<S> {
    /// Entry `s − 1` is the seam jump of boundary `s`.
    pub per_boundary: Vec<S>,
    pub boundary_mean: S,
    /// Mean pair jump over adjacent pairs outside every seam.
    pub interior_mean: S,
}

pub fn boundary_jump<S: Scalar>(
    z: &LatentSequence<S>,
    plan: &SegmentPlan,
) -> Result<BoundaryJumps<S>> {
    check_plan(z.frames(), plan)?;
    let mut in_seam = vec![false; z.frames()];
    let mut per_boundary = Vec::with_capacity(plan.segment_count().saturating_sub(1));
    for s in 1..plan.segment_count() {
        let seam = plan.seam_frames(s)?;
        per_boundary.push(
            seam.clone()
                .map(|g| pair_jump(z, g))
                .fold(S::zero(), S::max),
        );
        for g in seam {
            in_seam[g] = true;
        }
    }
    let interior: Vec<S> = (1..z.frames())
        .filter(|&g| !in_seam[g])
        .map(|g| pair_jump(z, g))
        .collect();
    Ok(BoundaryJumps {
        boundary_mean: mean(&per_boundary),
        interior_mean: mean(&interior),
        per_boundary,
    })
}

fn cosine<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    let norm = |v: &[S]| v.iter().map(|&x| x * x).sum::<S>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == S::zero() || nb == S::zero() {
        return Err(MlvError::NumericDomain(
            "cosine of a zero feature vector".into(),
        ));
    }
    let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    // Clamp rounding spill past ±1.
    Ok((dot / (na * nb)).max(-S::one()).min(S::one()))
}

/// Frame at the middle of span `s`.
pub fn center_frame(plan: &SegmentPlan, s: usize) -> usize {
    let span = plan.span(s);
    span.start + span.len() / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSkipSimilarity<S> {
    /// Entry `s − 1` compares segments `s − 1` and `s`.
    pub pairs: Vec<S>,
    /// Mean over pairs; 1 when there is only one segment.
    pub mean: S,
}

/// Cosine similarity of center-frame features across consecutive segments.
pub fn frame_skip_similarity<S: Scalar>(
    features: &Matrix<S>,
    plan: &SegmentPlan,
) -> Result<FrameSkipSimilarity<S>> {
    check_plan(features.rows(), plan)?;
    let pairs = (1..plan.segment_count())
        .map(|s| {
            cosine(
                features.row(center_frame(plan, s - 1)),
                features.row(center_frame(plan, s)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = if pairs.is_empty() {
        S::one()
    } else {
        mean(&pairs)
    };
    Ok(FrameSkipSimilarity { pairs, mean })
}

/// Supplies one feature vector per frame.
pub trait FrameFeatures<S> {
    fn frame_features(&self, z: &LatentSequence<S>) -> Result<Matrix<S>>;
}

/// Encodes every frame on its own (a one-token sequence) with the toy
/// transformer and returns its penultimate activations.
#[derive(Debug, Clone)]
pub struct ToyFrameEncoder<'a, S> {
    pub model: &'a ToyTransformer<S>,
    pub prompt: PromptEmbedding<S>,
    pub t: S,
}

impl<S: Scalar> FrameFeatures<S> for ToyFrameEncoder<'_, S> {
    fn frame_features(&self, z: &LatentSequence<S>) -> Result<Matrix<S>> {
        let rows = (0..z.frames())
            .map(|f| {
                let h = self
                    .model
                    .features(&z.slice_frames(f, f + 1)?, self.t, &self.prompt)?;
                Ok(h.row(0).to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSlice<S> {
    pub channel: usize,
    pub values: Vec<S>,
    /// Min–max normalized to `0..=255`; a constant channel maps to 128.
    pub pixels: Vec<u8>,
}

impl<S: Scalar> TemporalSlice<S> {
    /// Binary PGM (P5), `values.len()` wide, the strip repeated `height` times.
    pub fn to_pgm(&self, height: usize) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.pixels.len(), height).into_bytes();
        for _ in 0..height {
            out.extend_from_slice(&self.pixels);
        }
        out
    }
}

pub fn temporal_slice<S: Scalar>(
    z: &LatentSequence<S>,
    channel: usize,
) -> Result<TemporalSlice<S>> {
    if channel >= z.channels() {
        return Err(MlvError::OutOfRange(format!(
            "channel {channel} not in a {}-channel latent",
            z.channels()
        )));
    }
    let values: Vec<S> = (0..z.frames()).map(|f| z.get(f, channel)).collect();
    let lo = values.iter().copied().fold(S::infinity(), S::min);
    let hi = values.iter().copied().fold(S::neg_infinity(), S::max);
    let pixels = values
        .iter()
        .map(|&v| {
            if hi == lo {
                128
            } else {
                let scaled = ((v - lo) / (hi - lo) * S::lit(255.0)).round();
                scaled.to_u8().unwrap_or(255)
            }
        })
        .collect();
    Ok(TemporalSlice {
        channel,
        values,
        pixels,
    })
}

/// Seam and drift summary for one edited sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport<S> {
    pub boundary_jump_per_boundary: Vec<S>,
    pub boundary_jump_mean: S,
    pub interior_jump_mean: S,
    pub pair_similarities: Vec<S>,
    pub frame_skip_similarity_mean: S,
}

/// Column header of the metrics CSV.
pub const METRICS_HEADER: &str = "record,index,value";

/// 17-significant-digit scientific rendering used in every CSV.
pub fn format_float<S: Scalar>(v: S) -> String {
    format!("{:.16e}", v.as_f64())
}

impl<S: Scalar> MetricsReport<S> {
    pub fn compute(
        z: &LatentSequence<S>,
        plan: &SegmentPlan,
        features: &dyn FrameFeatures<S>,
    ) -> Result<Self> {
        let jumps = boundary_jump(z, plan)?;
        let sim = frame_skip_similarity(&features.frame_features(z)?, plan)?;
        Ok(Self {
            boundary_jump_per_boundary: jumps.per_boundary,
            boundary_jump_mean: jumps.boundary_mean,
            interior_jump_mean: jumps.interior_mean,
            pair_similarities: sim.pairs,
            frame_skip_similarity_mean: sim.mean,
        })
    }

    /// One row per boundary and per segment pair, then the summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for (i, v) in self.boundary_jump_per_boundary.iter().enumerate() {
            let _ = writeln!(out, "boundary_jump,{},{}", i + 1, format_float(*v));
        }
        for (i, v) in self.pair_similarities.iter().enumerate() {
            let _ = writeln!(out, "pair_similarity,{},{}", i + 1, format_float(*v));
        }
        let _ = writeln!(
            out,
            "boundary_jump_mean,,{}",
            format_float(self.boundary_jump_mean)
        );
        let _ = writeln!(
            out,
            "interior_jump_mean,,{}",
            format_float(self.interior_jump_mean)
        );
        let _ = writeln!(
            out,
            "frame_skip_similarity_mean,,{}",
            format_float(self.frame_skip_similarity_mean)
        );
        out
    }
}
