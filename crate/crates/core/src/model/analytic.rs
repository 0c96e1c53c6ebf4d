//! Closed-form velocity fields used as integration and drift oracles.
//!
//! Both kinds ignore the latent, the time and the frame index. Prompt
//! dependence is what lets the oracle survive the target-minus-source
//! difference: a zero source prompt and a unit target prompt give a
//! velocity difference equal to the prompt-driven part of the field.

use crate::error::{MlvError, Result};
use crate::rng::{Purpose, SeedSpec};
use crate::scalar::Scalar;
use crate::tensor::LatentSequence;

use super::{PromptEmbedding, SinkContext, VelocityModel};

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticKind<S> {
    /// `v[f][c] = value[c] + prompt_gain · P[c mod D]`
    Constant { value: Vec<S>, prompt_gain: S },
    /// `v[f][c] = base[c] + P[c mod D] · (1 + δ_s[c])` where `δ_s` is uniform in
    /// `[−bias_magnitude, bias_magnitude)`, keyed by `(bias_seed, s)`.
    SegmentBias {
        base: Vec<S>,
        bias_magnitude: S,
        bias_seed: SeedSpec,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel<S> {
    kind: AnalyticKind<S>,
    prompt_dim: usize,
}

impl<S: Scalar> AnalyticModel<S> {
    pub fn new(kind: AnalyticKind<S>, prompt_dim: usize) -> Result<Self> {
        let channels = match &kind {
            AnalyticKind::Constant { value, .. } => value,
            AnalyticKind::SegmentBias { base, .. } => base,
        };
        if channels.is_empty() || prompt_dim == 0 {
            return Err(MlvError::config(
                "analytic model needs at least one channel and prompt dim",
            ));
        }
        Ok(Self { kind, prompt_dim })
    }

    /// Prompt-independent constant field.
    pub fn constant(value: Vec<S>, prompt_dim: usize) -> Result<Self> {
        Self::new(
            AnalyticKind::Constant {
                value,
                prompt_gain: S::zero(),
            },
            prompt_dim,
        )
    }

    pub fn kind(&self) -> &AnalyticKind<S> {
        &self.kind
    }

    /// Per-channel offset `δ_s` for segment `s` (zero for the constant kind).
    pub fn segment_offset(&self, segment: usize) -> Vec<S> {
        match &self.kind {
            AnalyticKind::Constant { value, .. } => vec![S::zero(); value.len()],
            AnalyticKind::SegmentBias {
                base,
                bias_magnitude,
                bias_seed,
            } => bias_seed
                .symmetric_uniforms::<S>(Purpose::SegmentBias, segment as u64, base.len())
                .into_iter()
                .map(|u| *bias_magnitude * u)
                .collect(),
        }
    }

    fn frame_velocity(&self, prompt: &PromptEmbedding<S>, segment: usize) -> Vec<S> {
        let p = prompt.values();
        let d = p.len();
        match &self.kind {
            AnalyticKind::Constant { value, prompt_gain } => value
                .iter()
                .enumerate()
                .map(|(c, &v)| v + *prompt_gain * p[c % d])
                .collect(),
            AnalyticKind::SegmentBias { base, .. } => base
                .iter()
                .zip(self.segment_offset(segment))
                .enumerate()
                .map(|(c, (&b, delta))| b + p[c % d] * (S::one() + delta))
                .collect(),
        }
    }
}

impl<S: Scalar> VelocityModel<S> for AnalyticModel<S> {
    fn channels(&self) -> usize {
        match &self.kind {
            AnalyticKind::Constant { value, .. } => value.len(),
            AnalyticKind::SegmentBias { base, .. } => base.len(),
        }
    }

    fn prompt_dim(&self) -> usize {
        self.prompt_dim
    }

    fn velocity(
        &self,
        z: &LatentSequence<S>,
        _t: S,
        prompt: &PromptEmbedding<S>,
        sink: SinkContext<'_, S>,
        segment: usize,
    ) -> Result<LatentSequence<S>> {
        sink.check_segment(segment)?;
        let row = self.frame_velocity(prompt, segment);
        LatentSequence::from_fn(z.frames(), z.channels(), |_, c| row[c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{delta_velocity, eval_velocity};

    fn z(frames: usize) -> LatentSequence<f64> {
        LatentSequence::from_fn(frames, 2, |f, c| (f * 3 + c) as f64 * 0.1).unwrap()
    }

    #[test]
    fn constant_ignores_everything() {
        let m = AnalyticModel::constant(vec![0.25, 0.25], 4).unwrap();
        let p = PromptEmbedding::filled("p", 4, 3.0).unwrap();
        for t in [0.0, 0.5, 1.0] {
            let v = eval_velocity(&m, &z(5), t, &p, SinkContext::Off, 2).unwrap();
            assert!(v.as_slice().iter().all(|&x| x == 0.25));
        }
        let dv = delta_velocity(
            &m,
            &z(5),
            &z(5).scale(2.0).unwrap(),
            0.5,
            &p,
            &PromptEmbedding::null(4).unwrap(),
            SinkContext::Off,
            0,
        )
        .unwrap();
        assert!(dv.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn prompt_gain_constant() {
        let m = AnalyticModel::new(
            AnalyticKind::Constant {
                value: vec![0.0, 0.0],
                prompt_gain: 1.0,
            },
            2,
        )
        .unwrap();
        let tar = PromptEmbedding::filled("tar", 2, 1.0).unwrap();
        let src = PromptEmbedding::null(2).unwrap();
        let dv = delta_velocity(&m, &z(3), &z(3), 0.6, &tar, &src, SinkContext::Off, 0).unwrap();
        assert!(dv.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn segment_bias_offsets_differ() {
        let m = AnalyticModel::new(
            AnalyticKind::SegmentBias {
                base: vec![0.0, 0.0],
                bias_magnitude: 1.0,
                bias_seed: SeedSpec::new(9),
            },
            2,
        )
        .unwrap();
        let unit = PromptEmbedding::filled("unit", 2, 1.0).unwrap();
        let v0 = eval_velocity(&m, &z(3), 0.5, &unit, SinkContext::Off, 0).unwrap();
        let v1 = eval_velocity(&m, &z(3), 0.5, &unit, SinkContext::Off, 1).unwrap();
        let d0 = m.segment_offset(0);
        let d1 = m.segment_offset(1);
        for c in 0..2 {
            let diff = v1.get(0, c) - v0.get(0, c);
            assert!((diff - (d1[c] - d0[c])).abs() < 1e-12);
            assert!(diff != 0.0);
        }
        // same ordinal, same offset
        assert_eq!(
            v0,
            eval_velocity(&m, &z(3), 0.9, &unit, SinkContext::Off, 0).unwrap()
        );
    }

    #[test]
    fn rejects_empty() {
        assert!(AnalyticModel::<f64>::constant(vec![], 2).is_err());
        assert!(AnalyticModel::<f64>::constant(vec![1.0], 0).is_err());
    }
}
