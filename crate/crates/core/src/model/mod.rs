//! Velocity-field evaluators `V(Z, t, P)`.

mod analytic;
mod toy;

pub use analytic::{AnalyticKind, AnalyticModel};
pub use toy::{
    LayerParams, SegmentPerturbation, ToyConfig, ToyTransformer, ToyTransformerParams, PARAMS_MAGIC,
};

use crate::error::{MlvError, Result};
use crate::rng::{Purpose, SeedSpec};
use crate::scalar::Scalar;
use crate::sink::AnchorCache;
use crate::tensor::LatentSequence;

/// Fixed-size prompt conditioning vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding<S> {
    pub label: String,
    values: Vec<S>,
}

impl<S: Scalar> PromptEmbedding<S> {
    pub fn new(label: impl Into<String>, values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(MlvError::shape(
                "prompt embedding must have at least one value",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MlvError::NumericDomain(
                "prompt embedding is not finite".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            values,
        })
    }

    pub fn filled(label: impl Into<String>, dim: usize, value: S) -> Result<Self> {
        Self::new(label, vec![value; dim])
    }

    /// The unconditional (null) prompt.
    pub fn null(dim: usize) -> Result<Self> {
        Self::filled("null", dim, S::zero())
    }

    /// Standard-normal embedding drawn from the prompt stream `index` of `seed`.
    pub fn random(
        label: impl Into<String>,
        dim: usize,
        seed: &SeedSpec,
        index: u64,
    ) -> Result<Self> {
        Self::new(label, seed.normals(Purpose::Prompt, index, dim))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }
}

/// How one forward pass interacts with the anchor cache.
#[derive(Debug)]
pub enum SinkContext<'a, S> {
    Off,
    /// Record this pass's anchor rows at every layer.
    Capture {
        into: &'a mut AnchorCache<S>,
        timestep: usize,
    },
    /// Prepend cached anchor rows at every layer.
    Inject {
        from: &'a AnchorCache<S>,
        timestep: usize,
    },
    /// Inject from one cache while capturing into another (previous-segment anchoring).
    InjectCapture {
        from: &'a AnchorCache<S>,
        into: &'a mut AnchorCache<S>,
        timestep: usize,
    },
}

impl<S: Scalar> SinkContext<'_, S> {
    /// Capture is only legal from the segment that owns the target cache.
    pub fn check_segment(&self, segment: usize) -> Result<()> {
        let owner = match self {
            SinkContext::Capture { into, .. } | SinkContext::InjectCapture { into, .. } => {
                into.owner()
            }
            _ => return Ok(()),
        };
        if owner != segment {
            return Err(crate::error::ProtocolViolation::CaptureFromWrongSegment {
                segment,
                owner,
            }
            .into());
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        matches!(self, SinkContext::Off)
    }
}

/// A frozen velocity field.
pub trait VelocityModel<S: Scalar>: Send + Sync {
    fn channels(&self) -> usize;

    fn prompt_dim(&self) -> usize;

    /// Velocity for latent frames `z` at time `t`. `segment` is the ordinal of
    /// the segment `z` was cut from (0 for whole-sequence evaluation).
    fn velocity(
        &self,
        z: &LatentSequence<S>,
        t: S,
        prompt: &PromptEmbedding<S>,
        sink: SinkContext<'_, S>,
        segment: usize,
    ) -> Result<LatentSequence<S>>;
}

/// Validates inputs and evaluates `model`.
pub fn eval_velocity<S: Scalar, M: VelocityModel<S> + ?Sized>(
    model: &M,
    z: &LatentSequence<S>,
    t: S,
    prompt: &PromptEmbedding<S>,
    sink: SinkContext<'_, S>,
    segment: usize,
) -> Result<LatentSequence<S>> {
    if z.channels() != model.channels() {
        return Err(MlvError::shape(format!(
            "latent has {} channels, model expects {}",
            z.channels(),
            model.channels()
        )));
    }
    if prompt.dim() != model.prompt_dim() {
        return Err(MlvError::shape(format!(
            "prompt has {} dims, model expects {}",
            prompt.dim(),
            model.prompt_dim()
        )));
    }
    if !(t >= S::zero() && t <= S::one()) {
        return Err(MlvError::OutOfRange(format!("time {t} outside [0, 1]")));
    }
    sink.check_segment(segment)?;
    let v = model.velocity(z, t, prompt, sink, segment)?;
    z.check_same_shape(&v, "model output")?;
    Ok(v)
}

/// Classifier-free guidance: `v_uncond + w·(v_cond − v_uncond)`.
pub fn apply_cfg<S: Scalar>(
    v_cond: &LatentSequence<S>,
    v_uncond: &LatentSequence<S>,
    w: S,
) -> Result<LatentSequence<S>> {
    v_cond.check_same_shape(v_uncond, "guidance operands")?;
    if w == S::one() {
        return Ok(v_cond.clone());
    }
    if w == S::zero() {
        return Ok(v_uncond.clone());
    }
    v_cond.zip_map(v_uncond, |c, u| u + w * (c - u))
}

/// `V(Z_tar, t, P_tar) − V(Z_src, t, P_src)`; only the target pass sees `sink`.
#[allow(clippy::too_many_arguments)]
pub fn delta_velocity<S: Scalar, M: VelocityModel<S> + ?Sized>(
    model: &M,
    z_tar: &LatentSequence<S>,
    z_src: &LatentSequence<S>,
    t: S,
    p_tar: &PromptEmbedding<S>,
    p_src: &PromptEmbedding<S>,
    sink: SinkContext<'_, S>,
    segment: usize,
) -> Result<LatentSequence<S>> {
    z_tar.check_same_shape(z_src, "target and source latents")?;
    let v_tar = eval_velocity(model, z_tar, t, p_tar, sink, segment)?;
    let v_src = eval_velocity(model, z_src, t, p_src, SinkContext::Off, segment)?;
    v_tar.sub(&v_src)
}
