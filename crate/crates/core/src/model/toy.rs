//! A small frozen transformer velocity model.
//!
//! Each frame is one token embedded from `[latent ∥ prompt ∥ t]`, passed through
//! `layers` blocks of (self-attention, tanh MLP) with residual connections, and
//! projected back to the latent channels. There are no biases and no positional
//! encodings, so an all-zero parameter set yields a zero velocity.

use std::io::{self, Read, Write};

use crate::error::{MlvError, Result};
use crate::format::{self, FormatError};
use crate::rng::{Purpose, SeedSpec};
use crate::scalar::Scalar;
use crate::sink::{attend_with_sink, attention};
use crate::tensor::{LatentSequence, Matrix};

use super::{PromptEmbedding, SinkContext, VelocityModel};

pub const PARAMS_MAGIC: &[u8; 8] = b"MLVTTP01";

/// MLP expansion factor.
const HIDDEN_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub channels: usize,
    pub prompt_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            prompt_dim: 8,
            model_dim: 32,
            layers: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub w_q: Matrix<S>,
    pub w_k: Matrix<S>,
    pub w_v: Matrix<S>,
    pub w_o: Matrix<S>,
    pub w_up: Matrix<S>,
    pub w_down: Matrix<S>,
}

/// Frozen weights. Row-vector convention: `x_next = x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformerParams<S> {
    pub channels: usize,
    pub prompt_dim: usize,
    pub model_dim: usize,
    /// `(C + D + 1) × d`
    pub w_in: Matrix<S>,
    pub layers: Vec<LayerParams<S>>,
    /// `d × C`
    pub w_out: Matrix<S>,
}

impl<S: Scalar> ToyTransformerParams<S> {
    /// Gaussian weights scaled by `1/√fan_in`, drawn from the parameter stream of `config.seed`.
    pub fn init(config: &ToyConfig) -> Result<Self> {
        let ToyConfig {
            channels,
            prompt_dim,
            model_dim: d,
            layers,
            seed,
        } = *config;
        if channels == 0 || prompt_dim == 0 || d == 0 {
            return Err(MlvError::config(
                "toy transformer dimensions must be positive",
            ));
        }
        let draws = SeedSpec::new(seed);
        let mut offset = 0u64;
        let mut next = |rows: usize, cols: usize| {
            let scale = S::from_usize_exact(rows).sqrt().recip();
            let vals: Vec<S> = draws.normals(Purpose::Params, offset, rows * cols);
            offset += 1;
            Matrix::new(rows, cols, vals.into_iter().map(|v| v * scale).collect())
                .expect("sized by construction")
        };
        let w_in = next(channels + prompt_dim + 1, d);
        let layers = (0..layers)
            .map(|_| LayerParams {
                w_q: next(d, d),
                w_k: next(d, d),
                w_v: next(d, d),
                w_o: next(d, d),
                w_up: next(d, HIDDEN_MULT * d),
                w_down: next(HIDDEN_MULT * d, d),
            })
            .collect();
        let w_out = next(d, channels);
        Ok(Self {
            channels,
            prompt_dim,
            model_dim: d,
            w_in,
            layers,
            w_out,
        })
    }

    /// Same shapes with every matrix zero.
    pub fn zeroed(&self) -> Self {
        let z = |m: &Matrix<S>| Matrix::zeros(m.rows(), m.cols());
        Self {
            channels: self.channels,
            prompt_dim: self.prompt_dim,
            model_dim: self.model_dim,
            w_in: z(&self.w_in),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_q: z(&l.w_q),
                    w_k: z(&l.w_k),
                    w_v: z(&l.w_v),
                    w_o: z(&l.w_o),
                    w_up: z(&l.w_up),
                    w_down: z(&l.w_down),
                })
                .collect(),
            w_out: z(&self.w_out),
        }
    }

    fn matrices(&self) -> impl Iterator<Item = &Matrix<S>> {
        std::iter::once(&self.w_in)
            .chain(
                self.layers
                    .iter()
                    .flat_map(|l| [&l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.w_up, &l.w_down]),
            )
            .chain(std::iter::once(&self.w_out))
    }

    /// `MLVTTP01`, then `u32` channels, prompt dim, model dim, layer count,
    /// hidden width, then every matrix as row-major `f64` in declaration order.
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        format::write_dims(
            w,
            &[
                self.channels,
                self.prompt_dim,
                self.model_dim,
                self.layers.len(),
                HIDDEN_MULT * self.model_dim,
            ],
        )?;
        for m in self.matrices() {
            format::write_f64s(w, m.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, FormatError> {
        format::read_magic(r, PARAMS_MAGIC)?;
        let channels = format::read_u32(r)? as usize;
        let prompt_dim = format::read_u32(r)? as usize;
        let d = format::read_u32(r)? as usize;
        let layer_count = format::read_u32(r)? as usize;
        let hidden = format::read_u32(r)? as usize;
        if hidden != HIDDEN_MULT * d {
            return Err(MlvError::shape(format!(
                "hidden width {hidden} does not match model dim {d}"
            ))
            .into());
        }
        let w_in = format::read_matrix(r, channels + prompt_dim + 1, d)?;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            layers.push(LayerParams {
                w_q: format::read_matrix(r, d, d)?,
                w_k: format::read_matrix(r, d, d)?,
                w_v: format::read_matrix(r, d, d)?,
                w_o: format::read_matrix(r, d, d)?,
                w_up: format::read_matrix(r, d, hidden)?,
                w_down: format::read_matrix(r, hidden, d)?,
            });
        }
        let w_out = format::read_matrix(r, d, channels)?;
        format::expect_eof(r)?;
        Ok(Self {
            channels,
            prompt_dim,
            model_dim: d,
            w_in,
            layers,
            w_out,
        })
    }
}

/// Per-segment offset added to every token's input embedding, so that each
/// segment sees a slightly different model.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPerturbation<S> {
    pub seed: SeedSpec,
    pub magnitude: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer<S> {
    params: ToyTransformerParams<S>,
    perturbation: Option<SegmentPerturbation<S>>,
}

impl<S: Scalar> ToyTransformer<S> {
    pub fn new(config: &ToyConfig) -> Result<Self> {
        Ok(Self::from_params(ToyTransformerParams::init(config)?))
    }

    pub fn from_params(params: ToyTransformerParams<S>) -> Self {
        Self {
            params,
            perturbation: None,
        }
    }

    pub fn with_perturbation(mut self, perturbation: SegmentPerturbation<S>) -> Self {
        self.perturbation = Some(perturbation);
        self
    }

    pub fn params(&self) -> &ToyTransformerParams<S> {
        &self.params
    }

    pub fn perturbation(&self) -> Option<&SegmentPerturbation<S>> {
        self.perturbation.as_ref()
    }

    fn embed(
        &self,
        z: &LatentSequence<S>,
        t: S,
        prompt: &PromptEmbedding<S>,
        segment: usize,
    ) -> Result<Matrix<S>> {
        let p = &self.params;
        let width = p.channels + p.prompt_dim + 1;
        let input = Matrix::from_fn(z.frames(), width, |f, c| {
            if c < p.channels {
                z.get(f, c)
            } else if c < p.channels + p.prompt_dim {
                prompt.values()[c - p.channels]
            } else {
                t
            }
        });
        let mut x = input.matmul(&p.w_in)?;
        if let Some(pert) = &self.perturbation {
            let offset: Vec<S> =
                pert.seed
                    .normals(Purpose::Perturbation, segment as u64, p.model_dim);
            for f in 0..x.rows() {
                for (v, &o) in x.row_mut(f).iter_mut().zip(&offset) {
                    *v += pert.magnitude * o;
                }
            }
        }
        Ok(x)
    }

    /// Hidden state after the last block (`frames × d`) together with the output velocity.
    fn forward(
        &self,
        z: &LatentSequence<S>,
        t: S,
        prompt: &PromptEmbedding<S>,
        mut sink: SinkContext<'_, S>,
        segment: usize,
    ) -> Result<(Matrix<S>, Matrix<S>)> {
        let mut x = self.embed(z, t, prompt, segment)?;
        for (layer, lp) in self.params.layers.iter().enumerate() {
            let q = x.matmul(&lp.w_q)?;
            let k = x.matmul(&lp.w_k)?;
            let v = x.matmul(&lp.w_v)?;
            let attended = match &mut sink {
                SinkContext::Off => attention(&q, &k, &v)?,
                SinkContext::Capture { into, timestep } => {
                    into.capture(segment, *timestep, layer, &k, &v)?;
                    attention(&q, &k, &v)?
                }
                SinkContext::Inject { from, timestep } => {
                    attend_with_sink(&q, &k, &v, from, *timestep, layer)?
                }
                SinkContext::InjectCapture {
                    from,
                    into,
                    timestep,
                } => {
                    into.capture(segment, *timestep, layer, &k, &v)?;
                    attend_with_sink(&q, &k, &v, from, *timestep, layer)?
                }
            };
            x = x.add(&attended.matmul(&lp.w_o)?)?;
            let hidden = x.matmul(&lp.w_up)?.map(S::tanh);
            x = x.add(&hidden.matmul(&lp.w_down)?)?;
        }
        let out = x.matmul(&self.params.w_out)?;
        Ok((x, out))
    }

    /// Penultimate-layer activations, one `d`-vector per frame, with the sink off.
    pub fn features(
        &self,
        z: &LatentSequence<S>,
        t: S,
        prompt: &PromptEmbedding<S>,
    ) -> Result<Matrix<S>> {
        Ok(self.forward(z, t, prompt, SinkContext::Off, 0)?.0)
    }
}

impl<S: Scalar> VelocityModel<S> for ToyTransformer<S> {
    fn channels(&self) -> usize {
        self.params.channels
    }

    fn prompt_dim(&self) -> usize {
        self.params.prompt_dim
    }

    fn velocity(
        &self,
        z: &LatentSequence<S>,
        t: S,
        prompt: &PromptEmbedding<S>,
        sink: SinkContext<'_, S>,
        segment: usize,
    ) -> Result<LatentSequence<S>> {
        let (_, out) = self.forward(z, t, prompt, sink, segment)?;
        LatentSequence::from_matrix(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{delta_velocity, eval_velocity};
    use crate::sink::AnchorCache;

    fn model() -> ToyTransformer<f64> {
        ToyTransformer::new(&ToyConfig {
            seed: 11,
            ..ToyConfig::default()
        })
        .unwrap()
    }

    fn input(frames: usize, seed: u64) -> LatentSequence<f64> {
        LatentSequence::new(
            frames,
            4,
            SeedSpec::new(seed).normals(Purpose::Fixture, 0, frames * 4),
        )
        .unwrap()
    }

    fn prompt(index: u64) -> PromptEmbedding<f64> {
        PromptEmbedding::random("p", 8, &SeedSpec::new(5), index).unwrap()
    }

    #[test]
    fn deterministic() {
        let m = model();
        let z = input(6, 1);
        let a = eval_velocity(&m, &z, 0.3, &prompt(0), SinkContext::Off, 0).unwrap();
        let b = eval_velocity(&m, &z, 0.3, &prompt(0), SinkContext::Off, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (6, 4));
        assert!(a.rms() > 0.0);
    }

    #[test]
    fn zero_weights_give_zero_velocity() {
        let m = ToyTransformer::from_params(model().params().zeroed());
        let v = eval_velocity(&m, &input(5, 2), 0.7, &prompt(1), SinkContext::Off, 0).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn channel_and_prompt_mismatch() {
        let m = model();
        let bad_z = LatentSequence::filled(3, 5, 0.0).unwrap();
        assert!(matches!(
            eval_velocity(&m, &bad_z, 0.5, &prompt(0), SinkContext::Off, 0),
            Err(MlvError::InvalidShape(_))
        ));
        let bad_p = PromptEmbedding::filled("p", 3, 0.0).unwrap();
        assert!(matches!(
            eval_velocity(&m, &input(3, 0), 0.5, &bad_p, SinkContext::Off, 0),
            Err(MlvError::InvalidShape(_))
        ));
    }

    #[test]
    fn capture_outside_owner_segment_is_protocol_error() {
        let m = model();
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        let err = eval_velocity(
            &m,
            &input(4, 0),
            0.5,
            &prompt(0),
            SinkContext::Capture {
                into: &mut cache,
                timestep: 0,
            },
            1,
        )
        .unwrap_err();
        assert!(err.is_protocol());
        assert!(cache.is_empty());
    }

    #[test]
    fn capture_does_not_change_output_and_fills_every_layer() {
        let m = model();
        let z = input(5, 3);
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        let plain = eval_velocity(&m, &z, 0.5, &prompt(0), SinkContext::Off, 0).unwrap();
        let captured = eval_velocity(
            &m,
            &z,
            0.5,
            &prompt(0),
            SinkContext::Capture {
                into: &mut cache,
                timestep: 4,
            },
            0,
        )
        .unwrap();
        assert_eq!(plain, captured);
        assert_eq!(cache.len(), 2);
        assert!(cache.get(4, 0).is_ok() && cache.get(4, 1).is_ok());
    }

    #[test]
    fn inject_changes_output_but_not_length() {
        let m = model();
        let mut cache = AnchorCache::for_initial_segment(1).unwrap();
        eval_velocity(
            &m,
            &input(5, 3),
            0.5,
            &prompt(0),
            SinkContext::Capture {
                into: &mut cache,
                timestep: 0,
            },
            0,
        )
        .unwrap();
        let z = input(5, 9);
        let plain = eval_velocity(&m, &z, 0.5, &prompt(0), SinkContext::Off, 1).unwrap();
        let sunk = eval_velocity(
            &m,
            &z,
            0.5,
            &prompt(0),
            SinkContext::Inject {
                from: &cache,
                timestep: 0,
            },
            1,
        )
        .unwrap();
        assert_eq!(sunk.shape(), plain.shape());
        assert!(sunk.max_abs_diff(&plain) > 1e-6);
    }

    #[test]
    fn inject_without_capture_fails() {
        let m = model();
        let cache = AnchorCache::for_initial_segment(1).unwrap();
        let err = eval_velocity(
            &m,
            &input(5, 0),
            0.5,
            &prompt(0),
            SinkContext::Inject {
                from: &cache,
                timestep: 2,
            },
            1,
        )
        .unwrap_err();
        assert!(err.is_protocol());
    }

    #[test]
    fn identical_branches_cancel() {
        let m = model();
        let z = input(7, 4);
        let dv =
            delta_velocity(&m, &z, &z, 0.4, &prompt(2), &prompt(2), SinkContext::Off, 0).unwrap();
        assert!(dv.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn different_prompts_give_nonzero_delta() {
        let m = model();
        let z = input(7, 4);
        let a =
            delta_velocity(&m, &z, &z, 0.4, &prompt(2), &prompt(3), SinkContext::Off, 0).unwrap();
        let b =
            delta_velocity(&m, &z, &z, 0.4, &prompt(2), &prompt(3), SinkContext::Off, 0).unwrap();
        assert!(a.rms() > 1e-3);
        assert_eq!(a.rms().to_bits(), b.rms().to_bits());
    }

    #[test]
    fn sink_off_output_is_segment_local() {
        // Frames from elsewhere in the sequence cannot influence a segment's output.
        let m = model();
        let whole_a = input(30, 1);
        let mut data = whole_a.as_slice().to_vec();
        // scramble frames outside [10, 20)
        for f in (0..10).chain(20..30) {
            for c in 0..4 {
                data[f * 4 + c] = -data[f * 4 + c] + 0.5;
            }
        }
        let whole_b = LatentSequence::new(30, 4, data).unwrap();
        let seg_a = whole_a.slice_frames(10, 20).unwrap();
        let seg_b = whole_b.slice_frames(10, 20).unwrap();
        assert_eq!(seg_a, seg_b);
        let va = eval_velocity(&m, &seg_a, 0.5, &prompt(0), SinkContext::Off, 1).unwrap();
        let vb = eval_velocity(&m, &seg_b, 0.5, &prompt(0), SinkContext::Off, 1).unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let m = model();
        let z = input(4, 8);
        let order = [2usize, 0, 3, 1];
        let permuted = LatentSequence::from_fn(4, 4, |f, c| z.get(order[f], c)).unwrap();
        let v = eval_velocity(&m, &z, 0.5, &prompt(0), SinkContext::Off, 0).unwrap();
        let vp = eval_velocity(&m, &permuted, 0.5, &prompt(0), SinkContext::Off, 0).unwrap();
        for (f, &src) in order.iter().enumerate() {
            for c in 0..4 {
                assert!((vp.get(f, c) - v.get(src, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_is_segment_keyed() {
        let m = model().with_perturbation(SegmentPerturbation {
            seed: SeedSpec::new(3),
            magnitude: 0.5,
        });
        let z = input(5, 0);
        let v0 = eval_velocity(&m, &z, 0.5, &prompt(0), SinkContext::Off, 0).unwrap();
        let v0b = eval_velocity(&m, &z, 0.5, &prompt(0), SinkContext::Off, 0).unwrap();
        let v1 = eval_velocity(&m, &z, 0.5, &prompt(0), SinkContext::Off, 1).unwrap();
        assert_eq!(v0, v0b);
        assert!(v0.max_abs_diff(&v1) > 1e-6);
    }

    #[test]
    fn params_round_trip() {
        let p = model().params().clone();
        let mut bytes = Vec::new();
        p.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], PARAMS_MAGIC);
        let back = ToyTransformerParams::<f64>::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, p);
        bytes.push(1);
        assert!(ToyTransformerParams::<f64>::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn params_are_seed_stable() {
        let a = ToyTransformerParams::<f64>::init(&ToyConfig::default()).unwrap();
        let b = ToyTransformerParams::<f64>::init(&ToyConfig::default()).unwrap();
        let c = ToyTransformerParams::<f64>::init(&ToyConfig {
            seed: 1,
            ..ToyConfig::default()
        })
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
