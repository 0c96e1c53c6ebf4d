//! Training-free segmented editing of long latent sequences along a
//! rectified-flow velocity difference.
//!
//! A long sequence is cut into overlapping fixed-length segments. Each step
//! evaluates the target-minus-source velocity per segment, fuses the overlaps
//! with a triangular window, anchors every segment's attention on the first
//! frame of the first segment, and takes one Euler step over the whole
//! sequence.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the precision used by the command-line driver.

pub mod blend;
pub mod engine;
pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod segment;
pub mod sink;
pub mod tensor;

pub use blend::{blend_overlap, blend_segments, splice_segments, window_weight};
pub use engine::{
    mlv_edit_step, naive_stitch_step, run_edit, wan_edit_step, AnchorPolicy, BoundaryTrace,
    EditConfig, EditMode, EditRun, EditState, StepTimes, StepTrace,
};
pub use error::{MlvError, ProtocolViolation, Result};
pub use metrics::{
    boundary_jump, frame_skip_similarity, temporal_slice, FrameFeatures, MetricsReport,
    ToyFrameEncoder,
};
pub use model::{
    apply_cfg, delta_velocity, eval_velocity, AnalyticKind, AnalyticModel, PromptEmbedding,
    SegmentPerturbation, SinkContext, ToyConfig, ToyTransformer, ToyTransformerParams,
    VelocityModel,
};
pub use ops::{lerp_source, softmax_rows};
pub use rng::{sample_noise, Purpose, SeedSpec};
pub use scalar::Scalar;
pub use schedule::{make_schedule, TimestepSchedule};
pub use segment::{plan_segments, SegmentPlan, SegmentSpan};
pub use sink::{attend_with_sink, attention, capture_anchor, AnchorCache};
pub use tensor::{LatentSequence, Matrix};

pub type Latent64 = LatentSequence<f64>;
pub type Latent32 = LatentSequence<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Prompt64 = PromptEmbedding<f64>;
pub type EditConfig64 = EditConfig<f64>;
pub type ToyTransformer64 = ToyTransformer<f64>;
pub type AnalyticModel64 = AnalyticModel<f64>;
pub type AnchorCache64 = AnchorCache<f64>;
pub type Schedule64 = TimestepSchedule<f64>;
