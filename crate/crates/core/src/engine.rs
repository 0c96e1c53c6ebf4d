//! Segmented flow editing: noise, source/target latents, per-segment velocity
//! differences with anchor sharing, overlap blending, and the Euler update.
//! Also the whole-sequence and splice-only baselines.

use rayon::prelude::*;

use crate::blend::{blend_segments, splice_segments};
use crate::error::{MlvError, Result};
use crate::metrics::seam_jump;
use crate::model::{apply_cfg, eval_velocity, PromptEmbedding, SinkContext, VelocityModel};
use crate::ops::lerp_source;
use crate::rng::{sample_noise, SeedSpec};
use crate::scalar::Scalar;
use crate::schedule::TimestepSchedule;
use crate::segment::SegmentPlan;
use crate::sink::AnchorCache;
use crate::tensor::LatentSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMode {
    /// Overlapping segments with velocity blending and anchor sharing.
    Mlv,
    /// Overlapping segments spliced directly, no blending, no anchors.
    Naive,
    /// One whole-sequence evaluation per step.
    Wan,
}

impl EditMode {
    pub fn name(self) -> &'static str {
        match self {
            EditMode::Mlv => "mlv",
            EditMode::Naive => "naive",
            EditMode::Wan => "wan",
        }
    }
}

impl std::str::FromStr for EditMode {
    type Err = MlvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlv" => Ok(EditMode::Mlv),
            "naive" => Ok(EditMode::Naive),
            "wan" => Ok(EditMode::Wan),
            other => Err(MlvError::config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Where later segments take their attention anchor from. The count is the
/// number of anchor frames (one token per frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorPolicy {
    None,
    /// First frames of segment 0.
    FirstOfInitial(usize),
    /// First frames of the immediately preceding segment.
    FirstOfPrevious(usize),
}

impl AnchorPolicy {
    pub fn anchor_frames(self) -> Option<usize> {
        match self {
            AnchorPolicy::None => None,
            AnchorPolicy::FirstOfInitial(n) | AnchorPolicy::FirstOfPrevious(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig<S> {
    pub steps: usize,
    pub cfg_scale: S,
    pub segment_length: usize,
    pub overlap: usize,
    pub seed: SeedSpec,
    pub anchor_policy: AnchorPolicy,
    pub blend_enabled: bool,
    /// Also anchor the source-branch passes (each pass keeps its own anchor).
    pub sink_on_source: bool,
    /// Apply guidance to the source branch as well as the target branch.
    pub cfg_on_source: bool,
}

impl<S: Scalar> Default for EditConfig<S> {
    fn default() -> Self {
        Self {
            steps: 25,
            cfg_scale: S::lit(7.5),
            segment_length: 21,
            overlap: 5,
            seed: SeedSpec::default(),
            anchor_policy: AnchorPolicy::FirstOfInitial(1),
            blend_enabled: true,
            sink_on_source: true,
            cfg_on_source: true,
        }
    }
}

impl<S: Scalar> EditConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(MlvError::config("steps must be at least 1"));
        }
        if self.segment_length < 2 {
            return Err(MlvError::config("segment length must be at least 2"));
        }
        if self.overlap >= self.segment_length {
            return Err(MlvError::config(format!(
                "overlap {} must be smaller than segment length {}",
                self.overlap, self.segment_length
            )));
        }
        if !self.cfg_scale.is_finite() {
            return Err(MlvError::config("guidance scale must be finite"));
        }
        if let Some(n) = self.anchor_policy.anchor_frames() {
            if n == 0 || n > self.segment_length {
                return Err(MlvError::config(format!(
                    "anchor frame count {n} must be in 1..={}",
                    self.segment_length
                )));
            }
        }
        Ok(())
    }
}

/// The four forward passes of one velocity difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pass {
    TargetCond = 0,
    TargetUncond = 1,
    SourceCond = 2,
    SourceUncond = 3,
}

const PASSES: [Pass; 4] = [
    Pass::TargetCond,
    Pass::TargetUncond,
    Pass::SourceCond,
    Pass::SourceUncond,
];

/// Anchor caches for every pass, indexed by owning segment.
#[derive(Debug, Clone)]
struct Anchors<S> {
    policy: AnchorPolicy,
    sink_on_source: bool,
    caches: [Vec<AnchorCache<S>>; 4],
}

impl<S: Scalar> Anchors<S> {
    fn new(policy: AnchorPolicy, sink_on_source: bool, segments: usize) -> Result<Self> {
        let owners = match policy {
            AnchorPolicy::None => 0,
            AnchorPolicy::FirstOfInitial(_) => 1,
            AnchorPolicy::FirstOfPrevious(_) => segments,
        };
        let tokens = policy.anchor_frames().unwrap_or(1);
        let make = || {
            (0..owners)
                .map(|s| AnchorCache::new(s, tokens))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            policy,
            sink_on_source,
            caches: [make()?, make()?, make()?, make()?],
        })
    }

    fn active(&self, pass: Pass) -> bool {
        self.policy != AnchorPolicy::None
            && (self.sink_on_source || matches!(pass, Pass::TargetCond | Pass::TargetUncond))
    }

    /// Sink contexts for segment 0: capture into the segment-0 caches.
    fn capture_contexts(&mut self, timestep: usize) -> [SinkContext<'_, S>; 4] {
        let active = PASSES.map(|p| self.active(p));
        let [a, b, c, d] = &mut self.caches;
        let mut slots =
            [a, b, c, d]
                .into_iter()
                .zip(active)
                .map(|(caches, on)| match caches.first_mut() {
                    Some(into) if on => SinkContext::Capture { into, timestep },
                    _ => SinkContext::Off,
                });
        [(); 4].map(|_| slots.next().expect("four passes"))
    }

    /// Read-only contexts for a later segment under first-of-initial anchoring.
    fn inject_contexts(&self, timestep: usize) -> [SinkContext<'_, S>; 4] {
        PASSES.map(|p| match self.caches[p as usize].first() {
            Some(from) if self.active(p) => SinkContext::Inject { from, timestep },
            _ => SinkContext::Off,
        })
    }

    /// Contexts for segment `s ≥ 1` under previous-segment anchoring.
    fn chained_contexts(&mut self, segment: usize, timestep: usize) -> [SinkContext<'_, S>; 4] {
        let active = PASSES.map(|p| self.active(p));
        let [a, b, c, d] = &mut self.caches;
        let mut slots = [a, b, c, d].into_iter().zip(active).map(|(caches, on)| {
            if !on {
                return SinkContext::Off;
            }
            let (before, after) = caches.split_at_mut(segment);
            SinkContext::InjectCapture {
                from: &before[segment - 1],
                into: &mut after[0],
                timestep,
            }
        });
        [(); 4].map(|_| slots.next().expect("four passes"))
    }
}

/// Mutable state of an in-progress segmented edit.
#[derive(Debug, Clone)]
pub struct EditState<S> {
    z_edit: LatentSequence<S>,
    /// Index `i` of the next step (`t_i → t_{i−1}`); 0 once finished.
    next_step: usize,
    schedule: TimestepSchedule<S>,
    plan: SegmentPlan,
    anchors: Anchors<S>,
}

impl<S: Scalar> EditState<S> {
    /// Starts at `t = 1` with `Z_edit = X_src`.
    pub fn new(x_src: &LatentSequence<S>, config: &EditConfig<S>) -> Result<Self> {
        config.validate()?;
        let schedule = TimestepSchedule::linear(config.steps)?;
        let plan = SegmentPlan::new(x_src.frames(), config.segment_length, config.overlap)?;
        let anchors = Anchors::new(
            config.anchor_policy,
            config.sink_on_source,
            plan.segment_count(),
        )?;
        Ok(Self {
            z_edit: x_src.clone(),
            next_step: config.steps,
            schedule,
            plan,
            anchors,
        })
    }

    pub fn z_edit(&self) -> &LatentSequence<S> {
        &self.z_edit
    }

    pub fn into_latent(self) -> LatentSequence<S> {
        self.z_edit
    }

    pub fn next_step(&self) -> usize {
        self.next_step
    }

    pub fn is_finished(&self) -> bool {
        self.next_step == 0
    }

    pub fn schedule(&self) -> &TimestepSchedule<S> {
        &self.schedule
    }

    pub fn plan(&self) -> &SegmentPlan {
        &self.plan
    }

    fn step_times(&self) -> Result<StepTimes<S>> {
        if self.is_finished() {
            return Err(MlvError::OutOfRange("edit already reached t = 0".into()));
        }
        Ok(StepTimes::from_schedule(&self.schedule, self.next_step))
    }
}

/// One Euler interval `t_i → t_{i−1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTimes<S> {
    pub index: usize,
    pub t_now: S,
    pub t_next: S,
}

impl<S: Scalar> StepTimes<S> {
    pub fn from_schedule(schedule: &TimestepSchedule<S>, index: usize) -> Self {
        Self {
            index,
            t_now: schedule.time(index),
            t_next: schedule.time(index - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace<S> {
    pub boundary: usize,
    /// Seam discontinuity of the directly spliced velocity difference.
    pub pre_blend_jump: S,
    /// Seam discontinuity of the velocity difference actually integrated.
    pub post_blend_jump: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace<S> {
    pub timestep_index: usize,
    pub t_now: S,
    pub t_next: S,
    pub boundaries: Vec<BoundaryTrace<S>>,
    pub delta_v_rms: S,
    /// How many times each global frame of `Z_edit` was written this step.
    pub frame_writes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRun<S> {
    pub output: LatentSequence<S>,
    pub trace: Vec<StepTrace<S>>,
}

struct Prompts<'a, S> {
    src: &'a PromptEmbedding<S>,
    tar: &'a PromptEmbedding<S>,
    null: PromptEmbedding<S>,
}

impl<'a, S: Scalar> Prompts<'a, S> {
    fn new(src: &'a PromptEmbedding<S>, tar: &'a PromptEmbedding<S>) -> Result<Self> {
        if src.dim() != tar.dim() {
            return Err(MlvError::shape(format!(
                "source prompt has {} dims, target prompt {}",
                src.dim(),
                tar.dim()
            )));
        }
        Ok(Self {
            src,
            tar,
            null: PromptEmbedding::null(src.dim())?,
        })
    }
}

/// Guided velocity of one branch.
#[allow(clippy::too_many_arguments)]
fn branch_velocity<S: Scalar, M: VelocityModel<S> + ?Sized>(
    model: &M,
    z: &LatentSequence<S>,
    t: S,
    prompt: &PromptEmbedding<S>,
    null: &PromptEmbedding<S>,
    guidance: Option<S>,
    cond_sink: SinkContext<'_, S>,
    uncond_sink: SinkContext<'_, S>,
    segment: usize,
) -> Result<LatentSequence<S>> {
    let cond = eval_velocity(model, z, t, prompt, cond_sink, segment)?;
    match guidance {
        Some(w) if w != S::one() => {
            let uncond = eval_velocity(model, z, t, null, uncond_sink, segment)?;
            apply_cfg(&cond, &uncond, w)
        }
        _ => Ok(cond),
    }
}

/// `ΔV` for one segment (or the whole sequence) with the given per-pass sink contexts.
#[allow(clippy::too_many_arguments)]
fn guided_delta<S: Scalar, M: VelocityModel<S> + ?Sized>(
    model: &M,
    z_tar: &LatentSequence<S>,
    z_src: &LatentSequence<S>,
    t: S,
    prompts: &Prompts<'_, S>,
    config: &EditConfig<S>,
    sinks: [SinkContext<'_, S>; 4],
    segment: usize,
) -> Result<LatentSequence<S>> {
    let [tar_cond, tar_uncond, src_cond, src_uncond] = sinks;
    let w = config.cfg_scale;
    let v_tar = branch_velocity(
        model,
        z_tar,
        t,
        prompts.tar,
        &prompts.null,
        Some(w),
        tar_cond,
        tar_uncond,
        segment,
    )?;
    let src_guidance = config.cfg_on_source.then_some(w);
    let v_src = branch_velocity(
        model,
        z_src,
        t,
        prompts.src,
        &prompts.null,
        src_guidance,
        src_cond,
        src_uncond,
        segment,
    )?;
    v_tar.sub(&v_src)
}

fn off4<'a, S>() -> [SinkContext<'a, S>; 4] {
    [
        SinkContext::Off,
        SinkContext::Off,
        SinkContext::Off,
        SinkContext::Off,
    ]
}

/// Noisy source latent and target latent for step `times`.
fn branch_latents<S: Scalar>(
    z_edit: &LatentSequence<S>,
    x_src: &LatentSequence<S>,
    times: &StepTimes<S>,
    seed: &SeedSpec,
) -> Result<(LatentSequence<S>, LatentSequence<S>)> {
    z_edit.check_same_shape(x_src, "edited and source latents")?;
    let noise = sample_noise(x_src.frames(), x_src.channels(), seed, times.index)?;
    let z_src = lerp_source(x_src, &noise, times.t_now)?;
    // Z_src + (Z_edit − X_src): equal to Z_edit + Z_src − X_src, and exactly
    // Z_src while Z_edit still equals X_src.
    let z_tar = z_src.add(&z_edit.sub(x_src)?)?;
    Ok((z_src, z_tar))
}

/// `Z_edit + (t_{i−1} − t_i)·ΔV`, one write per frame.
fn euler_update<S: Scalar>(
    z_edit: &LatentSequence<S>,
    delta_v: &LatentSequence<S>,
    times: &StepTimes<S>,
) -> Result<(LatentSequence<S>, Vec<u32>)> {
    z_edit.check_same_shape(delta_v, "Euler update")?;
    let dt = times.t_next - times.t_now;
    let c = z_edit.channels();
    let mut writes = vec![0u32; z_edit.frames()];
    let mut data = Vec::with_capacity(z_edit.as_slice().len());
    for (f, count) in writes.iter_mut().enumerate() {
        data.extend(
            z_edit
                .frame(f)
                .iter()
                .zip(delta_v.frame(f))
                .map(|(&z, &v)| z + dt * v),
        );
        *count += 1;
    }
    let z = LatentSequence::new(z_edit.frames(), c, data).map_err(|e| e.at_step(times.index, 0))?;
    Ok((z, writes))
}

/// One whole-sequence step: no segmentation, no anchors.
#[allow(clippy::too_many_arguments)]
pub fn wan_edit_step<S: Scalar, M: VelocityModel<S> + ?Sized>(
    z_edit: &LatentSequence<S>,
    x_src: &LatentSequence<S>,
    times: StepTimes<S>,
    p_src: &PromptEmbedding<S>,
    p_tar: &PromptEmbedding<S>,
    model: &M,
    config: &EditConfig<S>,
) -> Result<(LatentSequence<S>, StepTrace<S>)> {
    let prompts = Prompts::new(p_src, p_tar)?;
    let (z_src, z_tar) = branch_latents(z_edit, x_src, &times, &config.seed)?;
    let delta_v = guided_delta(
        model,
        &z_tar,
        &z_src,
        times.t_now,
        &prompts,
        config,
        off4(),
        0,
    )
    .map_err(|e| e.at_step(times.index, 0))?;
    let (z, frame_writes) = euler_update(z_edit, &delta_v, &times)?;
    let trace = StepTrace {
        timestep_index: times.index,
        t_now: times.t_now,
        t_next: times.t_next,
        boundaries: Vec::new(),
        delta_v_rms: delta_v.rms(),
        frame_writes,
    };
    Ok((z, trace))
}

fn segmented_step<S: Scalar, M: VelocityModel<S> + ?Sized>(
    state: &mut EditState<S>,
    x_src: &LatentSequence<S>,
    prompts: &Prompts<'_, S>,
    model: &M,
    config: &EditConfig<S>,
    blend: bool,
    anchored: bool,
) -> Result<StepTrace<S>> {
    let times = state.step_times()?;
    let (z_src, z_tar) = branch_latents(&state.z_edit, x_src, &times, &config.seed)?;
    let plan = state.plan.clone();
    let slice = |s: usize| -> Result<(LatentSequence<S>, LatentSequence<S>)> {
        let span = plan.span(s);
        Ok((
            z_tar.slice_frames(span.start, span.end)?,
            z_src.slice_frames(span.start, span.end)?,
        ))
    };
    let run = |s: usize, sinks: [SinkContext<'_, S>; 4]| -> Result<LatentSequence<S>> {
        let (tar, src) = slice(s)?;
        guided_delta(model, &tar, &src, times.t_now, prompts, config, sinks, s)
            .map_err(|e| e.at_step(times.index, s))
    };

    let anchors = &mut state.anchors;
    let policy = if anchored {
        anchors.policy
    } else {
        AnchorPolicy::None
    };
    let m = plan.segment_count();
    let mut dvs = Vec::with_capacity(m);
    match policy {
        AnchorPolicy::None => {
            dvs = (0..m)
                .into_par_iter()
                .map(|s| run(s, off4()))
                .collect::<Result<Vec<_>>>()?;
        }
        AnchorPolicy::FirstOfInitial(_) => {
            // Segment 0 must finish capturing before any later segment injects.
            dvs.push(run(0, anchors.capture_contexts(times.index))?);
            let shared = &*anchors;
            let rest = (1..m)
                .into_par_iter()
                .map(|s| run(s, shared.inject_contexts(times.index)))
                .collect::<Result<Vec<_>>>()?;
            dvs.extend(rest);
        }
        AnchorPolicy::FirstOfPrevious(_) => {
            dvs.push(run(0, anchors.capture_contexts(times.index))?);
            for s in 1..m {
                dvs.push(run(s, anchors.chained_contexts(s, times.index))?);
            }
        }
    }

    let spliced = splice_segments(&plan, &dvs)?;
    let delta_v = if blend {
        blend_segments(&plan, &dvs)?
    } else {
        spliced.clone()
    };
    let boundaries = (1..m)
        .map(|s| {
            Ok(BoundaryTrace {
                boundary: s,
                pre_blend_jump: seam_jump(&spliced, &plan, s)?,
                post_blend_jump: seam_jump(&delta_v, &plan, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (z, frame_writes) = euler_update(&state.z_edit, &delta_v, &times)?;
    state.z_edit = z;
    state.next_step -= 1;
    Ok(StepTrace {
        timestep_index: times.index,
        t_now: times.t_now,
        t_next: times.t_next,
        boundaries,
        delta_v_rms: delta_v.rms(),
        frame_writes,
    })
}

/// One segmented step with blending and anchoring as configured.
pub fn mlv_edit_step<S: Scalar, M: VelocityModel<S> + ?Sized>(
    state: &mut EditState<S>,
    x_src: &LatentSequence<S>,
    p_src: &PromptEmbedding<S>,
    p_tar: &PromptEmbedding<S>,
    model: &M,
    config: &EditConfig<S>,
) -> Result<StepTrace<S>> {
    let prompts = Prompts::new(p_src, p_tar)?;
    segmented_step(
        state,
        x_src,
        &prompts,
        model,
        config,
        config.blend_enabled,
        true,
    )
}

/// One segmented step with direct splicing (later segment wins) and no anchors.
pub fn naive_stitch_step<S: Scalar, M: VelocityModel<S> + ?Sized>(
    state: &mut EditState<S>,
    x_src: &LatentSequence<S>,
    p_src: &PromptEmbedding<S>,
    p_tar: &PromptEmbedding<S>,
    model: &M,
    config: &EditConfig<S>,
) -> Result<StepTrace<S>> {
    let prompts = Prompts::new(p_src, p_tar)?;
    segmented_step(state, x_src, &prompts, model, config, false, false)
}

/// Integrates from `t = 1` to `t = 0` in the chosen mode.
pub fn run_edit<S: Scalar, M: VelocityModel<S> + ?Sized>(
    x_src: &LatentSequence<S>,
    p_src: &PromptEmbedding<S>,
    p_tar: &PromptEmbedding<S>,
    model: &M,
    config: &EditConfig<S>,
    mode: EditMode,
) -> Result<EditRun<S>> {
    config.validate()?;
    let mut trace = Vec::with_capacity(config.steps);
    let output = match mode {
        EditMode::Wan => {
            let schedule = TimestepSchedule::linear(config.steps)?;
            let mut z = x_src.clone();
            for i in (1..=config.steps).rev() {
                let (next, t) = wan_edit_step(
                    &z,
                    x_src,
                    StepTimes::from_schedule(&schedule, i),
                    p_src,
                    p_tar,
                    model,
                    config,
                )?;
                z = next;
                trace.push(t);
            }
            z
        }
        EditMode::Mlv | EditMode::Naive => {
            let mut state = EditState::new(x_src, config)?;
            while !state.is_finished() {
                let t = if mode == EditMode::Mlv {
                    mlv_edit_step(&mut state, x_src, p_src, p_tar, model, config)?
                } else {
                    naive_stitch_step(&mut state, x_src, p_src, p_tar, model, config)?
                };
                trace.push(t);
            }
            state.into_latent()
        }
    };
    Ok(EditRun { output, trace })
}
