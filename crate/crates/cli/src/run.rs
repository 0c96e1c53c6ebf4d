//! One experiment: fixture or file in, edited latent plus diagnostics out.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mlv_core::format::{latent_to_bytes, read_latent};
use mlv_core::metrics::format_float;
use mlv_core::{
    run_edit, temporal_slice, AnalyticKind, AnalyticModel, Latent64, LatentSequence, MetricsReport,
    Prompt64, PromptEmbedding, Purpose, SeedSpec, SegmentPerturbation, SegmentPlan, StepTrace,
    ToyConfig, ToyFrameEncoder, ToyTransformer, ToyTransformer64, VelocityModel,
};

use crate::config::{FixtureKind, InputSpec, ModelSpec, PromptSpec, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

pub const INPUT_FILE: &str = "input.mlv1";
pub const EDITED_FILE: &str = "edited.mlv1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRACE_HEADER: &str =
    "timestep_index,t_now,t_next,boundary,pre_blend_jump,post_blend_jump,delta_v_rms";

pub fn slice_file(channel: usize) -> String {
    format!("slice_ch{channel}.pgm")
}

pub fn build_fixture(
    kind: FixtureKind,
    frames: usize,
    channels: usize,
    seed: u64,
) -> Result<Latent64> {
    let seed = SeedSpec::new(seed);
    let z = match kind {
        FixtureKind::Random => LatentSequence::new(
            frames,
            channels,
            seed.normals(Purpose::Fixture, 0, frames * channels),
        ),
        FixtureKind::Ramp => {
            let denom = frames.saturating_sub(1).max(1) as f64;
            LatentSequence::from_fn(frames, channels, |f, _| f as f64 / denom)
        }
        FixtureKind::Constant => {
            let per_channel: Vec<f64> = seed.normals(Purpose::Fixture, 0, channels);
            LatentSequence::from_fn(frames, channels, |_, c| per_channel[c])
        }
    };
    Ok(z?)
}

pub fn load_input(config: &RunConfig) -> Result<Latent64> {
    match &config.input {
        InputSpec::Fixture {
            kind,
            frames,
            channels,
            seed,
        } => build_fixture(*kind, *frames, *channels, *seed),
        InputSpec::File(path) => {
            let file = fs::File::open(path).map_err(CliError::io(path))?;
            read_latent(&mut std::io::BufReader::new(file)).map_err(|source| CliError::Latent {
                path: path.clone(),
                source,
            })
        }
    }
}

pub fn build_prompt(spec: &PromptSpec, label: &str, dim: usize, seed: u64) -> Result<Prompt64> {
    let p = match spec {
        PromptSpec::Null => PromptEmbedding::null(dim),
        PromptSpec::Fill(v) => PromptEmbedding::filled(label, dim, *v),
        PromptSpec::Random(index) => {
            PromptEmbedding::random(label, dim, &SeedSpec::new(seed), *index)
        }
        PromptSpec::Values(v) => PromptEmbedding::new(label, v.clone()),
    };
    Ok(p?)
}

fn broadcast(values: &[f64], channels: usize, key: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; channels]),
        n if n == channels => Ok(values.to_vec()),
        n => Err(CliError::Engine(mlv_core::MlvError::InvalidShape(format!(
            "{key} has {n} values, the latent has {channels} channels"
        )))),
    }
}

fn toy_config(config: &RunConfig, channels: usize) -> ToyConfig {
    match config.model {
        ModelSpec::Toy {
            model_dim,
            layers,
            seed,
            ..
        } => ToyConfig {
            channels,
            prompt_dim: config.prompt_dim,
            model_dim,
            layers,
            seed,
        },
        _ => ToyConfig {
            channels,
            prompt_dim: config.prompt_dim,
            ..ToyConfig::default()
        },
    }
}

pub fn build_model(config: &RunConfig, channels: usize) -> Result<Box<dyn VelocityModel<f64>>> {
    let model: Box<dyn VelocityModel<f64>> = match &config.model {
        ModelSpec::Toy {
            perturbation,
            perturbation_seed,
            ..
        } => {
            let toy = ToyTransformer::new(&toy_config(config, channels))?;
            Box::new(if *perturbation != 0.0 {
                toy.with_perturbation(SegmentPerturbation {
                    seed: SeedSpec::new(*perturbation_seed),
                    magnitude: *perturbation,
                })
            } else {
                toy
            })
        }
        ModelSpec::Constant { value, prompt_gain } => Box::new(AnalyticModel::new(
            AnalyticKind::Constant {
                value: broadcast(value, channels, "constant_value")?,
                prompt_gain: *prompt_gain,
            },
            config.prompt_dim,
        )?),
        ModelSpec::SegmentBias {
            base,
            bias_magnitude,
            bias_seed,
        } => Box::new(AnalyticModel::new(
            AnalyticKind::SegmentBias {
                base: broadcast(base, channels, "bias_base")?,
                bias_magnitude: *bias_magnitude,
                bias_seed: SeedSpec::new(*bias_seed),
            },
            config.prompt_dim,
        )?),
    };
    Ok(model)
}

/// The unperturbed toy transformer used to embed frames for similarity.
pub fn feature_encoder(config: &RunConfig, channels: usize) -> Result<ToyTransformer64> {
    Ok(ToyTransformer::new(&toy_config(config, channels))?)
}

pub fn trace_csv(trace: &[StepTrace<f64>]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for step in trace {
        let head = format!(
            "{},{},{}",
            step.timestep_index,
            format_float(step.t_now),
            format_float(step.t_next)
        );
        let rms = format_float(step.delta_v_rms);
        if step.boundaries.is_empty() {
            let _ = writeln!(out, "{head},,,,{rms}");
        }
        for b in &step.boundaries {
            let _ = writeln!(
                out,
                "{head},{},{},{},{rms}",
                b.boundary,
                format_float(b.pre_blend_jump),
                format_float(b.post_blend_jump)
            );
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub manifest_hash: String,
    pub output: Latent64,
    pub report: MetricsReport<f64>,
    pub trace: Vec<StepTrace<f64>>,
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(CliError::io(path))
}

/// Writes the manifest, runs the edit, then writes every output file.
pub fn run_experiment(manifest: &RunManifest) -> Result<RunOutputs> {
    manifest.write()?;
    let config = &manifest.config;
    let dir = manifest.output_dir.clone();
    let seed = manifest.root_seed();

    let x = load_input(config)?;
    let channels = x.channels();
    if let Some(bad) = config
        .slice_channels
        .iter()
        .flatten()
        .find(|&&c| c >= channels)
    {
        return Err(CliError::Engine(mlv_core::MlvError::OutOfRange(format!(
            "slice channel {bad} but the latent has {channels} channels"
        ))));
    }
    write(&dir, INPUT_FILE, latent_to_bytes(&x))?;

    let model = build_model(config, channels)?;
    let p_src = build_prompt(&config.source_prompt, "source", config.prompt_dim, seed)?;
    let p_tar = build_prompt(&config.target_prompt, "target", config.prompt_dim, seed)?;
    let run = run_edit(
        &x,
        &p_src,
        &p_tar,
        model.as_ref(),
        &config.edit,
        config.mode,
    )?;
    write(&dir, EDITED_FILE, latent_to_bytes(&run.output))?;

    let plan = SegmentPlan::new(x.frames(), config.edit.segment_length, config.edit.overlap)?;
    let encoder_model = feature_encoder(config, channels)?;
    let encoder = ToyFrameEncoder {
        model: &encoder_model,
        prompt: p_tar.clone(),
        t: config.feature_time,
    };
    let report = MetricsReport::compute(&run.output, &plan, &encoder)?;
    write(&dir, METRICS_FILE, report.to_csv())?;
    if config.trace {
        write(&dir, TRACE_FILE, trace_csv(&run.trace))?;
    }
    let channels_to_slice: Vec<usize> = config
        .slice_channels
        .clone()
        .unwrap_or_else(|| (0..channels).collect());
    for c in channels_to_slice {
        let slice = temporal_slice(&run.output, c)?;
        write(&dir, &slice_file(c), slice.to_pgm(config.slice_height))?;
    }

    Ok(RunOutputs {
        dir,
        manifest_hash: manifest.hash(),
        output: run.output,
        report,
        trace: run.trace,
    })
}
