//! Flat `key = value` run configuration.
//!
//! Every key is optional. Seeds of the fixture, the perturbation and the
//! segment bias default to the root `seed`, so overriding the root seed
//! re-draws all of them. [`RunConfig::to_text`] writes every key with its
//! resolved value; parsing that text gives back the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mlv_core::{AnchorPolicy, EditConfig64, EditMode, SeedSpec};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// Independent standard normals.
    Random,
    /// Every channel rises linearly from 0 at the first frame to 1 at the last.
    Ramp,
    /// One standard-normal value per channel, repeated over all frames.
    Constant,
}

impl FixtureKind {
    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Random => "random",
            FixtureKind::Ramp => "ramp",
            FixtureKind::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Fixture {
        kind: FixtureKind,
        frames: usize,
        channels: usize,
        seed: u64,
    },
    /// An MLV1 latent file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Toy {
        model_dim: usize,
        layers: usize,
        seed: u64,
        perturbation: f64,
        perturbation_seed: u64,
    },
    /// Per-channel values; a single value is broadcast to every channel.
    Constant { value: Vec<f64>, prompt_gain: f64 },
    SegmentBias {
        base: Vec<f64>,
        bias_magnitude: f64,
        bias_seed: u64,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Toy { .. } => "toy",
            ModelSpec::Constant { .. } => "constant",
            ModelSpec::SegmentBias { .. } => "segment_bias",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptSpec {
    Null,
    Fill(f64),
    /// Standard normals from prompt stream `index` of the root seed.
    Random(u64),
    Values(Vec<f64>),
}

impl FromStr for PromptSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "null" {
            return Ok(PromptSpec::Null);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(|| {
            format!("expected null, fill:<v>, random:<index> or values:<list>, got '{s}'")
        })?;
        match kind {
            "fill" => Ok(PromptSpec::Fill(parse_f64(arg)?)),
            "random" => arg
                .parse()
                .map(PromptSpec::Random)
                .map_err(|e| format!("'{arg}': {e}")),
            "values" => Ok(PromptSpec::Values(parse_list(arg)?)),
            other => Err(format!("unknown prompt kind '{other}'")),
        }
    }
}

impl std::fmt::Display for PromptSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PromptSpec::Null => f.write_str("null"),
            PromptSpec::Fill(v) => write!(f, "fill:{}", fmt_f64(*v)),
            PromptSpec::Random(i) => write!(f, "random:{i}"),
            PromptSpec::Values(v) => write!(f, "values:{}", fmt_list(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub edit: EditConfig64,
    pub mode: EditMode,
    pub model: ModelSpec,
    pub prompt_dim: usize,
    pub input: InputSpec,
    pub source_prompt: PromptSpec,
    pub target_prompt: PromptSpec,
    /// `None` means every channel.
    pub slice_channels: Option<Vec<usize>>,
    pub slice_height: usize,
    /// Time at which the frame encoder evaluates features.
    pub feature_time: f64,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config_str("", "<defaults>").expect("defaults are valid")
    }
}

const KEYS: &[&str] = &[
    "steps",
    "cfg_scale",
    "segment_length",
    "overlap_length",
    "seed",
    "sink_policy",
    "blend",
    "sink_on_source",
    "cfg_on_source",
    "mode",
    "model",
    "prompt_dim",
    "toy_model_dim",
    "toy_layers",
    "toy_seed",
    "perturbation",
    "perturbation_seed",
    "constant_value",
    "prompt_gain",
    "bias_base",
    "bias_magnitude",
    "bias_seed",
    "input",
    "fixture",
    "frames",
    "channels",
    "fixture_seed",
    "source_prompt",
    "target_prompt",
    "slice_channels",
    "slice_height",
    "feature_time",
    "trace",
    "output_dir",
    "tool_version",
];

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<EditMode>,
    pub trace: bool,
}

/// Raw key/value pairs with the line each came from.
#[derive(Debug, Default)]
pub(crate) struct Entries {
    path: String,
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    pub(crate) fn parse(text: &str, path: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: path.to_owned(),
                line,
                message,
            };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            if value.is_empty() {
                return Err(err(format!("missing value for '{key}'")));
            }
            if let Some((_, first)) = map.insert(key.to_owned(), (value.to_owned(), line)) {
                return Err(err(format!(
                    "duplicate key '{key}' (first set on line {first})"
                )));
            }
        }
        Ok(Self {
            path: path.to_owned(),
            map,
        })
    }

    /// Sets `key` from the command line (reported as line 0).
    fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_owned(), (value, 0));
    }

    pub(crate) fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |&(_, l)| l)
    }

    fn error(&self, key: &str, message: impl Into<String>) -> CliError {
        match self.line(key) {
            0 => CliError::ConfigFile {
                path: self.path.clone(),
                message: message.into(),
            },
            line => CliError::Config {
                path: self.path.clone(),
                line,
                message: message.into(),
            },
        }
    }

    fn get<T>(
        &self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some((v, _)) => parse(v).map_err(|m| self.error(key, format!("{key}: {m}"))),
        }
    }

    fn num<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key, default, |v| {
            v.parse::<T>().map_err(|e| format!("'{v}': {e}"))
        })
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key, default, parse_f64)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        self.get(key, default, |v| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got '{v}'")),
        })
    }

    fn list(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        self.get(key, default, parse_list)
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.trim().parse().map_err(|e| format!("'{v}': {e}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{v}' is not finite"))
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(parse_f64).collect()
}

/// Round-trip exact float text.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}

fn parse_policy(v: &str) -> std::result::Result<AnchorPolicy, String> {
    if v == "none" {
        return Ok(AnchorPolicy::None);
    }
    let (name, rest) = v
        .split_once('(')
        .ok_or_else(|| format!("unknown sink policy '{v}'"))?;
    let count = rest
        .strip_suffix(')')
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| format!("expected {name}(<frames>), got '{v}'"))?;
    match name.trim() {
        "first_of_initial" => Ok(AnchorPolicy::FirstOfInitial(count)),
        "first_of_previous" => Ok(AnchorPolicy::FirstOfPrevious(count)),
        other => Err(format!("unknown sink policy '{other}'")),
    }
}

fn fmt_policy(p: AnchorPolicy) -> String {
    match p {
        AnchorPolicy::None => "none".into(),
        AnchorPolicy::FirstOfInitial(n) => format!("first_of_initial({n})"),
        AnchorPolicy::FirstOfPrevious(n) => format!("first_of_previous({n})"),
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = read_config_text(path)?;
    parse_config_str_with(&text, &path.display().to_string(), overrides)
}

pub(crate) fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
        path: path.display().to_string(),
        message: format!("cannot read config: {e}"),
    })
}

pub fn parse_config_str(text: &str, path: &str) -> Result<RunConfig> {
    parse_config_str_with(text, path, &Overrides::default())
}

pub fn parse_config_str_with(text: &str, path: &str, overrides: &Overrides) -> Result<RunConfig> {
    let mut e = Entries::parse(text, path)?;
    if let Some(seed) = overrides.seed {
        e.set("seed", seed.to_string());
    }
    if let Some(mode) = overrides.mode {
        e.set("mode", mode.name().to_owned());
    }
    if overrides.trace {
        e.set("trace", "true".to_owned());
    }
    if let Some(v) = e.raw("tool_version") {
        if v != crate::TOOL_VERSION {
            return Err(e.error(
                "tool_version",
                format!("written by version {v}, this is {}", crate::TOOL_VERSION),
            ));
        }
    }
    let seed: u64 = e.num("seed", 0)?;
    let defaults = EditConfig64::default();
    let edit = EditConfig64 {
        steps: e.num("steps", defaults.steps)?,
        cfg_scale: e.float("cfg_scale", defaults.cfg_scale)?,
        segment_length: e.num("segment_length", defaults.segment_length)?,
        overlap: e.num("overlap_length", defaults.overlap)?,
        seed: SeedSpec::new(seed),
        anchor_policy: e.get("sink_policy", defaults.anchor_policy, parse_policy)?,
        blend_enabled: e.flag("blend", defaults.blend_enabled)?,
        sink_on_source: e.flag("sink_on_source", defaults.sink_on_source)?,
        cfg_on_source: e.flag("cfg_on_source", defaults.cfg_on_source)?,
    };
    if let Err(err) = edit.validate() {
        let key = [
            "overlap_length",
            "segment_length",
            "steps",
            "sink_policy",
            "cfg_scale",
        ]
        .into_iter()
        .find(|k| e.raw(k).is_some())
        .unwrap_or("steps");
        return Err(e.error(key, err.to_string()));
    }
    let mode = e.get("mode", EditMode::Mlv, |v| {
        v.parse().map_err(|err: mlv_core::MlvError| err.to_string())
    })?;

    let model = match e.raw("model").unwrap_or("toy") {
        "toy" => ModelSpec::Toy {
            model_dim: e.num("toy_model_dim", 32)?,
            layers: e.num("toy_layers", 2)?,
            seed: e.num("toy_seed", 0)?,
            perturbation: e.float("perturbation", 0.0)?,
            perturbation_seed: e.num("perturbation_seed", seed)?,
        },
        "constant" => ModelSpec::Constant {
            value: e.list("constant_value", vec![0.0])?,
            prompt_gain: e.float("prompt_gain", 1.0)?,
        },
        "segment_bias" => ModelSpec::SegmentBias {
            base: e.list("bias_base", vec![0.0])?,
            bias_magnitude: e.float("bias_magnitude", 1.0)?,
            bias_seed: e.num("bias_seed", seed)?,
        },
        other => return Err(e.error("model", format!("unknown model '{other}'"))),
    };
    let prompt_dim: usize = e.num("prompt_dim", 8)?;
    if prompt_dim == 0 {
        return Err(e.error("prompt_dim", "prompt_dim must be at least 1"));
    }
    if let ModelSpec::Toy {
        model_dim, layers, ..
    } = model
    {
        if model_dim == 0 || layers == 0 {
            return Err(e.error(
                "toy_model_dim",
                "toy model needs model_dim and layers of at least 1",
            ));
        }
    }

    let input = match e.raw("input") {
        Some(p) => InputSpec::File(PathBuf::from(p)),
        None => {
            let kind = e.get("fixture", FixtureKind::Random, |v| match v {
                "random" => Ok(FixtureKind::Random),
                "ramp" => Ok(FixtureKind::Ramp),
                "constant" => Ok(FixtureKind::Constant),
                _ => Err(format!("expected random, ramp or constant, got '{v}'")),
            })?;
            let frames: usize = e.num("frames", 53)?;
            let channels: usize = e.num("channels", 4)?;
            if frames == 0 || channels == 0 {
                return Err(e.error(
                    if frames == 0 { "frames" } else { "channels" },
                    "fixture must be non-empty",
                ));
            }
            InputSpec::Fixture {
                kind,
                frames,
                channels,
                seed: e.num("fixture_seed", seed)?,
            }
        }
    };

    let (src_default, tar_default) = match model {
        ModelSpec::Toy { .. } => (PromptSpec::Random(0), PromptSpec::Random(1)),
        _ => (PromptSpec::Null, PromptSpec::Fill(1.0)),
    };
    let source_prompt = e.get("source_prompt", src_default, str::parse)?;
    let target_prompt = e.get("target_prompt", tar_default, str::parse)?;
    for (key, spec) in [
        ("source_prompt", &source_prompt),
        ("target_prompt", &target_prompt),
    ] {
        if let PromptSpec::Values(v) = spec {
            if v.len() != prompt_dim {
                return Err(e.error(
                    key,
                    format!("{} values given, prompt_dim is {prompt_dim}", v.len()),
                ));
            }
        }
    }

    let slice_channels = e.get("slice_channels", None, |v| {
        if v == "all" {
            return Ok(None);
        }
        v.split(',')
            .map(|c| {
                c.trim()
                    .parse::<usize>()
                    .map_err(|err| format!("'{c}': {err}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
    })?;
    let slice_height: usize = e.num("slice_height", 16)?;
    if slice_height == 0 {
        return Err(e.error("slice_height", "slice_height must be at least 1"));
    }
    let feature_time = e.float("feature_time", 0.0)?;
    if !(0.0..=1.0).contains(&feature_time) {
        return Err(e.error("feature_time", "feature_time must be in [0, 1]"));
    }

    Ok(RunConfig {
        edit,
        mode,
        model,
        prompt_dim,
        input,
        source_prompt,
        target_prompt,
        slice_channels,
        slice_height,
        feature_time,
        trace: e.flag("trace", false)?,
    })
}

/// `output_dir` from a config file, if it names one.
pub fn configured_output_dir(text: &str, path: &str) -> Result<Option<PathBuf>> {
    Ok(Entries::parse(text, path)?
        .raw("output_dir")
        .map(PathBuf::from))
}

impl RunConfig {
    /// Every key with its resolved value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let ed = &self.edit;
        kv("mode", self.mode.name().into());
        kv("seed", ed.seed.root_seed.to_string());
        kv("steps", ed.steps.to_string());
        kv("cfg_scale", fmt_f64(ed.cfg_scale));
        kv("segment_length", ed.segment_length.to_string());
        kv("overlap_length", ed.overlap.to_string());
        kv("sink_policy", fmt_policy(ed.anchor_policy));
        kv("blend", ed.blend_enabled.to_string());
        kv("sink_on_source", ed.sink_on_source.to_string());
        kv("cfg_on_source", ed.cfg_on_source.to_string());
        kv("model", self.model.name().into());
        kv("prompt_dim", self.prompt_dim.to_string());
        match &self.model {
            ModelSpec::Toy {
                model_dim,
                layers,
                seed,
                perturbation,
                perturbation_seed,
            } => {
                kv("toy_model_dim", model_dim.to_string());
                kv("toy_layers", layers.to_string());
                kv("toy_seed", seed.to_string());
                kv("perturbation", fmt_f64(*perturbation));
                kv("perturbation_seed", perturbation_seed.to_string());
            }
            ModelSpec::Constant { value, prompt_gain } => {
                kv("constant_value", fmt_list(value));
                kv("prompt_gain", fmt_f64(*prompt_gain));
            }
            ModelSpec::SegmentBias {
                base,
                bias_magnitude,
                bias_seed,
            } => {
                kv("bias_base", fmt_list(base));
                kv("bias_magnitude", fmt_f64(*bias_magnitude));
                kv("bias_seed", bias_seed.to_string());
            }
        }
        match &self.input {
            InputSpec::Fixture {
                kind,
                frames,
                channels,
                seed,
            } => {
                kv("fixture", kind.name().into());
                kv("frames", frames.to_string());
                kv("channels", channels.to_string());
                kv("fixture_seed", seed.to_string());
            }
            InputSpec::File(p) => kv("input", p.display().to_string()),
        }
        kv("source_prompt", self.source_prompt.to_string());
        kv("target_prompt", self.target_prompt.to_string());
        kv(
            "slice_channels",
            match &self.slice_channels {
                None => "all".into(),
                Some(c) => c.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            },
        );
        kv("slice_height", self.slice_height.to_string());
        kv("feature_time", fmt_f64(self.feature_time));
        kv("trace", self.trace.to_string());
        out
    }
}
