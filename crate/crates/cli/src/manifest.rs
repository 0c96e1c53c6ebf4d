use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{self, InputSpec, Overrides, RunConfig};
use crate::error::{CliError, Result};
use crate::TOOL_VERSION;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Everything needed to reproduce one run. Its text form is itself a valid
/// config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(config: RunConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            output_dir: output_dir.into(),
            tool_version: TOOL_VERSION.to_owned(),
        }
    }

    /// Builds a manifest from a config file. `out` wins over the file's
    /// `output_dir`.
    pub fn from_config_file(
        path: &Path,
        overrides: &Overrides,
        out: Option<&Path>,
    ) -> Result<Self> {
        let text = config::read_config_text(path)?;
        let label = path.display().to_string();
        let config = config::parse_config_str_with(&text, &label, overrides)?;
        let output_dir = match out {
            Some(o) => o.to_path_buf(),
            None => config::configured_output_dir(&text, &label)?.ok_or_else(|| {
                CliError::ConfigFile {
                    path: label.clone(),
                    message: "no output directory: pass --out or set output_dir".into(),
                }
            })?,
        };
        Ok(Self::new(config, output_dir))
    }

    pub fn root_seed(&self) -> u64 {
        self.config.edit.seed.root_seed
    }

    pub fn input_descriptor(&self) -> String {
        match &self.config.input {
            InputSpec::Fixture {
                kind,
                frames,
                channels,
                seed,
            } => {
                format!(
                    "fixture {} F={frames} C={channels} seed={seed}",
                    kind.name()
                )
            }
            InputSpec::File(p) => format!("file {}", p.display()),
        }
    }

    /// SHA-256 over the tool version and the resolved config. The output
    /// directory is not part of it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("tool_version = {}\n", self.tool_version));
        h.update(self.config.to_text());
        h.finalize()
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mlv-run run manifest");
        let _ = writeln!(out, "# hash: {}", self.hash());
        let _ = writeln!(out, "# input: {}", self.input_descriptor());
        let _ = writeln!(out, "tool_version = {}", self.tool_version);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        out.push_str(&self.config.to_text());
        out
    }

    /// Creates the output directory and writes `manifest.txt` into it.
    pub fn write(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(CliError::io(&self.output_dir))?;
        let path = self.output_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config_file(path, &Overrides::default(), None)
    }
}
