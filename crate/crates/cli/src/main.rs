use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlv_cli::config::{parse_config_str_with, Overrides};
use mlv_cli::{compare_runs, run_experiment, CliError, RunManifest};
use mlv_core::EditMode;

#[derive(Parser)]
#[command(
    name = "mlv-run",
    version,
    about = "Segmented flow editing of long latent sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one edit and write its outputs.
    Run {
        /// Config file; all defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EditMode>,
        /// Output directory (overrides output_dir in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-step trace CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Compare the metric summaries of two run directories.
    Compare { a: PathBuf, b: PathBuf },
}

fn parse_mode(s: &str) -> Result<EditMode, String> {
    s.parse().map_err(|e: mlv_core::MlvError| e.to_string())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            mode,
            out,
            seed,
            trace,
        } => {
            let overrides = Overrides { seed, mode, trace };
            let manifest = match config {
                Some(path) => RunManifest::from_config_file(&path, &overrides, out.as_deref())?,
                None => {
                    let out = out.ok_or_else(|| CliError::ConfigFile {
                        path: "<command line>".into(),
                        message: "no output directory: pass --out".into(),
                    })?;
                    RunManifest::new(parse_config_str_with("", "<defaults>", &overrides)?, out)
                }
            };
            let outputs = run_experiment(&manifest)?;
            println!(
                "wrote {} (manifest {})",
                outputs.dir.display(),
                outputs.manifest_hash
            );
            println!("{}", outputs.report.to_csv().trim_end());
        }
        Command::Compare { a, b } => print!("{}", compare_runs(&a, &b)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mlv-run: {e}");
            ExitCode::FAILURE
        }
    }
}
