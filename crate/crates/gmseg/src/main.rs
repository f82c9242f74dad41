use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use gmseg::commands;
use gmseg::config::RunConfig;

/// Episodic graph memory video object segmentation.
#[derive(Parser)]
#[command(name = "gmseg", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines (resolved against --root).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base directory for every relative path.
    #[arg(long, default_value = ".")]
    root: PathBuf,
    /// Any config knob as `--key value`, e.g. `--reason.K 0 --train.lr 1e-4`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a shape-world dataset in the directory layout.
    #[command(name = "gen-data")]
    GenData(Common),
    /// Train the model (synthetic pretraining, then optional dataset stage).
    Train(Common),
    /// Segment a dataset directory with a trained checkpoint.
    Infer(Common),
    /// Compare predictions against ground truth (J and F report).
    Eval(Common),
    /// Run the finite-difference gradient suite.
    Gradcheck(Common),
    /// Render the training loss curve and per-frame J series.
    Plot(Common),
}

fn build_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(&common.root);
    if let Some(path) = &common.config {
        let resolved = if path.is_absolute() {
            path.clone()
        } else {
            common.root.join(path)
        };
        cfg.merge_file(&resolved)?;
    }
    cfg.merge_overrides(&common.overrides)?;
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let (common, action): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.cmd {
        Cmd::GenData(c) => (c, commands::gen_data),
        Cmd::Train(c) => (c, commands::train),
        Cmd::Infer(c) => (c, commands::infer),
        Cmd::Eval(c) => (c, commands::eval),
        Cmd::Gradcheck(c) => (c, commands::gradcheck),
        Cmd::Plot(c) => (c, commands::plot),
    };
    let cfg = build_config(common)?;
    print!("{}", cfg.echo());
    action(&cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmseg: error: {e:#}");
            let code = match e.downcast_ref::<gmseg_core::Error>() {
                Some(gmseg_core::Error::Config(_)) | Some(gmseg_core::Error::Usage(_)) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
