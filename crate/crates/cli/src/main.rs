// SPDX-License-Identifier: MIT OR Apache-2.0

//! `sea`: fit, apply and inspect spectral activation edits.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure, 3 demo thresholds not met.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sea_core::{EditMode, FeatureKind, LayerSelection, MergeMode, SeaError};

#[derive(Debug, Parser)]
#[command(name = "sea", version, about = "Spectral editing of activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a projection bundle (SEAP) from an activation set (SEAD).
    Fit(FitArgs),
    /// Edit every role of an activation set with a fitted bundle.
    Edit(EditArgs),
    /// Per-layer signatures of the positive/negative split.
    Signature(SignatureArgs),
    /// Explained-variance spectra of an activation set or bundle.
    Inspect(InspectArgs),
    /// Run the synthetic end-to-end check on the toy model.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Truthfulness,
    Fairness,
}

/// Flags shared by every command that builds an edit configuration.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Starting configuration (fit defaults to truthfulness); the other flags
    /// override it.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Layers: `top:L`, `bottom:L`, bare `L` (top), `ids:a,b,...` or `none`.
    #[arg(long, value_parser = parse_core::<LayerSelection>)]
    layers: Option<LayerSelection>,
    /// both | positive-only | negative-only | reverse
    #[arg(long, value_parser = parse_core::<EditMode>)]
    mode: Option<EditMode>,
    /// norm-rescale | average
    #[arg(long, value_parser = parse_core::<MergeMode>)]
    merge: Option<MergeMode>,
    /// identity | sqexp | tanh | elu
    #[arg(long, value_parser = parse_core::<FeatureKind>)]
    feature: Option<FeatureKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Subtract per-set means before forming cross-covariances.
    #[arg(long)]
    center: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    input: PathBuf,
    /// Output bundle. With several K values each bundle gets a `.k<K>` suffix.
    #[arg(short, long)]
    output: PathBuf,
    /// Explained-variance threshold(s); repeat or comma-separate for a sweep.
    #[arg(long = "k", value_delimiter = ',')]
    k: Vec<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EditArgs {
    bundle: PathBuf,
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Flags left unset take the bundle's fit configuration.
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct SignatureArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Side {
    Positive,
    Negative,
}

#[derive(Debug, Args)]
struct InspectArgs {
    input: PathBuf,
    /// Which covariance spectrum to dump.
    #[arg(long, value_enum, default_value = "positive")]
    side: Side,
    /// Center activation sets before forming covariances (ignored for bundles).
    #[arg(long)]
    center: bool,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, env = "SEA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_core::<EditMode>, default_value = "both")]
    mode: EditMode,
    #[arg(long, value_parser = parse_core::<MergeMode>, default_value = "norm-rescale")]
    merge: MergeMode,
    #[arg(long, value_parser = parse_core::<FeatureKind>, default_value = "identity")]
    feature: FeatureKind,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Also write the generated activation set.
    #[arg(long)]
    save_set: Option<PathBuf>,
    /// Also write the fitted bundle.
    #[arg(long)]
    save_bundle: Option<PathBuf>,
}

fn parse_core<T: std::str::FromStr<Err = SeaError>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: SeaError| e.to_string())
}

/// Failures the binary reports, with their exit codes.
#[derive(Debug)]
enum Failure {
    Sea(SeaError),
    DemoFailed,
}

impl From<SeaError> for Failure {
    fn from(e: SeaError) -> Self {
        Failure::Sea(e)
    }
}

fn main() -> ExitCode {
    // Die quietly when stdout is a closed pipe, as in `sea demo | head`.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Edit(a) => commands::edit(a),
        Command::Signature(a) => commands::signature(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Demo(a) => commands::demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::DemoFailed) => ExitCode::from(3),
        Err(Failure::Sea(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
