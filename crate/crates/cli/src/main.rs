use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use microatt::training::Precision;
use microatt::workflow::{self, Command, Outcome, Overrides, RunConfig};

/// Dual-view optical-flow micro-expression recognition.
#[derive(Debug, Parser)]
#[command(name = "microatt", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Run directory (dataset directory for `synth`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset directory or manifest file.
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Decision threshold used by `eval`.
    #[arg(long, global = true, value_name = "F")]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    no_attention: bool,
    #[arg(long, global = true)]
    no_se: bool,
    #[arg(long, global = true, value_name = "N")]
    input_side: Option<usize>,
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    precision: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset with ground truth.
    Synth,
    /// Split views, detect face boxes and crop.
    Preprocess,
    /// Detect apex frames and compute phase flow features.
    Extract,
    /// Train the network with early stopping.
    Train,
    /// Test-split metrics at the decision threshold.
    Eval,
    /// Threshold sweep with the curve and metrics at the best threshold.
    Sweep,
    /// Train and score the attention/SE ablation variants.
    Ablate,
    /// Finite-difference gradient check of a miniature network.
    Gradcheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Synth => Command::Synth,
            Cmd::Preprocess => Command::Preprocess,
            Cmd::Extract => Command::Extract,
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Sweep => Command::Sweep,
            Cmd::Ablate => Command::Ablate,
            Cmd::Gradcheck => Command::Gradcheck,
        }
    }
}

fn execute(cli: &Cli) -> microatt::Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        data: cli.data.clone(),
        threshold: cli.threshold,
        no_attention: cli.no_attention,
        no_se: cli.no_se,
        input_side: cli.input_side,
        precision: cli.precision.as_deref().map(str::parse::<Precision>).transpose()?,
    });
    workflow::run(cli.command.into(), &cfg.resolve()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(o) => {
            println!("{}", o.summary);
            if o.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
