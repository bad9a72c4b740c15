//! Staged runs behind the command-line tool.
//!
//! Every stage writes into its own directory under the run directory and
//! records a key hashed from its inputs and settings in `stage.json`. A
//! stage whose key matches a completed record is reused, so repeated
//! commands only redo what changed. Training additionally checkpoints
//! every epoch and resumes from there.
//!
//! ```text
//! out/config.json          resolved configuration
//! out/preprocess/          crops/, manifest.jsonl, crops.jsonl
//! out/extract/             features.bin, sequences.jsonl, apex.jsonl
//! out/train/               model.matn, history.csv
//! out/eval/                metrics.csv, predictions.jsonl
//! out/sweep/               sweep.csv, sweep.svg, metrics.csv
//! out/ablate/              ablation.md, runs.csv, one train dir per variant
//! ```

mod config;
mod stage;
mod stages;

pub use config::{Overrides, PhaseMode, RunConfig, CONFIG_FILE};
pub use stage::{read_record, stage_key, StageOutput, StageRecord, LOG_FILE, STAGE_FILE};
pub use stages::*;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Preprocess,
    Extract,
    Train,
    Eval,
    Sweep,
    Ablate,
    Gradcheck,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Synth,
        Command::Preprocess,
        Command::Extract,
        Command::Train,
        Command::Eval,
        Command::Sweep,
        Command::Ablate,
        Command::Gradcheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Extract => "extract",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Ablate => "ablate",
            Command::Gradcheck => "gradcheck",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown command {s:?}")))
    }
}

/// Outcome of a command, printed by the CLI.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub summary: String,
    /// False when the command ran but its check failed (gradcheck only).
    pub passed: bool,
}

fn done(summary: String) -> Outcome {
    Outcome { summary, passed: true }
}

fn stage_line(name: &str, o: &StageOutput) -> String {
    format!(
        "{name}: {} ({})",
        o.dir.display(),
        if o.cached { "cached" } else { "done" }
    )
}

/// Echoes the config into the run directory, then runs `cmd` and the
/// stages it depends on.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    crate::heap::retain_freed_buffers();
    cfg.echo(&cfg.out)?;
    Ok(match cmd {
        Command::Synth => {
            let entries = synth(cfg)?;
            done(format!("{} sequences written to {}", entries.len(), cfg.out.display()))
        }
        Command::Preprocess => done(stage_line("preprocess", &preprocess(cfg)?)),
        Command::Extract => done(stage_line("extract", &extract(cfg)?)),
        Command::Train => {
            let t = train(cfg)?;
            let best = t
                .history
                .best()
                .map(|b| format!(", best epoch {} val_loss {:.6}", b.epoch, b.val_loss))
                .unwrap_or_default();
            done(format!("{}{best}", stage_line("train", &t.stage)))
        }
        Command::Eval => {
            let r = eval(cfg)?;
            done(format!(
                "UF1 {:.4} at threshold {:.2} ({} sequences), {}",
                r.uf1,
                r.theta,
                r.sequences,
                cfg.out.join(EVAL_DIR).join(crate::evaluation::METRICS_FILE).display()
            ))
        }
        Command::Sweep => {
            let (sw, _) = sweep(cfg)?;
            done(format!(
                "best threshold {:.2}, UF1 {:.4}, {}",
                sw.best_theta,
                sw.best_uf1,
                cfg.out.join(SWEEP_DIR).display()
            ))
        }
        Command::Ablate => {
            let runs = ablate(cfg)?;
            done(format!(
                "{} runs, {}",
                runs.len(),
                cfg.out.join(ABLATE_DIR).join(crate::evaluation::ABLATION_FILE).display()
            ))
        }
        Command::Gradcheck => {
            let r = gradcheck(cfg)?;
            Outcome {
                summary: format!(
                    "max relative error {:.3e} over {} coordinates",
                    r.max_rel_error, r.coordinates
                ),
                passed: r.max_rel_error <= GRADCHECK_TOLERANCE,
            }
        }
    })
}
