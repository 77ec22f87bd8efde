//! The `cybershield` command line: one subcommand per stage, handing off
//! through files under the configured output directory.
//!
//! ```text
//! data/{train,val,test,live}.csv, normalization.json   synth
//! models/<preset>.csm, <preset>.history.json           train
//! reports/eval.json                                    eval
//! attacks/<i>_<kind>.{csv,json}, reports/attack.json   attack
//! reports/transfer.{csv,json}                          transfer
//! reports/explain.json                                 explain
//! signatures/repository.jsonl                          sign
//! detectors/<kind>.det                                 fit-detector
//! reports/detection.json, threshold_sweep_<kind>.csv   detect-eval
//! runs/<mode>.{events.jsonl,timeline.csv,...}          simulate
//! reports/comparison.{csv,json}                        compare
//! reports/report.md, timeline.svg                      report
//! ```

mod commands;
mod config;
mod report;
mod workspace;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::detector::DetectorKind;
use crate::error::{Error, Result};
use crate::pipeline::RunMode;

pub use config::{
    apply_override, AttackSection, DataSection, DetectorSection, ExplainSection, ModelSection, PipelineSection, RunConfig,
    Seeds,
};
pub use workspace::{Split, Workspace};

#[derive(Debug, Parser)]
#[command(name = "cybershield", version, about = "Attack and defend sensor-window cybersickness classifiers")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replace every seed with ones derived from this base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Every stage currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Config override `key.path=value`, e.g. `attack.attacks.0.epsilon=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic traces and fit normalization.
    Synth,
    /// Train the configured classifiers.
    Train {
        /// Train only these presets.
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Clean test metrics of every model.
    Eval,
    /// White-box attacks on the primary model.
    Attack {
        /// Override epsilon of every configured attack.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Transfer matrix across models.
    Transfer,
    /// Input-level Shapley explanations.
    Explain,
    /// Build the signature repository.
    Sign,
    /// Fit attack detectors on training signatures.
    FitDetector,
    /// Score detectors on held-out signatures.
    DetectEval,
    /// Replay the live trace through the closed loop.
    Simulate {
        #[arg(long = "mode", value_parser = parse_mode)]
        modes: Vec<RunMode>,
        #[arg(long, value_parser = parse_kind)]
        detector: Option<DetectorKind>,
    },
    /// Agreement of each run with the baseline run.
    Compare,
    /// Markdown summary of all reports.
    Report {
        /// Also draw the run timelines as SVG.
        #[arg(long)]
        svg: bool,
    },
}

fn parse_mode(s: &str) -> std::result::Result<RunMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown mode {s:?}"))
}

fn parse_kind(s: &str) -> std::result::Result<DetectorKind, String> {
    s.parse::<DetectorKind>().map_err(|e| e.to_string())
}

impl Cli {
    /// Loads the config and applies flags and command-specific overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let path = self.config.as_ref().ok_or_else(|| Error::config("--config <path> is required"))?;
        let mut overrides = self.overrides.clone();
        if let Some(dir) = &self.output_dir {
            overrides.push(format!("output_dir={}", serde_json::Value::String(dir.display().to_string())));
        }
        match &self.command {
            Command::Train { epochs: Some(e), .. } => overrides.push(format!("train.epochs={e}")),
            Command::Attack { epsilon: Some(eps) } => {
                let text = std::fs::read_to_string(path)?;
                let n = RunConfig::from_json(&text, &self.overrides)?.attack.attacks.len();
                overrides.extend((0..n).map(|i| format!("attack.attacks.{i}.epsilon={eps}")));
            }
            _ => {}
        }
        let mut cfg = RunConfig::load(path, &overrides)?;
        if let Some(s) = self.seed {
            cfg.seeds = Seeds::from_base(s);
        }
        if self.threads == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ws = Workspace::new(cli.resolve()?);
    match &cli.command {
        Command::Synth => commands::synth(&ws),
        Command::Train { models, .. } => commands::train_models(&ws, models),
        Command::Eval => commands::eval(&ws),
        Command::Attack { .. } => commands::attack(&ws),
        Command::Transfer => commands::transfer(&ws),
        Command::Explain => commands::explain(&ws),
        Command::Sign => commands::sign(&ws),
        Command::FitDetector => commands::fit_detectors(&ws),
        Command::DetectEval => commands::detect_eval(&ws),
        Command::Simulate { modes, detector } => commands::simulate(&ws, modes, *detector),
        Command::Compare => commands::compare(&ws),
        Command::Report { svg } => report::report(&ws, *svg),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.config.is_none() {
        eprintln!("error: --config <path> is required");
        return 2;
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
