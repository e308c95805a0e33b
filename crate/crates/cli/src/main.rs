//! `docket`: runs the classification pipeline stage by stage in a working
//! directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use docket_core::pipeline::{RunConfig, Workspace, KEYS};
use docket_core::Result;

#[derive(Parser, Debug)]
#[command(
    name = "docket",
    version,
    about = "Status classification of legal proceedings from their motions"
)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Working directory holding data, artifacts and reports.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Shorthand for `--set pipeline=...`.
    #[arg(long, global = true)]
    pipeline: Option<String>,

    /// Shorthand for `--set search.trials=...`.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Shorthand for `--set seed=...`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic labeled and unlabeled corpora.
    SynthGen,
    /// Learn phrases, tokenize both corpora and split the labeled one.
    Preprocess,
    /// Train CBOW embeddings and fit the TFIDF vocabulary.
    TrainEmbeddings,
    /// Random hyperparameter search on the validation split.
    Tune,
    /// Train the final classifier and write the model file.
    Train,
    /// Score the trained models on the test split with bootstrap errors.
    Evaluate,
    /// Filter similarity tables and partial dependence plots.
    Interpret,
    /// List every configuration key with its default.
    Keys,
}

impl Command {
    fn stage(self) -> Option<&'static str> {
        Some(match self {
            Command::SynthGen => "synth-gen",
            Command::Preprocess => "preprocess",
            Command::TrainEmbeddings => "train-embeddings",
            Command::Tune => "tune",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Interpret => "interpret",
            Command::Keys => return None,
        })
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        c.assign(pair)?;
    }
    if let Some(p) = &cli.pipeline {
        c.set("pipeline", p)?;
    }
    if let Some(n) = cli.trials {
        c.set("search.trials", &n.to_string())?;
    }
    if let Some(s) = cli.seed {
        c.set("seed", &s.to_string())?;
    }
    c.pipeline()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let Some(stage) = cli.command.stage() else {
        for (key, default, help) in KEYS {
            println!("{key:<28} {default:<44} {help}");
        }
        return Ok(());
    };
    let ws = Workspace::new(&cli.workdir, config(cli)?);
    let outcome = ws.run(stage)?;
    println!("{}", outcome.summary.trim_end());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
