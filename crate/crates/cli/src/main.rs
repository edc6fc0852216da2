//! `scpo`: command-line driver for sampling, voting, pair construction,
//! training and evaluation.
//!
//! Failures print one line `error[<Class>]: <message>` to stderr and exit
//! with status 1; usage errors exit with status 2.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scpo::config::{load_config, BackendKind, RunConfig};
use scpo::pairs::{PairMode, Threshold, ThresholdSchedule};

#[derive(Parser)]
#[command(name = "scpo", version, about = "Self-consistency preference optimization pipeline")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Configuration file plus per-key overrides.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `k`.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Overrides `mode`: unsupervised, semi, gold, rm or lmsi-targets.
    #[arg(long, global = true)]
    mode: Option<PairMode>,
    /// Overrides `tau_schedule`, comma separated (e.g. `0.5k,0.7k`).
    #[arg(long, global = true, value_delimiter = ',')]
    tau: Option<Vec<Threshold>>,
    /// Sets `transduction = true`.
    #[arg(long, global = true)]
    transduction: bool,
    /// Overrides `backend`: synthetic or http.
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Overrides `http.base_url`.
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Overrides `train.iterations`.
    #[arg(long, global = true)]
    iterations: Option<usize>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown backend {s:?}"))
}

impl ConfigArgs {
    pub fn resolve(&self) -> scpo::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
            if v == PairMode::LmsiTargets {
                cfg.loss.objective = scpo::trainer::Objective::Lmsi;
            }
        }
        if let Some(v) = &self.tau {
            cfg.tau_schedule = ThresholdSchedule::new(v.clone())?;
        }
        if self.transduction {
            cfg.transduction = true;
        }
        if let Some(v) = self.backend {
            cfg.backend = v;
        }
        if let Some(v) = &self.base_url {
            cfg.http.base_url = v.clone();
        }
        if let Some(v) = self.iterations {
            cfg.train.iterations = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a default config, the synthetic task's problems and its seed model.
    Init(commands::InitArgs),
    /// Sample base (and high-temperature) response pools.
    Sample(commands::SampleArgs),
    /// Tally votes per problem and summarize vote shares.
    Vote(commands::VoteArgs),
    /// Generate new queries few-shot and keep the answerable ones.
    GenQueries(commands::GenQueriesArgs),
    /// Build preference pairs from sampled pools.
    BuildPairs(commands::BuildPairsArgs),
    /// Train one iteration on a pair set.
    Train(commands::TrainArgs),
    /// Run the full iterative pipeline.
    Run(commands::RunArgs),
    /// Evaluate a model on one split.
    Eval(commands::EvalArgs),
    /// Sweep the vote threshold and emit a CSV table.
    SweepTau(commands::SweepTauArgs),
    /// Somers' D between votes and correctness for several k.
    Somersd(commands::SomersArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init(a) => commands::init(a, &cli.config),
        Command::Sample(a) => commands::sample(a, &cli.config),
        Command::Vote(a) => commands::vote(a, &cli.config),
        Command::GenQueries(a) => commands::gen_queries(a, &cli.config),
        Command::BuildPairs(a) => commands::build_pairs(a, &cli.config),
        Command::Train(a) => commands::train(a, &cli.config),
        Command::Run(a) => commands::run(a, &cli.config),
        Command::Eval(a) => commands::eval(a, &cli.config),
        Command::SweepTau(a) => commands::sweep_tau(a, &cli.config),
        Command::Somersd(a) => commands::somersd(a, &cli.config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
