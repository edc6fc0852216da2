use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use scpo::backends::{Backend, HttpBackend, SyntheticBackend, SyntheticTask};
use scpo::config::{BackendKind, RunConfig};
use scpo::consistency::{Origin, Problem, ResponseSample, Split};
use scpo::error::{Error, Result};
use scpo::eval::{pair_quality, sweep_csv};
use scpo::io::{
    read_json, read_jsonl, read_problems, to_dpo_records, write_atomic, write_json, write_jsonl, ArtifactHeader,
};
use scpo::pairs::{PreferencePair, Threshold};
use scpo::policy::PolicyModel;
use scpo::trainer::{
    answerable, evaluate, evaluation_gold, pairs_stage, run_pipeline, sample_stage, sampling_pool, somers_table,
    stage_seed, tally_stage, train_stage, ModelArtifact,
};

use crate::ConfigArgs;

fn header(cfg: &RunConfig, iteration: usize, kind: &str) -> ArtifactHeader {
    ArtifactHeader {
        config_hash: cfg.hash(),
        iteration,
        kind: kind.to_string(),
    }
}

/// Write `text` to `out`, or to stdout without one.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => emit(None, &format!("{}\n", serde_json::to_string_pretty(value)?)),
    }
}

/// Problems from `path`, or the synthetic task's problems without one.
fn load_problems(path: Option<&Path>, cfg: &RunConfig) -> Result<Vec<Problem>> {
    match path {
        Some(p) => read_problems(p),
        None if cfg.backend == BackendKind::Synthetic => Ok(SyntheticTask::build(&cfg.task)?.problems),
        None => Err(Error::InvalidInput("--problems is required with the http backend".into())),
    }
}

fn load_generated(path: Option<&Path>) -> Result<Vec<Problem>> {
    let generated = match path {
        Some(p) => read_problems(p)?,
        None => Vec::new(),
    };
    if let Some(p) = generated.iter().find(|p| p.origin != Origin::Generated) {
        return Err(Error::InvalidInput(format!("{:?} in the generated file is not a generated problem", p.id)));
    }
    Ok(generated)
}

/// The model in `path`, or the synthetic task's seed model without one.
fn load_model(path: Option<&Path>, cfg: &RunConfig) -> Result<PolicyModel> {
    match path {
        Some(p) => Ok(read_json::<ModelArtifact>(p)?.model),
        None => Ok(SyntheticTask::build(&cfg.task)?.policy),
    }
}

fn require_synthetic(cfg: &RunConfig, command: &str) -> Result<()> {
    if cfg.backend != BackendKind::Synthetic {
        return Err(Error::InvalidInput(format!("`{command}` needs the synthetic backend")));
    }
    Ok(())
}

fn backend(cfg: &RunConfig, model: Option<&Path>) -> Result<Box<dyn Backend>> {
    Ok(match cfg.backend {
        BackendKind::Synthetic => Box::new(SyntheticBackend::from_policy(load_model(model, cfg)?, cfg.task.clone())),
        BackendKind::Http => Box::new(HttpBackend::new(cfg.http.clone())?),
    })
}

#[derive(Args)]
pub struct InitArgs {
    /// Directory receiving config.toml, problems.jsonl and model.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn init(args: InitArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    write_atomic(&args.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    if cfg.backend == BackendKind::Synthetic {
        let task = SyntheticTask::build(&cfg.task)?;
        write_jsonl(&args.out.join("problems.jsonl"), Some(&header(&cfg, 0, "problems")), &task.problems)?;
        let model = ModelArtifact {
            header: header(&cfg, 0, "model"),
            model: task.policy,
        };
        write_json(&args.out.join("model.json"), &model)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct SampleArgs {
    /// Problems file; defaults to the synthetic task.
    #[arg(long)]
    problems: Option<PathBuf>,
    /// Generated queries to sample alongside the pool.
    #[arg(long)]
    generated: Option<PathBuf>,
    /// Model artifact (synthetic backend); defaults to the seed model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn sample(args: SampleArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let problems = load_problems(args.problems.as_deref(), &cfg)?;
    let generated = load_generated(args.generated.as_deref())?;
    let backend = backend(&cfg, args.model.as_deref())?;
    let pool = sampling_pool(&problems, &generated, cfg.transduction);
    let samples = sample_stage(backend.as_ref(), &pool, &cfg, args.iteration)?;
    write_jsonl(&args.out, Some(&header(&cfg, args.iteration, "samples")), &samples)
}

#[derive(Serialize)]
struct TallyLine {
    problem_id: String,
    k: usize,
    top_answer: Option<String>,
    top_votes: usize,
    top_share: f64,
    clusters: usize,
    unparsed: usize,
}

#[derive(Serialize)]
struct VoteSummary {
    header: ArtifactHeader,
    problems: usize,
    mean_top_vote_share: f64,
    tallies: Vec<TallyLine>,
}

#[derive(Args)]
pub struct VoteArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    /// Output JSON; stdout without one.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn vote(args: VoteArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let (_, samples): (_, Vec<ResponseSample>) = read_jsonl(&args.samples)?;
    let tallies = tally_stage(&samples, &cfg, args.iteration)?;
    let lines: Vec<TallyLine> = tallies
        .values()
        .map(|t| TallyLine {
            problem_id: t.problem_id.clone(),
            k: t.k,
            top_answer: t.top().map(|c| c.answer.clone()),
            top_votes: t.top_votes(),
            top_share: t.top_share(),
            clusters: t.clusters.len(),
            unparsed: t.unparsed_count,
        })
        .collect();
    let all: Vec<_> = tallies.into_values().collect();
    let summary = VoteSummary {
        header: header(&cfg, args.iteration, "tallies"),
        problems: lines.len(),
        mean_top_vote_share: scpo::eval::mean_top_vote_share(&all),
        tallies: lines,
    };
    emit_json(args.out.as_deref(), &summary)
}

#[derive(Args)]
pub struct GenQueriesArgs {
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    /// Queries to propose; defaults to `generation.per_iteration`.
    #[arg(long)]
    count: Option<usize>,
    /// Kept (answerable) generated problems.
    #[arg(long)]
    out: PathBuf,
    /// Model artifact extended with the new queries (synthetic backend).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

/// Proposed queries and the answerable subset.
fn propose(
    backend: &mut dyn Backend,
    seeds: &[Problem],
    count: usize,
    cfg: &RunConfig,
    iteration: usize,
) -> Result<(Vec<Problem>, Vec<Problem>)> {
    let spec = cfg.base_sampling(stage_seed(cfg.seed, "generate", iteration));
    let proposed = backend.generate_queries(seeds, cfg.generation.n_shots, count, &spec)?;
    let samples = sample_stage(backend, &proposed, cfg, iteration)?;
    let kept = answerable(&proposed, &samples, cfg, iteration)?;
    Ok((proposed, kept))
}

pub fn gen_queries(args: GenQueriesArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let count = args.count.unwrap_or(cfg.generation.per_iteration);
    if count == 0 {
        return Err(Error::validation("generation.per_iteration", "nothing to generate; pass --count"));
    }
    let problems = load_problems(args.problems.as_deref(), &cfg)?;
    let seeds: Vec<Problem> = problems
        .iter()
        .filter(|p| p.split == Split::Train && p.origin == Origin::Seed)
        .cloned()
        .collect();
    let (proposed, kept) = match cfg.backend {
        BackendKind::Synthetic => {
            // New queries become rows of the synthetic policy, so the
            // extended model must be saved for later stages.
            let path = args
                .model_out
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("--model-out is required with the synthetic backend".into()))?;
            let mut backend = SyntheticBackend::from_policy(load_model(args.model.as_deref(), &cfg)?, cfg.task.clone());
            let result = propose(&mut backend, &seeds, count, &cfg, args.iteration)?;
            let artifact = ModelArtifact {
                header: header(&cfg, args.iteration, "model"),
                model: backend.policy,
            };
            write_json(path, &artifact)?;
            result
        }
        BackendKind::Http => propose(&mut HttpBackend::new(cfg.http.clone())?, &seeds, count, &cfg, args.iteration)?,
    };
    write_jsonl(&args.out, Some(&header(&cfg, args.iteration, "generated")), &kept)?;
    eprintln!("proposed {}, kept {}", proposed.len(), kept.len());
    Ok(())
}

#[derive(Args)]
pub struct BuildPairsArgs {
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long)]
    generated: Option<PathBuf>,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write pairs as {prompt, chosen, rejected, weight} records.
    #[arg(long)]
    dpo_out: Option<PathBuf>,
}

pub fn build_pairs(args: BuildPairsArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let problems = load_problems(args.problems.as_deref(), &cfg)?;
    let generated = load_generated(args.generated.as_deref())?;
    let (_, samples): (_, Vec<ResponseSample>) = read_jsonl(&args.samples)?;
    let gold = evaluation_gold(&problems, &BTreeMap::new());
    let pairs = pairs_stage(&problems, &generated, &samples, &cfg, args.iteration, &gold)?;
    write_jsonl(&args.out, Some(&header(&cfg, args.iteration, "pairs")), &pairs)?;
    if let Some(path) = &args.dpo_out {
        let by_id: BTreeMap<String, Problem> =
            problems.iter().chain(&generated).map(|p| (p.id.clone(), p.clone())).collect();
        write_jsonl(path, None, &to_dpo_records(&pairs, &by_id, cfg.http.prompt_style)?)?;
    }
    eprintln!("{} pairs", pairs.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    header: ArtifactHeader,
    pairs: usize,
    loss_curve: Vec<f64>,
    dev_accuracy: Vec<f64>,
    selected_epoch: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    iteration: usize,
    /// Trained model artifact.
    #[arg(long)]
    out: PathBuf,
    /// Training summary JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn train(args: TrainArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    require_synthetic(&cfg, "train")?;
    let problems = load_problems(args.problems.as_deref(), &cfg)?;
    let model = load_model(args.model.as_deref(), &cfg)?;
    let (_, pairs): (_, Vec<PreferencePair>) = read_jsonl(&args.pairs)?;
    let outcome = train_stage(&model, &pairs, &problems, &cfg, args.iteration)?;
    let artifact = ModelArtifact {
        header: header(&cfg, args.iteration, "model"),
        model: outcome.model,
    };
    write_json(&args.out, &artifact)?;
    if let Some(path) = &args.report {
        let summary = TrainSummary {
            header: header(&cfg, args.iteration, "train"),
            pairs: pairs.len(),
            loss_curve: outcome.epoch_losses,
            dev_accuracy: outcome.dev_accuracy,
            selected_epoch: outcome.selected_epoch,
        };
        write_json(path, &summary)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct RunArgs {
    /// Artifact directory; nothing is written without one.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: RunArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    if let Some(dir) = &args.out {
        write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    }
    let out = run_pipeline(&cfg, args.out.as_deref())?;
    println!("iteration,pairs,margin,vote_share_before,vote_share_after,test_greedy_after,test_sc_after");
    for r in &out.reports {
        let test = r.after.test.as_ref();
        println!(
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.pair_counts.total,
            r.pair_quality.as_ref().map_or(f64::NAN, |q| q.margin),
            r.before.pool_vote_share,
            r.after.pool_vote_share,
            test.map_or(f64::NAN, |t| t.greedy_acc),
            test.map_or(f64::NAN, |t| t.sc_acc),
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Split to evaluate: train, dev or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Pairs whose margin and ordering counts are added to the report.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown split {s:?}"))
}

pub fn eval(args: EvalArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let problems = load_problems(args.problems.as_deref(), &cfg)?;
    let split: Vec<Problem> = problems.iter().filter(|p| p.split == args.split).cloned().collect();
    let (backend, version) = match cfg.backend {
        BackendKind::Synthetic => {
            let model = load_model(args.model.as_deref(), &cfg)?;
            let version = model.version;
            (Box::new(SyntheticBackend::from_policy(model, cfg.task.clone())) as Box<dyn Backend>, version)
        }
        BackendKind::Http => (Box::new(HttpBackend::new(cfg.http.clone())?) as Box<dyn Backend>, 0),
    };
    let mut report = evaluate(backend.as_ref(), &split, &cfg, version)?;
    if let Some(path) = &args.pairs {
        let (_, pairs): (_, Vec<PreferencePair>) = read_jsonl(path)?;
        let quality = pair_quality(&pairs, &evaluation_gold(&problems, &BTreeMap::new()))?;
        report.margin = Some(quality.margin);
        report.ordering_counts = Some(quality.ordering_counts);
    }
    emit_json(args.out.as_deref(), &report)
}

#[derive(Args)]
pub struct SweepTauArgs {
    /// Thresholds to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1k,0.3k,0.5k,0.7k")]
    taus: Vec<Threshold>,
    /// Independent task replicates averaged per row.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// CSV output; stdout without one.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sweep_tau(args: SweepTauArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    require_synthetic(&cfg, "sweep-tau")?;
    let rows = scpo::trainer::sweep_tau(&cfg, &args.taus, args.replicates)?;
    emit(args.out.as_deref(), &sweep_csv(&rows))
}

#[derive(Args)]
pub struct SomersArgs {
    /// Pool sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn somersd(args: SomersArgs, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    require_synthetic(&cfg, "somersd")?;
    if args.replicates == 0 {
        return Err(Error::validation("replicates", "must be positive"));
    }
    let rows = somers_table(&cfg, &args.ks, args.replicates)?;
    let mut csv = String::from("k,mean_d,defined,replicates\n");
    for r in rows {
        let d = r.mean_d.map_or_else(|| "undefined".to_string(), |d| d.to_string());
        csv.push_str(&format!("{},{},{},{}\n", r.k, d, r.defined, r.replicates));
    }
    emit(args.out.as_deref(), &csv)
}
