use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{train_iteration, TrainOutcome};
use crate::backends::{
    sample_pools, Backend, NoisyRewardModel, SamplingSpec, SyntheticBackend, SyntheticTask,
};
use crate::config::{BackendKind, RunConfig};
use crate::consistency::{tally_votes, Origin, Pool, Problem, ResponseSample, Split, VoteTally};
use crate::error::{Error, Result};
use crate::eval::{
    greedy_accuracy_from_answers, mean_top_vote_share, pair_quality, sc_accuracy, somers_d,
    vote_observations, EvalReport, PairQuality,
};
use crate::io::{write_json, write_jsonl, ArtifactHeader};
use crate::pairs::{
    assemble_iteration_pairs, filter_query, group_samples, tally_seed, AssembleOptions, PairMode,
    PreferencePair, TrainingPool,
};
use crate::policy::PolicyModel;
use crate::seed::derive_seed;

/// Seed of a pipeline stage at one iteration. Stage labels: `sample/base`,
/// `sample/high`, `generate`, `eval`, `reward`.
pub fn stage_seed(seed: u64, stage: &str, iteration: usize) -> u64 {
    derive_seed(seed, stage, iteration as u64)
}

fn high_sampling(cfg: &RunConfig, iteration: usize) -> Option<SamplingSpec> {
    (cfg.high_k > 0).then(|| SamplingSpec {
        n: cfg.high_k,
        temperature: cfg.high_temperature,
        seed: stage_seed(cfg.seed, "sample/high", iteration),
        pool: Pool::HighTemp,
        ..cfg.base_sampling(0)
    })
}

/// Base (and, where needed, high-temperature) samples for `problems`.
pub fn sample_stage(
    backend: &dyn Backend,
    problems: &[Problem],
    cfg: &RunConfig,
    iteration: usize,
) -> Result<Vec<ResponseSample>> {
    let base = cfg.base_sampling(stage_seed(cfg.seed, "sample/base", iteration));
    sample_pools(backend, problems, &base, high_sampling(cfg, iteration).as_ref(), cfg.extractor)
}

/// Problems that are sampled at an iteration: the training pool (labels
/// redacted outside train) plus the generated queries.
pub fn sampling_pool(problems: &[Problem], generated: &[Problem], transduction: bool) -> Vec<Problem> {
    let mut pool = TrainingPool::new(problems, transduction).problems().to_vec();
    pool.extend(generated.iter().cloned());
    pool
}

/// Base-pool tallies of every problem in `samples`, keyed by problem id.
pub fn tally_stage(samples: &[ResponseSample], cfg: &RunConfig, iteration: usize) -> Result<BTreeMap<String, VoteTally>> {
    group_samples(samples)
        .into_iter()
        .filter(|(_, ps)| !ps.base.is_empty())
        .map(|(id, ps)| {
            let seed = tally_seed(cfg.seed, iteration, Pool::Base, &id);
            Ok((id, tally_votes(&ps.base, cfg.extractor, seed)?))
        })
        .collect()
}

/// Gold answers visible to evaluation (never to pair construction).
pub fn evaluation_gold(problems: &[Problem], hidden: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut gold = hidden.clone();
    for p in problems {
        if let Some(g) = &p.gold_answer {
            gold.insert(p.id.clone(), g.clone());
        }
    }
    gold
}

/// Generated queries whose base pool passes the answerability threshold.
pub fn answerable(generated: &[Problem], samples: &[ResponseSample], cfg: &RunConfig, iteration: usize) -> Result<Vec<Problem>> {
    let tallies = tally_stage(samples, cfg, iteration)?;
    Ok(generated
        .iter()
        .filter(|p| {
            tallies
                .get(&p.id)
                .is_some_and(|t| filter_query(t, cfg.generation.answerability.resolve(t.k)))
        })
        .cloned()
        .collect())
}

/// Pairs for one iteration. `reward_gold` feeds the synthetic reward model
/// in `rm` mode only.
pub fn pairs_stage(
    problems: &[Problem],
    generated: &[Problem],
    samples: &[ResponseSample],
    cfg: &RunConfig,
    iteration: usize,
    reward_gold: &BTreeMap<String, String>,
) -> Result<Vec<PreferencePair>> {
    let mut all = problems.to_vec();
    all.extend(generated.iter().cloned());
    let pool = TrainingPool::new(&all, cfg.transduction);
    let reward = NoisyRewardModel::new(cfg.reward.sigma, stage_seed(cfg.seed, "reward", 0), reward_gold.clone());
    let opts = AssembleOptions {
        mode: cfg.mode,
        schedule: &cfg.tau_schedule,
        iteration,
        kind: cfg.extractor,
        seed: cfg.seed,
        reward: (cfg.mode == PairMode::RewardModel).then_some(&reward as _),
    };
    assemble_iteration_pairs(&pool, &group_samples(samples), &opts)
}

pub fn train_stage(model: &PolicyModel, pairs: &[PreferencePair], problems: &[Problem], cfg: &RunConfig, iteration: usize) -> Result<TrainOutcome> {
    let dev: Vec<Problem> = problems.iter().filter(|p| p.split == Split::Dev && p.gold_answer.is_some()).cloned().collect();
    let train_cfg = super::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    train_iteration(model, pairs, &cfg.loss, &train_cfg, Some(&dev), iteration)
}

/// Greedy, self-consistency and correlation metrics of a backend's current
/// model on `problems`. `version` selects the sampling stream.
pub fn evaluate(backend: &dyn Backend, problems: &[Problem], cfg: &RunConfig, version: usize) -> Result<EvalReport> {
    let mut greedy = BTreeMap::new();
    for p in problems {
        greedy.insert(p.id.clone(), backend.greedy_answer(p)?);
    }
    let spec = cfg.base_sampling(stage_seed(cfg.seed, "eval", version));
    let mut by_problem: BTreeMap<String, Vec<ResponseSample>> = BTreeMap::new();
    let mut tallies = Vec::with_capacity(problems.len());
    let mut observations = Vec::new();
    for p in problems {
        let samples = backend.sample_responses(p, &spec)?.samples;
        let tally = tally_votes(&samples, cfg.extractor, 0)?;
        if let Some(gold) = &p.gold_answer {
            observations.extend(vote_observations(&tally, gold));
        }
        tallies.push(tally);
        by_problem.insert(p.id.clone(), samples);
    }
    Ok(EvalReport {
        greedy_acc: greedy_accuracy_from_answers(&greedy, problems)?,
        sc_acc: sc_accuracy(&by_problem, problems, cfg.extractor)?,
        sc_k: cfg.k,
        mean_top_vote_share: mean_top_vote_share(&tallies),
        somers_d: somers_d(&observations),
        margin: None,
        ordering_counts: None,
    })
}

/// Metrics of one model version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub version: usize,
    /// Mean top vote share over the seed training pool.
    pub pool_vote_share: f64,
    pub dev: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    pub seed: usize,
    pub generated: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub proposed: usize,
    pub kept: usize,
}

/// Everything measured in one iteration; persisted as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub header: ArtifactHeader,
    pub iteration: usize,
    pub mode: PairMode,
    pub tau: String,
    pub generation: GenerationStats,
    pub pair_counts: PairCounts,
    pub pair_quality: Option<PairQuality>,
    pub loss_curve: Vec<f64>,
    pub dev_accuracy: Vec<f64>,
    pub selected_epoch: usize,
    pub before: ModelMetrics,
    pub after: ModelMetrics,
    pub notes: Vec<String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub header: ArtifactHeader,
    pub model: PolicyModel,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub reports: Vec<IterationReport>,
    pub model: PolicyModel,
}

fn split_of(problems: &[Problem], split: Split) -> Vec<Problem> {
    problems.iter().filter(|p| p.split == split && p.gold_answer.is_some()).cloned().collect()
}

fn model_metrics(
    backend: &SyntheticBackend,
    problems: &[Problem],
    pool_samples: &[ResponseSample],
    cfg: &RunConfig,
) -> Result<ModelMetrics> {
    let version = backend.policy.version;
    let pool = TrainingPool::new(problems, cfg.transduction);
    let tallies = tally_stage(pool_samples, cfg, version)?;
    let shares: Vec<VoteTally> = pool.problems().iter().filter_map(|p| tallies.get(&p.id).cloned()).collect();
    let eval_split = |split| -> Result<Option<EvalReport>> {
        let ps = split_of(problems, split);
        if ps.is_empty() {
            return Ok(None);
        }
        evaluate(backend, &ps, cfg, version).map(Some)
    };
    Ok(ModelMetrics {
        version,
        pool_vote_share: mean_top_vote_share(&shares),
        dev: eval_split(Split::Dev)?,
        test: eval_split(Split::Test)?,
    })
}

/// Build the synthetic task from `cfg.task` and run the full loop.
pub fn run_pipeline(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<PipelineOutput> {
    cfg.validate()?;
    if cfg.backend != BackendKind::Synthetic {
        return Err(Error::InvalidInput(
            "training runs need the synthetic backend; use `sample` and `build-pairs` to export pairs from a served model"
                .into(),
        ));
    }
    let task = SyntheticTask::build(&cfg.task)?;
    run_synthetic(cfg, &task, out_dir)
}

/// Run `cfg.train.iterations` iterations of sample, vote, pair, train and
/// evaluate on a materialized task. With `out_dir`, every intermediate
/// artifact is written under `iter-<t>/`.
pub fn run_synthetic(cfg: &RunConfig, task: &SyntheticTask, out_dir: Option<&Path>) -> Result<PipelineOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let header = |iteration, kind: &str| ArtifactHeader {
        config_hash: hash.clone(),
        iteration,
        kind: kind.to_string(),
    };
    let problems = &task.problems;
    if let Some(dir) = out_dir {
        write_jsonl(&dir.join("problems.jsonl"), Some(&header(0, "problems")), problems)?;
    }
    let mut backend = SyntheticBackend::new(task);
    let mut reports = Vec::with_capacity(cfg.train.iterations);
    let seed_problems: Vec<Problem> = problems
        .iter()
        .filter(|p| p.split == Split::Train && p.origin == Origin::Seed)
        .cloned()
        .collect();

    for t in 0..cfg.train.iterations {
        let mut notes = Vec::new();
        let proposed = if cfg.generation.per_iteration > 0 {
            let spec = cfg.base_sampling(stage_seed(cfg.seed, "generate", t));
            backend.generate_queries(&seed_problems, cfg.generation.n_shots, cfg.generation.per_iteration, &spec)?
        } else {
            Vec::new()
        };
        let pool = sampling_pool(problems, &proposed, cfg.transduction);
        let samples = sample_stage(&backend, &pool, cfg, t)?;
        let kept = answerable(&proposed, &samples, cfg, t)?;
        if matches!(cfg.mode, PairMode::RewardModel | PairMode::LmsiTargets) {
            notes.push("threshold filtering applied as in the consistency modes".to_string());
        }

        let gold = evaluation_gold(problems, backend.hidden_gold());
        let pairs = pairs_stage(problems, &kept, &samples, cfg, t, &gold)?;
        let quality = pair_quality(&pairs, &gold)?;
        let generated_pairs = pairs.iter().filter(|p| kept.iter().any(|g| g.id == p.problem_id)).count();
        let before = model_metrics(&backend, problems, &samples, cfg)?;

        let outcome = train_stage(&backend.policy, &pairs, problems, cfg, t)?;
        backend.policy = outcome.model.clone();
        let next_samples = sample_stage(&backend, TrainingPool::new(problems, cfg.transduction).problems(), cfg, t + 1)?;
        let after = model_metrics(&backend, problems, &next_samples, cfg)?;

        let report = IterationReport {
            header: header(t, "report"),
            iteration: t,
            mode: cfg.mode,
            tau: cfg.tau_schedule.at(t).to_string(),
            generation: GenerationStats {
                proposed: proposed.len(),
                kept: kept.len(),
            },
            pair_counts: PairCounts {
                seed: pairs.len() - generated_pairs,
                generated: generated_pairs,
                total: pairs.len(),
            },
            pair_quality: Some(quality),
            loss_curve: outcome.epoch_losses.clone(),
            dev_accuracy: outcome.dev_accuracy.clone(),
            selected_epoch: outcome.selected_epoch,
            before,
            after,
            notes,
            config: cfg.clone(),
        };
        if let Some(dir) = out_dir {
            let iter_dir = dir.join(format!("iter-{t}"));
            write_jsonl(&iter_dir.join("generated.jsonl"), Some(&header(t, "generated")), &kept)?;
            write_jsonl(&iter_dir.join("samples.jsonl"), Some(&header(t, "samples")), &samples)?;
            write_jsonl(&iter_dir.join("pairs.jsonl"), Some(&header(t, "pairs")), &pairs)?;
            write_json(
                &iter_dir.join("model.json"),
                &ModelArtifact {
                    header: header(t, "model"),
                    model: backend.policy.clone(),
                },
            )?;
            write_json(&iter_dir.join("report.json"), &report)?;
        }
        reports.push(report);
    }
    Ok(PipelineOutput {
        reports,
        model: backend.policy,
    })
}
