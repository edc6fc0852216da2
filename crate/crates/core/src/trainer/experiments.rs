use serde::{Deserialize, Serialize};

use super::pipeline::{run_synthetic, stage_seed};
use crate::backends::{Backend, SyntheticBackend, SyntheticTask};
use crate::config::RunConfig;
use crate::consistency::tally_votes;
use crate::error::{Error, Result};
use crate::eval::{somers_d, vote_observations, SweepRow};
use crate::pairs::{Threshold, ThresholdSchedule};
use crate::seed::derive_seed;

/// Configuration of replicate `r`: both the run seed and the task seed are
/// re-derived, so every replicate is a fresh task and a fresh sampling stream.
pub fn replicate(cfg: &RunConfig, r: usize) -> RunConfig {
    let mut out = cfg.clone();
    out.seed = derive_seed(cfg.seed, "replicate", r as u64);
    out.task.rng_seed = derive_seed(cfg.task.rng_seed, "replicate", r as u64);
    out
}

/// Outcome of one replicate at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub pair_count: usize,
    pub margin: f64,
    /// Final-model greedy accuracy on the test split.
    pub test_acc: f64,
}

/// Run `cfg` with a constant threshold `tau`.
pub fn sweep_point(cfg: &RunConfig, tau: Threshold) -> Result<SweepPoint> {
    let cfg = RunConfig {
        tau_schedule: ThresholdSchedule(vec![tau]),
        ..cfg.clone()
    };
    let task = SyntheticTask::build(&cfg.task)?;
    let out = run_synthetic(&cfg, &task, None)?;
    let pair_count = out.reports.iter().map(|r| r.pair_counts.total).sum::<usize>();
    let weighted_margin: f64 = out
        .reports
        .iter()
        .map(|r| r.pair_quality.as_ref().map_or(0.0, |q| q.margin) * r.pair_counts.total as f64)
        .sum();
    let last = out.reports.last().ok_or(Error::EmptyDataset)?;
    let test = last
        .after
        .test
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("task has no test split".into()))?;
    Ok(SweepPoint {
        pair_count,
        margin: weighted_margin / pair_count.max(1) as f64,
        test_acc: test.greedy_acc,
    })
}

/// One row per threshold, averaged over `replicates` runs.
pub fn sweep_tau(cfg: &RunConfig, taus: &[Threshold], replicates: usize) -> Result<Vec<SweepRow>> {
    if replicates == 0 {
        return Err(Error::validation("replicates", "must be positive"));
    }
    taus.iter()
        .map(|&tau| {
            let points = (0..replicates)
                .map(|r| sweep_point(&replicate(cfg, r), tau))
                .collect::<Result<Vec<_>>>()?;
            let n = points.len() as f64;
            Ok(SweepRow {
                tau: tau.to_string(),
                pair_count: points.iter().map(|p| p.pair_count as f64).sum::<f64>() / n,
                margin: points.iter().map(|p| p.margin).sum::<f64>() / n,
                test_acc: points.iter().map(|p| p.test_acc).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Somers' D between vote count and correctness for the seed model at each
/// `k`, pooled over every labeled problem of the task.
pub fn somers_by_k(cfg: &RunConfig, ks: &[usize]) -> Result<Vec<Option<f64>>> {
    let task = SyntheticTask::build(&cfg.task)?;
    let backend = SyntheticBackend::new(&task);
    ks.iter()
        .map(|&k| {
            let spec = crate::backends::SamplingSpec {
                n: k,
                ..cfg.base_sampling(stage_seed(cfg.seed, "somers", k))
            };
            spec.validate()?;
            let mut observations = Vec::new();
            for p in &task.problems {
                let Some(gold) = &p.gold_answer else { continue };
                let samples = backend.sample_responses(p, &spec)?.samples;
                observations.extend(vote_observations(&tally_votes(&samples, cfg.extractor, 0)?, gold));
            }
            Ok(somers_d(&observations))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomersRow {
    pub k: usize,
    /// Mean over replicates where D is defined.
    pub mean_d: Option<f64>,
    pub defined: usize,
    pub replicates: usize,
}

pub fn somers_table(cfg: &RunConfig, ks: &[usize], replicates: usize) -> Result<Vec<SomersRow>> {
    let per_rep = (0..replicates)
        .map(|r| somers_by_k(&replicate(cfg, r), ks))
        .collect::<Result<Vec<_>>>()?;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let ds: Vec<f64> = per_rep.iter().filter_map(|row| row[i]).collect();
            SomersRow {
                k,
                mean_d: (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64),
                defined: ds.len(),
                replicates,
            }
        })
        .collect())
}
