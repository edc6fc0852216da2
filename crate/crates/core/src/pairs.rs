//! Preference-pair construction from vote tallies.
//!
//! The chosen response is a representative of the most-voted answer and the
//! rejected one a representative of the least-voted answer. A pair's weight is
//! the vote margin `(V(chosen) - V(rejected)) / k`, always measured on the
//! base pool; the high-temperature pool only supplies a rejected answer when
//! the base pool is unanimous, and such an answer counts zero base votes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::consistency::{
    extract_answer, tally_votes, ExtractorKind, Pool, Problem, ResponseSample, Split, VoteTally,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, problem_seed, rng_from};

/// Slack for comparing integer votes against a real-valued threshold such as `0.3 * 8`.
const TAU_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Consistency,
    Gold,
    RewardModel,
    LmsiTarget,
}

/// One training unit. Field order is the `pairs.jsonl` key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub problem_id: String,
    pub chosen_text: String,
    pub rejected_text: String,
    pub chosen_answer: String,
    pub rejected_answer: String,
    pub chosen_votes: usize,
    pub rejected_votes: usize,
    pub k: usize,
    pub weight: f64,
    pub source: PairSource,
    /// Absolute vote threshold in force when the pair was built.
    pub tau: f64,
    pub iteration: usize,
}

/// A vote threshold, either a fraction of `k` or an absolute vote count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fraction(f64),
    Absolute(usize),
}

impl Threshold {
    /// Threshold as an absolute (possibly fractional) vote count for this `k`.
    pub fn resolve(self, k: usize) -> f64 {
        match self {
            Threshold::Fraction(f) => f * k as f64,
            Threshold::Absolute(n) => n as f64,
        }
    }

    fn validate(self) -> Result<Self, String> {
        match self {
            Threshold::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(format!("fraction {f} must lie in (0, 1]"))
            }
            Threshold::Absolute(0) => Err("absolute threshold must be positive".into()),
            ok => Ok(ok),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Fraction(x) => write!(f, "{x}k"),
            Threshold::Absolute(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Threshold {
    type Err = String;

    /// Parses `"0.5k"` as a fraction of k and `"2"` as an absolute count.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let parsed = if let Some(frac) = s.strip_suffix('k') {
            frac.trim()
                .parse::<f64>()
                .map(Threshold::Fraction)
                .map_err(|e| format!("bad fraction {s:?}: {e}"))?
        } else {
            s.parse::<usize>()
                .map(Threshold::Absolute)
                .map_err(|e| format!("bad threshold {s:?}: {e}"))?
        };
        parsed.validate()
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-iteration thresholds; iterations past the end reuse the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdSchedule(pub Vec<Threshold>);

impl ThresholdSchedule {
    pub fn new(thresholds: Vec<Threshold>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::validation("tau_schedule", "schedule is empty"));
        }
        Ok(ThresholdSchedule(thresholds))
    }

    pub fn at(&self, iteration: usize) -> Threshold {
        self.0[iteration.min(self.0.len() - 1)]
    }
}

impl Default for ThresholdSchedule {
    /// 0.5k for the first iteration, 0.7k afterwards.
    fn default() -> Self {
        ThresholdSchedule(vec![Threshold::Fraction(0.5), Threshold::Fraction(0.7)])
    }
}

/// A tally together with the responses it was computed from.
#[derive(Debug, Clone, Copy)]
pub struct Tallied<'a> {
    pub tally: &'a VoteTally,
    pub samples: &'a [ResponseSample],
}

impl<'a> Tallied<'a> {
    fn text_of(&self, sample_idx: usize) -> &'a str {
        self.samples
            .iter()
            .find(|s| s.sample_idx == sample_idx)
            .map(|s| s.text.as_str())
            .unwrap_or_default()
    }
}

/// Provenance shared by every pair built in one iteration.
#[derive(Debug, Clone, Copy)]
pub struct PairContext {
    pub kind: ExtractorKind,
    pub tau: Threshold,
    pub iteration: usize,
}

/// Keep a query iff its most-voted answer reaches `tau` (absolute votes).
pub fn filter_query(tally: &VoteTally, tau: f64) -> bool {
    tally.top_votes() as f64 + TAU_EPS >= tau
}

/// Like [`build_pair`] but keeps zero-weight (tied) pairs, which are needed
/// to count ties when judging pair quality.
pub fn pair_candidate(ctx: &PairContext, base: Tallied<'_>, high: Option<Tallied<'_>>) -> Option<PreferencePair> {
    let tally = base.tally;
    let tau = ctx.tau.resolve(tally.k);
    if !filter_query(tally, tau) {
        return None;
    }
    let chosen = tally.top()?;
    let (rejected_answer, rejected_votes, rejected_text) = if tally.clusters.len() > 1 {
        let bottom = tally.bottom()?;
        (bottom.answer.clone(), bottom.votes, base.text_of(bottom.representative))
    } else {
        let high = high?;
        let fallback = high.tally.clusters.iter().rev().find(|c| c.answer != chosen.answer)?;
        (
            fallback.answer.clone(),
            tally.votes_for(&fallback.answer),
            high.text_of(fallback.representative),
        )
    };
    let weight = (chosen.votes as f64 - rejected_votes as f64) / tally.k as f64;
    Some(PreferencePair {
        problem_id: tally.problem_id.clone(),
        chosen_text: base.text_of(chosen.representative).to_string(),
        rejected_text: rejected_text.to_string(),
        chosen_answer: chosen.answer.clone(),
        rejected_answer,
        chosen_votes: chosen.votes,
        rejected_votes,
        k: tally.k,
        weight,
        source: PairSource::Consistency,
        tau,
        iteration: ctx.iteration,
    })
}

/// Most- vs least-consistent pair for an unlabeled query, or `None` when the
/// query fails the threshold, no distinct rejected answer exists in either
/// pool, or the weight would be zero.
pub fn build_pair(ctx: &PairContext, base: Tallied<'_>, high: Option<Tallied<'_>>) -> Option<PreferencePair> {
    pair_candidate(ctx, base, high).filter(|p| p.weight > 0.0)
}

fn answer_counts<'a>(answers: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut counts = BTreeMap::new();
    for a in answers {
        *counts.entry(a).or_insert(0) += 1;
    }
    counts
}

/// Correct-vs-incorrect pair for a query with a known gold answer.
///
/// Both sides are drawn uniformly at random (seeded) from the correct and the
/// incorrect responses. Unparsable responses are never used.
pub fn build_gold_pair(ctx: &PairContext, samples: &[ResponseSample], gold: &str, seed: u64) -> Option<PreferencePair> {
    let extracted: Vec<(&ResponseSample, String)> = samples
        .iter()
        .filter_map(|s| extract_answer(&s.text, ctx.kind).map(|a| (s, a)))
        .collect();
    let correct: Vec<_> = extracted.iter().filter(|(_, a)| a == gold).collect();
    let incorrect: Vec<_> = extracted.iter().filter(|(_, a)| a != gold).collect();
    if correct.is_empty() || incorrect.is_empty() {
        return None;
    }
    let mut rng = rng_from(seed);
    let (chosen, chosen_answer) = correct[rng.random_range(0..correct.len())];
    let (rejected, rejected_answer) = incorrect[rng.random_range(0..incorrect.len())];
    let counts = answer_counts(extracted.iter().map(|(_, a)| a.as_str()));
    let k = samples.len();
    Some(PreferencePair {
        problem_id: chosen.problem_id.clone(),
        chosen_text: chosen.text.clone(),
        rejected_text: rejected.text.clone(),
        chosen_answer: chosen_answer.clone(),
        rejected_answer: rejected_answer.clone(),
        chosen_votes: counts[chosen_answer.as_str()],
        rejected_votes: counts[rejected_answer.as_str()],
        k,
        weight: 1.0,
        source: PairSource::Gold,
        tau: ctx.tau.resolve(k),
        iteration: ctx.iteration,
    })
}

/// Highest- vs lowest-reward pair, the reward-model baseline.
///
/// The chosen response is the argmax score (ties to the lowest `sample_idx`).
/// The rejected response is the argmin score among responses whose answer
/// differs from the chosen one (ties to the highest `sample_idx`), so the
/// pair always contrasts two answers.
pub fn build_rm_pair(ctx: &PairContext, samples: &[ResponseSample], scores: &[f64]) -> Result<PreferencePair> {
    if samples.len() != scores.len() {
        return Err(Error::InvalidInput(format!(
            "{} samples but {} reward scores",
            samples.len(),
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite reward score {bad}")));
    }
    let problem_id = samples.first().map(|s| s.problem_id.clone()).unwrap_or_default();
    let scored: Vec<(&ResponseSample, String, f64)> = samples
        .iter()
        .zip(scores)
        .filter_map(|(s, &score)| extract_answer(&s.text, ctx.kind).map(|a| (s, a, score)))
        .collect();
    let counts = answer_counts(scored.iter().map(|(_, a, _)| a.as_str()));
    if counts.len() < 2 {
        return Err(Error::DegeneratePool { problem_id });
    }
    let chosen = scored
        .iter()
        .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.sample_idx.cmp(&a.0.sample_idx)))
        .expect("non-empty");
    let rejected = scored
        .iter()
        .filter(|(_, a, _)| *a != chosen.1)
        .min_by(|a, b| a.2.total_cmp(&b.2).then(b.0.sample_idx.cmp(&a.0.sample_idx)))
        .expect("two distinct answers");
    let k = samples.len();
    Ok(PreferencePair {
        problem_id,
        chosen_text: chosen.0.text.clone(),
        rejected_text: rejected.0.text.clone(),
        chosen_answer: chosen.1.clone(),
        rejected_answer: rejected.1.clone(),
        chosen_votes: counts[chosen.1.as_str()],
        rejected_votes: counts[rejected.1.as_str()],
        k,
        weight: 1.0,
        source: PairSource::RewardModel,
        tau: ctx.tau.resolve(k),
        iteration: ctx.iteration,
    })
}

/// Supervised target for the self-consistency fine-tuning baseline: the
/// representative of the most-voted answer when it passes the threshold. The
/// rejected side is left empty.
pub fn build_lmsi_target(ctx: &PairContext, base: Tallied<'_>) -> Option<PreferencePair> {
    let tally = base.tally;
    let tau = ctx.tau.resolve(tally.k);
    if !filter_query(tally, tau) {
        return None;
    }
    let top = tally.top()?;
    Some(PreferencePair {
        problem_id: tally.problem_id.clone(),
        chosen_text: base.text_of(top.representative).to_string(),
        rejected_text: String::new(),
        chosen_answer: top.answer.clone(),
        rejected_answer: String::new(),
        chosen_votes: top.votes,
        rejected_votes: 0,
        k: tally.k,
        weight: 1.0,
        source: PairSource::LmsiTarget,
        tau,
        iteration: ctx.iteration,
    })
}

/// How pairs are built for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PairMode {
    /// Consistency pairs for every query; gold answers are ignored.
    #[default]
    #[serde(rename = "unsupervised")]
    Unsupervised,
    /// Gold pairs where a label exists, consistency pairs elsewhere.
    #[serde(rename = "semi")]
    SemiSupervised,
    /// Gold pairs only; unlabeled queries are skipped.
    #[serde(rename = "gold")]
    Gold,
    /// Reward-model pairs for every query.
    #[serde(rename = "rm")]
    RewardModel,
    /// Most-consistent targets for supervised fine-tuning.
    #[serde(rename = "lmsi-targets")]
    LmsiTargets,
}

impl PairMode {
    pub const ALL: [PairMode; 5] = [
        PairMode::Unsupervised,
        PairMode::SemiSupervised,
        PairMode::Gold,
        PairMode::RewardModel,
        PairMode::LmsiTargets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairMode::Unsupervised => "unsupervised",
            PairMode::SemiSupervised => "semi",
            PairMode::Gold => "gold",
            PairMode::RewardModel => "rm",
            PairMode::LmsiTargets => "lmsi-targets",
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation("mode", format!("unknown mode {s:?}")))
    }
}

/// Base and high-temperature responses of one problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemSamples {
    pub base: Vec<ResponseSample>,
    pub high: Vec<ResponseSample>,
}

/// Group a flat sample list by problem id and pool, preserving order.
pub fn group_samples(samples: &[ResponseSample]) -> BTreeMap<String, ProblemSamples> {
    let mut grouped: BTreeMap<String, ProblemSamples> = BTreeMap::new();
    for s in samples {
        let entry = grouped.entry(s.problem_id.clone()).or_default();
        match s.pool {
            Pool::Base => entry.base.push(s.clone()),
            Pool::HighTemp => entry.high.push(s.clone()),
        }
    }
    grouped
}

/// Seed for the tally of one problem's pool at one iteration.
pub fn tally_seed(seed: u64, iteration: usize, pool: Pool, problem_id: &str) -> u64 {
    let label = match pool {
        Pool::Base => "tally/base",
        Pool::HighTemp => "tally/high",
    };
    problem_seed(derive_seed(seed, label, iteration as u64), problem_id)
}

/// Problems eligible for pair construction, with labels redacted.
///
/// Train-split problems keep their gold answers. With transduction enabled,
/// test-split queries join the pool but their gold answers are dropped here,
/// so no code downstream can see them. Dev problems never enter.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    problems: Vec<Problem>,
}

impl TrainingPool {
    pub fn new(problems: &[Problem], transduction: bool) -> Self {
        let problems = problems
            .iter()
            .filter_map(|p| match p.split {
                Split::Train => Some(p.clone()),
                Split::Test if transduction => Some(Problem {
                    gold_answer: None,
                    ..p.clone()
                }),
                _ => None,
            })
            .collect();
        TrainingPool { problems }
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Scores a response for the reward-model baseline.
pub trait RewardScorer {
    fn score(&self, sample: &ResponseSample) -> f64;
}

/// Everything `assemble_iteration_pairs` needs besides the data.
pub struct AssembleOptions<'a> {
    pub mode: PairMode,
    pub schedule: &'a ThresholdSchedule,
    pub iteration: usize,
    pub kind: ExtractorKind,
    pub seed: u64,
    pub reward: Option<&'a dyn RewardScorer>,
}

/// Build the pairs for one iteration, sorted by problem id.
pub fn assemble_iteration_pairs(
    pool: &TrainingPool,
    samples: &BTreeMap<String, ProblemSamples>,
    opts: &AssembleOptions<'_>,
) -> Result<Vec<PreferencePair>> {
    let ctx = PairContext {
        kind: opts.kind,
        tau: opts.schedule.at(opts.iteration),
        iteration: opts.iteration,
    };
    if opts.mode == PairMode::RewardModel && opts.reward.is_none() {
        return Err(Error::InvalidInput("reward-model mode needs a reward scorer".into()));
    }
    let gold_stream = derive_seed(opts.seed, "pairs/gold", opts.iteration as u64);

    let mut pairs = Vec::new();
    for problem in pool.problems() {
        let Some(ps) = samples.get(&problem.id) else {
            continue;
        };
        if ps.base.is_empty() {
            continue;
        }
        let gold = problem.gold_answer.as_deref();
        let use_gold = matches!(opts.mode, PairMode::SemiSupervised | PairMode::Gold);
        let pair = match (opts.mode, gold) {
            (_, Some(gold)) if use_gold => {
                build_gold_pair(&ctx, &ps.base, gold, problem_seed(gold_stream, &problem.id))
            }
            (PairMode::Gold, None) => None,
            (PairMode::RewardModel, _) => {
                let scorer = opts.reward.expect("checked above");
                let scores: Vec<f64> = ps.base.iter().map(|s| scorer.score(s)).collect();
                match build_rm_pair(&ctx, &ps.base, &scores) {
                    Ok(p) => Some(p),
                    Err(Error::DegeneratePool { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            (mode, _) => {
                let base_tally = tally_votes(
                    &ps.base,
                    opts.kind,
                    tally_seed(opts.seed, opts.iteration, Pool::Base, &problem.id),
                )?;
                let base = Tallied {
                    tally: &base_tally,
                    samples: &ps.base,
                };
                if mode == PairMode::LmsiTargets {
                    build_lmsi_target(&ctx, base)
                } else {
                    let high_tally = if ps.high.is_empty() {
                        None
                    } else {
                        Some(tally_votes(
                            &ps.high,
                            opts.kind,
                            tally_seed(opts.seed, opts.iteration, Pool::HighTemp, &problem.id),
                        )?)
                    };
                    let high = high_tally.as_ref().map(|tally| Tallied {
                        tally,
                        samples: &ps.high,
                    });
                    build_pair(&ctx, base, high)
                }
            }
        };
        pairs.extend(pair);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    pairs.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    Ok(pairs)
}
