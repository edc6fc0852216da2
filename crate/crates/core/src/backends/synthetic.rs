use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Backend, SampleBatch, SamplingSpec};
use crate::consistency::{extract_answer, ExtractorKind, Origin, Problem, ResponseSample, Split};
use crate::error::{Error, Result};
use crate::pairs::RewardScorer;
use crate::policy::{PolicyModel, PolicyResponse, PolicyRow};
use crate::seed::{derive_seed, problem_seed, rng_from};

/// Largest supported answer domain.
const MAX_DOMAIN: usize = 1000;

/// Answers are distinct integers below the smallest power of ten that holds
/// `domain` values, so a domain of 10 uses single-character answers.
fn answer_range(domain: usize) -> usize {
    let mut range = 10;
    while range < domain {
        range *= 10;
    }
    range
}

/// Floor on the probability mass given to a response group.
const MIN_MASS: f64 = 1e-12;

/// Low-margin problems on which the majority answer is wrong.
///
/// On a mixture problem the gold answer keeps a single rationale holding
/// `gold_mass`, so it is still the greedy choice, while one rival answer
/// holds `rival_mass > gold_mass` split evenly over two rationales and wins
/// most votes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMixture {
    pub fraction: f64,
    pub gold_mass: f64,
    pub rival_mass: f64,
}

impl Default for TaskMixture {
    fn default() -> Self {
        TaskMixture {
            fraction: 0.3,
            gold_mass: 0.35,
            rival_mass: 0.40,
        }
    }
}

/// The synthetic task distribution and the seed policy built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub n_problems: usize,
    /// Number of distinct answers per problem.
    pub answer_domain_size: usize,
    /// Seed-policy probability of the gold answer.
    pub skill: f64,
    /// Log-normal spread of the distractor masses.
    pub noise_spread: f64,
    pub rng_seed: u64,
    /// Per-problem spread of skill on the logit scale; 0 gives every problem exactly `skill`.
    pub difficulty_spread: f64,
    /// Number of rationales the gold answer's mass is split over.
    pub correct_rationales: usize,
    /// Log-normal spread of the split between gold rationales.
    pub rationale_spread: f64,
    /// Coupling of the shared scalar to gold-answer responses.
    pub transfer: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub mixture: Option<TaskMixture>,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            n_problems: 200,
            answer_domain_size: 10,
            skill: 0.45,
            noise_spread: 1.0,
            rng_seed: 0,
            difficulty_spread: 0.0,
            correct_rationales: 4,
            rationale_spread: 0.5,
            transfer: 0.2,
            dev_fraction: 0.1,
            test_fraction: 0.3,
            mixture: None,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let v = |key: &str, msg: &str| Err(Error::validation(&format!("task.{key}"), msg));
        if self.n_problems == 0 {
            return v("n_problems", "must be positive");
        }
        if !(2..=MAX_DOMAIN).contains(&self.answer_domain_size) {
            return v("answer_domain_size", "must lie in 2..=1000");
        }
        if !(self.skill > 0.0 && self.skill <= 1.0) {
            return v("skill", "must lie in (0, 1]");
        }
        if !(self.noise_spread >= 0.0 && self.noise_spread.is_finite()) {
            return v("noise_spread", "must be finite and >= 0");
        }
        if !(self.difficulty_spread >= 0.0 && self.difficulty_spread.is_finite()) {
            return v("difficulty_spread", "must be finite and >= 0");
        }
        if !(self.rationale_spread >= 0.0 && self.rationale_spread.is_finite()) {
            return v("rationale_spread", "must be finite and >= 0");
        }
        if self.correct_rationales == 0 {
            return v("correct_rationales", "must be positive");
        }
        if !self.transfer.is_finite() {
            return v("transfer", "must be finite");
        }
        let fractions_ok = (0.0..1.0).contains(&self.dev_fraction)
            && (0.0..1.0).contains(&self.test_fraction)
            && self.dev_fraction + self.test_fraction < 1.0;
        if !fractions_ok {
            return v("test_fraction", "dev and test fractions must leave a train split");
        }
        if let Some(m) = self.mixture {
            if !(0.0..=1.0).contains(&m.fraction) {
                return v("mixture.fraction", "must lie in [0, 1]");
            }
            if self.answer_domain_size < 3 {
                return v("answer_domain_size", "a mixture needs at least 3 answers");
            }
            if !(m.gold_mass > 0.0 && m.rival_mass > 0.0 && m.gold_mass + m.rival_mass < 1.0) {
                return v("mixture.rival_mass", "gold and rival masses must be positive and sum below 1");
            }
        }
        Ok(())
    }

    fn split_of(&self, index: usize) -> Split {
        let n = self.n_problems;
        let n_train = n - (n as f64 * self.dev_fraction) as usize - (n as f64 * self.test_fraction) as usize;
        let n_dev = (n as f64 * self.dev_fraction) as usize;
        if index < n_train {
            Split::Train
        } else if index < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        }
    }

    /// One problem's candidate responses and its gold answer.
    fn draw_row(&self, rng: &mut ChaCha8Rng) -> (PolicyRow, String) {
        let mixed = match self.mixture {
            Some(m) => rng.random::<f64>() < m.fraction,
            None => false,
        };
        let answers: Vec<String> = sample_indices(rng, answer_range(self.answer_domain_size), self.answer_domain_size)
            .into_iter()
            .map(|a| a.to_string())
            .collect();
        let gold = answers[0].clone();

        // (answer index, mass) per rationale, gold first.
        let mut paths: Vec<(usize, f64)> = Vec::new();
        if let (true, Some(m)) = (mixed, self.mixture) {
            paths.push((0, m.gold_mass));
            paths.push((1, m.rival_mass / 2.0));
            paths.push((1, m.rival_mass / 2.0));
            let rest = 1.0 - m.gold_mass - m.rival_mass;
            let w = lognormal_weights(rng, self.answer_domain_size - 2, self.noise_spread);
            paths.extend(w.iter().enumerate().map(|(i, w)| (i + 2, rest * w)));
        } else {
            let skill = self.problem_skill(rng);
            let wg = lognormal_weights(rng, self.correct_rationales, self.rationale_spread);
            paths.extend(wg.iter().map(|w| (0, skill * w)));
            let wd = lognormal_weights(rng, self.answer_domain_size - 1, self.noise_spread);
            let rest = (1.0 - skill).max(MIN_MASS);
            paths.extend(wd.iter().enumerate().map(|(i, w)| (i + 1, rest * w)));
        }

        let responses = paths
            .iter()
            .enumerate()
            .map(|(j, &(a, _))| PolicyResponse {
                text: format!("rationale stub {j}\n#### {}", answers[a]),
                answer: answers[a].clone(),
                feature: if a == 0 { 1.0 } else { 0.0 },
            })
            .collect();
        let logits = paths.iter().map(|&(_, mass)| mass.max(MIN_MASS).ln()).collect();
        let row = PolicyRow::new(responses, logits).expect("rows are non-empty and finite");
        (row, gold)
    }

    fn problem_skill(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.difficulty_spread == 0.0 || self.skill >= 1.0 {
            return self.skill;
        }
        let z: f64 = rng.sample(StandardNormal);
        let logit = (self.skill / (1.0 - self.skill)).ln() + self.difficulty_spread * z;
        1.0 / (1.0 + (-logit).exp())
    }
}

/// `n` positive weights summing to 1 with log-normal spread `sigma`.
fn lognormal_weights(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (sigma * z).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// A materialized synthetic task: labeled problems and the seed policy `M_0`.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub problems: Vec<Problem>,
    pub policy: PolicyModel,
}

impl SyntheticTask {
    pub fn build(spec: &SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from(derive_seed(spec.rng_seed, "task", 0));
        let mut policy = PolicyModel::new(spec.transfer);
        let mut problems = Vec::with_capacity(spec.n_problems);
        for i in 0..spec.n_problems {
            let id = format!("syn-{i:04}");
            let (row, gold) = spec.draw_row(&mut rng);
            problems.push(Problem {
                text: format!("Problem {id}: find the hidden value."),
                id: id.clone(),
                gold_answer: Some(gold),
                split: spec.split_of(i),
                origin: Origin::Seed,
            });
            policy.insert_row(id, row);
        }
        Ok(SyntheticTask {
            spec: spec.clone(),
            problems,
            policy,
        })
    }
}

/// Backend that samples from a [`PolicyModel`] and draws new problems from a
/// task distribution.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    pub policy: PolicyModel,
    spec: SyntheticTaskSpec,
    /// Gold answers of generated problems; never exposed as problem labels.
    hidden_gold: BTreeMap<String, String>,
}

impl SyntheticBackend {
    pub fn new(task: &SyntheticTask) -> Self {
        SyntheticBackend {
            policy: task.policy.clone(),
            spec: task.spec.clone(),
            hidden_gold: BTreeMap::new(),
        }
    }

    pub fn from_policy(policy: PolicyModel, spec: SyntheticTaskSpec) -> Self {
        SyntheticBackend {
            policy,
            spec,
            hidden_gold: BTreeMap::new(),
        }
    }

    pub fn hidden_gold(&self) -> &BTreeMap<String, String> {
        &self.hidden_gold
    }
}

impl Backend for SyntheticBackend {
    fn sample_responses(&self, problem: &Problem, spec: &SamplingSpec) -> Result<SampleBatch> {
        spec.validate()?;
        let row = self.policy.row(&problem.id)?;
        let probs = self.policy.sampling_probs(&problem.id, spec.temperature, spec.top_p)?;
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = rng_from(problem_seed(spec.seed, &problem.id));
        let samples = (0..spec.n)
            .map(|idx| {
                let response = &row.responses[dist.sample(&mut rng)];
                ResponseSample {
                    problem_id: problem.id.clone(),
                    sample_idx: idx,
                    pool: spec.pool,
                    temperature: spec.temperature,
                    text: response.text.clone(),
                    answer: extract_answer(&response.text, ExtractorKind::HashNumber),
                }
            })
            .collect();
        Ok(SampleBatch {
            samples,
            truncated: Vec::new(),
            model: None,
        })
    }

    fn generate_queries(
        &mut self,
        seed_problems: &[Problem],
        n_shots: usize,
        count: usize,
        spec: &SamplingSpec,
    ) -> Result<Vec<Problem>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if n_shots == 0 || n_shots > seed_problems.len() {
            return Err(Error::InvalidInput(format!(
                "n_shots = {n_shots} needs 1..={} seed problems",
                seed_problems.len()
            )));
        }
        let mut rng = rng_from(derive_seed(spec.seed, "generate", 0));
        let tag = (spec.seed ^ (spec.seed >> 32)) as u32;
        let mut out = Vec::with_capacity(count);
        for j in 0..count {
            // Exemplar choice mirrors the served-model path; the synthetic
            // draw itself depends only on the task distribution.
            let _exemplars = sample_indices(&mut rng, seed_problems.len(), n_shots);
            let id = format!("gen-{tag:08x}-{j:04}");
            let (row, gold) = self.spec.draw_row(&mut rng);
            let text = format!("Problem {id}: find the hidden value.");
            if seed_problems.iter().any(|p| p.text == text) {
                continue;
            }
            self.policy.insert_row(id.clone(), row);
            self.hidden_gold.insert(id.clone(), gold);
            out.push(Problem::generated(id, text, Split::Train));
        }
        Ok(out)
    }

    fn greedy_answer(&self, problem: &Problem) -> Result<Option<String>> {
        Ok(Some(self.policy.greedy(&problem.id)?.answer.clone()))
    }
}

/// Reward model that scores a response `1{answer is gold} + N(0, sigma^2)`.
///
/// The noise for a given (problem, pool, sample) is fixed by `seed`, so
/// repeated scoring is deterministic.
#[derive(Debug, Clone)]
pub struct NoisyRewardModel {
    pub sigma: f64,
    pub seed: u64,
    gold: BTreeMap<String, String>,
}

impl NoisyRewardModel {
    pub fn new(sigma: f64, seed: u64, gold: BTreeMap<String, String>) -> Self {
        NoisyRewardModel { sigma, seed, gold }
    }

    pub fn from_problems<'a>(
        sigma: f64,
        seed: u64,
        problems: impl IntoIterator<Item = &'a Problem>,
        hidden: &BTreeMap<String, String>,
    ) -> Self {
        let mut gold: BTreeMap<String, String> = hidden.clone();
        for p in problems {
            if let Some(g) = &p.gold_answer {
                gold.insert(p.id.clone(), g.clone());
            }
        }
        NoisyRewardModel::new(sigma, seed, gold)
    }
}

impl RewardScorer for NoisyRewardModel {
    fn score(&self, sample: &ResponseSample) -> f64 {
        let correct = match (&sample.answer, self.gold.get(&sample.problem_id)) {
            (Some(a), Some(g)) => a == g,
            _ => false,
        };
        let label = match sample.pool {
            crate::consistency::Pool::Base => "rm/base",
            crate::consistency::Pool::HighTemp => "rm/high",
        };
        let stream = derive_seed(problem_seed(self.seed, &sample.problem_id), label, sample.sample_idx as u64);
        let z: f64 = rng_from(stream).sample(StandardNormal);
        f64::from(u8::from(correct)) + self.sigma * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{tally_votes, Pool};

    fn small_spec() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            n_problems: 20,
            ..SyntheticTaskSpec::default()
        }
    }

    #[test]
    fn seed_policy_puts_skill_on_gold() {
        let task = SyntheticTask::build(&small_spec()).unwrap();
        for p in &task.problems {
            let lp = task.policy.toy_logprob(&p.id, p.gold_answer.as_deref().unwrap()).unwrap();
            assert!((lp.exp() - 0.45).abs() < 1e-6);
            assert_eq!(task.policy.answer_domain(&p.id).unwrap().len(), 10);
        }
        let splits: Vec<Split> = task.problems.iter().map(|p| p.split).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 12);
        assert_eq!(splits.iter().filter(|s| **s == Split::Dev).count(), 2);
        assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 6);
    }

    #[test]
    fn full_skill_is_degenerate() {
        let spec = SyntheticTaskSpec {
            skill: 1.0,
            ..small_spec()
        };
        let task = SyntheticTask::build(&spec).unwrap();
        let backend = SyntheticBackend::new(&task);
        let p = &task.problems[0];
        let batch = backend.sample_responses(p, &SamplingSpec::default()).unwrap();
        assert_eq!(batch.samples.len(), 8);
        assert!(batch.samples.iter().all(|s| s.answer == p.gold_answer));
    }

    #[test]
    fn sampling_is_seeded_and_ordered() {
        let task = SyntheticTask::build(&small_spec()).unwrap();
        let backend = SyntheticBackend::new(&task);
        let spec = SamplingSpec {
            seed: 9,
            ..SamplingSpec::default()
        };
        let a = backend.sample_responses(&task.problems[3], &spec).unwrap();
        let b = backend.sample_responses(&task.problems[3], &spec).unwrap();
        assert_eq!(a, b);
        let idx: Vec<usize> = a.samples.iter().map(|s| s.sample_idx).collect();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
        assert!(a.samples.iter().all(|s| s.pool == Pool::Base && s.answer.is_some()));
    }

    #[test]
    fn chi_square_against_softmax() {
        let spec = SyntheticTaskSpec {
            n_problems: 1,
            dev_fraction: 0.0,
            test_fraction: 0.0,
            ..SyntheticTaskSpec::default()
        };
        let task = SyntheticTask::build(&spec).unwrap();
        let backend = SyntheticBackend::new(&task);
        let problem = &task.problems[0];
        let row = task.policy.row(&problem.id).unwrap();
        // 13 responses: 4 gold rationales plus 9 distractors; df = 12.
        assert_eq!(row.responses.len(), 13);
        let n = 100_000;
        let sampling = SamplingSpec {
            n,
            temperature: 1.0,
            top_p: 1.0,
            seed: 4,
            ..SamplingSpec::default()
        };
        let batch = backend.sample_responses(problem, &sampling).unwrap();
        let mut counts = vec![0usize; row.responses.len()];
        for s in &batch.samples {
            let j = row.responses.iter().position(|r| r.text == s.text).unwrap();
            counts[j] += 1;
        }
        let probs = task.policy.sampling_probs(&problem.id, 1.0, 1.0).unwrap();
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // Upper 0.001 quantile of chi-square with 12 degrees of freedom.
        assert!(chi2 < 32.909, "chi2 = {chi2}");
    }

    #[test]
    fn uniform_max_vote_share_matches_enumeration() {
        // A = 3 uniform answers, k = 4: enumerate all 81 sequences.
        let mut exact = 0.0;
        for code in 0..81u32 {
            let mut counts = [0u32; 3];
            let mut c = code;
            for _ in 0..4 {
                counts[(c % 3) as usize] += 1;
                c /= 3;
            }
            exact += f64::from(*counts.iter().max().unwrap()) / 4.0 / 81.0;
        }
        let policy = PolicyModel::tabular([("p", vec![("1", 0.0), ("2", 0.0), ("3", 0.0)])]).unwrap();
        let backend = SyntheticBackend::from_policy(policy, SyntheticTaskSpec::default());
        let problem = Problem {
            id: "p".into(),
            text: String::new(),
            gold_answer: None,
            split: Split::Train,
            origin: Origin::Seed,
        };
        let trials = 20_000;
        let mut total = 0.0;
        for t in 0..trials {
            let spec = SamplingSpec {
                n: 4,
                top_p: 1.0,
                temperature: 1.0,
                seed: t,
                ..SamplingSpec::default()
            };
            let batch = backend.sample_responses(&problem, &spec).unwrap();
            total += tally_votes(&batch.samples, ExtractorKind::HashNumber, 0).unwrap().top_share();
        }
        let mc = total / trials as f64;
        // exact = 0.5833..., Monte-Carlo standard error is about 0.001.
        assert!((mc - exact).abs() < 0.006, "mc {mc} vs exact {exact}");
    }

    #[test]
    fn generated_problems_are_fresh_and_unlabeled() {
        let task = SyntheticTask::build(&small_spec()).unwrap();
        let mut backend = SyntheticBackend::new(&task);
        let spec = SamplingSpec::default();
        assert!(backend.generate_queries(&task.problems, 4, 0, &spec).unwrap().is_empty());
        let generated = backend.generate_queries(&task.problems, 4, 5, &spec).unwrap();
        assert_eq!(generated.len(), 5);
        for p in &generated {
            assert_eq!(p.origin, Origin::Generated);
            assert!(p.gold_answer.is_none());
            assert!(!task.problems.iter().any(|s| s.id == p.id));
            assert!(backend.policy.row(&p.id).is_ok());
            assert!(backend.hidden_gold().contains_key(&p.id));
        }
        assert!(backend.generate_queries(&task.problems[..2], 4, 1, &spec).is_err());
    }

    #[test]
    fn mixture_rival_wins_votes_but_not_greedy() {
        let spec = SyntheticTaskSpec {
            mixture: Some(TaskMixture {
                fraction: 1.0,
                ..TaskMixture::default()
            }),
            ..small_spec()
        };
        let task = SyntheticTask::build(&spec).unwrap();
        for p in &task.problems {
            let gold = p.gold_answer.as_deref().unwrap();
            assert_eq!(task.policy.greedy(&p.id).unwrap().answer, gold);
            assert!((task.policy.toy_logprob(&p.id, gold).unwrap().exp() - 0.35).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_noise_is_deterministic() {
        let rm = NoisyRewardModel::new(1.5, 3, BTreeMap::from([("p".to_string(), "4".to_string())]));
        let s = ResponseSample {
            problem_id: "p".into(),
            sample_idx: 2,
            pool: Pool::Base,
            temperature: 0.7,
            text: "x\n#### 4".into(),
            answer: Some("4".into()),
        };
        assert_eq!(rm.score(&s), rm.score(&s));
        let clean = NoisyRewardModel::new(0.0, 3, BTreeMap::from([("p".to_string(), "4".to_string())]));
        assert_eq!(clean.score(&s), 1.0);
    }
}
