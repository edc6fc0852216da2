//! Sources of sampled responses: a synthetic task world and a served model.

mod http;
pub mod prompts;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::consistency::{extract_answer, ExtractorKind, Pool, Problem, ResponseSample};
use crate::error::{Error, Result};

pub use http::{HttpBackend, HttpConfig};
pub use prompts::{PromptStyle, PromptTemplate};
pub use synthetic::{NoisyRewardModel, SyntheticBackend, SyntheticTask, SyntheticTaskSpec, TaskMixture};

/// Temperature of the extra pool that only supplies rejected responses.
pub const HIGH_TEMPERATURE: f64 = 1.2;

/// How to draw `n` responses for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: u64,
    /// Pool tag written into every produced sample.
    pub pool: Pool,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            n: 8,
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 1024,
            seed: 0,
            pool: Pool::Base,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("k", "must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("temperature", "must be a finite value > 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::validation("top_p", "must lie in (0, 1]"));
        }
        if self.max_tokens == 0 {
            return Err(Error::validation("max_tokens", "must be positive"));
        }
        Ok(())
    }
}

/// Responses for one problem plus per-call metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    /// Exactly `n` samples with `sample_idx = 0..n` in request order.
    pub samples: Vec<ResponseSample>,
    /// `sample_idx` values whose generation hit the token limit.
    pub truncated: Vec<usize>,
    /// Model identifier reported by the server, when there is one.
    pub model: Option<String>,
}

pub trait Backend {
    fn sample_responses(&self, problem: &Problem, spec: &SamplingSpec) -> Result<SampleBatch>;

    /// Few-shot self-generation of `count` new unlabeled problems.
    fn generate_queries(
        &mut self,
        seed_problems: &[Problem],
        n_shots: usize,
        count: usize,
        spec: &SamplingSpec,
    ) -> Result<Vec<Problem>>;

    /// Deterministic single answer (argmax or temperature 0).
    fn greedy_answer(&self, problem: &Problem) -> Result<Option<String>>;
}

/// Samples for every problem: a base pool drawn with `base`, plus a pool
/// drawn with `high` for problems whose base pool holds fewer than two
/// distinct parsed answers (the only case in which that pool is consulted).
pub fn sample_pools(
    backend: &dyn Backend,
    problems: &[Problem],
    base: &SamplingSpec,
    high: Option<&SamplingSpec>,
    kind: ExtractorKind,
) -> Result<Vec<ResponseSample>> {
    let mut out = Vec::new();
    for problem in problems {
        let batch = backend.sample_responses(problem, base)?.samples;
        let mut distinct: Vec<String> = batch.iter().filter_map(|s| extract_answer(&s.text, kind)).collect();
        distinct.sort();
        distinct.dedup();
        out.extend(batch);
        if let Some(high) = high.filter(|_| distinct.len() < 2) {
            out.extend(backend.sample_responses(problem, high)?.samples);
        }
    }
    Ok(out)
}
