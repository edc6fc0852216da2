//! Run configuration: one TOML file, every key optional.
//!
//! ```toml
//! seed = 7
//! k = 8
//! tau_schedule = ["0.5k", "0.7k"]
//! mode = "unsupervised"
//!
//! [train]
//! epochs = 10
//!
//! [task]
//! n_problems = 200
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{HttpConfig, SamplingSpec, SyntheticTaskSpec, HIGH_TEMPERATURE};
use crate::consistency::{ExtractorKind, Pool};
use crate::error::{Error, Result};
use crate::pairs::{PairMode, Threshold, ThresholdSchedule};
use crate::trainer::{LossConfig, Objective, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Http,
}

/// Few-shot self-generation of new training queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    /// New queries proposed per iteration; 0 disables generation.
    pub per_iteration: usize,
    pub n_shots: usize,
    /// Generated queries whose top answer falls below this are discarded.
    pub answerability: Threshold,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            per_iteration: 0,
            n_shots: 4,
            answerability: Threshold::Fraction(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Noise scale of the synthetic reward model; 1.5 mimics an out-of-distribution judge.
    pub sigma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { sigma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Base-pool size per query.
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub high_temperature: f64,
    /// Size of the high-temperature pool; 0 disables it.
    pub high_k: usize,
    pub tau_schedule: ThresholdSchedule,
    pub extractor: ExtractorKind,
    pub mode: PairMode,
    /// Admit test-split queries (never their labels) into the unlabeled pool.
    pub transduction: bool,
    pub backend: BackendKind,
    pub generation: GenerationConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub task: SyntheticTaskSpec,
    pub http: HttpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 8,
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 1024,
            high_temperature: HIGH_TEMPERATURE,
            high_k: 8,
            tau_schedule: ThresholdSchedule::default(),
            extractor: ExtractorKind::HashNumber,
            mode: PairMode::Unsupervised,
            transduction: false,
            backend: BackendKind::Synthetic,
            generation: GenerationConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
            task: SyntheticTaskSpec::default(),
            http: HttpConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let base = self.base_sampling(0);
        base.validate()?;
        if !(self.high_temperature > 0.0 && self.high_temperature.is_finite()) {
            return Err(Error::validation("high_temperature", "must be a finite value > 0"));
        }
        if self.tau_schedule.0.is_empty() {
            return Err(Error::validation("tau_schedule", "schedule is empty"));
        }
        if self.generation.per_iteration > 0 && self.generation.n_shots == 0 {
            return Err(Error::validation("generation.n_shots", "must be positive"));
        }
        if !(self.reward.sigma >= 0.0 && self.reward.sigma.is_finite()) {
            return Err(Error::validation("reward.sigma", "must be finite and >= 0"));
        }
        let lmsi_mode = self.mode == PairMode::LmsiTargets;
        if (self.loss.objective == Objective::Lmsi) != lmsi_mode {
            return Err(Error::validation(
                "loss.objective",
                "objective \"lmsi\" goes together with mode \"lmsi-targets\"",
            ));
        }
        if self.train.epochs == 0 {
            return Err(Error::validation("train.epochs", "must be positive"));
        }
        if self.train.iterations == 0 {
            return Err(Error::validation("train.iterations", "must be positive"));
        }
        self.loss.validate()?;
        self.train.validate()?;
        self.task.validate()?;
        self.http.validate()?;
        Ok(())
    }

    /// Sampling settings of the base pool at one seed.
    pub fn base_sampling(&self, seed: u64) -> SamplingSpec {
        SamplingSpec {
            n: self.k,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed,
            pool: Pool::Base,
        }
    }

    /// TOML text that parses back to this configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("config does not serialize: {e}")))
    }

    /// Short stable digest of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Parse and validate a configuration from TOML text.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        if let Some(key) = message
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
        {
            return Error::validation(key, "unknown key");
        }
        let (line, column) = e.span().map_or((0, 0), |span| line_col(text, span.start));
        Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}
