//! Loss functions, the per-iteration optimizer and the full iterative loop.

mod experiments;
mod loss;
mod pipeline;
mod train;

pub use experiments::{replicate, somers_by_k, somers_table, sweep_point, sweep_tau, SomersRow, SweepPoint};
pub use loss::{lmsi_loss, pair_loss, scpo_loss, Gradient, LossConfig, Objective};
pub use pipeline::{
    answerable, evaluate, evaluation_gold, pairs_stage, run_pipeline, run_synthetic, sample_stage,
    sampling_pool, stage_seed, tally_stage, train_stage, GenerationStats, IterationReport,
    ModelArtifact, ModelMetrics, PairCounts, PipelineOutput,
};
pub use train::{train_iteration, LrSchedule, TrainConfig, TrainOutcome};
