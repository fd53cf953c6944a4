//! Outer training loop, ground-truth evaluation, baselines, model
//! comparison, the lambda ablation and report files.
//!
//! One training run alternates between fresh branched rollouts in the
//! ensemble (rewards penalized by `lambda` times the members' reward spread)
//! and critic/actor updates on minibatches mixing real and imaginary
//! transitions. Output columns are documented in `docs/outputs.md`.

mod ablation;
mod baselines;
mod compare;
mod config;
mod eval;
mod report;
mod rollout;
mod train;
#[cfg(test)]
mod tests;

pub use ablation::{
    aggregate, lower_bound_check, run_ablation, run_one, summarize_seed, AblationResult, AblationRow, BoundRow,
    RunRecord, SeedSummary,
};
pub use baselines::{train_baseline_model, BaselineKind, BaselineModel, GspProxy};
pub use compare::{compare_models, comparison_data, model_comparison, score_model, CompareRow, ModelScores};
pub use config::{AblationConfig, BaselineConfig, DataConfig, EvalConfig, TrainConfig, TrainerSettings};
pub use eval::{
    compute_rstar, evaluate_bidder, evaluate_policy, EpisodeRow, EvalReport, PolicyBidder, RStar,
    ONLINE_RATE_DEFINITION,
};
pub use report::{
    write_ablation_csv, write_ablation_runs_csv, write_eval_report, write_metrics_csv, write_model_compare_csv,
    ABLATION_FILE, ABLATION_RUNS_FILE, EVAL_REPORT_FILE, METRICS_FILE, MODEL_COMPARE_FILE, SCHEMA_VERSION,
};
pub use rollout::{model_return, rollout_imaginary, ImaginaryStep, Rollout};
pub use train::{
    collect_training_data, imaginary_rows, init_learner, mean_episode_return, pemorl_train, train_policy, IterationLog, RealCache,
    SeedContext, TrainingLog,
};
