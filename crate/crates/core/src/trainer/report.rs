use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::ablation::{AblationRow, BoundRow, RunRecord, SeedSummary};
use super::compare::CompareRow;
use super::eval::{EvalReport, ONLINE_RATE_DEFINITION};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_RUNS_FILE: &str = "ablation_runs.csv";
pub const MODEL_COMPARE_FILE: &str = "model_compare.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const SCHEMA_VERSION: u32 = 1;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, config_hash: &str, runs: &[RunRecord]) -> Result<()> {
    let header = [
        "config_hash", "seed", "lambda", "mixing_ratio", "iteration", "q_loss", "policy_loss", "model_return",
        "mean_sigma", "mean_action", "imaginary",
    ];
    let rows = runs.iter().flat_map(|run| {
        run.log.iterations.iter().map(move |it| {
            vec![
                config_hash.to_string(),
                run.seed.to_string(),
                f(run.lambda),
                f(run.mixing_ratio),
                it.iteration.to_string(),
                f(it.q_loss),
                f(it.policy_loss),
                f(it.model_return),
                f(it.mean_sigma),
                f(it.mean_action),
                it.imaginary.to_string(),
            ]
        })
    });
    write_rows(path, &header, rows)
}

pub fn write_ablation_csv(path: &Path, config_hash: &str, rows: &[AblationRow]) -> Result<()> {
    let header = [
        "config_hash", "lambda", "mixing_ratio", "seeds", "r_over_rstar_mean", "r_over_rstar_std", "online_rate_mean", "gmv_mean",
        "cost_mean", "roi_mean",
    ];
    write_rows(
        path,
        &header,
        rows.iter().map(|r| {
            vec![
                config_hash.to_string(),
                f(r.lambda),
                f(r.mixing_ratio),
                r.seeds.to_string(),
                f(r.r_over_rstar_mean),
                f(r.r_over_rstar_std),
                f(r.online_rate_mean),
                f(r.gmv_mean),
                f(r.cost_mean),
                f(r.roi_mean),
            ]
        }),
    )
}

pub fn write_ablation_runs_csv(path: &Path, config_hash: &str, runs: &[RunRecord], seeds: &[SeedSummary]) -> Result<()> {
    let header = [
        "config_hash", "seed", "lambda", "mixing_ratio", "r_over_rstar", "online_rate", "gmv", "cost", "roi", "r_star",
        "best_behavior_gmv", "wasserstein_to_dr", "iterations", "converged",
    ];
    let best = |seed: u64| seeds.iter().find(|s| s.seed == seed).map(SeedSummary::best_behavior_gmv);
    write_rows(
        path,
        &header,
        runs.iter().map(|r| {
            vec![
                config_hash.to_string(),
                r.seed.to_string(),
                f(r.lambda),
                f(r.mixing_ratio),
                f(r.report.r_over_rstar),
                f(r.report.online_rate),
                f(r.report.gmv),
                f(r.report.cost),
                f(r.report.roi),
                f(r.report.r_star),
                opt(best(r.seed)),
                opt(r.report.wasserstein_to_dr),
                r.log.iterations.len().to_string(),
                r.log.converged.to_string(),
            ]
        }),
    )
}

/// `rows` pairs each comparison row with the seed it was computed for.
pub fn write_model_compare_csv(path: &Path, config_hash: &str, rows: &[(u64, CompareRow)]) -> Result<()> {
    let header = ["config_hash", "seed", "model", "train_mae", "train_mse", "test_mae", "test_mse", "gap"];
    write_rows(
        path,
        &header,
        rows.iter().map(|(seed, r)| {
            vec![
                config_hash.to_string(),
                seed.to_string(),
                r.model.clone(),
                f(r.train_mae),
                f(r.train_mse),
                f(r.test_mae),
                f(r.test_mse),
                f(r.gap),
            ]
        }),
    )
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    schema_version: u32,
    config_hash: &'a str,
    online_rate_definition: &'a str,
    reports: &'a [EvalReport],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    lower_bound_check: &'a [BoundRow],
}

pub fn write_eval_report(path: &Path, config_hash: &str, reports: &[EvalReport], bounds: &[BoundRow]) -> Result<()> {
    let doc = EvalDocument {
        schema_version: SCHEMA_VERSION,
        config_hash,
        online_rate_definition: ONLINE_RATE_DEFINITION,
        reports,
        lower_bound_check: bounds,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
