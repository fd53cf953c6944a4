//! `pemorl` command-line driver.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pemorl_core::config::{self, RunConfig};
use pemorl_core::dataset::{read_jsonl, write_jsonl, DataSet};
use pemorl_core::env_model::{EnsembleModel, ModelKind, ModelSpec};
use pemorl_core::rng;
use pemorl_core::trainer::{
    collect_training_data, comparison_data, compute_rstar, evaluate_policy, lower_bound_check, model_comparison,
    run_ablation, run_one, summarize_seed, write_ablation_csv, write_ablation_runs_csv, write_eval_report,
    write_metrics_csv, write_model_compare_csv, RealCache, SeedContext, ABLATION_FILE, ABLATION_RUNS_FILE,
    EVAL_REPORT_FILE, METRICS_FILE, MODEL_COMPARE_FILE,
};
use pemorl_core::{Error, Policy, Result};

const REAL_DATA_FILE: &str = "real.jsonl";
const TEST_DATA_FILE: &str = "test.jsonl";
const MODEL_DIR: &str = "model";
const MODEL_LOG_FILE: &str = "model_training.json";
const POLICY_FILE: &str = "policy.bin";
/// Random policies included in the lower-bound check.
const BOUND_CHECK_RANDOM: usize = 3;

#[derive(Parser, Debug)]
#[command(name = "pemorl", version, about = "Permutation-equivariant model-based offline RL for auto-bidding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect offline data from the ground-truth simulator.
    GenData(Common),
    /// Fit the ensemble environment model.
    TrainModel {
        #[command(flatten)]
        common: Common,
        /// Offline data (JSONL); generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a bidding policy against the ensemble and evaluate it.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Saved ensemble directory; trained from the data when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Penalty coefficient (overrides `learner.lambda`).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate a saved policy on the ground-truth simulator.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        /// Offline data used as the trajectory-distance reference.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Penalty-coefficient ablation over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Number of seeds, counted up from the global seed.
        #[arg(long)]
        seeds: Option<usize>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the PE model with the non-equivariant and analytic baselines.
    CompareModels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize ablation and comparison CSVs and write a gnuplot script.
    Report {
        /// Directory holding ablation.csv and/or model_compare.csv.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => config::load(path)?,
        None => RunConfig::default(),
    };
    config::apply_seed_env(&mut cfg, std::env::var(config::SEED_ENV).ok().as_deref())?;
    Ok(cfg)
}

/// Validates the final config and records it in the output directory.
fn finish_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    config::write_resolved(cfg, out)
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {j} workers: {e}")))?;
    }
    Ok(())
}

fn load_or_collect(cfg: &RunConfig, data: Option<&Path>) -> Result<DataSet> {
    match data {
        Some(path) => {
            let ds = read_jsonl(path)?;
            if ds.meta.n != cfg.sim.n_advertisers || ds.meta.horizon != cfg.sim.horizon {
                return Err(Error::InvalidArgument(format!(
                    "{}: data has N={} T={} but the config says N={} T={}",
                    path.display(),
                    ds.meta.n,
                    ds.meta.horizon,
                    cfg.sim.n_advertisers,
                    cfg.sim.horizon
                )));
            }
            Ok(ds)
        }
        None => collect_training_data(cfg, cfg.seed),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = resolve(&common)?;
            finish_config(&cfg, &common.out)?;
            let hash = cfg.hash();
            let (mut train, test) = if cfg.data.test_behaviors.is_empty() || cfg.data.test_episodes == 0 {
                (collect_training_data(&cfg, cfg.seed)?, None)
            } else {
                let (a, b) = comparison_data(&cfg, cfg.seed)?;
                (a, Some(b))
            };
            train.meta.config_hash = hash.clone();
            write_jsonl(&train, &common.out.join(REAL_DATA_FILE))?;
            if let Some(mut test) = test {
                test.meta.config_hash = hash;
                write_jsonl(&test, &common.out.join(TEST_DATA_FILE))?;
            }
            println!("wrote {} transitions to {}", train.len(), common.out.join(REAL_DATA_FILE).display());
        }
        Command::TrainModel { common, data } => {
            let cfg = resolve(&common)?;
            finish_config(&cfg, &common.out)?;
            let ds = load_or_collect(&cfg, data.as_deref())?;
            let spec = ModelSpec::new(ModelKind::Pe, ds.meta.ds, ds.meta.n, &cfg.model)?;
            let (ens, logs) = EnsembleModel::train(&ds, &spec, rng::derive_seed(cfg.seed, "ensemble", 0))?;
            ens.save(&common.out.join(MODEL_DIR))?;
            write_json(
                &common.out.join(MODEL_LOG_FILE),
                &serde_json::json!({ "config_hash": cfg.hash(), "members": logs }),
            )?;
            println!("saved {}-member ensemble to {}", ens.k(), common.out.join(MODEL_DIR).display());
        }
        Command::TrainPolicy {
            common,
            data,
            model,
            lambda,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(l) = lambda {
                cfg.learner.lambda = l;
            }
            finish_config(&cfg, &common.out)?;
            let ds = load_or_collect(&cfg, data.as_deref())?;
            let ctx = match model {
                Some(dir) => {
                    let ensemble = EnsembleModel::load(&dir)?;
                    let cache = RealCache::new(&ensemble, &ds)?;
                    SeedContext {
                        seed: cfg.seed,
                        data: ds,
                        ensemble,
                        cache,
                    }
                }
                None => SeedContext::from_data(&cfg, ds, cfg.seed)?,
            };
            let summary = summarize_seed(&cfg, cfg.seed)?;
            let (record, policy) = run_one(&cfg, &ctx, &summary.rstar, cfg.learner.lambda, cfg.trainer.mixing_ratio)?;
            let hash = cfg.hash();
            policy.save(&common.out.join(POLICY_FILE))?;
            write_metrics_csv(&common.out.join(METRICS_FILE), &hash, std::slice::from_ref(&record))?;
            let bounds = lower_bound_check(&cfg, &ctx, &summary.rstar, &policy, BOUND_CHECK_RANDOM)?;
            write_eval_report(&common.out.join(EVAL_REPORT_FILE), &hash, &[record.report.clone()], &bounds)?;
            println!(
                "lambda {}: GMV {:.3}, R/R* {:.3}, online rate {:.3}",
                record.lambda, record.report.gmv, record.report.r_over_rstar, record.report.online_rate
            );
        }
        Command::Eval { common, policy, data } => {
            let cfg = resolve(&common)?;
            finish_config(&cfg, &common.out)?;
            let p = Policy::load(&policy)?;
            let reference = match data {
                Some(path) => Some(read_jsonl(&path)?.observations()),
                None => None,
            };
            let rstar = compute_rstar(&cfg.sim, &cfg.eval, cfg.seed)?;
            let mut report = evaluate_policy(&p, &cfg.sim, &cfg.eval, cfg.seed, &rstar, reference.as_deref())?;
            report.label = policy.display().to_string();
            write_eval_report(&common.out.join(EVAL_REPORT_FILE), &cfg.hash(), std::slice::from_ref(&report), &[])?;
            println!(
                "GMV {:.3}, cost {:.3}, ROI {:.3}, R/R* {:.3}, online rate {:.3}",
                report.gmv, report.cost, report.roi, report.r_over_rstar, report.online_rate
            );
        }
        Command::Ablate {
            common,
            lambdas,
            seeds,
            jobs,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(l) = lambdas {
                cfg.ablation.lambdas = l;
            }
            if let Some(s) = seeds {
                cfg.ablation.seeds = s;
            }
            finish_config(&cfg, &common.out)?;
            set_jobs(jobs)?;
            let res = run_ablation(&cfg, &cfg.ablation.lambdas, &cfg.ablation.seed_list(cfg.seed))?;
            let hash = cfg.hash();
            write_ablation_csv(&common.out.join(ABLATION_FILE), &hash, &res.rows)?;
            write_ablation_runs_csv(&common.out.join(ABLATION_RUNS_FILE), &hash, &res.runs, &res.seeds)?;
            write_metrics_csv(&common.out.join(METRICS_FILE), &hash, &res.runs)?;
            let reports: Vec<_> = res.runs.iter().map(|r| r.report.clone()).collect();
            write_eval_report(&common.out.join(EVAL_REPORT_FILE), &hash, &reports, &[])?;
            for row in &res.rows {
                println!(
                    "lambda {} mixing {}: R/R* {:.3} ± {:.3} over {} seeds",
                    row.lambda, row.mixing_ratio, row.r_over_rstar_mean, row.r_over_rstar_std, row.seeds
                );
            }
        }
        Command::CompareModels { common, seeds, jobs } => {
            let mut cfg = resolve(&common)?;
            if let Some(s) = seeds {
                cfg.ablation.seeds = s;
            }
            finish_config(&cfg, &common.out)?;
            set_jobs(jobs)?;
            let seed_list = cfg.ablation.seed_list(cfg.seed);
            if seed_list.is_empty() {
                return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
            }
            let per_seed: Vec<Vec<_>> = seed_list
                .par_iter()
                .map(|&s| Ok(model_comparison(&cfg, s)?.into_iter().map(|r| (s, r)).collect()))
                .collect::<Result<_>>()?;
            let rows: Vec<_> = per_seed.into_iter().flatten().collect();
            write_model_compare_csv(&common.out.join(MODEL_COMPARE_FILE), &cfg.hash(), &rows)?;
            for (s, r) in &rows {
                println!("seed {s} {}: test MAE {:.5}, gap {:.5}", r.model, r.test_mae, r.gap);
            }
        }
        Command::Report { input, out } => {
            let written = report::write_report(&input, &out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
