use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::BehaviorPolicy;
use crate::error::{Error, Result};
use crate::offline_rl::Policy;
use crate::rng;

use super::config::TrainConfig;
use super::eval::{compute_rstar, evaluate_bidder, evaluate_policy, EvalReport, RStar};
use super::rollout::model_return;
use super::train::{SeedContext, TrainingLog};

/// One trained and evaluated policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub lambda: f64,
    pub mixing_ratio: f64,
    pub report: EvalReport,
    pub log: TrainingLog,
}

/// Per-seed reference numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rstar: RStar,
    /// Ground-truth mean GMV of each behavior policy that generated the data.
    pub behavior_gmv: Vec<f64>,
}

impl SeedSummary {
    pub fn best_behavior_gmv(&self) -> f64 {
        self.behavior_gmv.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Aggregate over seeds for one `(lambda, mixing_ratio)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub mixing_ratio: f64,
    pub seeds: usize,
    pub r_over_rstar_mean: f64,
    pub r_over_rstar_std: f64,
    pub online_rate_mean: f64,
    pub gmv_mean: f64,
    pub cost_mean: f64,
    pub roi_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunRecord>,
    pub seeds: Vec<SeedSummary>,
}

pub fn summarize_seed(cfg: &TrainConfig, seed: u64) -> Result<SeedSummary> {
    let rstar = compute_rstar(&cfg.sim, &cfg.eval, seed)?;
    let behavior_gmv = cfg
        .data
        .behaviors
        .iter()
        .map(|b| {
            let mut bidder = BehaviorPolicy {
                params: *b,
                max_multiplier: cfg.sim.max_multiplier,
            };
            Ok(evaluate_bidder(&mut bidder, "behavior", &cfg.sim, &cfg.eval, seed, &rstar, None)?.gmv)
        })
        .collect::<Result<_>>()?;
    Ok(SeedSummary {
        seed,
        rstar,
        behavior_gmv,
    })
}

/// Trains with `lambda` and `mixing_ratio` on a prepared seed and evaluates
/// the result on the ground truth.
pub fn run_one(cfg: &TrainConfig, ctx: &SeedContext, rstar: &RStar, lambda: f64, mixing_ratio: f64) -> Result<(RunRecord, Policy)> {
    let mut run_cfg = cfg.clone();
    run_cfg.learner.lambda = lambda;
    run_cfg.trainer.mixing_ratio = mixing_ratio;
    let (learner, log) = ctx.train(&run_cfg)?;
    let reference = ctx.data.observations();
    let mut report = evaluate_policy(&learner.policy, &cfg.sim, &cfg.eval, ctx.seed, rstar, Some(&reference))?;
    report.label = format!("pemorl lambda={lambda} mixing={mixing_ratio}");
    Ok((
        RunRecord {
            seed: ctx.seed,
            lambda,
            mixing_ratio,
            report,
            log,
        },
        learner.policy,
    ))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn run_order(a: &RunRecord, b: &RunRecord) -> std::cmp::Ordering {
    b.mixing_ratio
        .total_cmp(&a.mixing_ratio)
        .then(a.lambda.total_cmp(&b.lambda))
        .then(a.seed.cmp(&b.seed))
}

/// Aggregates runs per `(lambda, mixing_ratio)`: larger mixing ratios first,
/// then ascending lambda.
pub fn aggregate(runs: &[RunRecord]) -> Vec<AblationRow> {
    let mut keys: Vec<(f64, f64)> = runs.iter().map(|r| (r.mixing_ratio, r.lambda)).collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .map(|(mixing_ratio, lambda)| {
            let sel: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.lambda == lambda && r.mixing_ratio == mixing_ratio)
                .collect();
            let pick = |f: &dyn Fn(&RunRecord) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (rm, rs) = mean_std(&pick(&|r| r.report.r_over_rstar));
            AblationRow {
                lambda,
                mixing_ratio,
                seeds: sel.len(),
                r_over_rstar_mean: rm,
                r_over_rstar_std: rs,
                online_rate_mean: mean_std(&pick(&|r| r.report.online_rate)).0,
                gmv_mean: mean_std(&pick(&|r| r.report.gmv)).0,
                cost_mean: mean_std(&pick(&|r| r.report.cost)).0,
                roi_mean: mean_std(&pick(&|r| r.report.roi)).0,
            }
        })
        .collect()
}

/// Full training and evaluation for every `(seed, lambda)` pair, plus one
/// run per seed without imaginary data when the config asks for it. Each seed
/// collects its data and fits its ensemble once; all runs share them. Seeds
/// run in parallel on the current rayon pool.
pub fn run_ablation(cfg: &TrainConfig, lambdas: &[f64], seeds: &[u64]) -> Result<AblationResult> {
    cfg.validate()?;
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one lambda and one seed".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("lambdas must be finite and >= 0".into()));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let per_seed: Vec<(SeedSummary, Vec<RunRecord>)> = seeds
        .par_iter()
        .map(|&seed| {
            let ctx = SeedContext::build(cfg, seed)?;
            let summary = summarize_seed(cfg, seed)?;
            let mut runs = sorted
                .iter()
                .map(|&l| Ok(run_one(cfg, &ctx, &summary.rstar, l, cfg.trainer.mixing_ratio)?.0))
                .collect::<Result<Vec<_>>>()?;
            if cfg.ablation.no_imaginary_baseline && cfg.trainer.mixing_ratio > 0.0 {
                runs.push(run_one(cfg, &ctx, &summary.rstar, cfg.learner.lambda, 0.0)?.0);
            }
            Ok((summary, runs))
        })
        .collect::<Result<_>>()?;
    let (summaries, runs): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    let mut runs: Vec<RunRecord> = runs.into_iter().flatten().collect();
    runs.sort_by(run_order);
    Ok(AblationResult {
        rows: aggregate(&runs),
        runs,
        seeds: summaries,
    })
}

/// Ground-truth return against model-evaluated penalized return for one
/// policy; `slack = model_return - ground_truth`, positive when the model
/// estimate fails to lower-bound the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub policy: String,
    pub ground_truth: f64,
    pub model_return: f64,
    pub slack: f64,
}

/// Checks whether the penalized model return lower-bounds the true return
/// for `policy` and `random` randomly initialized policies. Report only.
pub fn lower_bound_check(cfg: &TrainConfig, ctx: &SeedContext, rstar: &RStar, policy: &Policy, random: usize) -> Result<Vec<BoundRow>> {
    let mut candidates = vec![("final".to_string(), policy.clone())];
    let mut r = rng::stream(ctx.seed, "bound-check", 0);
    for k in 0..random {
        use rand::Rng as _;
        let init = r.random_range(0.1..0.9) * policy.w_max;
        let p = Policy::new(
            policy.scaler.clone(),
            cfg.learner.hidden,
            policy.w_max,
            init,
            cfg.learner.init_log_std,
            rng::derive_seed(ctx.seed, "random-policy", k as u64),
        )?;
        candidates.push((format!("random_{k}"), p));
    }
    candidates
        .into_iter()
        .map(|(name, p)| {
            let truth = evaluate_policy(&p, &cfg.sim, &cfg.eval, ctx.seed, rstar, None)?.gmv;
            let model = model_return(&ctx.ensemble, &p, &ctx.data, &cfg.sim, cfg.learner.lambda, cfg.eval.episodes, &mut r)?;
            Ok(BoundRow {
                policy: name,
                ground_truth: truth,
                model_return: model,
                slack: model - truth,
            })
        })
        .collect()
}
