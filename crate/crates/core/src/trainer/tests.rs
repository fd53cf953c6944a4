use super::*;
use crate::auction::{BehaviorParams, ConstantPolicy, SimConfig};
use crate::dataset::{collect_real_data, DataSet, TransitionKind};
use crate::diffcore::Tensor;
use crate::env_model::{EnvModel, ModelConfig};
use crate::equivariance::{check_equivariance, Symmetry};
use crate::env_model::ModelSetFunction;
use crate::offline_rl::{ActMode, ObsScaler, Policy};
use crate::rng;

fn tiny() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.sim.horizon = 4;
    c.sim.impressions_mean = 6.0;
    c.sim.rep_budget = 10.0;
    c.sim.background_budget = 30.0;
    c.data.episodes = 6;
    c.data.test_episodes = 2;
    c.model = ModelConfig {
        embed_dim: 8,
        heads: 2,
        hidden: 16,
        ensemble_size: 2,
        epochs: 2,
        batch_size: 32,
        ..ModelConfig::default()
    };
    c.learner.hidden = 16;
    c.trainer = TrainerSettings {
        rollout_horizon: 2,
        rollout_starts: 16,
        batch_size: 16,
        updates_per_iteration: 2,
        max_iterations: 2,
        ..TrainerSettings::default()
    };
    c.eval = EvalConfig {
        episodes: 3,
        rstar_grid: 4,
        projections: 8,
    };
    c.baseline.samples = 2;
    c
}

#[test]
fn mixed_batch_counts() {
    assert_eq!(imaginary_rows(0.5, 128, 10), 64);
    assert_eq!(imaginary_rows(0.0, 128, 10), 0);
    assert_eq!(imaginary_rows(1.0, 128, 10), 128);
    assert_eq!(imaginary_rows(0.3, 10, 10), 3);
    assert_eq!(imaginary_rows(0.25, 10, 10), 3);
    assert_eq!(imaginary_rows(0.5, 128, 0), 0);
}

#[test]
fn rollouts_store_penalized_model_transitions() {
    let cfg = tiny();
    let ctx = SeedContext::build(&cfg, 3).unwrap();
    let learner = init_learner(&cfg, &ctx.data, 3).unwrap();
    let roll = |h: usize, lambda: f64, starts: usize| {
        rollout_imaginary(&ctx.ensemble, &learner.policy, &ctx.data, &cfg.sim, h, lambda, starts, &mut rng::from_seed(9)).unwrap()
    };
    let one = roll(1, 0.0, 100);
    assert_eq!(one.steps.len(), 100);
    for s in &one.steps {
        assert_eq!(s.transition.kind, TransitionKind::ImaginaryPenalized);
        assert_eq!(s.transition.reward, s.raw_reward);
        assert!((0.0..=cfg.learner.w_max).contains(&s.transition.rep_action()));
    }
    let huge = roll(1, 1e6, 100);
    for (a, b) in huge.steps.iter().zip(&one.steps) {
        // Same stream, so the same draws.
        assert_eq!(a.raw_reward, b.raw_reward);
        if a.sigma > 0.0 {
            assert!(a.transition.reward <= 0.0);
        }
    }
    let mid = roll(3, 2.0, 50);
    for s in &mid.steps {
        assert!(s.transition.reward <= s.raw_reward);
        assert_eq!(s.transition.reward == s.raw_reward, s.sigma == 0.0);
        assert!(s.transition.t < cfg.sim.horizon);
        assert_eq!(s.terminal, s.transition.t + 1 == cfg.sim.horizon);
        assert_eq!(s.transition.next_global_state[0], (cfg.sim.horizon - s.transition.t - 1) as f64 / cfg.sim.horizon as f64);
    }
    assert!(mid.steps.len() <= 150);
}

#[test]
fn zero_iterations_return_the_initial_policy() {
    let mut cfg = tiny();
    cfg.trainer.max_iterations = 0;
    let ctx = SeedContext::build(&cfg, 4).unwrap();
    let (learner, log) = ctx.train(&cfg).unwrap();
    assert!(log.iterations.is_empty());
    let init = init_learner(&cfg, &ctx.data, 4).unwrap();
    assert_eq!(learner.policy.to_bytes(), init.policy.to_bytes());
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny();
    let (p1, l1) = pemorl_train(&cfg).unwrap();
    let (p2, l2) = pemorl_train(&cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(l1.iterations.len(), 2);
    assert_eq!(p1.to_bytes(), p2.to_bytes());
}

#[test]
fn no_imaginary_rows_without_mixing() {
    let mut cfg = tiny();
    cfg.trainer.mixing_ratio = 0.0;
    let ctx = SeedContext::build(&cfg, 5).unwrap();
    let (_, log) = ctx.train(&cfg).unwrap();
    assert!(log.iterations.iter().all(|i| i.imaginary == 0));
}

#[test]
fn zero_bids_earn_nothing_and_stay_online() {
    let cfg = tiny();
    let rstar = compute_rstar(&cfg.sim, &cfg.eval, 1).unwrap();
    let mut p = Policy::new(ObsScaler::identity(6), 8, 3.0, 1.0, -1.0, 1).unwrap();
    p.params.get_mut("pi.2.b").unwrap().set(0, 0, -1e3);
    assert_eq!(p.act(&[0.5; 6], ActMode::Mean, &mut rng::from_seed(0)).unwrap(), 0.0);
    let rep = evaluate_policy(&p, &cfg.sim, &cfg.eval, 1, &rstar, None).unwrap();
    assert_eq!((rep.gmv, rep.cost, rep.roi, rep.online_rate), (0.0, 0.0, 0.0, 1.0));
    assert_eq!(rep.per_episode.len(), 3);
}

#[test]
fn rstar_is_attained_by_its_own_constant() {
    let cfg = tiny();
    let rstar = compute_rstar(&cfg.sim, &cfg.eval, 2).unwrap();
    assert_eq!(rstar.grid.len(), 4);
    let rep = evaluate_bidder(&mut ConstantPolicy(rstar.multiplier), "c", &cfg.sim, &cfg.eval, 2, &rstar, None).unwrap();
    assert_eq!(rep.r_over_rstar, 1.0);
    for &(m, _) in &rstar.grid {
        let rep = evaluate_bidder(&mut ConstantPolicy(m), "c", &cfg.sim, &cfg.eval, 2, &rstar, None).unwrap();
        assert!(rep.r_over_rstar <= 1.0);
        if rep.cost > 0.0 {
            assert!((rep.roi - rep.gmv / rep.cost).abs() <= 1e-9);
        }
        assert!((0.0..=1.0).contains(&rep.online_rate));
    }
}

fn noiseless_sim() -> SimConfig {
    SimConfig {
        impressions_random: false,
        value_log_std: 0.0,
        affinity_strength: 0.0,
        budget_jitter: 0.0,
        background: vec![BehaviorParams { mean: 0.8, noise: 0.0 }, BehaviorParams { mean: 1.3, noise: 0.0 }],
        ..SimConfig::default()
    }
}

fn noiseless_data(sim: &SimConfig) -> DataSet {
    let behaviors = [BehaviorParams { mean: 1.05, noise: 0.0 }, BehaviorParams { mean: 0.55, noise: 0.0 }];
    collect_real_data(sim, &behaviors, 4, 7).unwrap()
}

#[test]
fn matched_proxy_reproduces_a_noiseless_simulator() {
    let sim = noiseless_sim();
    let data = noiseless_data(&sim);
    let proxy = GspProxy {
        assumed: sim.clone(),
        samples: 1,
        variance: 1.0,
        seed: 0,
    };
    let s = score_model(&proxy, &data).unwrap();
    assert!(s.mae <= 1e-9, "{s:?}");
}

#[test]
fn proxy_with_doubled_values_doubles_rewards() {
    let sim = noiseless_sim();
    let data = noiseless_data(&sim);
    let mut assumed = sim.clone();
    assumed.value_scale *= 2.0;
    let proxy = GspProxy {
        assumed,
        samples: 1,
        variance: 1.0,
        seed: 0,
    };
    let (mut pred, mut truth) = (0.0, 0.0);
    for tr in &data.transitions {
        pred += proxy.predict(&tr.global_state, &tr.joint_action).unwrap().reward_mean();
        truth += tr.reward;
    }
    assert!(truth > 0.0);
    assert!((pred / truth - 2.0).abs() < 0.05, "{}", pred / truth);
}

#[test]
fn misspecified_proxy_distorts_the_configured_parameters() {
    let cfg = tiny();
    let p = GspProxy::misspecified(&cfg.sim, &cfg.baseline, 1);
    assert_eq!(p.assumed.value_scale, cfg.sim.value_scale * 1.5);
    assert_eq!(p.assumed.impressions_mean, cfg.sim.impressions_mean * 0.7);
    assert_eq!(p.assumed.budget_jitter, 0.0);
}

#[test]
fn fc_baseline_breaks_permutation_symmetry() {
    let cfg = tiny();
    let ctx = SeedContext::build(&cfg, 6).unwrap();
    let BaselineModel::Fc(m) = train_baseline_model(BaselineKind::FcNonPe, &ctx.data, &cfg, 1).unwrap() else {
        panic!("expected the fully connected model");
    };
    let rep = check_equivariance(&ModelSetFunction(&m), 3, 10, Symmetry::Equivariant, 1e-6, &mut rng::from_seed(2));
    assert!(rep.max_violation > 0.0);
}

/// Echoes stored predictions so a dataset can be built from them.
struct Fixed(Vec<Vec<f64>>);

impl EnvModel for Fixed {
    fn label(&self) -> String {
        "fixed".into()
    }

    fn predict_batch(&self, states: &Tensor, _actions: &Tensor) -> crate::error::Result<crate::env_model::BatchPrediction> {
        // Row identity is encoded in the first state feature.
        let rows: Vec<Vec<f64>> = (0..states.rows()).map(|r| self.0[states.get(r, 0) as usize].clone()).collect();
        let mean = Tensor::from_rows(&rows).unwrap();
        let variance = Tensor::filled(mean.rows(), mean.cols(), 1.0);
        Ok(crate::env_model::BatchPrediction { mean, variance })
    }
}

fn indexed_data() -> (DataSet, Vec<Vec<f64>>) {
    let mut data = noiseless_data(&noiseless_sim());
    data.transitions.truncate(20);
    let mut preds = Vec::new();
    for (k, tr) in data.transitions.iter_mut().enumerate() {
        tr.global_state[0] = k as f64;
        let p: Vec<f64> = (0..tr.next_global_state.len() + 1).map(|j| ((k * 7 + j) as f64 * 0.13).sin()).collect();
        preds.push(p);
    }
    (data, preds)
}

#[test]
fn scoring_against_own_predictions_is_zero() {
    let (mut data, preds) = indexed_data();
    for (tr, p) in data.transitions.iter_mut().zip(&preds) {
        tr.next_global_state = p[..p.len() - 1].to_vec();
        tr.reward = p[p.len() - 1];
    }
    let s = score_model(&Fixed(preds), &data).unwrap();
    assert_eq!((s.mae, s.mse), (0.0, 0.0));
}

#[test]
fn scores_match_an_independent_computation() {
    let (data, preds) = indexed_data();
    let model = Fixed(preds.clone());
    // Flatten everything first, then reduce.
    let mut errors = Vec::new();
    for (tr, p) in data.transitions.iter().zip(&preds) {
        let mut target = tr.next_global_state.clone();
        target.push(tr.reward);
        errors.extend(p.iter().zip(&target).map(|(a, b)| a - b));
    }
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64;
    let mse = errors.iter().map(|e| e.powi(2)).sum::<f64>() / errors.len() as f64;
    let rows = compare_models(&[&model], &data, &data).unwrap();
    assert!((rows[0].test_mae - mae).abs() <= 1e-12);
    assert!((rows[0].test_mse - mse).abs() <= 1e-12);
    assert_eq!(rows[0].gap, 0.0);
    assert_eq!(rows[0].model, "fixed");
}

#[test]
fn ablation_rows_follow_lambda_order() {
    let mut cfg = tiny();
    cfg.ablation.no_imaginary_baseline = false;
    let single = run_ablation(&cfg, &[0.0], &[1]).unwrap();
    assert_eq!(single.rows.len(), 1);
    let two = run_ablation(&cfg, &[3.0, 0.0], &[1, 2]).unwrap();
    assert_eq!(two.rows.iter().map(|r| r.lambda).collect::<Vec<_>>(), vec![0.0, 3.0]);
    assert!(two.rows.iter().all(|r| r.seeds == 2 && r.r_over_rstar_mean.is_finite()));
    assert_eq!(two.runs.len(), 4);
    assert!(run_ablation(&cfg, &[], &[1]).is_err());

    cfg.ablation.no_imaginary_baseline = true;
    cfg.learner.lambda = 3.0;
    let with_base = run_ablation(&cfg, &[0.0, 3.0], &[1]).unwrap();
    let keys: Vec<(f64, f64)> = with_base.rows.iter().map(|r| (r.lambda, r.mixing_ratio)).collect();
    let m = cfg.trainer.mixing_ratio;
    assert_eq!(keys, vec![(0.0, m), (3.0, m), (3.0, 0.0)]);
    let base = with_base.runs.last().unwrap();
    assert_eq!(base.mixing_ratio, 0.0);
    assert!(base.log.iterations.iter().all(|it| it.imaginary == 0));
}

#[test]
fn report_files_are_reproducible() {
    let cfg = tiny();
    let write = |dir: &std::path::Path| {
        let res = run_ablation(&cfg, &[0.0, 2.0], &[1]).unwrap();
        let h = cfg.hash();
        write_ablation_csv(&dir.join(ABLATION_FILE), &h, &res.rows).unwrap();
        write_ablation_runs_csv(&dir.join(ABLATION_RUNS_FILE), &h, &res.runs, &res.seeds).unwrap();
        write_metrics_csv(&dir.join(METRICS_FILE), &h, &res.runs).unwrap();
        let reports: Vec<EvalReport> = res.runs.iter().map(|r| r.report.clone()).collect();
        write_eval_report(&dir.join(EVAL_REPORT_FILE), &h, &reports, &[]).unwrap();
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write(a.path());
    write(b.path());
    for f in [ABLATION_FILE, ABLATION_RUNS_FILE, METRICS_FILE, EVAL_REPORT_FILE] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
        assert!(String::from_utf8(x).unwrap().contains(&cfg.hash()));
    }
    let text = std::fs::read_to_string(a.path().join(ABLATION_FILE)).unwrap();
    // Two lambdas plus the no-imaginary baseline at the learner's lambda.
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("config_hash,lambda,mixing_ratio,seeds,r_over_rstar_mean"));
}

#[test]
fn bound_check_reports_every_policy() {
    let cfg = tiny();
    let ctx = SeedContext::build(&cfg, 2).unwrap();
    let rstar = compute_rstar(&cfg.sim, &cfg.eval, 2).unwrap();
    let (learner, _) = ctx.train(&cfg).unwrap();
    let rows = lower_bound_check(&cfg, &ctx, &rstar, &learner.policy, 3).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!((r.slack - (r.model_return - r.ground_truth)).abs() < 1e-12);
        assert!(r.ground_truth.is_finite() && r.model_return.is_finite());
    }
}

#[test]
fn config_round_trip_and_hash() {
    let cfg = TrainConfig::default();
    let back = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_eq!(cfg.hash().len(), 16);
    let mut other = cfg.clone();
    other.learner.lambda = 2.5;
    assert_ne!(other.hash(), cfg.hash());
    assert!(TrainConfig::from_toml_str("[trainer]\nmixing_ratio = 2.0\n").is_err());
    assert!(TrainConfig::from_toml_str("[trainer]\nbogus = 1\n").is_err());
    assert!(TrainConfig::from_toml_str("seed = 4\n[learner]\nlambda = 3.0\n").unwrap().learner.lambda == 3.0);
}
