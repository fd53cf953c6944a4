use super::*;
use crate::diffcore::{GradCheckConfig, Tensor};
use crate::env_model::{EnsembleModel, LearnedModel, ModelConfig, ModelKind, ModelSpec, Normalizer};
use crate::rng;

const OBS: usize = 6;

fn obs_batch(rows: usize, seed: u64) -> Tensor {
    use rand::Rng as _;
    let mut r = rng::from_seed(seed);
    Tensor::from_rows(&(0..rows).map(|_| (0..OBS).map(|_| r.random_range(0.0..1.0)).collect()).collect::<Vec<Vec<f64>>>()).unwrap()
}

fn zero_q(w_max: f64) -> QNetwork {
    let mut q = QNetwork::new(ObsScaler::identity(OBS), 8, w_max, 1.0, 0).unwrap();
    let names: Vec<String> = q.params.names().map(str::to_string).collect();
    for n in names {
        let t = q.params.get_mut(&n).unwrap();
        *t = t.map(|_| 0.0);
    }
    q
}

/// Hand-wired critic computing `Q(o, a) = a + offset`.
fn linear_q(w_max: f64, offset: f64) -> QNetwork {
    let mut q = zero_q(w_max);
    q.params.get_mut("q.0.w").unwrap().set(OBS, 0, 1.0);
    q.params.get_mut("q.0.b").unwrap().set(0, 0, 1.0);
    q.params.get_mut("q.1.w").unwrap().set(0, 0, 1.0);
    q.params.get_mut("q.2.w").unwrap().set(0, 0, 0.5 * w_max);
    q.params.get_mut("q.2.b").unwrap().set(0, 0, offset);
    q
}

fn one_member_ensemble(k: usize) -> EnsembleModel {
    let cfg = ModelConfig {
        embed_dim: 8,
        heads: 2,
        hidden: 16,
        ..ModelConfig::default()
    };
    let spec = ModelSpec::new(ModelKind::Pe, OBS, 3, &cfg).unwrap();
    let members: Vec<LearnedModel> =
        (0..k).map(|m| LearnedModel::init(spec.clone(), Normalizer::identity(OBS), m as u64).unwrap()).collect();
    EnsembleModel::new(members, (0..k as u64).collect(), vec![0.0; k]).unwrap()
}

#[test]
fn linear_q_fixture_is_the_action() {
    let q = linear_q(1.0, 0.0);
    let v = q.values(&obs_batch(3, 1), &[0.0, 0.25, 1.0]).unwrap();
    for (got, want) in v.iter().zip([0.0, 0.25, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((q.max_over_grid(&obs_batch(2, 2), &[0.0, 0.5, 1.0]).unwrap()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn target_arithmetic() {
    assert_eq!(robust_target_from_values(1.0, 2.0, 0.5, 1.0, &[]), 0.0);
    assert_eq!(robust_target_from_values(0.0, 0.0, 0.0, 1.0, &[4.0, 7.0]), 4.0);
    assert_eq!(robust_target_from_values(1.5, 0.0, 3.0, 0.5, &[7.0, 4.0]), 3.5);
}

#[test]
fn unpenalized_target_with_zero_critic_is_the_sampled_reward() {
    let ens = one_member_ensemble(1);
    let q = zero_q(3.0);
    let gs = vec![0.5; 3 * OBS];
    let a = [1.0, 1.0, 1.0];
    let t = robust_target(&gs, &a, &ens, &q, &[0.0, 1.5, 3.0], 0.0, 1.0, false, &mut rng::from_seed(3)).unwrap();
    assert_eq!(t.sigma, 0.0);
    assert_eq!(t.value, t.reward_sample);
}

#[test]
fn target_is_non_increasing_in_lambda() {
    let ens = one_member_ensemble(3);
    let q = linear_q(3.0, 0.0);
    let gs: Vec<f64> = (0..3 * OBS).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = [0.4, 2.0, 1.1];
    let grid = LearnerConfig::default().action_grid();
    let mut last = f64::INFINITY;
    for lambda in [0.0, 0.5, 1.0, 3.0, 10.0] {
        let t = robust_target(&gs, &a, &ens, &q, &grid, lambda, 1.0, false, &mut rng::from_seed(5)).unwrap();
        assert!(t.sigma > 0.0);
        assert!(t.value <= last);
        last = t.value;
    }
}

#[test]
fn minimum_over_members_is_below_every_member() {
    let ens = one_member_ensemble(4);
    // Value depends on the observation so members disagree.
    let mut q = linear_q(3.0, 0.0);
    q.params.get_mut("q.2.w").unwrap().set(1, 0, 1.0);
    q.params.get_mut("q.1.w").unwrap().set(0, 1, 1.0);
    q.params.get_mut("q.0.w").unwrap().set(1, 0, 0.3);
    let grid = LearnerConfig::default().action_grid();
    let gs: Vec<f64> = (0..3 * OBS).map(|i| (i as f64 * 0.71).cos()).collect();
    let t = robust_target(&gs, &[1.0, 0.5, 2.5], &ens, &q, &grid, 0.0, 1.0, false, &mut rng::from_seed(8)).unwrap();
    assert_eq!(t.next_values.len(), 4);
    for v in &t.next_values {
        assert!(t.value <= robust_target_from_values(t.reward_sample, 0.0, 0.0, 1.0, &[*v]));
    }
}

#[test]
fn terminal_steps_have_no_continuation() {
    let ens = one_member_ensemble(2);
    let q = linear_q(3.0, 100.0);
    let t = robust_target(&[0.1; 3 * OBS], &[1.0; 3], &ens, &q, &[0.0, 3.0], 0.0, 1.0, true, &mut rng::from_seed(1)).unwrap();
    assert_eq!(t.value, t.reward_sample);
    let m = NextObsMoments {
        k: 1,
        mean: vec![0.0; OBS],
        var: vec![0.0; OBS],
    };
    let v = robust_targets(&[1.0, 2.0], &[&m, &m], &[true, false], &q, &[0.0, 3.0], 1.0, &mut rng::from_seed(1)).unwrap();
    assert_eq!(v[0], 1.0);
    assert!((v[1] - 105.0).abs() < 1e-9);
}

fn learner(w_max: f64, seed: u64) -> LearnerState {
    let cfg = LearnerConfig {
        hidden: 16,
        w_max,
        init_action: 0.5 * w_max,
        ..LearnerConfig::default()
    };
    LearnerState::new(&cfg, ObsScaler::identity(OBS), 1.0, seed).unwrap()
}

#[test]
fn consistent_targets_leave_the_critic_unchanged() {
    let mut l = learner(3.0, 1);
    let obs = obs_batch(32, 4);
    let actions: Vec<f64> = (0..32).map(|i| 3.0 * i as f64 / 31.0).collect();
    let targets = l.q.values(&obs, &actions).unwrap();
    let before = l.q.params.clone();
    l.q_update(&QBatch { obs, actions, targets }).unwrap();
    for (name, t) in before.iter() {
        let after = l.q.params.get(name).unwrap();
        for (a, b) in t.data().iter().zip(after.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn critic_regression_loss_decreases() {
    let mut l = learner(3.0, 2);
    let obs = obs_batch(64, 5);
    let actions: Vec<f64> = (0..64).map(|i| 3.0 * (i % 8) as f64 / 7.0).collect();
    let targets: Vec<f64> = (0..64).map(|i| obs.get(i, 0) * 2.0 + actions[i]).collect();
    let batch = QBatch { obs, actions, targets };
    let first = l.q_update(&batch).unwrap();
    let mut last = first;
    for _ in 0..100 {
        last = l.q_update(&batch).unwrap();
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn polyak_rates() {
    let mut l = learner(3.0, 3);
    let old = l.q_target.params.clone();
    let batch = QBatch {
        obs: obs_batch(8, 1),
        actions: vec![1.0; 8],
        targets: vec![5.0; 8],
    };
    l.q_update(&batch).unwrap();
    for (name, t) in l.q_target.params.iter() {
        let (q, o) = (l.q.params.get(name).unwrap(), old.get(name).unwrap());
        for ((tv, qv), ov) in t.data().iter().zip(q.data()).zip(o.data()) {
            assert!((tv - (0.005 * qv + 0.995 * ov)).abs() < 1e-12);
        }
    }
    l.tau = 1.0;
    l.q_update(&batch).unwrap();
    assert_eq!(l.q_target.params.to_bytes(), l.q.params.values_only().to_bytes());
}

#[test]
fn non_finite_targets_abort() {
    let mut l = learner(3.0, 3);
    let batch = QBatch {
        obs: obs_batch(2, 1),
        actions: vec![1.0; 2],
        targets: vec![f64::NAN, 0.0],
    };
    assert!(l.q_update(&batch).is_err());
}

fn mean_action(l: &LearnerState, obs: &Tensor) -> f64 {
    let a = l.policy.act_batch(obs, ActMode::Mean, &mut rng::from_seed(0)).unwrap();
    a.iter().sum::<f64>() / a.len() as f64
}

#[test]
fn policy_climbs_an_increasing_critic() {
    let mut l = learner(1.0, 4);
    l.q = linear_q(1.0, 0.0);
    l.policy_lr = 1e-2;
    let obs = obs_batch(64, 6);
    let mut r = rng::from_seed(7);
    let mut prev = mean_action(&l, &obs);
    for _ in 0..50 {
        l.policy_update(&obs, &mut r).unwrap();
        let m = mean_action(&l, &obs);
        assert!(m > prev, "{prev} -> {m}");
        prev = m;
    }
    assert!(prev > 0.9, "{prev}");
}

#[test]
fn flat_critic_leaves_the_policy_unchanged() {
    let mut l = learner(3.0, 5);
    l.q = linear_q(3.0, 2.0);
    l.q.params.get_mut("q.2.w").unwrap().set(0, 0, 0.0);
    let before = l.policy.params.values_only().to_bytes();
    let before_params = l.policy.params.clone();
    l.policy_update(&obs_batch(16, 1), &mut rng::from_seed(2)).unwrap();
    for (name, t) in before_params.iter() {
        let after = l.policy.params.get(name).unwrap();
        for (a, b) in t.data().iter().zip(after.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
    assert_eq!(before.len(), l.policy.params.values_only().to_bytes().len());
}

#[test]
fn policy_update_is_deterministic() {
    let obs = obs_batch(16, 3);
    let run = || {
        let mut l = learner(3.0, 6);
        l.q = linear_q(3.0, 0.0);
        l.policy_update(&obs, &mut rng::from_seed(11)).unwrap();
        l.policy.params.to_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn policy_gradient_passes_finite_differences() {
    let mut l = learner(3.0, 7);
    l.q = QNetwork::new(ObsScaler::identity(OBS), 16, 3.0, 2.0, 9).unwrap();
    let obs = obs_batch(16, 2);
    let eps: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 5.0).collect();
    let rep = l.grad_check_policy(&obs, &eps, &GradCheckConfig::default(), &mut rng::from_seed(1)).unwrap();
    assert!(rep.pass, "{rep:?}");
}

fn sharp_policy(w_max: f64) -> Policy {
    let mut p = Policy::new(ObsScaler::identity(OBS), 8, w_max, 0.4 * w_max, -1.0, 3).unwrap();
    p.params.get_mut("pi.2.b").unwrap().set(0, 1, -100.0);
    p
}

#[test]
fn clamped_noise_keeps_samples_near_the_mean() {
    let p = sharp_policy(1.0);
    let obs = [0.3; OBS];
    let mut r = rng::from_seed(4);
    let mean = p.act(&obs, ActMode::Mean, &mut r).unwrap();
    let (_, ls) = p.raw_dist(&Tensor::row_vector(&obs)).unwrap()[0];
    assert_eq!(ls, LOG_STD_MIN);
    let draws = 10_000;
    let close = (0..draws)
        .filter(|_| (p.act(&obs, ActMode::Sample, &mut r).unwrap() - mean).abs() <= 0.01)
        .count();
    assert!(close as f64 >= 0.99 * draws as f64, "{close}");
}

#[test]
fn actions_stay_in_range() {
    let mut p = Policy::new(ObsScaler::identity(OBS), 8, 3.0, 1.0, 0.0, 3).unwrap();
    p.params.get_mut("pi.2.b").unwrap().set(0, 1, 10.0);
    let obs = obs_batch(100, 9);
    let mut r = rng::from_seed(5);
    for _ in 0..100 {
        for a in p.act_batch(&obs, ActMode::Sample, &mut r).unwrap() {
            assert!((0.0..=3.0).contains(&a));
        }
    }
    let m1 = p.act_batch(&obs, ActMode::Mean, &mut r).unwrap();
    let m2 = p.act_batch(&obs, ActMode::Mean, &mut r).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn initial_policy_bids_near_the_configured_action() {
    let p = Policy::new(ObsScaler::identity(OBS), 16, 3.0, 1.0, -1.0, 3).unwrap();
    for a in p.act_batch(&obs_batch(20, 1), ActMode::Mean, &mut rng::from_seed(0)).unwrap() {
        assert!((a - 1.0).abs() < 0.05, "{a}");
    }
}

#[test]
fn policy_checkpoint_round_trip() {
    let scaler = ObsScaler {
        mean: vec![0.1; OBS],
        std: vec![2.0; OBS],
    };
    let p = Policy::new(scaler, 8, 2.5, 1.0, -1.0, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.bin");
    p.save(&path).unwrap();
    let q = Policy::load(&path).unwrap();
    assert_eq!(q.w_max, 2.5);
    assert_eq!(q.scaler, p.scaler);
    assert_eq!(q.params.to_bytes(), p.params.values_only().to_bytes());
    let bytes = p.to_bytes();
    assert!(Policy::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn config_validation_and_grid() {
    let cfg = LearnerConfig::default();
    cfg.validate().unwrap();
    let g = cfg.action_grid();
    assert_eq!(g.len(), 11);
    assert_eq!((g[0], g[10]), (0.0, 3.0));
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    for bad in [
        LearnerConfig { lambda: -1.0, ..cfg.clone() },
        LearnerConfig { grid_points: 1, ..cfg.clone() },
        LearnerConfig { init_action: 3.0, ..cfg.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn scaler_fit() {
    let s = ObsScaler::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
    assert_eq!(s.mean, vec![2.0, 5.0]);
    assert_eq!(s.std, vec![1.0, 1e-3]);
    assert!(ObsScaler::fit(&[]).is_err());
}
