use rand::Rng as _;

use super::*;
use crate::dataset::synthetic::linear_dynamics;
use crate::dataset::split;
use crate::diffcore::GradCheckConfig;
use crate::equivariance::{check_equivariance, random_inputs, Symmetry, SetFunction};
use crate::rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        heads: 2,
        hidden: 16,
        ensemble_size: 2,
        epochs: 3,
        batch_size: 64,
        ..ModelConfig::default()
    }
}

fn random_model(kind: ModelKind, ds: usize, n: usize, cfg: &ModelConfig, seed: u64) -> LearnedModel {
    let spec = ModelSpec::new(kind, ds, n, cfg).unwrap();
    LearnedModel::init(spec, Normalizer::identity(ds), seed).unwrap()
}

#[test]
fn pe_model_is_equivariant_at_random_parameters() {
    let mut r = rng::from_seed(3);
    for n in 2..=4 {
        for seed in 0..3 {
            let m = random_model(ModelKind::Pe, 3, n, &small_config(), seed);
            let rep = check_equivariance(&ModelSetFunction(&m), n, 20, Symmetry::Equivariant, 1e-6, &mut r);
            assert!(rep.pass, "n={n} seed={seed}: {rep:?}");
        }
    }
    let m = random_model(ModelKind::Pe, 6, 4, &ModelConfig::default(), 9);
    let rep = check_equivariance(&ModelSetFunction(&m), 4, 20, Symmetry::Equivariant, 1e-6, &mut r);
    assert!(rep.pass && rep.permutations_checked == 24, "{rep:?}");
}

#[test]
fn pe_model_handles_a_different_number_of_advertisers() {
    let m = random_model(ModelKind::Pe, 3, 3, &small_config(), 1);
    let mut r = rng::from_seed(4);
    let rep = check_equivariance(&ModelSetFunction(&m), 5, 5, Symmetry::Equivariant, 1e-6, &mut r);
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn fc_baseline_is_not_equivariant() {
    let m = random_model(ModelKind::FcNonPe, 3, 3, &small_config(), 1);
    let mut r = rng::from_seed(5);
    let rep = check_equivariance(&ModelSetFunction(&m), 3, 20, Symmetry::Equivariant, 1e-6, &mut r);
    assert!(rep.max_violation > 1e-2, "{rep:?}");
}

#[test]
fn fc_width_matches_pe_parameter_count() {
    for (ds, n) in [(6, 4), (6, 3), (3, 2)] {
        let cfg = ModelConfig::default();
        let pe = random_model(ModelKind::Pe, ds, n, &cfg, 0).num_params() as f64;
        let fc = random_model(ModelKind::FcNonPe, ds, n, &cfg, 0).num_params() as f64;
        assert!((fc - pe).abs() / pe < 0.05, "ds={ds} n={n}: pe {pe} fc {fc}");
    }
}

#[test]
fn identical_advertisers_get_identical_predictions() {
    let m = random_model(ModelKind::Pe, 4, 4, &small_config(), 2);
    let rec = vec![0.3, -0.2, 1.1, 0.5, 1.4, 0.0];
    let mut x = vec![rec.clone(); 4];
    x[3][5] = 1.0;
    let y = ModelSetFunction(&m).eval(&x);
    for i in 1..3 {
        for (a, b) in y[0].iter().zip(&y[i]) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn prediction_is_deterministic() {
    let a = random_model(ModelKind::Pe, 3, 3, &small_config(), 7);
    let b = random_model(ModelKind::Pe, 3, 3, &small_config(), 7);
    assert_eq!(a.params().to_bytes(), b.params().to_bytes());
    let mut r = rng::from_seed(1);
    let x = &random_inputs(3, 5, 1, &mut r)[0];
    let f = ModelSetFunction(&a);
    assert_eq!(f.eval(x), f.eval(x));
}

#[test]
fn nll_of_a_perfect_unit_variance_prediction_is_sqrt_d() {
    for d in [4usize, 9] {
        let p = GaussianPrediction {
            mean: vec![0.7; d],
            variance: vec![1.0; d],
        };
        let v = nll_loss(&p, &vec![0.7; d]).unwrap();
        assert!((v - (d as f64).sqrt()).abs() <= 1e-9);
    }
}

#[test]
fn nll_matches_an_independent_formula() {
    let mut r = rng::from_seed(11);
    for _ in 0..20 {
        let d = r.random_range(1..8);
        let mean: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let variance: Vec<f64> = (0..d).map(|_| r.random_range(0.05..3.0)).collect();
        let target: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        // Quadratic form via an explicit diagonal inverse, log det via the product.
        let det: f64 = variance.iter().product();
        let quad: f64 = (0..d).map(|i| (target[i] - mean[i]).powi(2) * variance[i].recip()).sum();
        let frob = variance.iter().map(|v| v.powi(2)).sum::<f64>().sqrt();
        let expected = quad + det.ln() + frob;
        let got = nll_loss(&GaussianPrediction { mean, variance }, &target).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }
}

#[test]
fn nll_rejects_bad_inputs() {
    let p = GaussianPrediction {
        mean: vec![0.0; 2],
        variance: vec![1.0, 0.0],
    };
    assert!(nll_loss(&p, &[0.0, 0.0]).is_err());
    assert!(nll_loss(&p, &[0.0]).is_err());
}

#[test]
fn training_loss_agrees_with_the_prediction_nll() {
    let data = linear_dynamics(3, 2, 1, 1, 8).unwrap();
    let m = random_model(ModelKind::Pe, 2, 3, &small_config(), 4);
    let tr = &data.transitions[0];
    let p = m.predict(&tr.global_state, &tr.joint_action).unwrap();
    let mut target = tr.next_global_state.clone();
    target.push(tr.reward);
    let expected = nll_loss(&p, &target).unwrap();
    let got = m.loss(&data).unwrap();
    assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn loss_gradients_pass_finite_differences() {
    let data = linear_dynamics(3, 3, 2, 8, 2).unwrap();
    for kind in [ModelKind::Pe, ModelKind::FcNonPe] {
        let spec = ModelSpec::new(kind, 3, 3, &small_config()).unwrap();
        let m = LearnedModel::init(spec, Normalizer::fit(&data).unwrap(), 5).unwrap();
        let rep = m
            .grad_check_loss(&data, &GradCheckConfig::default(), &mut rng::from_seed(6))
            .unwrap();
        assert!(rep.pass, "{kind:?}: {rep:?}");
    }
}

fn mean_abs_error(model: &dyn EnvModel, data: &crate::dataset::DataSet) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for tr in &data.transitions {
        let p = model.predict(&tr.global_state, &tr.joint_action).unwrap();
        for (m, t) in p.state_mean().iter().zip(&tr.next_global_state) {
            sum += (m - t).abs();
            count += 1;
        }
        sum += (p.reward_mean() - tr.reward).abs();
        count += 1;
    }
    sum / count as f64
}

#[test]
fn pe_model_fits_linear_dynamics() {
    let data = linear_dynamics(3, 3, 120, 10, 21).unwrap();
    let (train, test) = split(&data, 0.2, 1).unwrap();
    let cfg = ModelConfig {
        epochs: 40,
        ..small_config()
    };
    let spec = ModelSpec::new(ModelKind::Pe, 3, 3, &cfg).unwrap();
    let (m, log) = train_model(&train, &spec, 3).unwrap();
    assert!(log.final_train_loss < log.init_train_loss);
    let mae = mean_abs_error(&m, &test);
    assert!(mae <= 0.05, "mae {mae}");
}

#[test]
fn training_is_reproducible() {
    let data = linear_dynamics(3, 2, 10, 6, 1).unwrap();
    let spec = ModelSpec::new(ModelKind::Pe, 2, 3, &small_config()).unwrap();
    let (a, la) = train_model(&data, &spec, 9).unwrap();
    let (b, lb) = train_model(&data, &spec, 9).unwrap();
    assert_eq!(a.params().to_bytes(), b.params().to_bytes());
    assert_eq!(la, lb);
    let (c, _) = train_model(&data, &spec, 10).unwrap();
    assert_ne!(a.params().to_bytes(), c.params().to_bytes());
}

#[test]
fn training_rejects_mismatched_data() {
    let data = linear_dynamics(3, 2, 2, 4, 1).unwrap();
    let spec = ModelSpec::new(ModelKind::Pe, 3, 3, &small_config()).unwrap();
    assert!(train_model(&data, &spec, 0).is_err());
    let spec = ModelSpec::new(ModelKind::FcNonPe, 2, 4, &small_config()).unwrap();
    assert!(train_model(&data, &spec, 0).is_err());
}

fn fixed_prediction(mean: &[f64], var: &[f64]) -> BatchPrediction {
    BatchPrediction {
        mean: Tensor::row_vector(mean),
        variance: Tensor::row_vector(var),
    }
}

#[test]
fn member_choice_is_uniform() {
    let preds = vec![fixed_prediction(&[0.0, 0.0], &[1.0, 1.0]), fixed_prediction(&[5.0, 5.0], &[1.0, 1.0])];
    let mut r = rng::from_seed(17);
    let draws = 10_000;
    let first = (0..draws).filter(|_| sample_members(&preds, 0, &mut r).member == 0).count();
    let freq = first as f64 / draws as f64;
    assert!((freq - 0.5).abs() <= 0.02, "{freq}");
}

#[test]
fn zero_variance_sample_is_the_member_mean() {
    let preds = vec![fixed_prediction(&[1.5, -2.0, 0.25], &[0.0, 0.0, 0.0])];
    let s = sample_members(&preds, 0, &mut rng::from_seed(1));
    assert_eq!(s.next_state, vec![1.5, -2.0]);
    assert_eq!(s.reward, 0.25);
}

#[test]
fn samples_average_to_the_mixture_mean() {
    let preds = vec![fixed_prediction(&[1.0, 2.0], &[0.5, 0.2]), fixed_prediction(&[3.0, -2.0], &[0.1, 1.0])];
    let mut r = rng::from_seed(23);
    let draws = 40_000;
    let mut acc = [0.0; 2];
    for _ in 0..draws {
        let s = sample_members(&preds, 0, &mut r);
        acc[0] += s.next_state[0];
        acc[1] += s.reward;
    }
    assert!((acc[0] / draws as f64 - 2.0).abs() < 0.03);
    assert!((acc[1] / draws as f64 - 0.0).abs() < 0.03);
}

#[test]
fn reward_spread_is_the_population_std() {
    let preds = vec![fixed_prediction(&[0.0, 1.0], &[1.0, 1.0]), fixed_prediction(&[0.0, 3.0], &[1.0, 1.0])];
    assert!((reward_std(&preds, 0) - 1.0).abs() <= 1e-12);
    let same = vec![preds[0].clone(), preds[0].clone(), preds[0].clone()];
    assert_eq!(reward_std(&same, 0), 0.0);
}

#[test]
fn identical_members_have_zero_uncertainty() {
    let m = random_model(ModelKind::Pe, 2, 3, &small_config(), 3);
    let ens = EnsembleModel::new(vec![m.clone(), m], vec![1, 2], vec![0.0, 0.0]).unwrap();
    let u = ens.reward_uncertainty(&[0.1; 6], &[1.0, 0.5, 2.0]).unwrap();
    assert_eq!(u, 0.0);
}

#[test]
fn ensemble_is_more_uncertain_off_distribution() {
    let data = linear_dynamics(3, 2, 40, 10, 5).unwrap();
    let cfg = ModelConfig {
        ensemble_size: 4,
        epochs: 20,
        ..small_config()
    };
    let spec = ModelSpec::new(ModelKind::Pe, 2, 3, &cfg).unwrap();
    let (ens, logs) = EnsembleModel::train(&data, &spec, 8).unwrap();
    assert_eq!(logs.len(), 4);
    let mut inside = 0.0;
    let mut outside = 0.0;
    for tr in data.transitions.iter().take(50) {
        inside += ens.reward_uncertainty(&tr.global_state, &tr.joint_action).unwrap();
        let far: Vec<f64> = tr.global_state.iter().map(|s| s + 8.0).collect();
        outside += ens.reward_uncertainty(&far, &[9.0, 9.0, 9.0]).unwrap();
    }
    assert!(outside > inside, "outside {outside} inside {inside}");
}

#[test]
fn ensemble_mixture_moments() {
    let a = random_model(ModelKind::Pe, 2, 2, &small_config(), 1);
    let b = random_model(ModelKind::Pe, 2, 2, &small_config(), 2);
    let (gs, act) = ([0.2, 0.4, -0.1, 0.3], [1.0, 0.7]);
    let pa = a.predict(&gs, &act).unwrap();
    let pb = b.predict(&gs, &act).unwrap();
    let ens = EnsembleModel::new(vec![a, b], vec![1, 2], vec![0.0, 0.0]).unwrap();
    let p = ens.predict(&gs, &act).unwrap();
    for k in 0..p.mean.len() {
        let mu = 0.5 * (pa.mean[k] + pb.mean[k]);
        let second = 0.5 * (pa.variance[k] + pa.mean[k].powi(2) + pb.variance[k] + pb.mean[k].powi(2));
        assert!((p.mean[k] - mu).abs() <= 1e-12);
        assert!((p.variance[k] - (second - mu * mu)).abs() <= 1e-9);
    }
}

#[test]
fn ensemble_checkpoint_round_trip() {
    let data = linear_dynamics(3, 2, 6, 5, 2).unwrap();
    let spec = ModelSpec::new(ModelKind::Pe, 2, 3, &small_config()).unwrap();
    let (ens, _) = EnsembleModel::train(&data, &spec, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ens.save(dir.path()).unwrap();
    let back = EnsembleModel::load(dir.path()).unwrap();
    assert_eq!(back.seeds(), ens.seeds());
    let tr = &data.transitions[3];
    let p = ens.predict(&tr.global_state, &tr.joint_action).unwrap();
    let q = back.predict(&tr.global_state, &tr.joint_action).unwrap();
    assert_eq!(p, q);
    std::fs::write(dir.path().join("member_0.bin"), b"junk").unwrap();
    assert!(EnsembleModel::load(dir.path()).is_err());
}

#[test]
fn config_rejects_bad_values() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = ModelConfig {
        embed_dim: 10,
        heads: 4,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(toml::from_str::<ModelConfig>("bogus = 1").is_err());
}
