use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use pemorl_bench::{data, model, sim};
use pemorl_core::auction::{run_episode, BehaviorParams, BehaviorPolicy};
use pemorl_core::diffcore::Tensor;
use pemorl_core::env_model::ModelKind;
use pemorl_core::offline_rl::{robust_targets, LearnerConfig, LearnerState, NextObsMoments, ObsScaler, QBatch};
use pemorl_core::rng;
use pemorl_core::EnvModel;

fn simulator(c: &mut Criterion) {
    let cfg = sim(3);
    let mut policy = BehaviorPolicy {
        params: BehaviorParams { mean: 1.0, noise: 0.1 },
        max_multiplier: cfg.max_multiplier,
    };
    let mut seed = 0;
    c.bench_function("episode_n3_t16", |b| {
        b.iter(|| {
            seed += 1;
            run_episode(&mut policy, &cfg, seed, seed).unwrap()
        })
    });
}

fn model_forward(c: &mut Criterion) {
    let ds = data(4, 20);
    let rows = &ds.transitions[..256];
    let s = Tensor::from_rows(&rows.iter().map(|t| t.global_state.clone()).collect::<Vec<_>>()).unwrap();
    let a = Tensor::from_rows(&rows.iter().map(|t| t.joint_action.clone()).collect::<Vec<_>>()).unwrap();
    for kind in [ModelKind::Pe, ModelKind::FcNonPe] {
        let m = model(kind, &ds);
        c.bench_function(&format!("{}_forward_b256_n4", m.label()), |b| {
            b.iter(|| m.predict_batch_rep(&s, &a, 3).unwrap())
        });
    }
}

fn learner(c: &mut Criterion) {
    let ds = data(3, 20);
    let obs: Vec<Vec<f64>> = ds.observations().into_iter().take(128).collect();
    let scaler = ObsScaler::fit(&obs).unwrap();
    let mut state = LearnerState::new(&LearnerConfig::default(), scaler, 100.0, 3).unwrap();
    let obs_t = Tensor::from_rows(&obs).unwrap();
    let moments: Vec<NextObsMoments> = obs
        .iter()
        .map(|o| NextObsMoments {
            k: 4,
            mean: o.iter().cycle().take(4 * o.len()).copied().collect(),
            var: vec![0.01; 4 * o.len()],
        })
        .collect();
    let refs: Vec<&NextObsMoments> = moments.iter().collect();
    let rewards = vec![1.0; obs.len()];
    let terminal = vec![false; obs.len()];
    let mut r = rng::stream(1, "bench", 0);
    c.bench_function("robust_targets_b128_k4", |b| {
        b.iter(|| robust_targets(&rewards, &refs, &terminal, &state.q_target, &state.action_grid, 1.0, &mut r).unwrap())
    });
    let actions: Vec<f64> = (0..obs.len()).map(|i| (i % 30) as f64 / 10.0).collect();
    c.bench_function("q_update_b128", |b| {
        b.iter_batched(
            || QBatch {
                obs: obs_t.clone(),
                actions: actions.clone(),
                targets: rewards.clone(),
            },
            |batch| state.q_update(&batch).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("policy_update_b128", |b| b.iter(|| state.policy_update(&obs_t, &mut r).unwrap()));
}

criterion_group!(benches, simulator, model_forward, learner);
criterion_main!(benches);
