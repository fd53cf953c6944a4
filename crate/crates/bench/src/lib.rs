//! Shared fixtures for the benchmarks.

use pemorl_core::auction::{BehaviorParams, SimConfig};
use pemorl_core::dataset::{collect_real_data, DataSet};
use pemorl_core::env_model::{train_model, LearnedModel, ModelConfig, ModelKind, ModelSpec};

/// Default simulator with `n` advertisers.
pub fn sim(n: usize) -> SimConfig {
    SimConfig {
        n_advertisers: n,
        ..SimConfig::default()
    }
}

pub fn data(n: usize, episodes: usize) -> DataSet {
    let behaviors = [BehaviorParams { mean: 0.8, noise: 0.2 }];
    collect_real_data(&sim(n), &behaviors, episodes, 1).expect("simulator runs")
}

/// A briefly trained model of the given kind on `data`.
pub fn model(kind: ModelKind, data: &DataSet) -> LearnedModel {
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::default()
    };
    let spec = ModelSpec::new(kind, data.meta.ds, data.meta.n, &cfg).expect("valid spec");
    train_model(data, &spec, 7).expect("training runs").0
}
