use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction::{BehaviorParams, SimConfig};
use crate::env_model::ModelConfig;
use crate::error::{Error, Result};
use crate::offline_rl::LearnerConfig;

/// Offline data collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Real episodes collected per seed; transitions = episodes x horizon.
    pub episodes: usize,
    /// Representative behavior policies, used round-robin across episodes.
    pub behaviors: Vec<BehaviorParams>,
    /// Broader behaviors used for held-out model evaluation.
    pub test_behaviors: Vec<BehaviorParams>,
    pub test_episodes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 125,
            behaviors: vec![BehaviorParams { mean: 0.6, noise: 0.1 }, BehaviorParams { mean: 1.2, noise: 0.1 }],
            test_behaviors: vec![BehaviorParams { mean: 0.9, noise: 0.6 }],
            test_episodes: 60,
        }
    }
}

/// Outer-loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSettings {
    /// Model rollout length from each branch start.
    pub rollout_horizon: usize,
    /// Branch starts per outer iteration.
    pub rollout_starts: usize,
    /// Fraction of every minibatch drawn from imaginary transitions.
    pub mixing_ratio: f64,
    pub batch_size: usize,
    /// Critic and actor steps per outer iteration.
    pub updates_per_iteration: usize,
    pub max_iterations: usize,
    /// Stop once the relative change of the model-evaluated return stays
    /// below `convergence_tol` for `convergence_window` consecutive iterations.
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        TrainerSettings {
            rollout_horizon: 5,
            rollout_starts: 256,
            mixing_ratio: 0.5,
            batch_size: 128,
            updates_per_iteration: 25,
            max_iterations: 60,
            convergence_window: 5,
            convergence_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Points of the constant-multiplier grid defining `R*`.
    pub rstar_grid: usize,
    /// Projections of the sliced Wasserstein distance.
    pub projections: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 100,
            rstar_grid: 31,
            projections: 128,
        }
    }
}

/// The analytic baseline simulator's deliberate errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Assumed value scale relative to the truth.
    pub value_scale_factor: f64,
    /// Assumed impressions per step relative to the truth.
    pub impressions_factor: f64,
    /// Monte Carlo steps averaged per prediction.
    pub samples: usize,
    /// Variance reported for every output.
    pub variance: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            value_scale_factor: 1.5,
            impressions_factor: 0.7,
            samples: 8,
            variance: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub lambdas: Vec<f64>,
    /// Number of seeds; seed `i` is `global seed + i`.
    pub seeds: usize,
    /// Also train each seed without imaginary data (mixing ratio 0) at the
    /// learner's lambda.
    pub no_imaginary_baseline: bool,
}

impl AblationConfig {
    pub fn seed_list(&self, base: u64) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| base.wrapping_add(i)).collect()
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            lambdas: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            seeds: 5,
            no_imaginary_baseline: true,
        }
    }
}

/// Everything a run needs: simulator, data, model, learner, outer loop,
/// evaluation, baseline and ablation settings plus the global seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub learner: LearnerConfig,
    pub trainer: TrainerSettings,
    pub eval: EvalConfig,
    pub baseline: BaselineConfig,
    pub ablation: AblationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            sim: SimConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            learner: LearnerConfig::default(),
            trainer: TrainerSettings::default(),
            eval: EvalConfig::default(),
            baseline: BaselineConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.sim.validate()?;
        self.model.validate()?;
        self.learner.validate()?;
        if self.learner.w_max > self.sim.max_multiplier {
            return fail(format!(
                "learner.w_max {} exceeds sim.max_multiplier {}",
                self.learner.w_max, self.sim.max_multiplier
            ));
        }
        if self.data.episodes == 0 || self.data.behaviors.is_empty() {
            return fail("data needs at least one episode and one behavior".into());
        }
        for b in self.data.behaviors.iter().chain(&self.data.test_behaviors) {
            b.validate()?;
        }
        let t = &self.trainer;
        if t.rollout_horizon == 0 || t.rollout_starts == 0 {
            return fail("rollout_horizon and rollout_starts must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&t.mixing_ratio) {
            return fail(format!("mixing_ratio = {} must lie in [0, 1]", t.mixing_ratio));
        }
        if t.batch_size == 0 || t.updates_per_iteration == 0 || t.convergence_window == 0 {
            return fail("batch_size, updates_per_iteration and convergence_window must be >= 1".into());
        }
        if !(t.convergence_tol >= 0.0) {
            return fail(format!("convergence_tol = {} must be >= 0", t.convergence_tol));
        }
        if self.eval.episodes == 0 || self.eval.rstar_grid < 2 || self.eval.projections == 0 {
            return fail("eval needs episodes >= 1, rstar_grid >= 2 and projections >= 1".into());
        }
        let b = &self.baseline;
        if !(b.value_scale_factor > 0.0 && b.impressions_factor > 0.0 && b.variance > 0.0) || b.samples == 0 {
            return fail("baseline factors, variance and samples must be positive".into());
        }
        if self.ablation.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return fail("ablation lambdas must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}
