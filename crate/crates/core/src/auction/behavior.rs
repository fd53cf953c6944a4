use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::Observation;

/// Anything that maps the representative's observation to a bid multiplier.
pub trait BidPolicy {
    fn bid(&mut self, obs: &Observation, rng: &mut Rng) -> f64;
}

impl<F> BidPolicy for F
where
    F: FnMut(&Observation, &mut Rng) -> f64,
{
    fn bid(&mut self, obs: &Observation, rng: &mut Rng) -> f64 {
        self(obs, rng)
    }
}

/// Bid multiplier drawn as `clip(mean + noise * z, 0, max_multiplier)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorParams {
    pub mean: f64,
    pub noise: f64,
}

impl BehaviorParams {
    pub fn new(mean: f64, noise: f64) -> Result<Self> {
        let p = BehaviorParams { mean, noise };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.mean >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "behavior mean {} must be finite and >= 0",
                self.mean
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "behavior noise {} must be finite and >= 0",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Fixed behavior policy. The observation is accepted for interface parity;
/// behavior policies ignore it.
pub fn behavior_policy(
    _obs: &Observation,
    params: &BehaviorParams,
    max_multiplier: f64,
    rng: &mut Rng,
) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (params.mean + params.noise * z).clamp(0.0, max_multiplier)
}

/// A behavior policy bound to its clip range, usable as a [`BidPolicy`].
#[derive(Clone, Copy, Debug)]
pub struct BehaviorPolicy {
    pub params: BehaviorParams,
    pub max_multiplier: f64,
}

impl BidPolicy for BehaviorPolicy {
    fn bid(&mut self, obs: &Observation, rng: &mut Rng) -> f64 {
        behavior_policy(obs, &self.params, self.max_multiplier, rng)
    }
}

/// Always bids the same multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl BidPolicy for ConstantPolicy {
    fn bid(&mut self, _obs: &Observation, _rng: &mut Rng) -> f64 {
        self.0
    }
}
