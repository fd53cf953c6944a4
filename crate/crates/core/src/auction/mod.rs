//! Ground-truth online advertising system.
//!
//! `N` advertisers compete for a random batch of impressions each step. The
//! representative advertiser sits at index `N - 1`; the others follow fixed
//! behavior policies. Each advertiser's local state records pacing
//! information (time and budget left, spend speed, last reward and cost, and
//! a forecast of impression value).

mod behavior;
pub mod mechanism;
mod sim;

use serde::{Deserialize, Serialize};

pub use behavior::{behavior_policy, BehaviorParams, BehaviorPolicy, BidPolicy, ConstantPolicy};
pub use mechanism::{allocate, auction_row, price, RowOutcome};
pub use sim::{
    observe, replay_episode, run_episode, step, EpisodeSummary, SimConfig, Simulator,
};

/// Width of a [`LocalState`] vector.
pub const LOCAL_STATE_DIM: usize = 6;

/// Feature names of [`LocalState::to_vec`], in order.
pub const LOCAL_STATE_FIELDS: [&str; LOCAL_STATE_DIM] = [
    "time_left",
    "budget_left",
    "spend_speed",
    "last_reward",
    "last_cost",
    "value_forecast",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvertiserContext {
    pub id: u64,
    pub x: Vec<f64>,
    pub budget: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub time_left: f64,
    pub budget_left: f64,
    pub spend_speed: f64,
    pub last_reward: f64,
    pub last_cost: f64,
    pub value_forecast: f64,
}

impl LocalState {
    pub fn to_vec(&self) -> [f64; LOCAL_STATE_DIM] {
        [
            self.time_left,
            self.budget_left,
            self.spend_speed,
            self.last_reward,
            self.last_cost,
            self.value_forecast,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        LocalState {
            time_left: v[0],
            budget_left: v[1],
            spend_speed: v[2],
            last_reward: v[3],
            last_cost: v[4],
            value_forecast: v[5],
        }
    }

    /// Whether the advertiser can still take part in auctions.
    pub fn is_online(&self) -> bool {
        self.budget_left > 0.0
    }
}

/// The representative advertiser's private view.
pub type Observation = LocalState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub locals: Vec<LocalState>,
    pub t: usize,
}

impl GlobalState {
    pub fn n(&self) -> usize {
        self.locals.len()
    }

    /// Concatenation of all local states.
    pub fn flatten(&self) -> Vec<f64> {
        self.locals.iter().flat_map(|l| l.to_vec()).collect()
    }

    pub fn from_flat(flat: &[f64], t: usize) -> Self {
        GlobalState {
            locals: flat.chunks(LOCAL_STATE_DIM).map(LocalState::from_slice).collect(),
            t,
        }
    }
}

/// One step's impressions: contexts `y_j` and the value matrix `V` (M×N).
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionBatch {
    pub contexts: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl AuctionBatch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Allocation matrix `G` (M×N).
    pub allocation: Vec<Vec<u8>>,
    /// Cost matrix `C` (M×N).
    pub prices: Vec<Vec<f64>>,
    pub batch: AuctionBatch,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    /// Advertisers that ran out of budget during this step.
    pub depleted: Vec<bool>,
}

/// A full trajectory from [`run_episode`].
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<crate::dataset::Transition>,
    pub summary: EpisodeSummary,
}
