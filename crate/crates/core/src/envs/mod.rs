//! Experimental environments: a synthetic linear-reward generator and a
//! MovieLens-backed environment with per-user pretraining and demographic
//! grouping.
//!
//! Environments are immutable after construction and safe to share across
//! parallel runs; reward noise comes exclusively from the generator each call
//! receives, so a seeded run is reproducible.

mod movielens;
mod synthetic;

pub use movielens::{
    age_band, group_sources, load_movielens, pretrain_sources, write_demo_dataset,
    MovieLensUniverse, MovieLensUserEnv, UserInfo, DEFAULT_PRETRAIN_ROUNDS,
    MOVIELENS_REWARD_RANGE, N_GENRES,
};
pub use synthetic::{
    gen_synthetic, load_synthetic_spec, save_synthetic_spec, SyntheticEnv, SyntheticSpec,
    SYNTHETIC_REWARD_RANGE,
};

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::linmodel::ContextVector;

/// A fixed-arm bandit environment.
///
/// The arm set is fixed for the lifetime of the environment. `mean_reward`
/// exposes the exact expected reward per arm, which makes pseudo-regret
/// (optimal mean minus chosen mean) computable without estimation.
pub trait Environment: Send + Sync {
    /// The arm contexts, in stable arm-id order.
    fn arms(&self) -> &[ContextVector];

    fn dim(&self) -> usize {
        self.arms().first().map_or(0, |x| x.dim())
    }

    /// Exact expected reward of the arm.
    fn mean_reward(&self, arm: usize) -> f64;

    /// One reward sample; all randomness comes from `rng`.
    fn draw_reward(&self, arm: usize, rng: &mut ChaCha8Rng) -> f64;

    /// The best achievable expected reward.
    fn optimal_mean(&self) -> f64;

    /// Instantaneous pseudo-regret of pulling `arm`.
    fn pseudo_regret(&self, arm: usize) -> f64 {
        self.optimal_mean() - self.mean_reward(arm)
    }

    /// Declared reward interval, used by policies that rescale rewards.
    fn reward_range(&self) -> (f64, f64);

    /// The true parameter vector when the environment knows one.
    fn theta_star(&self) -> Option<&DVector<f64>>;
}
