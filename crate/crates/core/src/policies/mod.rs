//! Decision-making agents behind one select → observe contract.
//!
//! Four policies are provided:
//! - [`ClassicAgent`] — plain LinUCB on the online ridge estimate.
//! - [`WeightedAgent`] — convex combination of source models and the target
//!   estimate, with hard or softmax weight updates driven by confidence bounds.
//! - [`BiasedAgent`] — ridge regression penalizing distance to a source
//!   combination instead of distance to zero.
//! - [`Exp4Agent`] — exponential weights over the models acting as experts.
//!
//! The free functions [`linucb_select`], [`weighted_select`], [`biased_fit`] and
//! [`biased_select`] are straightforward per-arm reference implementations of the
//! selection rules. The agents themselves route scoring through an internal
//! engine that evaluates all arms with one matrix product per step, which is
//! substantially faster on large arm sets and numerically identical in structure
//! (same per-coordinate accumulation order).

mod biased;
mod classic;
mod exp4;
mod weighted;

pub use biased::BiasedAgent;
pub use classic::ClassicAgent;
pub use exp4::{exp4_auto_eta, AdviceMode, Exp4Agent, Exp4Config};
pub use weighted::WeightedAgent;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linmodel::{ContextVector, DesignState};
use crate::transfer::{combine, ConfidenceBounds, SourceModel, WeightVector};

/// Which rule moves the convex weights each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// All mass on the model with the smallest confidence bound.
    Hard,
    /// Multiply by `exp(−βγ)` and normalize.
    Softmax,
}

/// Which target confidence bound the agent runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaTargetMode {
    /// Data-driven `√λ + √(log det A − d log λ + 2 log(1/δ))` — the tighter bound.
    Practical,
    /// Worst-case `√(d log(1 + k/(dλ)) + log(1/δ²))`.
    Theoretical,
}

/// Initial placement of the convex weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialWeights {
    /// `α_T = α_{S,j} = 1/(M+1)`.
    UniformAll,
    /// `α_T = 1/2`, `α_{S,j} = 1/(2M)`.
    HalfTarget,
}

/// Shared hyperparameters of the ridge-based agents.
#[derive(Debug, Clone, Copy)]
pub struct AgentConfig {
    pub lambda: f64,
    pub delta: f64,
    /// Softmax temperature β.
    pub beta: f64,
    pub update_rule: UpdateRule,
    pub gamma_target_mode: GammaTargetMode,
    pub initial_weights: InitialWeights,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            lambda: 1.0,
            delta: 0.05,
            beta: 1.0,
            update_rule: UpdateRule::Softmax,
            gamma_target_mode: GammaTargetMode::Practical,
            initial_weights: InitialWeights::UniformAll,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda must be a positive real, got {}",
                self.lambda
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must lie strictly between 0 and 1, got {}",
                self.delta
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::config(format!(
                "beta must be a positive real, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Outcome of one selection: the chosen arm and its score decomposition.
///
/// `ucb_value = estimated mean + exploration_term` by construction, so the
/// decomposition can always be re-derived from the logged parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmChoice {
    pub arm_id: usize,
    pub ucb_value: f64,
    pub exploration_term: f64,
}

/// The common agent contract consumed by the harness.
///
/// One instance serves one run: `select` proposes an arm for the current round,
/// `observe` feeds back the environment's reward for that arm. Agents draw
/// randomness only from the generator passed to `select` (only EXP4 uses it),
/// so a fixed seed gives a fixed trace.
pub trait Agent {
    fn select(&mut self, arms: &[ContextVector], rng: &mut ChaCha8Rng) -> Result<ArmChoice>;

    fn observe(&mut self, arms: &[ContextVector], choice: &ArmChoice, reward: f64) -> Result<()>;

    /// Current convex weights over (sources, target); classic reports `α_T = 1`.
    fn weights(&self) -> WeightVector;

    /// Current confidence bounds; agents without a bound concept report zeros.
    fn bounds(&self) -> ConfidenceBounds;

    /// The ridge state, when the agent maintains one (all four agents do, but
    /// EXP4 only when its target expert is enabled).
    fn design_state(&self) -> Option<&DesignState>;

    /// Parameter vectors of the source models this agent consults.
    fn source_thetas(&self) -> Vec<&DVector<f64>>;
}

/// Classic LinUCB rule: `argmax_a xᵀθ̂ + γ·‖x‖_{A⁻¹}`, ties to the lowest index.
///
/// Per-arm reference implementation; the agents use the batched engine instead.
pub fn linucb_select(state: &DesignState, arms: &[ContextVector], gamma: f64) -> Result<ArmChoice> {
    best_arm_reference(state, arms, state.theta_t(), gamma)
}

/// Weighted rule: mean from the convex model combination, exploration
/// coefficient `αᵀγ = Σ α_{S,j}·γ_{S,j} + α_T·γ_T`, ties to the lowest index.
pub fn weighted_select(
    state: &DesignState,
    sources: &[SourceModel],
    weights: &WeightVector,
    bounds: &ConfidenceBounds,
    arms: &[ContextVector],
) -> Result<ArmChoice> {
    let theta = combine(weights, sources, state.theta_t());
    let coeff = weighted_coefficient(weights, bounds);
    best_arm_reference(state, arms, &theta, coeff)
}

/// The weighted exploration coefficient `α_T·γ_T + Σ_j α_{S,j}·γ_{S,j}`.
pub fn weighted_coefficient(weights: &WeightVector, bounds: &ConfidenceBounds) -> f64 {
    let mut coeff = weights.target_weight() * bounds.gamma_target();
    for (w, g) in weights.source_weights().iter().zip(bounds.gamma_sources()) {
        coeff += w * g;
    }
    coeff
}

/// Biased-ridge estimator: minimizer of `‖Dθ − y‖² + λ‖θ − θ_src‖²`.
///
/// The closed form `A⁻¹Dᵀy − (A⁻¹DᵀD − I)θ_src` collapses to `A⁻¹(b + λθ_src)`
/// because `DᵀD = A − λI` and `Dᵀy = b`; with no observations it returns
/// `θ_src` unchanged (exactly).
pub fn biased_fit(state: &DesignState, theta_src: &DVector<f64>) -> DVector<f64> {
    if state.step() == 0 {
        return theta_src.clone();
    }
    state.gram_inv() * (state.moment() + theta_src * state.lambda())
}

/// Biased selection rule: `argmax_a xᵀθ̂ + γ·‖x‖_{A⁻¹}` with the biased estimator
/// and `γ = √(d log(1 + k/(dλ)) + log(1/δ²)) + √λ·u_bound`, where `u_bound`
/// upper-bounds `‖θ_src − θ*‖`.
pub fn biased_select(
    state: &DesignState,
    arms: &[ContextVector],
    theta_src: &DVector<f64>,
    u_bound: f64,
    delta: f64,
) -> Result<ArmChoice> {
    let theta = biased_fit(state, theta_src);
    let gamma = crate::transfer::gamma_target_theoretical(
        state.step(),
        state.dim(),
        state.lambda(),
        delta,
    ) + state.lambda().sqrt() * u_bound;
    best_arm_reference(state, arms, &theta, gamma)
}

/// Per-arm argmax of `xᵀθ + coeff·‖x‖_{A⁻¹}` with lowest-index tie breaking.
fn best_arm_reference(
    state: &DesignState,
    arms: &[ContextVector],
    theta: &DVector<f64>,
    coeff: f64,
) -> Result<ArmChoice> {
    if arms.is_empty() {
        return Err(Error::usage("cannot select from an empty arm set"));
    }
    let mut best: Option<ArmChoice> = None;
    for (arm_id, x) in arms.iter().enumerate() {
        if x.dim() != state.dim() {
            return Err(Error::usage(format!(
                "arm {arm_id} has dimension {}, state has {}",
                x.dim(),
                state.dim()
            )));
        }
        let mean = x.predict(theta);
        let exploration_term = coeff * state.mahalanobis_inv_norm(x);
        let ucb_value = mean + exploration_term;
        if best.is_none_or(|b| ucb_value > b.ucb_value) {
            best = Some(ArmChoice {
                arm_id,
                ucb_value,
                exploration_term,
            });
        }
    }
    Ok(best.expect("non-empty arm set"))
}

/// Batched arm scorer: evaluates every arm's mean and exploration width with
/// one `n×d · d×d` product per step instead of `n` separate matrix-vector
/// products. Buffers are allocated once and reused; the arm set must stay fixed
/// for the lifetime of a run (both environments guarantee that).
#[derive(Debug, Clone, Default)]
pub(crate) struct ArmScorer {
    /// Row-per-arm copy of the contexts (n × d).
    x: DMatrix<f64>,
    /// Scratch for X·A⁻¹ (n × d).
    e: DMatrix<f64>,
    /// Scratch for the per-arm means X·θ (n).
    means: DVector<f64>,
    /// Scratch for the squared exploration widths xᵀA⁻¹x (n).
    widths_sq: Vec<f64>,
    ready: bool,
}

impl ArmScorer {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, arms: &[ContextVector], dim: usize) {
        if self.ready && self.x.nrows() == arms.len() && self.x.ncols() == dim {
            return;
        }
        self.x = DMatrix::from_fn(arms.len(), dim, |a, j| arms[a].values()[j]);
        self.e = DMatrix::zeros(arms.len(), dim);
        self.means = DVector::zeros(arms.len());
        self.widths_sq = vec![0.0; arms.len()];
        self.ready = true;
    }

    /// Argmax of `xᵀθ + coeff·√(xᵀA⁻¹x)` over all arms, ties to the lowest index.
    pub(crate) fn select(
        &mut self,
        state: &DesignState,
        theta: &DVector<f64>,
        coeff: f64,
        arms: &[ContextVector],
    ) -> Result<ArmChoice> {
        if arms.is_empty() {
            return Err(Error::usage("cannot select from an empty arm set"));
        }
        if arms[0].dim() != state.dim() {
            return Err(Error::usage(format!(
                "arm dimension {} does not match state dimension {}",
                arms[0].dim(),
                state.dim()
            )));
        }
        self.ensure(arms, state.dim());
        self.x.mul_to(state.gram_inv(), &mut self.e);
        self.x.mul_to(theta, &mut self.means);
        let n = arms.len();
        self.widths_sq.fill(0.0);
        // Column-major accumulation keeps the per-arm sum order identical to a
        // coordinate-ascending dot product.
        for j in 0..state.dim() {
            let ecol = self.e.column(j);
            let xcol = self.x.column(j);
            for a in 0..n {
                self.widths_sq[a] += ecol[a] * xcol[a];
            }
        }
        let mut best = ArmChoice {
            arm_id: 0,
            ucb_value: f64::NEG_INFINITY,
            exploration_term: 0.0,
        };
        for a in 0..n {
            let exploration = coeff * self.widths_sq[a].max(0.0).sqrt();
            let ucb = self.means[a] + exploration;
            if ucb > best.ucb_value {
                best = ArmChoice {
                    arm_id: a,
                    ucb_value: ucb,
                    exploration_term: exploration,
                };
            }
        }
        Ok(best)
    }
}

/// Greedy argmax of `xᵀθ` over the rows of a precomputed mean vector,
/// ties to the lowest index. Shared by the EXP4 experts.
pub(crate) fn argmax_index(values: &DVector<f64>) -> usize {
    let mut arg = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        if *v > best {
            best = *v;
            arg = i;
        }
    }
    arg
}
