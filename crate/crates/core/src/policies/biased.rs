//! Ridge regression biased toward a source combination instead of zero.
//!
//! The estimator minimizes `‖Dθ − y‖² + λ‖θ − θ_src‖²` where `θ_src` is a
//! softmax-weighted combination of the source models. Its exploration
//! coefficient adds `√λ·u_bound` to the worst-case target bound, paying for the
//! unknown distance between the bias point and the truth.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linmodel::{new_design_state, ContextVector, DesignState};
use crate::transfer::{
    gamma_source, gamma_target_theoretical, softmax_reweight, ConfidenceBounds, RewardTracker,
    SourceModel, WeightVector, U_MAX,
};

use super::{biased_fit, Agent, AgentConfig, ArmChoice, ArmScorer};

/// LinUCB with a source-biased ridge estimate.
///
/// With no sources the bias point is the origin and the agent reduces to
/// [`super::ClassicAgent`] with the theoretical bound. Source weights move by
/// the softmax rule restricted to the sources; the online estimate competes
/// through the regularizer rather than through a convex weight.
#[derive(Debug, Clone)]
pub struct BiasedAgent {
    cfg: AgentConfig,
    state: DesignState,
    sources: Vec<SourceModel>,
    tracker: RewardTracker,
    /// Simplex over the sources alone; empty when there are none.
    source_weights: Vec<f64>,
    gamma_sources: Vec<f64>,
    scorer: ArmScorer,
}

impl BiasedAgent {
    pub fn new(cfg: AgentConfig, dim: usize, sources: Vec<SourceModel>) -> Result<Self> {
        cfg.validate()?;
        for (j, s) in sources.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::config(format!(
                    "source {j} has dimension {}, expected {dim}",
                    s.dim()
                )));
            }
        }
        let state = new_design_state(dim, cfg.lambda)?;
        let tracker = RewardTracker::new();
        let m = sources.len();
        let source_weights = vec![1.0 / m.max(1) as f64; m];
        let gamma_sources = sources
            .iter()
            .map(|s| gamma_source(s, &tracker, cfg.lambda))
            .collect();
        Ok(BiasedAgent {
            cfg,
            state,
            sources,
            tracker,
            source_weights,
            gamma_sources,
            scorer: ArmScorer::new(),
        })
    }

    /// The current bias point `θ_src = Σ α_j·θ_{S,j}` (origin when no sources).
    pub fn bias_point(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.state.dim());
        for (w, src) in self.source_weights.iter().zip(&self.sources) {
            out.axpy(*w, src.theta(), 1.0);
        }
        out
    }

    /// Weighted distance bound `Σ α_j·u_j`, or the cap before any data arrives.
    ///
    /// Before the first observation with sources present nothing is known about
    /// the bias point's error, so the cap [`U_MAX`] is charged.
    pub fn u_bound(&self) -> f64 {
        if self.sources.is_empty() {
            return 0.0;
        }
        if self.tracker.rounds() == 0 {
            return U_MAX;
        }
        self.source_weights
            .iter()
            .zip(&self.sources)
            .map(|(w, s)| w * s.u_estimate())
            .sum()
    }

    /// The exploration coefficient for the current state.
    pub fn gamma(&self) -> f64 {
        gamma_target_theoretical(
            self.state.step(),
            self.state.dim(),
            self.state.lambda(),
            self.cfg.delta,
        ) + self.cfg.lambda.sqrt() * self.u_bound()
    }

    pub fn state(&self) -> &DesignState {
        &self.state
    }

    pub fn sources(&self) -> &[SourceModel] {
        &self.sources
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }
}

impl Agent for BiasedAgent {
    fn select(&mut self, arms: &[ContextVector], _rng: &mut ChaCha8Rng) -> Result<ArmChoice> {
        let theta = biased_fit(&self.state, &self.bias_point());
        let gamma = self.gamma();
        self.scorer.select(&self.state, &theta, gamma, arms)
    }

    fn observe(&mut self, arms: &[ContextVector], choice: &ArmChoice, reward: f64) -> Result<()> {
        let x = &arms[choice.arm_id];
        self.state.absorb(x, reward)?;
        self.tracker.log_pull(choice.arm_id, x.norm(), reward);
        for src in &mut self.sources {
            let pred = src.predict(x.values());
            src.record_prediction(choice.arm_id, pred);
            src.update_u_estimate(&self.tracker);
        }
        for (g, src) in self.gamma_sources.iter_mut().zip(&self.sources) {
            *g = gamma_source(src, &self.tracker, self.cfg.lambda);
        }
        if !self.sources.is_empty() {
            self.source_weights =
                softmax_reweight(&self.source_weights, &self.gamma_sources, self.cfg.beta);
        }
        Ok(())
    }

    fn weights(&self) -> WeightVector {
        if self.sources.is_empty() {
            WeightVector::new(Vec::new(), 1.0).expect("unit target weight is a valid simplex")
        } else {
            WeightVector::new(self.source_weights.clone(), 0.0)
                .expect("source softmax output is a valid simplex")
        }
    }

    fn bounds(&self) -> ConfidenceBounds {
        ConfidenceBounds::new(self.gamma_sources.clone(), self.gamma())
            .expect("bounds are finite and non-negative")
    }

    fn design_state(&self) -> Option<&DesignState> {
        Some(&self.state)
    }

    fn source_thetas(&self) -> Vec<&DVector<f64>> {
        self.sources.iter().map(|s| s.theta()).collect()
    }
}
