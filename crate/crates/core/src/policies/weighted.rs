//! LinUCB on a convex combination of source models and the online estimate.
//!
//! Each round the agent scores arms with the combined parameter vector and the
//! weight-averaged exploration coefficient, then refreshes confidence bounds
//! and weights from the new observation:
//!
//! 1. absorb the reward into the ridge state,
//! 2. log the pull and record each source's first-pull prediction for the arm,
//! 3. tighten each source's parameter-distance estimate `u_j`,
//! 4. recompute every `γ_{S,j}` and the target bound `γ_T`,
//! 5. move the weights by the configured rule (hard or softmax).

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linmodel::{new_design_state, ContextVector, DesignState};
use crate::transfer::{
    combine, gamma_source, gamma_target_practical, gamma_target_theoretical, hard_update,
    softmax_update, ConfidenceBounds, RewardTracker, SourceModel, WeightVector,
};

use super::{
    weighted_coefficient, Agent, AgentConfig, ArmChoice, ArmScorer, GammaTargetMode,
    InitialWeights, UpdateRule,
};

/// Transfer agent combining `M` fixed source models with the ridge estimate.
///
/// With no sources it degenerates to [`super::ClassicAgent`] exactly: the
/// combined vector is `1.0·θ̂_T` and the coefficient `1.0·γ_T`.
#[derive(Debug, Clone)]
pub struct WeightedAgent {
    cfg: AgentConfig,
    state: DesignState,
    sources: Vec<SourceModel>,
    tracker: RewardTracker,
    weights: WeightVector,
    bounds: ConfidenceBounds,
    scorer: ArmScorer,
}

impl WeightedAgent {
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
        let weights = match cfg.initial_weights {
            InitialWeights::UniformAll => WeightVector::uniform_all(sources.len()),
            InitialWeights::HalfTarget => WeightVector::half_target(sources.len()),
        };
        let bounds = Self::current_bounds(&cfg, &state, &sources, &tracker)?;
        Ok(WeightedAgent {
            cfg,
            state,
            sources,
            tracker,
            weights,
            bounds,
            scorer: ArmScorer::new(),
        })
    }

    fn current_bounds(
        cfg: &AgentConfig,
        state: &DesignState,
        sources: &[SourceModel],
        tracker: &RewardTracker,
    ) -> Result<ConfidenceBounds> {
        let gamma_sources = sources
            .iter()
            .map(|s| gamma_source(s, tracker, cfg.lambda))
            .collect();
        let gamma_target = match cfg.gamma_target_mode {
            GammaTargetMode::Practical => gamma_target_practical(state, cfg.delta),
            GammaTargetMode::Theoretical => {
                gamma_target_theoretical(state.step(), state.dim(), state.lambda(), cfg.delta)
            }
        };
        ConfidenceBounds::new(gamma_sources, gamma_target)
    }

    pub fn sources(&self) -> &[SourceModel] {
        &self.sources
    }

    pub fn tracker(&self) -> &RewardTracker {
        &self.tracker
    }

    pub fn state(&self) -> &DesignState {
        &self.state
    }

    /// The combined parameter vector the next selection would use.
    pub fn combined_theta(&self) -> DVector<f64> {
        combine(&self.weights, &self.sources, self.state.theta_t())
    }
}

impl Agent for WeightedAgent {
    fn select(&mut self, arms: &[ContextVector], _rng: &mut ChaCha8Rng) -> Result<ArmChoice> {
        let theta = self.combined_theta();
        let coeff = weighted_coefficient(&self.weights, &self.bounds);
        self.scorer.select(&self.state, &theta, coeff, arms)
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
        self.bounds = Self::current_bounds(&self.cfg, &self.state, &self.sources, &self.tracker)?;
        self.weights = match self.cfg.update_rule {
            UpdateRule::Hard => hard_update(&self.bounds),
            UpdateRule::Softmax => softmax_update(&self.weights, &self.bounds, self.cfg.beta),
        };
        Ok(())
    }

    fn weights(&self) -> WeightVector {
        self.weights.clone()
    }

    fn bounds(&self) -> ConfidenceBounds {
        self.bounds.clone()
    }

    fn design_state(&self) -> Option<&DesignState> {
        Some(&self.state)
    }

    fn source_thetas(&self) -> Vec<&DVector<f64>> {
        self.sources.iter().map(|s| s.theta()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::ClassicAgent;
    use rand::{Rng, SeedableRng};

    fn cv(v: &[f64]) -> ContextVector {
        ContextVector::new(v.to_vec()).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    fn unit_cap(mut v: DVector<f64>) -> ContextVector {
        if v.norm() > 1.0 {
            v /= v.norm();
        }
        ContextVector::from_dvector(v).unwrap()
    }

    /// Noiseless rewards from a fixed truth vector.
    fn run_noiseless(
        agent: &mut WeightedAgent,
        arms: &[ContextVector],
        truth: &DVector<f64>,
        steps: usize,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..steps {
            let c = agent.select(arms, &mut rng).unwrap();
            let r = arms[c.arm_id].predict(truth);
            agent.observe(arms, &c, r).unwrap();
        }
    }

    #[test]
    fn initial_weights_follow_config() {
        let src = vec![
            SourceModel::new(dv(&[0.1, 0.0])).unwrap(),
            SourceModel::new(dv(&[0.0, 0.1])).unwrap(),
            SourceModel::new(dv(&[0.1, 0.1])).unwrap(),
        ];
        let cfg = AgentConfig::default();
        let a = WeightedAgent::new(cfg, 2, src.clone()).unwrap();
        assert_eq!(a.weights().target_weight(), 0.25);
        assert_eq!(a.weights().source_weights(), &[0.25, 0.25, 0.25]);

        let cfg = AgentConfig {
            initial_weights: InitialWeights::HalfTarget,
            ..AgentConfig::default()
        };
        let a = WeightedAgent::new(cfg, 2, src).unwrap();
        assert_eq!(a.weights().target_weight(), 0.5);
        assert_eq!(a.weights().source_weights(), &[0.5 / 3.0; 3]);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let src = vec![SourceModel::new(dv(&[0.1, 0.0, 0.0])).unwrap()];
        assert!(WeightedAgent::new(AgentConfig::default(), 2, src).is_err());
    }

    #[test]
    fn perfect_source_captures_weight() {
        let truth = dv(&[0.8, -0.4, 0.2]);
        let arms: Vec<ContextVector> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..30)
                .map(|_| unit_cap(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))))
                .collect()
        };
        let perfect = SourceModel::new(truth.clone()).unwrap();

        // Hard rule: a zero source bound beats the target bound immediately.
        let cfg = AgentConfig {
            update_rule: UpdateRule::Hard,
            ..AgentConfig::default()
        };
        let mut agent = WeightedAgent::new(cfg, 3, vec![perfect.clone()]).unwrap();
        run_noiseless(&mut agent, &arms, &truth, 5);
        assert_eq!(agent.weights().source_weights(), &[1.0]);
        assert_eq!(agent.weights().target_weight(), 0.0);
        assert_eq!(agent.bounds().gamma_sources()[0], 0.0);

        // Softmax rule: mass moves toward the source monotonically here.
        let cfg = AgentConfig {
            update_rule: UpdateRule::Softmax,
            ..AgentConfig::default()
        };
        let mut agent = WeightedAgent::new(cfg, 3, vec![perfect]).unwrap();
        let mut prev = agent.weights().source_weights()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..30 {
            let c = agent.select(&arms, &mut rng).unwrap();
            let r = arms[c.arm_id].predict(&truth);
            agent.observe(&arms, &c, r).unwrap();
            let cur = agent.weights().source_weights()[0];
            assert!(cur >= prev - 1e-15, "source weight decreased: {prev} → {cur}");
            prev = cur;
        }
        assert!(prev > 0.9, "softmax left source weight at {prev}");
    }

    #[test]
    fn misleading_source_is_discarded_by_hard_rule() {
        let truth = dv(&[0.9, 0.0]);
        let hostile = SourceModel::new(dv(&[-0.9, 0.0])).unwrap();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0]), cv(&[-1.0, 0.0])];
        let cfg = AgentConfig {
            update_rule: UpdateRule::Hard,
            ..AgentConfig::default()
        };
        let mut agent = WeightedAgent::new(cfg, 2, vec![hostile]).unwrap();
        run_noiseless(&mut agent, &arms, &truth, 200);
        assert_eq!(agent.weights().target_weight(), 1.0);
        assert_eq!(agent.weights().source_weights(), &[0.0]);
        let b = agent.bounds();
        assert!(b.gamma_sources()[0] > b.gamma_target());
        // Once discarded the agent exploits the truth's best arm.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = agent.select(&arms, &mut rng).unwrap();
        assert_eq!(c.arm_id, 0);
    }

    #[test]
    fn no_sources_matches_classic_bitwise() {
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arms: Vec<ContextVector> = (0..25)
            .map(|_| unit_cap(DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))))
            .collect();
        let rewards: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();

        let cfg = AgentConfig::default();
        let mut classic = ClassicAgent::new(cfg, dim).unwrap();
        let mut weighted = WeightedAgent::new(cfg, dim, Vec::new()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        for (i, &r) in rewards.iter().enumerate() {
            let a = classic.select(&arms, &mut r1).unwrap();
            let b = weighted.select(&arms, &mut r2).unwrap();
            assert_eq!(a.arm_id, b.arm_id, "diverged at step {i}");
            assert_eq!(
                a.ucb_value.to_bits(),
                b.ucb_value.to_bits(),
                "score bits diverged at step {i}"
            );
            classic.observe(&arms, &a, r).unwrap();
            weighted.observe(&arms, &b, r).unwrap();
        }
        assert_eq!(weighted.weights().target_weight(), 1.0);
    }

    #[test]
    fn observe_updates_follow_the_round_order() {
        // After one observe: the pull is logged, the prediction recorded for
        // that arm only, u refreshed, and bounds reflect the post-pull state.
        let truth = dv(&[0.5, 0.5]);
        let src = SourceModel::new(dv(&[0.5, 0.0])).unwrap();
        let mut agent = WeightedAgent::new(AgentConfig::default(), 2, vec![src]).unwrap();
        let gamma_t_before = agent.bounds().gamma_target();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = agent.select(&arms, &mut rng).unwrap();
        let r = arms[c.arm_id].predict(&truth);
        agent.observe(&arms, &c, r).unwrap();

        assert_eq!(agent.tracker().rounds(), 1);
        assert_eq!(agent.tracker().mean(c.arm_id), Some(r));
        assert!(agent.sources()[0].prediction(c.arm_id).is_some());
        let other = 1 - c.arm_id;
        assert!(agent.sources()[0].prediction(other).is_none());
        // The practical target bound strictly grows once data arrives.
        assert!(agent.bounds().gamma_target() > gamma_t_before);
        assert_eq!(agent.state().step(), 1);
    }

    #[test]
    fn snapshot_weights_always_form_a_simplex() {
        let truth = dv(&[0.3, -0.6]);
        let sources = vec![
            SourceModel::new(dv(&[0.3, -0.6])).unwrap(),
            SourceModel::new(dv(&[-0.3, 0.6])).unwrap(),
        ];
        for rule in [UpdateRule::Hard, UpdateRule::Softmax] {
            let cfg = AgentConfig {
                update_rule: rule,
                ..AgentConfig::default()
            };
            let mut agent = WeightedAgent::new(cfg, 2, sources.clone()).unwrap();
            let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0]), cv(&[0.7, -0.7])];
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..60 {
                let c = agent.select(&arms, &mut rng).unwrap();
                let r = arms[c.arm_id].predict(&truth);
                agent.observe(&arms, &c, r).unwrap();
                let w = agent.weights();
                let total: f64 = w.source_weights().iter().sum::<f64>() + w.target_weight();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
