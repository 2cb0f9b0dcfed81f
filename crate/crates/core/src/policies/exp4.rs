//! Exponential weights over the models acting as advice-giving experts.
//!
//! Each source model is one expert; optionally a running ridge estimate joins
//! as an extra expert. Experts emit a probability vector over arms, the agent
//! samples from the weight-mixed distribution, and every expert's weight moves
//! by an importance-weighted estimate of the reward its advice would have
//! earned. Rewards are rescaled to `[0, 1]` through the declared environment
//! range before entering the update; values outside that range are clamped and
//! counted.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linmodel::{new_design_state, ContextVector, DesignState};
use crate::transfer::{ConfidenceBounds, SourceModel, WeightVector};

use super::{argmax_index, Agent, ArmChoice};

/// How an expert turns its per-arm mean estimates into advice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdviceMode {
    /// One-hot on the expert's highest-mean arm (ties to the lowest index).
    Greedy,
    /// Softmax over the expert's mean estimates (unit temperature).
    Softmax,
}

/// Hyperparameters of [`Exp4Agent`].
#[derive(Debug, Clone, Copy)]
pub struct Exp4Config {
    /// Learning rate; [`exp4_auto_eta`] supplies the standard default.
    pub eta: f64,
    pub advice: AdviceMode,
    /// Whether a running ridge estimate participates as an extra expert.
    pub include_target_expert: bool,
    /// Regularizer for the target expert's ridge state.
    pub lambda: f64,
    /// Declared reward range of the environment, used to rescale to `[0, 1]`.
    pub reward_range: (f64, f64),
}

impl Default for Exp4Config {
    fn default() -> Self {
        Exp4Config {
            eta: 0.1,
            advice: AdviceMode::Greedy,
            include_target_expert: true,
            lambda: 1.0,
            reward_range: (0.0, 1.0),
        }
    }
}

impl Exp4Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!(
                "eta must be a positive real, got {}",
                self.eta
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda must be a positive real, got {}",
                self.lambda
            )));
        }
        let (lo, hi) = self.reward_range;
        if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
            return Err(Error::config(format!(
                "reward range must satisfy lo < hi with finite bounds, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// The standard learning rate `√(2·ln E / (n·K))` for `E` experts, horizon `n`
/// and `K` arms.
pub fn exp4_auto_eta(n_experts: usize, horizon: u64, n_arms: usize) -> f64 {
    assert!(n_experts >= 2, "need at least two experts, got {n_experts}");
    assert!(horizon >= 1, "horizon must be at least 1");
    assert!(n_arms >= 1, "need at least one arm");
    (2.0 * (n_experts as f64).ln() / (horizon as f64 * n_arms as f64)).sqrt()
}

/// EXP4 with model-based experts.
#[derive(Debug, Clone)]
pub struct Exp4Agent {
    cfg: Exp4Config,
    source_thetas: Vec<DVector<f64>>,
    target_state: Option<DesignState>,
    /// Log-space expert weights, kept max-normalized.
    log_weights: Vec<f64>,
    /// Row-per-arm context matrix, built on the first selection.
    x: DMatrix<f64>,
    /// Fixed advice of each source expert (contexts are fixed per run).
    source_advice: Vec<Vec<f64>>,
    /// Sampling distribution of the most recent selection.
    last_probs: Vec<f64>,
    /// Each expert's advice mass on the chosen arm, from the last selection.
    advice_at_chosen: Vec<f64>,
    prob_chosen: f64,
    clamped: u64,
}

impl Exp4Agent {
    pub fn new(cfg: Exp4Config, dim: usize, sources: Vec<SourceModel>) -> Result<Self> {
        cfg.validate()?;
        for (j, s) in sources.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::config(format!(
                    "source {j} has dimension {}, expected {dim}",
                    s.dim()
                )));
            }
        }
        let n_experts = sources.len() + usize::from(cfg.include_target_expert);
        if n_experts == 0 {
            return Err(Error::config(
                "EXP4 needs at least one expert: add sources or enable the target expert",
            ));
        }
        let target_state = if cfg.include_target_expert {
            Some(new_design_state(dim, cfg.lambda)?)
        } else {
            None
        };
        Ok(Exp4Agent {
            cfg,
            source_thetas: sources.into_iter().map(|s| s.theta().clone()).collect(),
            target_state,
            log_weights: vec![0.0; n_experts],
            x: DMatrix::zeros(0, 0),
            source_advice: Vec::new(),
            last_probs: Vec::new(),
            advice_at_chosen: Vec::new(),
            prob_chosen: 0.0,
            clamped: 0,
        })
    }

    fn n_experts(&self) -> usize {
        self.log_weights.len()
    }

    /// Normalized expert weights (sources first, target expert last if present).
    pub fn expert_weights(&self) -> Vec<f64> {
        let peak = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self.log_weights.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// The sampling distribution used by the most recent selection
    /// (empty before the first call).
    pub fn last_distribution(&self) -> &[f64] {
        &self.last_probs
    }

    /// How many observed rewards fell outside the declared range so far.
    pub fn clamped_rewards(&self) -> u64 {
        self.clamped
    }

    fn advice_from_means(&self, means: &DVector<f64>) -> Vec<f64> {
        let n = means.len();
        match self.cfg.advice {
            AdviceMode::Greedy => {
                let mut q = vec![0.0; n];
                q[argmax_index(means)] = 1.0;
                q
            }
            AdviceMode::Softmax => {
                let peak = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut q: Vec<f64> = means.iter().map(|m| (m - peak).exp()).collect();
                let total: f64 = q.iter().sum();
                for v in &mut q {
                    *v /= total;
                }
                q
            }
        }
    }

    fn ensure_contexts(&mut self, arms: &[ContextVector], dim: usize) {
        if self.x.nrows() == arms.len() && self.x.ncols() == dim {
            return;
        }
        self.x = DMatrix::from_fn(arms.len(), dim, |a, j| arms[a].values()[j]);
        self.source_advice = self
            .source_thetas
            .iter()
            .map(|theta| self.advice_from_means(&(&self.x * theta)))
            .collect();
    }
}

impl Agent for Exp4Agent {
    fn select(&mut self, arms: &[ContextVector], rng: &mut ChaCha8Rng) -> Result<ArmChoice> {
        if arms.is_empty() {
            return Err(Error::usage("cannot select from an empty arm set"));
        }
        let dim = arms[0].dim();
        if let Some(state) = &self.target_state {
            if state.dim() != dim {
                return Err(Error::usage(format!(
                    "arm dimension {dim} does not match state dimension {}",
                    state.dim()
                )));
            }
        }
        self.ensure_contexts(arms, dim);

        let weights = self.expert_weights();
        let n = arms.len();
        let mut probs = vec![0.0; n];
        let mut advice: Vec<Vec<f64>> = Vec::with_capacity(self.n_experts());
        advice.extend(self.source_advice.iter().cloned());
        if let Some(state) = &self.target_state {
            let means = &self.x * state.theta_t();
            advice.push(self.advice_from_means(&means));
        }
        for (w, q) in weights.iter().zip(&advice) {
            for (p, qa) in probs.iter_mut().zip(q) {
                *p += w * qa;
            }
        }

        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut arm_id = n - 1;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                arm_id = a;
                break;
            }
        }

        self.advice_at_chosen = advice.iter().map(|q| q[arm_id]).collect();
        self.prob_chosen = probs[arm_id];
        self.last_probs = probs;
        Ok(ArmChoice {
            arm_id,
            ucb_value: self.prob_chosen,
            exploration_term: 0.0,
        })
    }

    fn observe(&mut self, arms: &[ContextVector], choice: &ArmChoice, reward: f64) -> Result<()> {
        if self.advice_at_chosen.len() != self.n_experts() || self.prob_chosen <= 0.0 {
            return Err(Error::usage(
                "observe must follow a selection on the same agent",
            ));
        }
        let (lo, hi) = self.cfg.reward_range;
        let mut scaled = (reward - lo) / (hi - lo);
        if !(0.0..=1.0).contains(&scaled) {
            self.clamped += 1;
            scaled = scaled.clamp(0.0, 1.0);
        }
        for (lw, q) in self.log_weights.iter_mut().zip(&self.advice_at_chosen) {
            *lw += self.cfg.eta * q * scaled / self.prob_chosen;
        }
        let peak = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        for lw in &mut self.log_weights {
            *lw -= peak;
        }
        if let Some(state) = &mut self.target_state {
            state.absorb(&arms[choice.arm_id], reward)?;
        }
        self.advice_at_chosen.clear();
        self.prob_chosen = 0.0;
        Ok(())
    }

    fn weights(&self) -> WeightVector {
        let w = self.expert_weights();
        let (sources, target) = if self.cfg.include_target_expert {
            let m = w.len() - 1;
            (w[..m].to_vec(), w[m])
        } else {
            (w, 0.0)
        };
        WeightVector::new(sources, target).expect("normalized expert weights form a simplex")
    }

    fn bounds(&self) -> ConfidenceBounds {
        ConfidenceBounds::new(vec![0.0; self.source_thetas.len()], 0.0)
            .expect("zero bounds are valid")
    }

    fn design_state(&self) -> Option<&DesignState> {
        self.target_state.as_ref()
    }

    fn source_thetas(&self) -> Vec<&DVector<f64>> {
        self.source_thetas.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cv(v: &[f64]) -> ContextVector {
        ContextVector::new(v.to_vec()).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    fn source(v: &[f64]) -> SourceModel {
        SourceModel::new(dv(v)).unwrap()
    }

    #[test]
    fn unanimous_experts_force_the_arm() {
        // Both sources point at arm 0 and the target expert starts at θ̂ = 0,
        // whose greedy tie-break also lands on arm 0.
        let cfg = Exp4Config::default();
        let mut agent = Exp4Agent::new(
            cfg,
            2,
            vec![source(&[0.9, 0.0]), source(&[0.7, -0.1])],
        )
        .unwrap();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = agent.select(&arms, &mut rng).unwrap();
        assert_eq!(c.arm_id, 0);
        assert!((agent.last_distribution()[0] - 1.0).abs() < 1e-12);
        assert_eq!(agent.last_distribution()[1], 0.0);
        assert!((c.ucb_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_update_moves_the_weight_ratio_by_e_to_eta() {
        // Two disjoint one-hot experts with equal weights: P = (1/2, 1/2).
        // Reward 0.5 in a [0, 1] range gives the advising expert the estimate
        // q·r̃/P = 1·0.5/0.5 = 1 and the other expert 0, so the weight ratio
        // after the update is exactly e^η.
        let cfg = Exp4Config {
            include_target_expert: false,
            eta: 0.37,
            ..Exp4Config::default()
        };
        let mut agent =
            Exp4Agent::new(cfg, 2, vec![source(&[1.0, 0.0]), source(&[0.0, 1.0])]).unwrap();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = agent.select(&arms, &mut rng).unwrap();
        assert!((agent.last_distribution()[0] - 0.5).abs() < 1e-12);
        assert!((agent.last_distribution()[1] - 0.5).abs() < 1e-12);
        agent.observe(&arms, &c, 0.5).unwrap();
        let w = agent.expert_weights();
        let (hi, lo) = if w[0] > w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        assert!(((hi / lo) - 0.37f64.exp()).abs() < 1e-12);
        // The winning expert is the one whose arm was actually sampled.
        assert!(w[c.arm_id] > w[1 - c.arm_id]);
    }

    #[test]
    fn sampling_distribution_is_a_simplex_every_step() {
        for advice in [AdviceMode::Greedy, AdviceMode::Softmax] {
            let cfg = Exp4Config {
                advice,
                eta: 0.4,
                reward_range: (-1.0, 1.0),
                ..Exp4Config::default()
            };
            let mut agent = Exp4Agent::new(
                cfg,
                3,
                vec![source(&[0.5, 0.0, 0.0]), source(&[0.0, -0.5, 0.3])],
            )
            .unwrap();
            let arms = vec![
                cv(&[1.0, 0.0, 0.0]),
                cv(&[0.0, 1.0, 0.0]),
                cv(&[0.0, 0.0, 1.0]),
                cv(&[0.5, 0.5, 0.0]),
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for step in 0..200 {
                let c = agent.select(&arms, &mut rng).unwrap();
                let p = agent.last_distribution();
                assert!(p.iter().all(|&v| v >= 0.0), "negative prob at step {step}");
                let total: f64 = p.iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "sum {total} at step {step}");
                assert!(p[c.arm_id] > 0.0);
                let r = 0.3 * ((step % 5) as f64) - 0.6;
                agent.observe(&arms, &c, r).unwrap();
            }
        }
    }

    #[test]
    fn rewards_outside_declared_range_are_clamped_and_counted() {
        let cfg = Exp4Config {
            include_target_expert: false,
            ..Exp4Config::default()
        };
        let mut agent =
            Exp4Agent::new(cfg, 2, vec![source(&[1.0, 0.0]), source(&[0.0, 1.0])]).unwrap();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = agent.select(&arms, &mut rng).unwrap();
        agent.observe(&arms, &c, 2.0).unwrap();
        assert_eq!(agent.clamped_rewards(), 1);
        let c = agent.select(&arms, &mut rng).unwrap();
        agent.observe(&arms, &c, 0.5).unwrap();
        assert_eq!(agent.clamped_rewards(), 1);
        let c = agent.select(&arms, &mut rng).unwrap();
        agent.observe(&arms, &c, -0.1).unwrap();
        assert_eq!(agent.clamped_rewards(), 2);
    }

    #[test]
    fn weight_concentrates_on_the_informative_expert() {
        // Arm 0 always pays 1, arm 1 pays 0. Expert 0's advice is optimal.
        let cfg = Exp4Config {
            include_target_expert: false,
            eta: exp4_auto_eta(2, 500, 2),
            ..Exp4Config::default()
        };
        let mut agent =
            Exp4Agent::new(cfg, 2, vec![source(&[1.0, 0.0]), source(&[0.0, 1.0])]).unwrap();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut optimal_pulls = 0;
        for step in 0..500 {
            let c = agent.select(&arms, &mut rng).unwrap();
            let r = if c.arm_id == 0 { 1.0 } else { 0.0 };
            if step >= 400 && c.arm_id == 0 {
                optimal_pulls += 1;
            }
            agent.observe(&arms, &c, r).unwrap();
        }
        let w = agent.expert_weights();
        assert!(w[0] > w[1], "optimal expert weight {} vs {}", w[0], w[1]);
        assert!(
            optimal_pulls >= 60,
            "only {optimal_pulls}/100 late pulls were optimal"
        );
    }

    #[test]
    fn target_expert_learns_when_sources_are_useless() {
        let cfg = Exp4Config {
            eta: 0.3,
            ..Exp4Config::default()
        };
        let mut agent = Exp4Agent::new(cfg, 2, vec![source(&[0.0, 0.9])]).unwrap();
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..400 {
            let c = agent.select(&arms, &mut rng).unwrap();
            let r = if c.arm_id == 0 { 1.0 } else { 0.0 };
            agent.observe(&arms, &c, r).unwrap();
        }
        let w = agent.expert_weights();
        assert!(
            w[1] > w[0],
            "target expert weight {} should beat the bad source {}",
            w[1],
            w[0]
        );
        assert!(agent.design_state().unwrap().step() == 400);
    }

    #[test]
    fn config_and_usage_errors() {
        let cfg = Exp4Config {
            eta: 0.0,
            ..Exp4Config::default()
        };
        assert!(Exp4Agent::new(cfg, 2, vec![source(&[1.0, 0.0])]).is_err());

        let cfg = Exp4Config {
            reward_range: (1.0, 1.0),
            ..Exp4Config::default()
        };
        assert!(Exp4Agent::new(cfg, 2, vec![source(&[1.0, 0.0])]).is_err());

        let cfg = Exp4Config {
            include_target_expert: false,
            ..Exp4Config::default()
        };
        assert!(Exp4Agent::new(cfg, 2, Vec::new()).is_err());

        // observe before select is rejected.
        let mut agent = Exp4Agent::new(Exp4Config::default(), 2, Vec::new()).unwrap();
        let arms = vec![cv(&[1.0, 0.0])];
        let choice = ArmChoice {
            arm_id: 0,
            ucb_value: 1.0,
            exploration_term: 0.0,
        };
        assert!(agent.observe(&arms, &choice, 0.5).is_err());
    }

    #[test]
    fn auto_eta_formula() {
        let eta = exp4_auto_eta(2, 1000, 10);
        assert!((eta - (2.0 * 2.0f64.ln() / 10_000.0).sqrt()).abs() < 1e-15);
        assert!(exp4_auto_eta(4, 5000, 100) > 0.0);
    }

    #[test]
    fn randomness_comes_only_from_the_passed_generator() {
        let sources = vec![source(&[0.4, 0.1]), source(&[0.0, 0.5])];
        let arms = vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0]), cv(&[0.6, 0.6])];
        let run = |seed: u64| -> Vec<usize> {
            let cfg = Exp4Config {
                reward_range: (-1.0, 1.0),
                ..Exp4Config::default()
            };
            let mut agent = Exp4Agent::new(cfg, 2, sources.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| {
                    let c = agent.select(&arms, &mut rng).unwrap();
                    agent.observe(&arms, &c, 0.1 * (i % 7) as f64 - 0.2).unwrap();
                    c.arm_id
                })
                .collect()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
