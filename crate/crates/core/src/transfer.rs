//! Source models, confidence-set bounds and the two weight-update rules.
//!
//! A [`SourceModel`] is a frozen parameter vector θ_S reused on a new task. Its
//! trustworthiness is summarized by a confidence bound γ_S computed from two
//! ingredients: a running lower-bound estimate of `U = ‖θ_S − θ*‖` and the squared
//! distance between the source's predicted rewards and the observed per-arm mean
//! rewards (kept by [`RewardTracker`]). The online target estimate carries its own
//! bound γ_T. Each round, the convex weights over `{sources, target}` move either
//! by the hard rule (all mass on the smallest γ) or by the softmax rule
//! (multiply by `exp(−βγ)` and normalize).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linmodel::DesignState;

/// Hard ceiling on `U = ‖θ_S − θ*‖`: both vectors have norm ≤ 1, so opposing
/// directions give at most 2. Noisy mean rewards can push the raw estimator
/// past this, so estimates are clipped to the attainable range.
pub const U_MAX: f64 = 2.0;

/// Norm slack tolerated when ingesting source vectors.
pub const SOURCE_NORM_TOL: f64 = 1e-9;

/// Multiplicative-update floor: an exact zero would be absorbing under the
/// softmax rule, so weights are clamped to this before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// A fixed, previously trained parameter vector with its running confidence data.
#[derive(Debug, Clone)]
pub struct SourceModel {
    theta_s: DVector<f64>,
    u_estimate: f64,
    /// Predicted reward per pulled arm, recorded at first pull (contexts are
    /// fixed within a run, so the prediction never changes afterwards).
    predictions: BTreeMap<usize, f64>,
}

impl SourceModel {
    /// Wraps a parameter vector; rejects norms above 1 + 1e-9.
    pub fn new(theta_s: DVector<f64>) -> Result<Self> {
        if theta_s.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("source model has a non-finite entry"));
        }
        let norm = theta_s.norm();
        if norm > 1.0 + SOURCE_NORM_TOL {
            return Err(Error::usage(format!(
                "source model norm {norm} exceeds 1 (max allowed 1 + 1e-9)"
            )));
        }
        Ok(SourceModel {
            theta_s,
            u_estimate: 0.0,
            predictions: BTreeMap::new(),
        })
    }

    /// Overrides the optimistic `u_estimate = 0` start with a prior value in `[0, 2]`.
    pub fn with_initial_u(mut self, u0: f64) -> Result<Self> {
        if !(0.0..=U_MAX).contains(&u0) {
            return Err(Error::config(format!(
                "initial distance estimate must lie in [0, {U_MAX}], got {u0}"
            )));
        }
        self.u_estimate = u0;
        Ok(self)
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta_s
    }

    pub fn dim(&self) -> usize {
        self.theta_s.len()
    }

    /// Current running estimate of `‖θ_S − θ*‖`; nondecreasing, capped at 2.
    pub fn u_estimate(&self) -> f64 {
        self.u_estimate
    }

    /// Source-predicted mean reward for a context: `xᵀθ_S`.
    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.theta_s.dot(x)
    }

    /// Stores the source's prediction for an arm the first time it is pulled.
    pub fn record_prediction(&mut self, arm_id: usize, prediction: f64) {
        self.predictions.entry(arm_id).or_insert(prediction);
    }

    pub fn prediction(&self, arm_id: usize) -> Option<f64> {
        self.predictions.get(&arm_id).copied()
    }

    /// Tightens the distance estimate from the observed evidence:
    /// `u ← max(u, max_rounds |r̄(arm) − xᵀθ_S| / ‖x‖)`, skipping zero-norm rounds.
    ///
    /// Every round that pulled a given arm shares that arm's context, prediction
    /// and current mean, so the maximum is taken over per-arm aggregates — exactly
    /// equivalent to walking the round log, in O(#distinct pulled arms).
    /// Returns the refreshed estimate (nondecreasing, clipped to [0, 2]).
    pub fn update_u_estimate(&mut self, tracker: &RewardTracker) -> f64 {
        let mut best = self.u_estimate;
        for (arm, stats) in tracker.per_arm() {
            if stats.pull_count == 0 || stats.context_norm <= 0.0 {
                continue;
            }
            if let Some(pred) = self.predictions.get(arm) {
                let mean = stats.reward_sum / stats.pull_count as f64;
                let cand = (mean - pred).abs() / stats.context_norm;
                if cand > best {
                    best = cand;
                }
            }
        }
        self.u_estimate = best.min(U_MAX);
        self.u_estimate
    }
}

/// Per-arm pull statistics of the current run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmStats {
    pub pull_count: u64,
    pub reward_sum: f64,
    /// Euclidean norm of the arm's context (fixed within a run).
    pub context_norm: f64,
}

/// Observed mean rewards, kept as per-arm aggregates plus the raw pull log.
///
/// The per-arm mean is `reward_sum / pull_count`; entries retroactively change
/// whenever their arm is pulled again, which is why distance terms are always
/// recomputed from the aggregates rather than maintained incrementally.
#[derive(Debug, Clone, Default)]
pub struct RewardTracker {
    per_arm: BTreeMap<usize, ArmStats>,
    pull_log: Vec<(usize, f64)>,
}

impl RewardTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Logs one round: which arm was pulled, its context norm, and the reward.
    pub fn log_pull(&mut self, arm_id: usize, context_norm: f64, reward: f64) {
        let entry = self.per_arm.entry(arm_id).or_insert(ArmStats {
            pull_count: 0,
            reward_sum: 0.0,
            context_norm,
        });
        entry.pull_count += 1;
        entry.reward_sum += reward;
        entry.context_norm = context_norm;
        self.pull_log.push((arm_id, context_norm));
    }

    /// Mean observed reward of an arm; `None` until it has been pulled.
    pub fn mean(&self, arm_id: usize) -> Option<f64> {
        self.per_arm
            .get(&arm_id)
            .filter(|s| s.pull_count > 0)
            .map(|s| s.reward_sum / s.pull_count as f64)
    }

    /// Number of rounds logged so far.
    pub fn rounds(&self) -> usize {
        self.pull_log.len()
    }

    pub fn per_arm(&self) -> impl Iterator<Item = (&usize, &ArmStats)> {
        self.per_arm.iter()
    }

    pub fn pull_log(&self) -> &[(usize, f64)] {
        &self.pull_log
    }
}

/// Convex weights over `(source_1 … source_M, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    source_weights: Vec<f64>,
    target_weight: f64,
}

impl WeightVector {
    /// Validates nonnegativity and Σ = 1 (tolerance 1e-12).
    pub fn new(source_weights: Vec<f64>, target_weight: f64) -> Result<Self> {
        if source_weights.iter().chain([&target_weight]).any(|w| !(*w >= 0.0)) {
            return Err(Error::usage("weights must be nonnegative"));
        }
        let sum: f64 = source_weights.iter().sum::<f64>() + target_weight;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::usage(format!(
                "weights must sum to 1 within 1e-12, got {sum}"
            )));
        }
        Ok(WeightVector {
            source_weights,
            target_weight,
        })
    }

    /// Every model equally weighted: `α_T = α_{S,j} = 1/(M+1)`.
    pub fn uniform_all(n_sources: usize) -> Self {
        let w = 1.0 / (n_sources as f64 + 1.0);
        WeightVector {
            source_weights: vec![w; n_sources],
            target_weight: w,
        }
    }

    /// Half the mass on the target: `α_T = 1/2`, `α_{S,j} = 1/(2M)`
    /// (degenerates to `α_T = 1` with no sources).
    pub fn half_target(n_sources: usize) -> Self {
        if n_sources == 0 {
            return WeightVector {
                source_weights: vec![],
                target_weight: 1.0,
            };
        }
        WeightVector {
            source_weights: vec![0.5 / n_sources as f64; n_sources],
            target_weight: 0.5,
        }
    }

    pub fn n_sources(&self) -> usize {
        self.source_weights.len()
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    pub fn target_weight(&self) -> f64 {
        self.target_weight
    }

    /// Index of the largest weight, sources first, target last (ties: first).
    pub fn argmax(&self) -> usize {
        let mut best = self.target_weight;
        let mut arg = self.source_weights.len();
        for (j, w) in self.source_weights.iter().enumerate() {
            if *w > best {
                best = *w;
                arg = j;
            }
        }
        // Prefer the earliest index among exact ties.
        for (j, w) in self.source_weights.iter().enumerate() {
            if *w == best {
                arg = arg.min(j);
                break;
            }
        }
        arg
    }
}

/// Confidence-set bounds `(γ_{S,1..M}, γ_T)`; all entries finite and ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBounds {
    gamma_sources: Vec<f64>,
    gamma_target: f64,
}

impl ConfidenceBounds {
    pub fn new(gamma_sources: Vec<f64>, gamma_target: f64) -> Result<Self> {
        if gamma_sources
            .iter()
            .chain([&gamma_target])
            .any(|g| !g.is_finite() || *g < 0.0)
        {
            return Err(Error::usage("confidence bounds must be finite and nonnegative"));
        }
        Ok(ConfidenceBounds {
            gamma_sources,
            gamma_target,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.gamma_sources.len()
    }

    pub fn gamma_sources(&self) -> &[f64] {
        &self.gamma_sources
    }

    pub fn gamma_target(&self) -> f64 {
        self.gamma_target
    }
}

/// Data-driven target bound: `γ_T = √λ + √(log det A − d·log λ + 2·log(1/δ))`.
///
/// The square-root argument is `log(det A / (λ^d δ²)) ≥ 2 log(1/δ) > 0` because
/// `det A ≥ λ^d`. Requires `δ ∈ (0, 1)`.
pub fn gamma_target_practical(state: &DesignState, delta: f64) -> f64 {
    assert!(
        delta > 0.0 && delta < 1.0,
        "delta must lie in (0, 1), got {delta}"
    );
    let d = state.dim() as f64;
    let arg = state.log_det() - d * state.lambda().ln() + 2.0 * (1.0 / delta).ln();
    state.lambda().sqrt() + arg.max(0.0).sqrt()
}

/// Worst-case target bound after `k` pulls: `γ_T = √(d·log(1 + k/(dλ)) + log(1/δ²))`.
///
/// Grows like `√log k`; used by the diagnostics evaluators and available as a
/// policy option. Requires `δ ∈ (0, 1]` (δ = 1 drops the confidence term).
pub fn gamma_target_theoretical(k: u64, d: usize, lambda: f64, delta: f64) -> f64 {
    gamma_target_theoretical_kf(k as f64, d, lambda, delta)
}

/// `gamma_target_theoretical` on a real-valued pull count (shared with tests
/// that evaluate the closed form at non-integer crossing points).
pub(crate) fn gamma_target_theoretical_kf(k: f64, d: usize, lambda: f64, delta: f64) -> f64 {
    assert!(
        delta > 0.0 && delta <= 1.0,
        "delta must lie in (0, 1], got {delta}"
    );
    let d = d as f64;
    (d * (1.0 + k / (d * lambda)).ln() + 2.0 * (1.0 / delta).ln())
        .max(0.0)
        .sqrt()
}

/// Source bound: `γ_S = √(λ·u² + Σ_arms pull_count·(prediction − mean)²)`.
///
/// The second term is `‖y_S − ȳ‖₂²` over the round log, recomputed exactly from
/// per-arm aggregates each call (means change retroactively, so incremental
/// deltas would be error-prone). With no logged data this reduces to `√λ·u`.
pub fn gamma_source(src: &SourceModel, tracker: &RewardTracker, lambda: f64) -> f64 {
    let mut sq = lambda * src.u_estimate() * src.u_estimate();
    for (arm, stats) in tracker.per_arm() {
        if stats.pull_count == 0 {
            continue;
        }
        if let Some(pred) = src.prediction(*arm) {
            let diff = pred - stats.reward_sum / stats.pull_count as f64;
            sq += stats.pull_count as f64 * diff * diff;
        }
    }
    sq.max(0.0).sqrt()
}

/// Hard rule: one-hot on the model with the smallest γ.
///
/// Ties go against the target — any source whose γ equals the overall minimum
/// wins, and the lowest-indexed such source is chosen.
pub fn hard_update(bounds: &ConfidenceBounds) -> WeightVector {
    let m = bounds
        .gamma_sources()
        .iter()
        .fold(bounds.gamma_target(), |acc, g| acc.min(*g));
    let mut source_weights = vec![0.0; bounds.n_sources()];
    match bounds.gamma_sources().iter().position(|g| *g <= m) {
        Some(j) => {
            source_weights[j] = 1.0;
            WeightVector {
                source_weights,
                target_weight: 0.0,
            }
        }
        None => WeightVector {
            source_weights,
            target_weight: 1.0,
        },
    }
}

/// Softmax rule: `α_i(k+1) ∝ α_i(k)·exp(−β·γ_i)` jointly over sources and target.
///
/// Evaluated in log space with max-subtraction so extreme `β·γ` products cannot
/// overflow, then floored at [`WEIGHT_FLOOR`] and normalized. The output is a
/// valid simplex point for any finite bounds and `β > 0`.
pub fn softmax_update(weights: &WeightVector, bounds: &ConfidenceBounds, beta: f64) -> WeightVector {
    assert_eq!(
        weights.n_sources(),
        bounds.n_sources(),
        "weights and bounds disagree on the number of sources"
    );
    let joint_weights: Vec<f64> = weights
        .source_weights()
        .iter()
        .copied()
        .chain([weights.target_weight()])
        .collect();
    let joint_gammas: Vec<f64> = bounds
        .gamma_sources()
        .iter()
        .copied()
        .chain([bounds.gamma_target()])
        .collect();
    let mut raw = softmax_reweight(&joint_weights, &joint_gammas, beta);
    let target_weight = raw.pop().expect("scores include the target entry");
    WeightVector {
        source_weights: raw,
        target_weight,
    }
}

/// One multiplicative-weights step on an arbitrary simplex:
/// `w_i(k+1) ∝ w_i(k)·exp(−β·γ_i)`.
///
/// Shared core of [`softmax_update`]; also used standalone when the update
/// runs over a subset of the models (e.g. sources only). Log-space with
/// max-subtraction, floored at [`WEIGHT_FLOOR`], normalized to sum 1.
pub fn softmax_reweight(weights: &[f64], gammas: &[f64], beta: f64) -> Vec<f64> {
    assert!(beta > 0.0, "softmax temperature must be positive, got {beta}");
    assert_eq!(
        weights.len(),
        gammas.len(),
        "weights and penalties must have equal length"
    );
    let log_scores: Vec<f64> = weights
        .iter()
        .zip(gammas)
        .map(|(w, g)| w.ln() - beta * g)
        .collect();
    let peak = log_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut raw: Vec<f64> = log_scores
        .iter()
        .map(|l| (l - peak).exp().max(WEIGHT_FLOOR))
        .collect();
    let total: f64 = raw.iter().sum();
    for w in &mut raw {
        *w /= total;
    }
    raw
}

/// Convex model combination: `θ̂ = Σ α_{S,j}·θ_{S,j} + α_T·θ̂_T`.
pub fn combine(weights: &WeightVector, sources: &[SourceModel], theta_t: &DVector<f64>) -> DVector<f64> {
    assert_eq!(
        weights.n_sources(),
        sources.len(),
        "weights and sources disagree on the number of sources"
    );
    let mut out = theta_t * weights.target_weight();
    for (w, src) in weights.source_weights().iter().zip(sources) {
        out.axpy(*w, src.theta(), 1.0);
    }
    out
}

/// Reads source models from a flat text file: one line per source, `d`
/// whitespace-separated decimal floats. Blank lines and lines starting with `#`
/// are skipped. Vectors with norm above 1 + 1e-9 are rejected unless
/// `renormalize` is set, in which case they are scaled down to unit norm.
pub fn load_source_models(path: impl AsRef<Path>, renormalize: bool) -> Result<Vec<SourceModel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut models = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut values = Vec::new();
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::data(&display, line_no, format!("not a decimal float: {tok:?}"))
            })?;
            values.push(v);
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::data(
                    &display,
                    line_no,
                    format!("expected {d} coordinates, found {}", values.len()),
                ));
            }
            _ => {}
        }
        let mut theta = DVector::from_vec(values);
        let norm = theta.norm();
        if norm > 1.0 + SOURCE_NORM_TOL {
            if renormalize {
                theta /= norm;
            } else {
                return Err(Error::data(
                    &display,
                    line_no,
                    format!("source norm {norm} exceeds 1 (re-run with --renormalize to scale it down)"),
                ));
            }
        }
        models.push(SourceModel::new(theta).map_err(|e| {
            Error::data(&display, line_no, e.to_string())
        })?);
    }
    Ok(models)
}

/// Writes source models in the flat text format read by [`load_source_models`].
pub fn save_source_models(path: impl AsRef<Path>, models: &[SourceModel]) -> Result<()> {
    let mut out = String::new();
    for m in models {
        let mut line = String::new();
        for (i, v) in m.theta().iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{v}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
