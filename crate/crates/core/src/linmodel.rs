//! Regularized least-squares state for the target estimator.
//!
//! [`DesignState`] maintains the ridge statistics of a linear bandit:
//! the design matrix `A(k) = λI + Σ x xᵀ` over the absorbed contexts, its inverse,
//! the moment vector `b(k) = Σ r·x` and the estimate `θ̂ = A⁻¹ b`. The inverse is
//! kept current with a rank-1 (Sherman–Morrison) update per absorb, with a full
//! re-factorization every [`REFACTOR_INTERVAL`] steps to bound floating-point drift.
//!
//! All policies go through the two matrix-norm primitives defined here:
//! `‖x‖_{A⁻¹} = √(xᵀ A⁻¹ x)` (exploration width) and `‖v‖_A = √(vᵀ A v)`
//! (confidence-set geometry).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of absorbs between full re-factorizations of the maintained inverse.
///
/// Rank-1 updates cost O(d²) and are exact in real arithmetic; the periodic
/// re-factorization only exists to stop float drift from compounding over very
/// long runs.
pub const REFACTOR_INTERVAL: u64 = 1000;

/// Largest Euclidean norm a context vector may carry (1 plus float headroom).
pub const CONTEXT_NORM_TOL: f64 = 1e-12;

/// A single arm's feature vector, guaranteed `‖x‖ ≤ 1 + 1e-12` at construction.
///
/// The norm is computed once and cached; zero vectors are legal (sparse or
/// genre-less dataset rows) and behave as no-ops when absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    values: DVector<f64>,
    norm: f64,
}

impl ContextVector {
    /// Builds a context vector, rejecting non-finite entries and norms above 1 + 1e-12.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_dvector(DVector::from_vec(values))
    }

    pub fn from_dvector(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("context vector has a non-finite entry"));
        }
        let norm = values.norm();
        if norm > 1.0 + CONTEXT_NORM_TOL {
            return Err(Error::usage(format!(
                "context vector norm {norm} exceeds 1 (max allowed 1 + 1e-12)"
            )));
        }
        Ok(ContextVector { values, norm })
    }

    /// The all-zeros context of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        ContextVector {
            values: DVector::zeros(dim),
            norm: 0.0,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Cached Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Predicted mean reward of this context under parameters `theta`: `xᵀθ`.
    pub fn predict(&self, theta: &DVector<f64>) -> f64 {
        self.values.dot(theta)
    }
}

/// Ridge statistics of the online target estimator.
///
/// Invariants kept by construction:
/// - `gram` is symmetric with every eigenvalue ≥ λ,
/// - `gram × gram_inv ≈ I` (rank-1 maintenance plus periodic re-factorization),
/// - `theta_t = gram_inv × moment` after every absorb,
/// - a fresh state is `gram = λI`, `moment = 0`, `theta_t = 0`, `step = 0`.
#[derive(Debug, Clone)]
pub struct DesignState {
    dim: usize,
    lambda: f64,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    moment: DVector<f64>,
    theta_t: DVector<f64>,
    step: u64,
}

/// Creates the step-0 state: `A = λI`, `b = 0`, `θ̂ = 0`.
pub fn new_design_state(dim: usize, lambda: f64) -> Result<DesignState> {
    if dim == 0 {
        return Err(Error::config("context dimension must be at least 1"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!(
            "ridge regularization must be a positive real, got {lambda}"
        )));
    }
    Ok(DesignState {
        dim,
        lambda,
        gram: DMatrix::identity(dim, dim) * lambda,
        gram_inv: DMatrix::identity(dim, dim) * (1.0 / lambda),
        moment: DVector::zeros(dim),
        theta_t: DVector::zeros(dim),
        step: 0,
    })
}

impl DesignState {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of absorbed pulls.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    /// Current ridge estimate `θ̂ = A⁻¹ b`.
    pub fn theta_t(&self) -> &DVector<f64> {
        &self.theta_t
    }

    /// Absorbs one observation: `A += xxᵀ`, `b += r·x`, inverse and `θ̂` refreshed.
    ///
    /// The inverse is updated with the Sherman–Morrison identity
    /// `A'⁻¹ = A⁻¹ − (A⁻¹x)(A⁻¹x)ᵀ / (1 + xᵀA⁻¹x)`. The denominator is ≥ 1 in
    /// exact arithmetic; if drift ever drives it non-positive the state is
    /// re-factorized from `gram` and the update retried from the clean inverse.
    pub fn absorb(&mut self, x: &ContextVector, r: f64) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::usage(format!(
                "context dimension {} does not match state dimension {}",
                x.dim(),
                self.dim
            )));
        }
        let xc = x.values();
        self.gram.ger(1.0, xc, xc, 1.0);

        let mut u = &self.gram_inv * xc;
        let mut denom = 1.0 + xc.dot(&u);
        if !(denom > f64::EPSILON) {
            // Positive-definiteness is guaranteed mathematically; reaching this
            // branch means the maintained inverse has drifted. Rebuild and retry.
            self.refactorize();
            u = &self.gram_inv * xc;
            denom = 1.0 + xc.dot(&u);
        }
        self.gram_inv.ger(-1.0 / denom, &u, &u, 1.0);

        self.moment.axpy(r, xc, 1.0);
        self.gram_inv.mul_to(&self.moment, &mut self.theta_t);
        self.step += 1;
        if self.step.is_multiple_of(REFACTOR_INTERVAL) {
            self.refactorize();
        }
        Ok(())
    }

    /// Rebuilds `gram_inv` (and `θ̂`) from `gram` via a Cholesky factorization.
    pub fn refactorize(&mut self) {
        match Cholesky::new(self.gram.clone()) {
            Some(ch) => self.gram_inv = ch.inverse(),
            // gram is PD by construction; LU is a belt-and-braces fallback.
            None => {
                if let Some(inv) = self.gram.clone().try_inverse() {
                    self.gram_inv = inv;
                }
            }
        }
        self.gram_inv.mul_to(&self.moment, &mut self.theta_t);
    }

    /// Exploration width `‖x‖_{A⁻¹} = √(xᵀ A⁻¹ x)`; lies in `(0, ‖x‖/√λ]` for nonzero `x`.
    pub fn mahalanobis_inv_norm(&self, x: &ContextVector) -> f64 {
        let xc = x.values();
        let q = self.gram_inv.mul_to_quadratic(xc);
        q.max(0.0).sqrt()
    }

    /// Design-matrix norm `‖v‖_A = √(vᵀ A v)` of an arbitrary vector.
    pub fn mahalanobis_norm(&self, v: &DVector<f64>) -> f64 {
        self.gram.mul_to_quadratic(v).max(0.0).sqrt()
    }

    /// `log det A(k)`, evaluated through a fresh Cholesky factorization
    /// (`log det = 2 Σ log Lᵢᵢ`), which is numerically stable for SPD matrices.
    pub fn log_det(&self) -> f64 {
        match Cholesky::new(self.gram.clone()) {
            Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            // Unreachable for a PD gram; eigenvalues as a stable fallback.
            None => self
                .gram
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .map(|e| e.ln())
                .sum(),
        }
    }
}

/// Quadratic form helper `xᵀ M x` without allocating the intermediate product.
trait QuadraticForm {
    fn mul_to_quadratic(&self, x: &DVector<f64>) -> f64;
}

impl QuadraticForm for DMatrix<f64> {
    fn mul_to_quadratic(&self, x: &DVector<f64>) -> f64 {
        // Column-major accumulation: Σ_j x_j · (Σ_i M_ij x_i).
        let mut total = 0.0;
        for (j, col) in self.column_iter().enumerate() {
            total += x[j] * col.dot(x);
        }
        total
    }
}
