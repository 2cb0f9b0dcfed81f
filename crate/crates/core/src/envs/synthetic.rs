//! Synthetic linear-reward environment.
//!
//! Contexts are zero-mean Gaussians with per-coordinate variances drawn once
//! from U(0,1) and shared by all arms, rescaled into the unit ball. The truth
//! vector is uniform on `[−1,1]^d` capped to unit norm, and each source model
//! is the truth plus isotropic Gaussian noise of a configured scale, capped the
//! same way. Rewards are `xᵀθ* + ε` with `ε ~ N(0, σ²)`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::linmodel::ContextVector;
use crate::transfer::SourceModel;

/// Declared reward interval: means lie in `[−1, 1]` and the default noise
/// leaves almost all samples within one extra unit on either side. Samples
/// outside are legal; policies that rescale count them as clamped.
pub const SYNTHETIC_REWARD_RANGE: (f64, f64) = (-2.0, 2.0);

/// Full description of one synthetic environment draw.
///
/// Construct via [`gen_synthetic`] or [`load_synthetic_spec`]; both guarantee
/// `‖θ*‖ ≤ 1` and every context in the unit ball.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_arms: usize,
    pub noise_sigma: f64,
    pub theta_star: DVector<f64>,
    pub arm_contexts: Vec<ContextVector>,
    pub source_noise_scales: Vec<f64>,
    pub seed: u64,
}

/// Divide by the norm only when it exceeds 1 — a cap, not a projection to the
/// sphere.
fn cap_unit(v: &mut DVector<f64>) {
    let n = v.norm();
    if n > 1.0 {
        *v /= n;
    }
}

/// Draws a complete synthetic environment and its source models from one seed.
///
/// Draw order (fixed for reproducibility): per-coordinate variances, then arm
/// contexts, then `θ*`, then one noise vector per source. `noise_scales[m]` is
/// the standard deviation of source `m`'s perturbation; scale 0 reproduces
/// `θ*` exactly. `n_sources` must equal `noise_scales.len()`.
pub fn gen_synthetic(
    dim: usize,
    n_arms: usize,
    n_sources: usize,
    noise_scales: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<(SyntheticSpec, Vec<SourceModel>)> {
    if dim < 1 {
        return Err(Error::config("dim must be at least 1"));
    }
    if n_arms < 2 {
        return Err(Error::config("n_arms must be at least 2"));
    }
    if n_sources != noise_scales.len() {
        return Err(Error::config(format!(
            "n_sources = {n_sources} but {} noise scales were given",
            noise_scales.len()
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::config(format!(
            "noise_sigma must be a non-negative real, got {noise_sigma}"
        )));
    }
    for (m, s) in noise_scales.iter().enumerate() {
        if !(*s >= 0.0) || !s.is_finite() {
            return Err(Error::config(format!(
                "noise scale {m} must be a non-negative real, got {s}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let stds: Vec<f64> = (0..dim)
        .map(|_| rng.random_range(0.0..1.0f64).sqrt())
        .collect();

    let mut arm_contexts = Vec::with_capacity(n_arms);
    for _ in 0..n_arms {
        let mut x = DVector::from_fn(dim, |j, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * stds[j]
        });
        cap_unit(&mut x);
        arm_contexts.push(ContextVector::from_dvector(x)?);
    }

    let mut theta_star = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    cap_unit(&mut theta_star);

    let mut sources = Vec::with_capacity(n_sources);
    for scale in noise_scales {
        let noise = DVector::from_fn(dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        let mut theta_s = &theta_star + noise;
        cap_unit(&mut theta_s);
        sources.push(SourceModel::new(theta_s)?);
    }

    let spec = SyntheticSpec {
        dim,
        n_arms,
        noise_sigma,
        theta_star,
        arm_contexts,
        source_noise_scales: noise_scales.to_vec(),
        seed,
    };
    Ok((spec, sources))
}

/// Ready-to-run synthetic environment with precomputed arm means.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    spec: SyntheticSpec,
    means: Vec<f64>,
    optimal_arm: usize,
    optimal_mean: f64,
}

impl SyntheticEnv {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        if spec.arm_contexts.len() != spec.n_arms {
            return Err(Error::config(format!(
                "spec declares {} arms but carries {} contexts",
                spec.n_arms,
                spec.arm_contexts.len()
            )));
        }
        if spec.theta_star.len() != spec.dim {
            return Err(Error::config("theta_star dimension mismatch"));
        }
        if spec.theta_star.norm() > 1.0 + 1e-12 {
            return Err(Error::config("theta_star must lie in the unit ball"));
        }
        for (a, x) in spec.arm_contexts.iter().enumerate() {
            if x.dim() != spec.dim {
                return Err(Error::config(format!("arm {a} dimension mismatch")));
            }
        }
        let means: Vec<f64> = spec
            .arm_contexts
            .iter()
            .map(|x| x.predict(&spec.theta_star))
            .collect();
        let (optimal_arm, optimal_mean) = means.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(ba, bm), (a, &m)| if m > bm { (a, m) } else { (ba, bm) },
        );
        Ok(SyntheticEnv {
            spec,
            means,
            optimal_arm,
            optimal_mean,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn optimal_arm(&self) -> usize {
        self.optimal_arm
    }
}

impl Environment for SyntheticEnv {
    fn arms(&self) -> &[ContextVector] {
        &self.spec.arm_contexts
    }

    fn mean_reward(&self, arm: usize) -> f64 {
        self.means[arm]
    }

    fn draw_reward(&self, arm: usize, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.means[arm] + self.spec.noise_sigma * z
    }

    fn optimal_mean(&self) -> f64 {
        self.optimal_mean
    }

    fn reward_range(&self) -> (f64, f64) {
        SYNTHETIC_REWARD_RANGE
    }

    fn theta_star(&self) -> Option<&DVector<f64>> {
        Some(&self.spec.theta_star)
    }
}

fn push_floats(line: &mut String, values: impl IntoIterator<Item = f64>) {
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{v}");
    }
}

/// Writes a spec to a self-describing text file that [`load_synthetic_spec`]
/// reads back bit-exactly (floats print in shortest round-trip form).
pub fn save_synthetic_spec(path: impl AsRef<Path>, spec: &SyntheticSpec) -> Result<()> {
    let mut out = String::new();
    out.push_str("# synthetic environment specification\n");
    let _ = writeln!(out, "dim = {}", spec.dim);
    let _ = writeln!(out, "n_arms = {}", spec.n_arms);
    let _ = writeln!(out, "noise_sigma = {}", spec.noise_sigma);
    let _ = writeln!(out, "seed = {}", spec.seed);
    let mut scales = String::new();
    push_floats(&mut scales, spec.source_noise_scales.iter().copied());
    let _ = writeln!(out, "source_noise_scales = {scales}");
    let mut theta = String::new();
    push_floats(&mut theta, spec.theta_star.iter().copied());
    let _ = writeln!(out, "theta_star = {theta}");
    for x in &spec.arm_contexts {
        let mut line = String::from("arm = ");
        push_floats(&mut line, x.values().iter().copied());
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a spec written by [`save_synthetic_spec`]. Malformed lines are
/// reported with their line number.
pub fn load_synthetic_spec(path: impl AsRef<Path>) -> Result<SyntheticSpec> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;

    let mut dim: Option<usize> = None;
    let mut n_arms: Option<usize> = None;
    let mut noise_sigma: Option<f64> = None;
    let mut seed: Option<u64> = None;
    let mut scales: Option<Vec<f64>> = None;
    let mut theta_star: Option<DVector<f64>> = None;
    let mut arms: Vec<ContextVector> = Vec::new();

    let parse_floats = |value: &str, line_no: usize| -> Result<Vec<f64>> {
        value
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::data(&display, line_no, format!("invalid float {tok:?}")))
            })
            .collect()
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| {
            Error::data(&display, line_no, "expected `key = value`".to_string())
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dim" => {
                dim = Some(value.parse().map_err(|_| {
                    Error::data(&display, line_no, format!("invalid dim {value:?}"))
                })?)
            }
            "n_arms" => {
                n_arms = Some(value.parse().map_err(|_| {
                    Error::data(&display, line_no, format!("invalid n_arms {value:?}"))
                })?)
            }
            "noise_sigma" => {
                noise_sigma = Some(value.parse().map_err(|_| {
                    Error::data(&display, line_no, format!("invalid noise_sigma {value:?}"))
                })?)
            }
            "seed" => {
                seed = Some(value.parse().map_err(|_| {
                    Error::data(&display, line_no, format!("invalid seed {value:?}"))
                })?)
            }
            "source_noise_scales" => scales = Some(parse_floats(value, line_no)?),
            "theta_star" => {
                theta_star = Some(DVector::from_vec(parse_floats(value, line_no)?))
            }
            "arm" => {
                let values = parse_floats(value, line_no)?;
                let x = ContextVector::new(values).map_err(|e| {
                    Error::data(&display, line_no, format!("bad arm context: {e}"))
                })?;
                arms.push(x);
            }
            other => {
                return Err(Error::data(
                    &display,
                    line_no,
                    format!("unknown key {other:?}"),
                ))
            }
        }
    }

    let missing = |what: &str| Error::data(&display, 0, format!("missing {what}"));
    let spec = SyntheticSpec {
        dim: dim.ok_or_else(|| missing("dim"))?,
        n_arms: n_arms.ok_or_else(|| missing("n_arms"))?,
        noise_sigma: noise_sigma.ok_or_else(|| missing("noise_sigma"))?,
        theta_star: theta_star.ok_or_else(|| missing("theta_star"))?,
        arm_contexts: arms,
        source_noise_scales: scales.unwrap_or_default(),
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    if spec.arm_contexts.len() != spec.n_arms {
        return Err(Error::data(
            &display,
            0,
            format!(
                "header declares {} arms but {} were listed",
                spec.n_arms,
                spec.arm_contexts.len()
            ),
        ));
    }
    if spec.theta_star.len() != spec.dim {
        return Err(Error::data(
            &display,
            0,
            format!(
                "theta_star has {} coordinates, header declares dim {}",
                spec.theta_star.len(),
                spec.dim
            ),
        ));
    }
    Ok(spec)
}
