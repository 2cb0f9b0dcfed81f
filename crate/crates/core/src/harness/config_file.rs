//! Line-based `key = value` experiment configuration: file parsing, CLI-flag
//! merging, defaulting, and the output manifest that echoes every effective
//! setting for provenance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::DEFAULT_PRETRAIN_ROUNDS;
use crate::error::{Error, Result};
use crate::policies::{AdviceMode, AgentConfig, GammaTargetMode, InitialWeights, UpdateRule};

use super::{build_roster, AgentKind, EnvironmentSpec, ExperimentConfig, ALL_AGENTS};

/// Which environment family a command runs; fixed by the subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Synthetic,
    MovieLens,
}

/// Partially specified experiment: every field optional, filled from a config
/// file first, then CLI flags, then defaults at [`ConfigDraft::finalize`].
#[derive(Debug, Clone, Default)]
pub struct ConfigDraft {
    pub env_kind: Option<EnvKind>,
    pub dim: Option<usize>,
    pub arms: Option<usize>,
    pub source_noise_scales: Option<Vec<f64>>,
    pub noise_sigma: Option<f64>,
    pub data_dir: Option<PathBuf>,
    pub target_user: Option<u32>,
    pub pretrain_rounds: Option<u64>,
    pub horizon: Option<u64>,
    pub runs: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub agents: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub update_rule: Option<UpdateRule>,
    pub gamma_mode: Option<GammaTargetMode>,
    pub initial_weights: Option<InitialWeights>,
    /// `Some(None)` means "auto" (horizon-tuned at run time).
    pub exp4_eta: Option<Option<f64>>,
    pub exp4_advice: Option<AdviceMode>,
}

fn bad_value(path: &Path, line: usize, key: &str, value: &str, expected: &str) -> Error {
    Error::config(format!(
        "{}:{line}: key {key} expects {expected}, got {value:?}",
        path.display()
    ))
}

/// Parses a config file. Keys mirror the experiment fields; `#` starts a
/// comment, blank lines are skipped, unknown and duplicate keys are errors.
pub fn parse_config_draft(path: &Path) -> Result<ConfigDraft> {
    let text = std::fs::read_to_string(path)?;
    let mut draft = ConfigDraft::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "{}:{lineno}: expected 'key = value', got {raw:?}",
                path.display()
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(Error::config(format!(
                "{}:{lineno}: duplicate key {key}",
                path.display()
            )));
        }
        seen.push(key.to_string());

        let f64_of = |v: &str, k: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| bad_value(path, lineno, k, v, "a number"))
        };
        match key {
            "env" => {
                draft.env_kind = Some(match value {
                    "synthetic" => EnvKind::Synthetic,
                    "movielens" => EnvKind::MovieLens,
                    _ => return Err(bad_value(path, lineno, key, value, "synthetic or movielens")),
                })
            }
            "dim" => {
                draft.dim = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "a positive integer"))?,
                )
            }
            "arms" => {
                draft.arms = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "a positive integer"))?,
                )
            }
            "source_noise_scales" => {
                let scales = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| f64_of(v.trim(), key))
                        .collect::<Result<_>>()?
                };
                draft.source_noise_scales = Some(scales);
            }
            "noise_sigma" => draft.noise_sigma = Some(f64_of(value, key)?),
            "data_dir" => draft.data_dir = Some(PathBuf::from(value)),
            "target_user" => {
                draft.target_user = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "a user id"))?,
                )
            }
            "pretrain_rounds" => {
                draft.pretrain_rounds = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "a round count"))?,
                )
            }
            "horizon" => {
                draft.horizon = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "a positive integer"))?,
                )
            }
            "runs" => {
                draft.runs = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "a positive integer"))?,
                )
            }
            "seed" => {
                draft.seed = Some(
                    value
                        .parse()
                        .map_err(|_| bad_value(path, lineno, key, value, "an unsigned integer"))?,
                )
            }
            "out" => draft.out = Some(PathBuf::from(value)),
            "agents" => {
                draft.agents = Some(value.split(',').map(|a| a.trim().to_string()).collect())
            }
            "lambda" => draft.lambda = Some(f64_of(value, key)?),
            "delta" => draft.delta = Some(f64_of(value, key)?),
            "beta" => draft.beta = Some(f64_of(value, key)?),
            "update_rule" => {
                draft.update_rule = Some(match value {
                    "hard" => UpdateRule::Hard,
                    "softmax" => UpdateRule::Softmax,
                    _ => return Err(bad_value(path, lineno, key, value, "hard or softmax")),
                })
            }
            "gamma_mode" => {
                draft.gamma_mode = Some(match value {
                    "practical" => GammaTargetMode::Practical,
                    "theoretical" => GammaTargetMode::Theoretical,
                    _ => return Err(bad_value(path, lineno, key, value, "practical or theoretical")),
                })
            }
            "initial_weights" => {
                draft.initial_weights = Some(match value {
                    "uniform" => InitialWeights::UniformAll,
                    "half-target" => InitialWeights::HalfTarget,
                    _ => return Err(bad_value(path, lineno, key, value, "uniform or half-target")),
                })
            }
            "exp4_eta" => {
                draft.exp4_eta = Some(if value == "auto" {
                    None
                } else {
                    Some(f64_of(value, key)?)
                })
            }
            "exp4_advice" => {
                draft.exp4_advice = Some(match value {
                    "greedy" => AdviceMode::Greedy,
                    "softmax" => AdviceMode::Softmax,
                    _ => return Err(bad_value(path, lineno, key, value, "greedy or softmax")),
                })
            }
            _ => {
                return Err(Error::config(format!(
                    "{}:{lineno}: unknown key {key}",
                    path.display()
                )))
            }
        }
    }
    Ok(draft)
}

impl ConfigDraft {
    /// Fills defaults and builds the full experiment description.
    ///
    /// `kind` comes from the subcommand; a conflicting `env =` line in the
    /// config file is an error rather than silently ignored.
    pub fn finalize(self, kind: EnvKind) -> Result<ExperimentConfig> {
        if let Some(declared) = self.env_kind {
            if declared != kind {
                return Err(Error::config(format!(
                    "config file declares env = {}, but the {} command was invoked",
                    match declared {
                        EnvKind::Synthetic => "synthetic",
                        EnvKind::MovieLens => "movielens",
                    },
                    match kind {
                        EnvKind::Synthetic => "synth",
                        EnvKind::MovieLens => "movielens",
                    },
                )));
            }
        }
        let env = match kind {
            EnvKind::Synthetic => EnvironmentSpec::Synthetic {
                dim: self.dim.unwrap_or(20),
                n_arms: self.arms.unwrap_or(1000),
                source_noise_scales: self.source_noise_scales.unwrap_or_else(|| vec![0.1]),
                noise_sigma: self
                    .noise_sigma
                    .unwrap_or_else(|| (2.0 * std::f64::consts::PI).sqrt().recip()),
            },
            EnvKind::MovieLens => EnvironmentSpec::MovieLens {
                data_dir: self
                    .data_dir
                    .ok_or_else(|| Error::config("movielens requires data_dir (--data-dir)"))?,
                target_user: self
                    .target_user
                    .ok_or_else(|| Error::config("movielens requires target_user (--target-user)"))?,
                pretrain_rounds: self.pretrain_rounds.unwrap_or(DEFAULT_PRETRAIN_ROUNDS),
            },
        };

        let base = AgentConfig {
            lambda: self.lambda.unwrap_or(1.0),
            delta: self.delta.unwrap_or(0.05),
            beta: self.beta.unwrap_or(1.0),
            update_rule: UpdateRule::Softmax,
            gamma_target_mode: self.gamma_mode.unwrap_or(GammaTargetMode::Practical),
            initial_weights: self.initial_weights.unwrap_or(InitialWeights::UniformAll),
        };
        base.validate()?;

        let names: Vec<String> = match (&self.agents, self.update_rule) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "agents and update_rule cannot both be given; \
                     name the rule via the agent (weighted-hard / weighted-softmax)",
                ))
            }
            (Some(names), None) => names.clone(),
            (None, Some(rule)) => {
                let weighted = match rule {
                    UpdateRule::Hard => "weighted-hard",
                    UpdateRule::Softmax => "weighted-softmax",
                };
                vec![
                    "classic".into(),
                    weighted.into(),
                    "biased".into(),
                    "exp4".into(),
                ]
            }
            (None, None) => ALL_AGENTS.iter().map(|s| s.to_string()).collect(),
        };
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let agents = build_roster(
            &name_refs,
            &base,
            self.exp4_advice.unwrap_or(AdviceMode::Greedy),
            self.exp4_eta.unwrap_or(None),
            env.reward_range(),
        )?;

        let config = ExperimentConfig {
            env,
            agents,
            horizon: self.horizon.unwrap_or(5000),
            n_runs: self.runs.unwrap_or(20),
            base_seed: self.seed.unwrap_or(0),
            out_dir: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        config.validate()?;
        Ok(config)
    }
}

fn gamma_mode_name(m: GammaTargetMode) -> &'static str {
    match m {
        GammaTargetMode::Practical => "practical",
        GammaTargetMode::Theoretical => "theoretical",
    }
}

fn initial_weights_name(w: InitialWeights) -> &'static str {
    match w {
        InitialWeights::UniformAll => "uniform",
        InitialWeights::HalfTarget => "half-target",
    }
}

fn rule_name(r: UpdateRule) -> &'static str {
    match r {
        UpdateRule::Hard => "hard",
        UpdateRule::Softmax => "softmax",
    }
}

fn advice_name(a: AdviceMode) -> &'static str {
    match a {
        AdviceMode::Greedy => "greedy",
        AdviceMode::Softmax => "softmax",
    }
}

/// Writes the provenance manifest: every effective setting, defaults included.
pub(super) fn write_manifest(path: &Path, config: &ExperimentConfig) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# experiment manifest: every effective setting, defaults included");
    match &config.env {
        EnvironmentSpec::Synthetic {
            dim,
            n_arms,
            source_noise_scales,
            noise_sigma,
        } => {
            let _ = writeln!(out, "env = synthetic");
            let _ = writeln!(out, "dim = {dim}");
            let _ = writeln!(out, "arms = {n_arms}");
            let scales: Vec<String> = source_noise_scales.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "source_noise_scales = {}", scales.join(","));
            let _ = writeln!(out, "noise_sigma = {noise_sigma}");
        }
        EnvironmentSpec::MovieLens {
            data_dir,
            target_user,
            pretrain_rounds,
        } => {
            let _ = writeln!(out, "env = movielens");
            let _ = writeln!(out, "data_dir = {}", data_dir.display());
            let _ = writeln!(out, "target_user = {target_user}");
            let _ = writeln!(out, "pretrain_rounds = {pretrain_rounds}");
        }
    }
    let _ = writeln!(out, "horizon = {}", config.horizon);
    let _ = writeln!(out, "runs = {}", config.n_runs);
    let _ = writeln!(out, "seed = {}", config.base_seed);
    let _ = writeln!(out, "out = {}", config.out_dir.display());
    let names: Vec<&str> = config.agents.iter().map(|a| a.name.as_str()).collect();
    let _ = writeln!(out, "agents = {}", names.join(","));
    for slot in &config.agents {
        let _ = write!(out, "# agent {}: ", slot.name);
        match &slot.kind {
            AgentKind::Classic(c) => {
                let _ = writeln!(
                    out,
                    "lambda = {}, delta = {}, gamma_mode = {}",
                    c.lambda,
                    c.delta,
                    gamma_mode_name(c.gamma_target_mode)
                );
            }
            AgentKind::Weighted(c) => {
                let _ = writeln!(
                    out,
                    "lambda = {}, delta = {}, beta = {}, rule = {}, gamma_mode = {}, initial_weights = {}",
                    c.lambda,
                    c.delta,
                    c.beta,
                    rule_name(c.update_rule),
                    gamma_mode_name(c.gamma_target_mode),
                    initial_weights_name(c.initial_weights)
                );
            }
            AgentKind::Biased(c) => {
                let _ = writeln!(
                    out,
                    "lambda = {}, delta = {}, beta = {}",
                    c.lambda, c.delta, c.beta
                );
            }
            AgentKind::Exp4 { cfg, auto_eta } => {
                let eta = if *auto_eta {
                    "auto".to_string()
                } else {
                    cfg.eta.to_string()
                };
                let _ = writeln!(
                    out,
                    "eta = {}, advice = {}, target_expert = {}, lambda = {}, reward_range = {}..{}",
                    eta,
                    advice_name(cfg.advice),
                    cfg.include_target_expert,
                    cfg.lambda,
                    cfg.reward_range.0,
                    cfg.reward_range.1
                );
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(path: &Path, text: &str) {
        std::fs::write(path, text).unwrap();
    }

    #[test]
    fn full_config_file_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("exp.conf");
        write(
            &p,
            "# synthetic suite\n\
             env = synthetic\n\
             dim = 10\n\
             arms = 50   # inline comment\n\
             source_noise_scales = 0.1, 0.5\n\
             noise_sigma = 0.25\n\
             horizon = 200\n\
             runs = 4\n\
             seed = 9\n\
             out = results\n\
             agents = classic, weighted-softmax\n\
             lambda = 2\n\
             delta = 0.1\n\
             beta = 0.5\n\
             gamma_mode = theoretical\n\
             initial_weights = half-target\n\
             exp4_eta = auto\n\
             exp4_advice = softmax\n",
        );
        let cfg = parse_config_draft(&p).unwrap().finalize(EnvKind::Synthetic).unwrap();
        match &cfg.env {
            EnvironmentSpec::Synthetic {
                dim,
                n_arms,
                source_noise_scales,
                noise_sigma,
            } => {
                assert_eq!(*dim, 10);
                assert_eq!(*n_arms, 50);
                assert_eq!(source_noise_scales, &[0.1, 0.5]);
                assert_eq!(*noise_sigma, 0.25);
            }
            _ => panic!("expected synthetic env"),
        }
        assert_eq!(cfg.horizon, 200);
        assert_eq!(cfg.n_runs, 4);
        assert_eq!(cfg.base_seed, 9);
        assert_eq!(cfg.out_dir, PathBuf::from("results"));
        assert_eq!(cfg.agents.len(), 2);
        assert_eq!(cfg.agents[1].name, "weighted-softmax");
        match &cfg.agents[1].kind {
            AgentKind::Weighted(c) => {
                assert_eq!(c.lambda, 2.0);
                assert_eq!(c.delta, 0.1);
                assert_eq!(c.beta, 0.5);
                assert_eq!(c.gamma_target_mode, GammaTargetMode::Theoretical);
                assert_eq!(c.initial_weights, InitialWeights::HalfTarget);
            }
            _ => panic!("expected weighted agent"),
        }
    }

    #[test]
    fn unknown_and_duplicate_keys_are_named() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.conf");
        write(&p, "horizon = 5\nwat = 7\n");
        let err = parse_config_draft(&p).unwrap_err().to_string();
        assert!(err.contains("unknown key wat"), "{err}");
        assert!(err.contains("bad.conf:2"), "{err}");

        write(&p, "horizon = 5\nhorizon = 6\n");
        let err = parse_config_draft(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate key horizon"), "{err}");
    }

    #[test]
    fn defaults_match_the_documented_baseline() {
        let cfg = ConfigDraft::default().finalize(EnvKind::Synthetic).unwrap();
        match &cfg.env {
            EnvironmentSpec::Synthetic {
                dim,
                n_arms,
                source_noise_scales,
                noise_sigma,
            } => {
                assert_eq!(*dim, 20);
                assert_eq!(*n_arms, 1000);
                assert_eq!(source_noise_scales, &[0.1]);
                assert!((noise_sigma - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
            }
            _ => panic!("expected synthetic env"),
        }
        assert_eq!(cfg.horizon, 5000);
        assert_eq!(cfg.n_runs, 20);
        assert_eq!(cfg.base_seed, 0);
        assert_eq!(cfg.agents.len(), 5);
    }

    #[test]
    fn movielens_requires_its_inputs() {
        let err = ConfigDraft::default()
            .finalize(EnvKind::MovieLens)
            .unwrap_err()
            .to_string();
        assert!(err.contains("data_dir"), "{err}");

        let draft = ConfigDraft {
            data_dir: Some(PathBuf::from("ml")),
            ..ConfigDraft::default()
        };
        let err = draft.finalize(EnvKind::MovieLens).unwrap_err().to_string();
        assert!(err.contains("target_user"), "{err}");
    }

    #[test]
    fn env_kind_conflict_is_rejected() {
        let draft = ConfigDraft {
            env_kind: Some(EnvKind::MovieLens),
            ..ConfigDraft::default()
        };
        let err = draft.finalize(EnvKind::Synthetic).unwrap_err().to_string();
        assert!(err.contains("synth command"), "{err}");
    }

    #[test]
    fn update_rule_filters_the_default_roster() {
        let draft = ConfigDraft {
            update_rule: Some(UpdateRule::Hard),
            ..ConfigDraft::default()
        };
        let cfg = draft.finalize(EnvKind::Synthetic).unwrap();
        let names: Vec<&str> = cfg.agents.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["classic", "weighted-hard", "biased", "exp4"]);

        let both = ConfigDraft {
            update_rule: Some(UpdateRule::Hard),
            agents: Some(vec!["classic".into()]),
            ..ConfigDraft::default()
        };
        assert!(both.finalize(EnvKind::Synthetic).is_err());
    }

    #[test]
    fn out_of_range_delta_names_the_valid_range() {
        let draft = ConfigDraft {
            delta: Some(1.5),
            ..ConfigDraft::default()
        };
        let err = draft.finalize(EnvKind::Synthetic).unwrap_err().to_string();
        assert!(err.contains("delta"), "{err}");
        assert!(err.contains("between 0 and 1"), "{err}");
    }

    #[test]
    fn manifest_echoes_every_setting() {
        let dir = tempdir().unwrap();
        let cfg = ConfigDraft {
            out: Some(dir.path().join("o")),
            ..ConfigDraft::default()
        }
        .finalize(EnvKind::Synthetic)
        .unwrap();
        let path = dir.path().join("manifest.txt");
        write_manifest(&path, &cfg).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for needle in [
            "env = synthetic",
            "dim = 20",
            "arms = 1000",
            "source_noise_scales = 0.1",
            "horizon = 5000",
            "runs = 20",
            "seed = 0",
            "agents = classic,weighted-hard,weighted-softmax,biased,exp4",
            "lambda = 1",
            "delta = 0.05",
            "beta = 1",
            "rule = hard",
            "rule = softmax",
            "gamma_mode = practical",
            "initial_weights = uniform",
            "eta = auto",
            "advice = greedy",
        ] {
            assert!(text.contains(needle), "manifest missing {needle:?}:\n{text}");
        }
    }
}
