//! Experiment harness: configuration, seeded execution across (agent × run)
//! cells, aggregation, and file emission.
//!
//! A run is identified by its master seed `base_seed + run_index`. From the
//! master seed the harness derives independent substreams with
//! [`substream_seed`]: one for environment generation, one for reward noise,
//! and one per agent. The reward-noise stream is shared positionally across
//! agents of the same run — every agent sees the same noise draw at step `k`
//! regardless of which arm it pulls — which turns cross-agent regret
//! comparisons into paired comparisons without distorting any single agent's
//! reward distribution (the draw is independent of the chosen arm).

mod cli;
mod config_file;
mod csvio;
mod plot;

pub use cli::cli_dispatch;
pub use config_file::{parse_config_draft, ConfigDraft};
pub use csvio::{read_run_csv, recompute_aggregate, write_aggregate_csv, write_run_csv};
pub use plot::emit_plot_data;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{RunDiagnostics, StepDiagnostics};
use crate::envs::{
    gen_synthetic, group_sources, load_movielens, Environment, MovieLensUserEnv, SyntheticEnv,
};
use crate::error::{Error, Result};
use crate::policies::{
    exp4_auto_eta, Agent, AgentConfig, BiasedAgent, ClassicAgent, Exp4Agent, Exp4Config,
    WeightedAgent,
};
use crate::transfer::SourceModel;

/// Where the arms, rewards, and (for synthetic runs) sources come from.
#[derive(Debug, Clone)]
pub enum EnvironmentSpec {
    /// Linear environment regenerated per run from the run's seed, with one
    /// pretrained source per noise scale (`θ_S = θ* + scale·noise`, capped).
    Synthetic {
        dim: usize,
        n_arms: usize,
        /// One entry per source; empty means no sources.
        source_noise_scales: Vec<f64>,
        /// Reward noise standard deviation.
        noise_sigma: f64,
    },
    /// Fixed environment built from an ml-100k-format directory; sources are
    /// the pretrained models of the target user's demographic cohort.
    MovieLens {
        data_dir: PathBuf,
        target_user: u32,
        pretrain_rounds: u64,
    },
}

impl EnvironmentSpec {
    /// The declared reward range, available without building the environment.
    pub fn reward_range(&self) -> (f64, f64) {
        match self {
            EnvironmentSpec::Synthetic { .. } => crate::envs::SYNTHETIC_REWARD_RANGE,
            EnvironmentSpec::MovieLens { .. } => crate::envs::MOVIELENS_REWARD_RANGE,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EnvironmentSpec::Synthetic {
                dim,
                n_arms,
                source_noise_scales,
                noise_sigma,
            } => {
                if *dim < 1 {
                    return Err(Error::config("dim must be at least 1"));
                }
                if *n_arms < 2 {
                    return Err(Error::config("arms must be at least 2"));
                }
                if !noise_sigma.is_finite() || *noise_sigma < 0.0 {
                    return Err(Error::config(format!(
                        "noise_sigma must be a non-negative real, got {noise_sigma}"
                    )));
                }
                for s in source_noise_scales {
                    if !s.is_finite() || *s < 0.0 {
                        return Err(Error::config(format!(
                            "source noise scales must be non-negative reals, got {s}"
                        )));
                    }
                }
                Ok(())
            }
            EnvironmentSpec::MovieLens { .. } => Ok(()),
        }
    }
}

/// Which policy a named agent slot runs.
#[derive(Debug, Clone)]
pub enum AgentKind {
    Classic(AgentConfig),
    /// Hard or softmax rule per `cfg.update_rule`.
    Weighted(AgentConfig),
    Biased(AgentConfig),
    Exp4 {
        cfg: Exp4Config,
        /// Replace `cfg.eta` with the horizon-tuned rate at run time.
        auto_eta: bool,
    },
}

impl AgentKind {
    fn validate(&self) -> Result<()> {
        match self {
            AgentKind::Classic(c) | AgentKind::Weighted(c) | AgentKind::Biased(c) => c.validate(),
            AgentKind::Exp4 { cfg, auto_eta } => {
                if *auto_eta {
                    // The placeholder eta is replaced per run; validate the rest.
                    let mut probe = *cfg;
                    probe.eta = 0.1;
                    probe.validate()
                } else {
                    cfg.validate()
                }
            }
        }
    }
}

/// A named agent entry in an experiment.
#[derive(Debug, Clone)]
pub struct AgentSlot {
    /// Unique name; used in file names and aggregate rows. Restricted to
    /// `[A-Za-z0-9_-]` so it is path-safe.
    pub name: String,
    pub kind: AgentKind,
}

/// Full description of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvironmentSpec,
    pub agents: Vec<AgentSlot>,
    /// Rounds per run.
    pub horizon: u64,
    pub n_runs: u32,
    /// Run `i` uses master seed `base_seed + i`.
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.n_runs < 1 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.agents.is_empty() {
            return Err(Error::config("at least one agent is required"));
        }
        for slot in &self.agents {
            if slot.name.is_empty()
                || !slot
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::config(format!(
                    "agent name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                    slot.name
                )));
            }
            slot.kind.validate()?;
        }
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                if a.name == b.name {
                    return Err(Error::config(format!("duplicate agent name {:?}", a.name)));
                }
            }
        }
        self.env.validate()
    }
}

/// The canonical five-agent roster over a shared parameter set.
///
/// `names` picks a subset (any order); it defaults to all five. The weighted
/// slots override `base.update_rule` with the rule their name declares.
pub fn build_roster(
    names: &[&str],
    base: &AgentConfig,
    exp4_advice: crate::policies::AdviceMode,
    exp4_eta: Option<f64>,
    reward_range: (f64, f64),
) -> Result<Vec<AgentSlot>> {
    use crate::policies::UpdateRule;
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let kind = match *name {
            "classic" => AgentKind::Classic(*base),
            "weighted-hard" => AgentKind::Weighted(AgentConfig {
                update_rule: UpdateRule::Hard,
                ..*base
            }),
            "weighted-softmax" => AgentKind::Weighted(AgentConfig {
                update_rule: UpdateRule::Softmax,
                ..*base
            }),
            "biased" => AgentKind::Biased(*base),
            "exp4" => AgentKind::Exp4 {
                cfg: Exp4Config {
                    eta: exp4_eta.unwrap_or(0.1),
                    advice: exp4_advice,
                    include_target_expert: true,
                    lambda: base.lambda,
                    reward_range,
                },
                auto_eta: exp4_eta.is_none(),
            },
            other => {
                return Err(Error::config(format!(
                    "unknown agent {other:?}; expected classic, weighted-hard, \
                     weighted-softmax, biased, or exp4"
                )))
            }
        };
        out.push(AgentSlot {
            name: name.to_string(),
            kind,
        });
    }
    Ok(out)
}

/// All five canonical agent names in roster order.
pub const ALL_AGENTS: [&str; 5] = [
    "classic",
    "weighted-hard",
    "weighted-softmax",
    "biased",
    "exp4",
];

/// One step of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based round index.
    pub step: u64,
    pub arm: usize,
    pub reward: f64,
    /// Pseudo-regret of the pulled arm: `max_a E[r_a] − E[r_pulled]`.
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Weights and bounds after absorbing this step's reward.
    pub alpha_target: f64,
    pub alpha_sources: Vec<f64>,
    pub gamma_target: f64,
    pub gamma_sources: Vec<f64>,
    /// Exploration term of the chosen arm at selection time (0 for EXP4).
    pub exploration: f64,
}

/// One (agent, run) cell's full trace.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub agent: String,
    pub run_index: u32,
    /// `base_seed + run_index`; all of the run's streams derive from it.
    pub master_seed: u64,
    pub steps: Vec<StepRecord>,
    /// Per-step inequality inputs; `steps` is empty for agents without a
    /// ridge state (EXP4 with the target expert disabled).
    pub diagnostics: RunDiagnostics,
}

/// Per-(agent, step) mean and population standard deviation across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub agent: String,
    pub step: u64,
    pub mean_cum_regret: f64,
    pub std_cum_regret: f64,
    pub mean_alpha_t: f64,
    pub std_alpha_t: f64,
}

/// Everything `run_experiment` produced, in memory.
#[derive(Debug)]
pub struct ExperimentOutput {
    /// Ordered by agent (config order), then run index.
    pub records: Vec<RunRecord>,
    /// Ordered by agent name (alphabetical), then step.
    pub aggregate: Vec<AggregateRow>,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives the seed of a named substream from a run's master seed.
///
/// Distinct tags give statistically independent streams; the same
/// (master, tag) pair always gives the same seed.
pub fn substream_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a(tag.as_bytes()))
}

/// A run's environment and source models, shared by all its agent cells.
struct PreparedRun {
    env: Arc<dyn Environment>,
    sources: Vec<SourceModel>,
}

fn prepare_runs(config: &ExperimentConfig) -> Result<Vec<PreparedRun>> {
    match &config.env {
        EnvironmentSpec::Synthetic {
            dim,
            n_arms,
            source_noise_scales,
            noise_sigma,
        } => (0..config.n_runs)
            .map(|i| {
                let master = config.base_seed.wrapping_add(i as u64);
                let (spec, sources) = gen_synthetic(
                    *dim,
                    *n_arms,
                    source_noise_scales.len(),
                    source_noise_scales,
                    *noise_sigma,
                    substream_seed(master, "env"),
                )?;
                Ok(PreparedRun {
                    env: Arc::new(SyntheticEnv::new(spec)?),
                    sources,
                })
            })
            .collect(),
        EnvironmentSpec::MovieLens {
            data_dir,
            target_user,
            pretrain_rounds,
        } => {
            // The data, the cohort, and the pretrained sources are all
            // deterministic, so one build serves every run.
            let universe = load_movielens(data_dir)?;
            let env: Arc<dyn Environment> =
                Arc::new(MovieLensUserEnv::new(&universe, *target_user)?);
            let sources = group_sources(&universe, *target_user, *pretrain_rounds)?;
            Ok((0..config.n_runs)
                .map(|_| PreparedRun {
                    env: Arc::clone(&env),
                    sources: sources.clone(),
                })
                .collect())
        }
    }
}

fn build_agent(
    slot: &AgentSlot,
    dim: usize,
    n_arms: usize,
    horizon: u64,
    sources: &[SourceModel],
) -> Result<(Box<dyn Agent>, Option<AgentConfig>)> {
    match &slot.kind {
        AgentKind::Classic(cfg) => Ok((
            Box::new(ClassicAgent::new(*cfg, dim)?),
            Some(*cfg),
        )),
        AgentKind::Weighted(cfg) => Ok((
            Box::new(WeightedAgent::new(*cfg, dim, sources.to_vec())?),
            Some(*cfg),
        )),
        AgentKind::Biased(cfg) => Ok((
            Box::new(BiasedAgent::new(*cfg, dim, sources.to_vec())?),
            Some(*cfg),
        )),
        AgentKind::Exp4 { cfg, auto_eta } => {
            let mut cfg = *cfg;
            if *auto_eta {
                let n_experts = sources.len() + usize::from(cfg.include_target_expert);
                cfg.eta = exp4_auto_eta(n_experts.max(2), horizon, n_arms);
            }
            Ok((
                Box::new(Exp4Agent::new(cfg, dim, sources.to_vec())?),
                None,
            ))
        }
    }
}

/// Executes one (agent, run) cell.
fn run_cell(
    env: &dyn Environment,
    sources: &[SourceModel],
    slot: &AgentSlot,
    horizon: u64,
    master: u64,
    run_index: u32,
) -> Result<RunRecord> {
    let dim = env.dim();
    let arms = env.arms();
    let (mut agent, cfg) = build_agent(slot, dim, arms.len(), horizon, sources)?;

    let mut agent_rng =
        ChaCha8Rng::seed_from_u64(substream_seed(master, &format!("agent:{}", slot.name)));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(substream_seed(master, "reward-noise"));

    // True source distances, when the environment knows its parameter.
    let theta_star = env.theta_star();
    let source_diffs: Vec<nalgebra::DVector<f64>> = match theta_star {
        Some(ts) => agent.source_thetas().iter().map(|t| *t - ts).collect(),
        None => Vec::new(),
    };
    let u_true: Vec<f64> = source_diffs.iter().map(|d| d.norm()).collect();
    let alpha_t0 = agent.weights().target_weight();

    let mut steps = Vec::with_capacity(horizon as usize);
    let mut diag_steps = Vec::new();
    let mut cum_regret = 0.0;
    for k in 1..=horizon {
        let choice = agent.select(arms, &mut agent_rng)?;
        let width_sq = agent
            .design_state()
            .map(|ds| ds.mahalanobis_inv_norm(&arms[choice.arm_id]).powi(2));
        let reward = env.draw_reward(choice.arm_id, &mut noise_rng);
        agent.observe(arms, &choice, reward)?;

        let weights = agent.weights();
        let bounds = agent.bounds();
        let inst_regret = env.pseudo_regret(choice.arm_id);
        cum_regret += inst_regret;
        steps.push(StepRecord {
            step: k,
            arm: choice.arm_id,
            reward,
            inst_regret,
            cum_regret,
            alpha_target: weights.target_weight(),
            alpha_sources: weights.source_weights().to_vec(),
            gamma_target: bounds.gamma_target(),
            gamma_sources: bounds.gamma_sources().to_vec(),
            exploration: choice.exploration_term,
        });

        // Inequality diagnostics need the agent's own ridge statistics plus its
        // lambda/delta; EXP4 exposes a design state through its target-ridge
        // expert, but that is an expert's model, not the agent's decision
        // statistic, so no trace is recorded for it (cfg is None there).
        if let (Some(ds), true) = (agent.design_state(), cfg.is_some()) {
            diag_steps.push(StepDiagnostics {
                step: k,
                log_det: ds.log_det(),
                width_sq: width_sq.unwrap_or(0.0),
                source_anorms: source_diffs.iter().map(|d| ds.mahalanobis_norm(d)).collect(),
                gamma_target: bounds.gamma_target(),
                gamma_sources: bounds.gamma_sources().to_vec(),
            });
        }
    }

    let diagnostics = RunDiagnostics {
        dim,
        lambda: cfg.as_ref().map_or(f64::NAN, |c| c.lambda),
        delta: cfg.as_ref().map_or(f64::NAN, |c| c.delta),
        beta: cfg.as_ref().map_or(f64::NAN, |c| c.beta),
        alpha_t0,
        u_true,
        steps: diag_steps,
    };
    Ok(RunRecord {
        agent: slot.name.clone(),
        run_index,
        master_seed: master,
        steps,
        diagnostics,
    })
}

/// Mean and population standard deviation of cumulative regret and α_T per
/// (agent, step), sorted by agent name then step. The alphabetical order makes
/// the table canonical: recomputing it from the per-run CSV files (which are
/// read in filename order) reproduces it byte for byte. Every run of an agent
/// must have the same length.
pub fn aggregate_records(records: &[RunRecord]) -> Result<Vec<AggregateRow>> {
    let mut agents: Vec<&str> = Vec::new();
    for r in records {
        if !agents.contains(&r.agent.as_str()) {
            agents.push(&r.agent);
        }
    }
    agents.sort_unstable();
    let mut out = Vec::new();
    for agent in agents {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.agent == agent).collect();
        let horizon = runs[0].steps.len();
        for r in &runs {
            if r.steps.len() != horizon {
                return Err(Error::data(
                    "<records>",
                    0,
                    format!(
                        "agent {agent:?} has runs of different lengths ({} vs {horizon})",
                        r.steps.len()
                    ),
                ));
            }
        }
        let n = runs.len() as f64;
        for k in 0..horizon {
            let (mut sr, mut sr2, mut sa, mut sa2) = (0.0, 0.0, 0.0, 0.0);
            for r in &runs {
                let s = &r.steps[k];
                sr += s.cum_regret;
                sr2 += s.cum_regret * s.cum_regret;
                sa += s.alpha_target;
                sa2 += s.alpha_target * s.alpha_target;
            }
            let mean_r = sr / n;
            let mean_a = sa / n;
            out.push(AggregateRow {
                agent: agent.to_string(),
                step: runs[0].steps[k].step,
                mean_cum_regret: mean_r,
                std_cum_regret: (sr2 / n - mean_r * mean_r).max(0.0).sqrt(),
                mean_alpha_t: mean_a,
                std_alpha_t: (sa2 / n - mean_a * mean_a).max(0.0).sqrt(),
            });
        }
    }
    Ok(out)
}

/// Runs every (agent × run) cell of the experiment, writes per-run CSVs, the
/// aggregate CSV, and a manifest into `config.out_dir`, and returns the records.
///
/// Deterministic given the config: reruns produce byte-identical files. Cells
/// execute in parallel; a panicking cell is quarantined and reported after the
/// others finish, failing the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let prepared = prepare_runs(config)?;

    let cells: Vec<(usize, u32)> = (0..config.agents.len())
        .flat_map(|a| (0..config.n_runs).map(move |r| (a, r)))
        .collect();

    // Cell outcome: outer Err is a quarantined panic message, inner is the
    // run's own Result.
    type CellOutcome = std::result::Result<Result<RunRecord>, String>;
    let results: Vec<((usize, u32), CellOutcome)> = cells
        .into_par_iter()
        .map(|(a, r)| {
            let slot = &config.agents[a];
            let run = &prepared[r as usize];
            let master = config.base_seed.wrapping_add(r as u64);
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                run_cell(run.env.as_ref(), &run.sources, slot, config.horizon, master, r)
            }))
            .map_err(|payload| {
                payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "non-string panic payload".to_string())
            });
            ((a, r), outcome)
        })
        .collect();

    let mut quarantined = Vec::new();
    let mut records_by_cell = std::collections::BTreeMap::new();
    for ((a, r), outcome) in results {
        match outcome {
            Ok(Ok(record)) => {
                records_by_cell.insert((a, r), record);
            }
            Ok(Err(e)) => return Err(e),
            Err(panic_msg) => {
                quarantined.push(format!(
                    "agent {:?} run {r}: {panic_msg}",
                    config.agents[a].name
                ));
            }
        }
    }
    if !quarantined.is_empty() {
        return Err(Error::data(
            config.out_dir.display().to_string(),
            0,
            format!(
                "{} run(s) quarantined after panicking: {}",
                quarantined.len(),
                quarantined.join("; ")
            ),
        ));
    }

    let records: Vec<RunRecord> = records_by_cell.into_values().collect();
    let aggregate = aggregate_records(&records)?;

    let runs_dir = config.out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    for record in &records {
        let path = runs_dir.join(format!("{}_run{:03}.csv", record.agent, record.run_index));
        write_run_csv(&path, record)?;
    }
    write_aggregate_csv(&config.out_dir.join("aggregate.csv"), &aggregate)?;
    config_file::write_manifest(&config.out_dir.join("manifest.txt"), config)?;

    Ok(ExperimentOutput { records, aggregate })
}

/// Checks `dir` exists and is a directory, with a data error naming it.
pub(crate) fn require_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::data(
            dir.display().to_string(),
            0,
            "directory not found",
        ));
    }
    Ok(())
}
