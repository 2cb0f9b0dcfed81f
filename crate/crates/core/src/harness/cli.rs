//! Command-line interface: `synth`, `movielens`, `pretrain`, `diagnose`, and
//! `report` subcommands over the experiment harness.
//!
//! Exit status: 0 on success, 1 on usage/configuration errors, 2 on data or
//! I/O errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diagnostics::{kappa, kappa_delta_ok, run_lemma_checks};
use crate::envs::{group_sources, load_movielens, pretrain_sources};
use crate::error::{Error, Result};
use crate::policies::{AdviceMode, GammaTargetMode, UpdateRule};
use crate::transfer::save_source_models;

use super::config_file::{parse_config_draft, ConfigDraft, EnvKind};
use super::{
    emit_plot_data, read_run_csv, recompute_aggregate, run_experiment, write_aggregate_csv,
    ExperimentConfig, ExperimentOutput,
};

#[derive(Parser)]
#[command(
    name = "bandit-transfer",
    version,
    about = "Linear contextual bandit simulator with hypothesis transfer"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the synthetic experiment suite and emit CSVs, aggregate, and figures.
    Synth(SynthArgs),
    /// Run the recommendation experiment: load ratings, pretrain the target
    /// user's cohort as sources, then run all agents.
    Movielens(MovielensArgs),
    /// Pretrain source models from a ratings directory and save them to a file.
    Pretrain(PretrainArgs),
    /// Evaluate bound formulas, or check recorded runs against the
    /// supporting inequalities.
    Diagnose(DiagnoseArgs),
    /// Recompute the aggregate table from per-run CSVs and emit plot data.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Hard,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaArg {
    Practical,
    Theoretical,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdviceArg {
    Greedy,
    Softmax,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file with `key = value` lines; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Rounds per run.
    #[arg(long)]
    horizon: Option<u64>,
    /// Independent runs per agent.
    #[arg(long)]
    runs: Option<u32>,
    /// Softmax weight-update temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Confidence level parameter in (0, 1).
    #[arg(long)]
    delta: Option<f64>,
    /// Ridge regularization strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Restrict the default roster to one weighted update rule.
    #[arg(long)]
    update_rule: Option<RuleArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated agent names (classic, weighted-hard, weighted-softmax,
    /// biased, exp4).
    #[arg(long)]
    agents: Option<String>,
    /// Target confidence bound variant.
    #[arg(long)]
    gamma_mode: Option<GammaArg>,
}

impl CommonArgs {
    fn draft(&self) -> Result<ConfigDraft> {
        let mut draft = match &self.config {
            Some(path) => parse_config_draft(path)?,
            None => ConfigDraft::default(),
        };
        if let Some(v) = self.seed {
            draft.seed = Some(v);
        }
        if let Some(v) = self.horizon {
            draft.horizon = Some(v);
        }
        if let Some(v) = self.runs {
            draft.runs = Some(v);
        }
        if let Some(v) = self.beta {
            draft.beta = Some(v);
        }
        if let Some(v) = self.delta {
            draft.delta = Some(v);
        }
        if let Some(v) = self.lambda {
            draft.lambda = Some(v);
        }
        if let Some(v) = self.update_rule {
            draft.update_rule = Some(match v {
                RuleArg::Hard => UpdateRule::Hard,
                RuleArg::Softmax => UpdateRule::Softmax,
            });
        }
        if let Some(v) = &self.out {
            draft.out = Some(v.clone());
        }
        if let Some(v) = &self.agents {
            draft.agents = Some(v.split(',').map(|a| a.trim().to_string()).collect());
        }
        if let Some(v) = self.gamma_mode {
            draft.gamma_mode = Some(match v {
                GammaArg::Practical => GammaTargetMode::Practical,
                GammaArg::Theoretical => GammaTargetMode::Theoretical,
            });
        }
        Ok(draft)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Context dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of arms.
    #[arg(long)]
    arms: Option<usize>,
    /// Comma-separated per-source noise scales; empty string for no sources.
    #[arg(long)]
    source_noise_scales: Option<String>,
    /// Reward noise standard deviation.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// EXP4 learning rate, or `auto` for the horizon-tuned value.
    #[arg(long)]
    exp4_eta: Option<String>,
    /// EXP4 expert advice shape.
    #[arg(long)]
    exp4_advice: Option<AdviceArg>,
}

#[derive(Args)]
struct MovielensArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding u.item / u.user / u.data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// User whose rated movies become the arms.
    #[arg(long)]
    target_user: Option<u32>,
    /// Pretraining rounds per cohort source.
    #[arg(long)]
    pretrain_rounds: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory holding u.item / u.user / u.data.
    #[arg(long)]
    data_dir: PathBuf,
    /// Pretrain this single user.
    #[arg(long, conflicts_with = "cohort_of")]
    user: Option<u32>,
    /// Pretrain every same-cohort peer of this user.
    #[arg(long)]
    cohort_of: Option<u32>,
    /// Pretraining rounds per source.
    #[arg(long, default_value_t = crate::envs::DEFAULT_PRETRAIN_ROUNDS)]
    rounds: u64,
    /// Pretraining seed (single-user mode).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output source-model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Print the crossing-step bound for the given --u/--d/--lambda.
    #[arg(long)]
    kappa: bool,
    /// True source distance U.
    #[arg(long)]
    u: Option<f64>,
    /// Context dimension.
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Ridge regularization strength.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Confidence parameter; only used for precondition notes.
    #[arg(long)]
    delta: Option<f64>,
    /// Check every recorded run in this directory (an experiment output
    /// directory or its runs/ subdirectory).
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directory (or its runs/ subdirectory).
    #[arg(long)]
    run_dir: PathBuf,
    /// Where to write aggregate.csv and figs/ (defaults to --run-dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` and runs the selected subcommand, returning the process exit
/// code (0 success, 1 usage error, 2 data/I/O error).
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                1
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::Movielens(a) => run_movielens(a),
        Cmd::Pretrain(a) => run_pretrain(a),
        Cmd::Diagnose(a) => run_diagnose(a),
        Cmd::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn print_experiment_summary(config: &ExperimentConfig, output: &ExperimentOutput) {
    println!(
        "ran {} agent(s) x {} run(s) x {} step(s); output in {}",
        config.agents.len(),
        config.n_runs,
        config.horizon,
        config.out_dir.display()
    );
    println!("final mean cumulative pseudo-regret:");
    for slot in &config.agents {
        if let Some(row) = output
            .aggregate
            .iter()
            .rev()
            .find(|r| r.agent == slot.name)
        {
            println!(
                "  {:<18} {:>12.3}  (std {:.3})",
                row.agent, row.mean_cum_regret, row.std_cum_regret
            );
        }
    }
}

fn run_configured(config: ExperimentConfig) -> Result<()> {
    let output = run_experiment(&config)?;
    emit_plot_data(&output.aggregate, &config.out_dir.join("figs"))?;
    print_experiment_summary(&config, &output);
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut draft = args.common.draft()?;
    if let Some(v) = args.dim {
        draft.dim = Some(v);
    }
    if let Some(v) = args.arms {
        draft.arms = Some(v);
    }
    if let Some(v) = &args.source_noise_scales {
        let scales = if v.trim().is_empty() {
            Vec::new()
        } else {
            v.split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::config(format!("source noise scale is not a number: {s:?}"))
                    })
                })
                .collect::<Result<_>>()?
        };
        draft.source_noise_scales = Some(scales);
    }
    if let Some(v) = args.noise_sigma {
        draft.noise_sigma = Some(v);
    }
    if let Some(v) = &args.exp4_eta {
        draft.exp4_eta = Some(if v == "auto" {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| {
                Error::config(format!("exp4 eta must be a number or 'auto', got {v:?}"))
            })?)
        });
    }
    if let Some(v) = args.exp4_advice {
        draft.exp4_advice = Some(match v {
            AdviceArg::Greedy => AdviceMode::Greedy,
            AdviceArg::Softmax => AdviceMode::Softmax,
        });
    }
    run_configured(draft.finalize(EnvKind::Synthetic)?)
}

fn run_movielens(args: MovielensArgs) -> Result<()> {
    let mut draft = args.common.draft()?;
    if let Some(v) = &args.data_dir {
        draft.data_dir = Some(v.clone());
    }
    if let Some(v) = args.target_user {
        draft.target_user = Some(v);
    }
    if let Some(v) = args.pretrain_rounds {
        draft.pretrain_rounds = Some(v);
    }
    run_configured(draft.finalize(EnvKind::MovieLens)?)
}

fn run_pretrain(args: PretrainArgs) -> Result<()> {
    let universe = load_movielens(&args.data_dir)?;
    let models = match (args.user, args.cohort_of) {
        (Some(user), None) => vec![pretrain_sources(&universe, user, args.rounds, args.seed)?],
        (None, Some(target)) => group_sources(&universe, target, args.rounds)?,
        _ => {
            return Err(Error::config(
                "pretrain needs exactly one of --user or --cohort-of",
            ))
        }
    };
    save_source_models(&args.out, &models)?;
    println!(
        "wrote {} source model(s) to {}",
        models.len(),
        args.out.display()
    );
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs) -> Result<()> {
    if args.kappa {
        let u = args
            .u
            .ok_or_else(|| Error::config("--kappa requires --u <distance>"))?;
        if !(0.0..=2.0).contains(&u) {
            return Err(Error::config(format!(
                "u must lie in [0, 2], got {u}"
            )));
        }
        if args.d < 1 {
            return Err(Error::config("d must be at least 1"));
        }
        if !(args.lambda > 0.0) {
            return Err(Error::config(format!(
                "lambda must be positive, got {}",
                args.lambda
            )));
        }
        if let Some(delta) = args.delta {
            if !kappa_delta_ok(args.lambda, delta) {
                eprintln!(
                    "note: the crossing-step bound assumes delta <= exp(-2*lambda) = {}; got delta = {delta}",
                    (-2.0 * args.lambda).exp()
                );
            }
        }
        println!("{}", kappa(u, args.d, args.lambda));
        return Ok(());
    }
    let Some(dir) = &args.run_dir else {
        return Err(Error::config("diagnose needs --kappa or --run-dir"));
    };
    diagnose_run_dir(dir)
}

fn runs_subdir(dir: &Path) -> PathBuf {
    let nested = dir.join("runs");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn diagnose_run_dir(dir: &Path) -> Result<()> {
    let runs_dir = runs_subdir(dir);
    super::require_dir(&runs_dir)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&runs_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::data(
            runs_dir.display().to_string(),
            0,
            "no per-run CSV files found",
        ));
    }
    let mut checked = 0usize;
    let mut failures = 0usize;
    for file in &files {
        let record = read_run_csv(file)?;
        if record.diagnostics.steps.is_empty() || !record.diagnostics.lambda.is_finite() {
            println!(
                "{} run {}: skipped (no ridge trace recorded)",
                record.agent, record.run_index
            );
            continue;
        }
        let report = run_lemma_checks(&record.diagnostics);
        checked += 1;
        let mut parts: Vec<String> = report
            .lemma_checks
            .iter()
            .map(|(name, check)| {
                if !check.pass {
                    failures += 1;
                }
                format!(
                    "{name} {} (max slack {:.3e})",
                    if check.pass { "pass" } else { "FAIL" },
                    check.max_slack
                )
            })
            .collect();
        parts.push(format!("kappa = {}", report.kappa));
        println!("{} run {}: {}", record.agent, record.run_index, parts.join(", "));
        let bounds: Vec<String> = report
            .theorem_bounds
            .iter()
            .map(|(name, value)| format!("{name} = {value:.6}"))
            .collect();
        if !bounds.is_empty() {
            println!("  bounds at horizon: {}", bounds.join(", "));
        }
        for note in &report.notes {
            println!("  note: {note}");
        }
    }
    println!(
        "checked {checked} run(s): {}",
        if failures == 0 {
            "all inequalities hold".to_string()
        } else {
            format!("{failures} inequality failure(s)")
        }
    );
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let runs_dir = runs_subdir(&args.run_dir);
    let rows = recompute_aggregate(&runs_dir)?;
    let out = args.out.unwrap_or_else(|| args.run_dir.clone());
    std::fs::create_dir_all(&out)?;
    write_aggregate_csv(&out.join("aggregate.csv"), &rows)?;
    let written = emit_plot_data(&rows, &out.join("figs"))?;
    println!(
        "aggregate recomputed from {} ({} rows); wrote {} and {} figure file(s)",
        runs_dir.display(),
        rows.len(),
        out.join("aggregate.csv").display(),
        written.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(cli_dispatch(["bandit-transfer", "--help"]), 0);
        assert_eq!(cli_dispatch(["bandit-transfer", "--version"]), 0);
        assert_eq!(cli_dispatch(["bandit-transfer", "synth", "--help"]), 0);
    }

    #[test]
    fn usage_mistakes_exit_one() {
        assert_eq!(cli_dispatch(["bandit-transfer"]), 1);
        assert_eq!(cli_dispatch(["bandit-transfer", "unknown-command"]), 1);
        assert_eq!(
            cli_dispatch(["bandit-transfer", "synth", "--no-such-flag"]),
            1
        );
        // Validation failures after parsing are usage errors too.
        assert_eq!(
            cli_dispatch([
                "bandit-transfer",
                "diagnose",
                "--kappa",
                "--u",
                "3.0",
                "--d",
                "20"
            ]),
            1
        );
        assert_eq!(
            cli_dispatch(["bandit-transfer", "diagnose"]),
            1,
            "diagnose without a mode is a usage error"
        );
    }

    #[test]
    fn missing_data_exits_two() {
        assert_eq!(
            cli_dispatch([
                "bandit-transfer",
                "movielens",
                "--data-dir",
                "/nonexistent-ml-dir",
                "--target-user",
                "1"
            ]),
            2
        );
        assert_eq!(
            cli_dispatch([
                "bandit-transfer",
                "report",
                "--run-dir",
                "/nonexistent-run-dir"
            ]),
            2
        );
    }

    #[test]
    fn kappa_mode_exits_zero() {
        assert_eq!(
            cli_dispatch([
                "bandit-transfer",
                "diagnose",
                "--kappa",
                "--u",
                "0.5",
                "--d",
                "20",
                "--lambda",
                "1"
            ]),
            0
        );
    }
}
