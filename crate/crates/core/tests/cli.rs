//! Binary-level tests: every check here drives the compiled CLI the way a
//! user would (fresh process, real files) and asserts the documented exit
//! codes, output layout, and byte-stable reruns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bandit_transfer::envs::write_demo_dataset;
use bandit_transfer::transfer::load_source_models;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bandit-transfer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Recursively lists files under `root`, as paths relative to it.
fn file_tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn kappa_query_prints_the_crossing_step() {
    let out = run(&["diagnose", "--kappa", "--u", "0.5", "--d", "20", "--lambda", "1"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out).trim(), "135");
}

#[test]
fn kappa_query_requires_the_distance_argument() {
    let out = run(&["diagnose", "--kappa"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("--u"),
        "stderr should name the missing flag: {}",
        stderr_of(&out)
    );
}

#[test]
fn invalid_delta_is_a_usage_error_naming_the_range() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(&[
        "synth",
        "--delta",
        "1.5",
        "--horizon",
        "5",
        "--runs",
        "1",
        "--out",
        dir.path().to_str().expect("utf8"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(
        err.contains("delta") && err.contains("between 0 and 1"),
        "stderr should name the valid range: {err}"
    );
}

#[test]
fn missing_data_dir_is_a_data_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(&[
        "movielens",
        "--data-dir",
        "/nonexistent/ml-100k",
        "--target-user",
        "2",
        "--horizon",
        "5",
        "--runs",
        "1",
        "--out",
        dir.path().to_str().expect("utf8"),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn help_exits_zero_and_unknown_subcommand_exits_one() {
    let help = run(&["--help"]);
    assert!(help.status.success());
    assert!(stdout_of(&help).contains("Usage"));
    let sub_help = run(&["synth", "--help"]);
    assert!(sub_help.status.success());
    let unknown = run(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
}

fn small_synth(out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--dim",
        "4",
        "--arms",
        "10",
        "--source-noise-scales",
        "0.2",
        "--horizon",
        "40",
        "--runs",
        "2",
        "--seed",
        "9",
        "--out",
    ];
    let out_str = out_dir.to_str().expect("utf8").to_owned();
    args.push(&out_str);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_synth(&a, &[]).status.success());
    assert!(small_synth(&b, &[]).status.success());

    let (tree_a, tree_b) = (file_tree(&a), file_tree(&b));
    assert_eq!(tree_a, tree_b, "the two runs produced different file sets");
    for rel in &tree_a {
        let bytes_a = std::fs::read(a.join(rel)).expect("readable");
        let bytes_b = std::fs::read(b.join(rel)).expect("readable");
        if rel == Path::new("manifest.txt") {
            // The manifest echoes the output directory; everything else in it
            // must match line for line.
            let keep = |bytes: &[u8]| -> Vec<String> {
                String::from_utf8_lossy(bytes)
                    .lines()
                    .filter(|l| !l.starts_with("out = "))
                    .map(str::to_owned)
                    .collect()
            };
            assert_eq!(keep(&bytes_a), keep(&bytes_b), "manifest drifted between reruns");
        } else {
            assert_eq!(bytes_a, bytes_b, "{} differs between reruns", rel.display());
        }
    }
}

/// Splits one CSV line, returning the named column's value.
fn column<'a>(header: &[&str], fields: &'a [&str], name: &str) -> &'a str {
    let idx = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("column {name} present"));
    fields[idx]
}

#[test]
fn aggregate_matches_an_independent_recompute() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert!(small_synth(dir.path(), &[]).status.success());

    // Re-derive per-(agent, step) mean/std of cumulative regret and target
    // weight straight from the per-run CSV text.
    let mut series: BTreeMap<(String, u64), Vec<(f64, f64)>> = BTreeMap::new();
    let runs_dir = dir.path().join("runs");
    let mut run_files: Vec<PathBuf> = std::fs::read_dir(&runs_dir)
        .expect("runs dir")
        .map(|e| e.expect("entry").path())
        .collect();
    run_files.sort();
    assert_eq!(run_files.len(), 10, "5 agents × 2 runs");
    for file in &run_files {
        let text = std::fs::read_to_string(file).expect("readable");
        let mut agent = String::new();
        let mut header: Vec<&str> = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# agent = ") {
                agent = rest.to_owned();
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if header.is_empty() {
                header = line.split(',').collect();
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let step: u64 = column(&header, &fields, "step").parse().expect("step");
            let cum: f64 = column(&header, &fields, "cum_regret").parse().expect("regret");
            let alpha: f64 = column(&header, &fields, "alpha_t").parse().expect("alpha");
            series.entry((agent.clone(), step)).or_default().push((cum, alpha));
        }
    }

    let stats = |values: &[f64]| -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };

    let agg_text = std::fs::read_to_string(dir.path().join("aggregate.csv")).expect("aggregate");
    let mut rows = 0usize;
    let mut header: Vec<&str> = Vec::new();
    for line in agg_text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if header.is_empty() {
            header = line.split(',').collect();
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let agent = column(&header, &fields, "agent").to_owned();
        let step: u64 = column(&header, &fields, "step").parse().expect("step");
        let cell = &series[&(agent.clone(), step)];
        assert_eq!(cell.len(), 2, "one sample per run for {agent} step {step}");
        let regrets: Vec<f64> = cell.iter().map(|(c, _)| *c).collect();
        let alphas: Vec<f64> = cell.iter().map(|(_, a)| *a).collect();
        let (mean_r, std_r) = stats(&regrets);
        let (mean_a, std_a) = stats(&alphas);
        let checks = [
            ("mean_cum_regret", mean_r),
            ("std_cum_regret", std_r),
            ("mean_alpha_t", mean_a),
            ("std_alpha_t", std_a),
        ];
        for (name, expected) in checks {
            let emitted: f64 = column(&header, &fields, name).parse().expect("number");
            assert!(
                (emitted - expected).abs() <= 1e-9,
                "{agent} step {step} {name}: emitted {emitted}, recomputed {expected}"
            );
        }
        rows += 1;
    }
    assert_eq!(rows, 5 * 40, "one aggregate row per agent per step");
}

#[test]
fn config_file_provides_defaults_and_flags_override() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("exp.cfg");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        "# comment line\n\
         env = synthetic\n\
         dim = 4\n\
         arms = 8\n\
         horizon = 30\n\
         runs = 1\n\
         seed = 3\n\
         agents = classic\n",
    )
    .expect("config written");
    let out = run(&[
        "synth",
        "--config",
        cfg.to_str().expect("utf8"),
        "--horizon",
        "40",
        "--out",
        out_dir.to_str().expect("utf8"),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).expect("manifest");
    assert!(
        manifest.contains("horizon = 40"),
        "flag must override the config file:\n{manifest}"
    );
    assert!(manifest.contains("dim = 4"), "file keys must apply:\n{manifest}");
    let run_csv =
        std::fs::read_to_string(out_dir.join("runs").join("classic_run000.csv")).expect("run csv");
    let data_rows = run_csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty() && !l.starts_with("step,"))
        .count();
    assert_eq!(data_rows, 40);
}

#[test]
fn unknown_config_key_is_rejected_with_its_location() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "env = synthetic\nhorizn = 30\n").expect("config written");
    let out = run(&[
        "synth",
        "--config",
        cfg.to_str().expect("utf8"),
        "--out",
        dir.path().join("out").to_str().expect("utf8"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(
        err.contains("unknown key") && err.contains(":2:"),
        "stderr should name the key and its line: {err}"
    );
}

#[test]
fn pretrain_then_movielens_cohort_flow() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("ml-demo");
    write_demo_dataset(&data).expect("demo dataset");

    let sources = dir.path().join("cohort-sources.txt");
    let out = run(&[
        "pretrain",
        "--data-dir",
        data.to_str().expect("utf8"),
        "--cohort-of",
        "2",
        "--rounds",
        "200",
        "--out",
        sources.to_str().expect("utf8"),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let models = load_source_models(&sources, false).expect("parseable source file");
    assert_eq!(models.len(), 3, "user 2's cohort has three peers");
    assert!(models.iter().all(|m| m.dim() == 18));

    let run_dir = dir.path().join("run");
    let out = run(&[
        "movielens",
        "--data-dir",
        data.to_str().expect("utf8"),
        "--target-user",
        "2",
        "--horizon",
        "60",
        "--runs",
        "2",
        "--seed",
        "4",
        "--out",
        run_dir.to_str().expect("utf8"),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(run_dir.join("aggregate.csv").is_file());
    assert!(run_dir.join("figs").join("regret.svg").is_file());
    let manifest = std::fs::read_to_string(run_dir.join("manifest.txt")).expect("manifest");
    assert!(manifest.contains("env = movielens"));
    assert!(manifest.contains("target_user = 2"));
}

#[test]
fn diagnose_validates_recorded_runs_and_skips_traceless_ones() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert!(small_synth(dir.path(), &[]).status.success());
    let out = run(&["diagnose", "--run-dir", dir.path().to_str().expect("utf8")]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(
        text.contains("all inequalities hold"),
        "expected a clean verdict:\n{text}"
    );
    assert!(
        text.contains("skipped (no ridge trace recorded)"),
        "expert-advice runs carry no ridge trace and must be skipped:\n{text}"
    );
    assert!(!text.contains("FAIL"), "no inequality may fail:\n{text}");
}

#[test]
fn report_recomputes_the_aggregate_byte_identically() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert!(small_synth(dir.path(), &[]).status.success());
    let original = std::fs::read(dir.path().join("aggregate.csv")).expect("aggregate");

    let fresh = dir.path().join("fresh");
    let out = run(&[
        "report",
        "--run-dir",
        dir.path().to_str().expect("utf8"),
        "--out",
        fresh.to_str().expect("utf8"),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let recomputed = std::fs::read(fresh.join("aggregate.csv")).expect("recomputed aggregate");
    assert_eq!(original, recomputed, "aggregate drifted when rebuilt from the run CSVs");
    assert!(fresh.join("figs").join("regret.csv").is_file());
    assert!(fresh.join("figs").join("alpha_target.svg").is_file());
}
