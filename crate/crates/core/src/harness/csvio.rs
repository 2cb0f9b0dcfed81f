//! CSV emission and ingestion for runs and aggregates.
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! identical experiments produce byte-identical files and every value parses
//! back to exactly the bits that were written.
//!
//! A per-run file starts with a `# key = value` preamble carrying the run's
//! static facts (agent, run index, seed, dimension, confidence parameters,
//! true source distances when known), followed by one header line and one row
//! per step. The first column groups are the standard trace; `log_det`,
//! `width_sq`, and `anorm_s*` are diagnostic extensions present when the agent
//! maintains a ridge state (see the FORMATS document).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diagnostics::{RunDiagnostics, StepDiagnostics};
use crate::error::{Error, Result};

use super::{AggregateRow, RunRecord, StepRecord};

fn fmt_f64_list(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// Writes one run's trace (and any diagnostic extensions) to `path`.
pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let m = record
        .steps
        .first()
        .map_or(record.diagnostics.u_true.len(), |s| s.alpha_sources.len());
    let diag = &record.diagnostics;
    let has_diag = !diag.steps.is_empty() && diag.steps.len() == record.steps.len();
    let has_anorm = has_diag && !diag.u_true.is_empty();

    let mut out = String::new();
    let _ = writeln!(out, "# agent = {}", record.agent);
    let _ = writeln!(out, "# run = {}", record.run_index);
    let _ = writeln!(out, "# seed = {}", record.master_seed);
    let _ = writeln!(out, "# dim = {}", diag.dim);
    let _ = writeln!(out, "# lambda = {}", diag.lambda);
    let _ = writeln!(out, "# delta = {}", diag.delta);
    let _ = writeln!(out, "# beta = {}", diag.beta);
    let _ = writeln!(out, "# alpha_t0 = {}", diag.alpha_t0);
    if !diag.u_true.is_empty() {
        let _ = writeln!(out, "# u_true = {}", fmt_f64_list(&diag.u_true));
    }

    let mut header = String::from("step,arm,reward,inst_regret,cum_regret,alpha_t");
    for j in 1..=m {
        let _ = write!(header, ",alpha_s{j}");
    }
    header.push_str(",gamma_t");
    for j in 1..=m {
        let _ = write!(header, ",gamma_s{j}");
    }
    header.push_str(",exploration");
    if has_diag {
        header.push_str(",log_det,width_sq");
        if has_anorm {
            for j in 1..=m {
                let _ = write!(header, ",anorm_s{j}");
            }
        }
    }
    let _ = writeln!(out, "{header}");

    for (i, s) in record.steps.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            s.step, s.arm, s.reward, s.inst_regret, s.cum_regret, s.alpha_target
        );
        for a in &s.alpha_sources {
            let _ = write!(out, ",{a}");
        }
        let _ = write!(out, ",{}", s.gamma_target);
        for g in &s.gamma_sources {
            let _ = write!(out, ",{g}");
        }
        let _ = write!(out, ",{}", s.exploration);
        if has_diag {
            let d = &diag.steps[i];
            let _ = write!(out, ",{},{}", d.log_det, d.width_sq);
            if has_anorm {
                for a in &d.source_anorms {
                    let _ = write!(out, ",{a}");
                }
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| {
        Error::data(
            path.display().to_string(),
            line,
            format!("field {field} is not a number: {raw:?}"),
        )
    })
}

fn parse_int<T: std::str::FromStr>(path: &Path, line: usize, field: &str, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| {
        Error::data(
            path.display().to_string(),
            line,
            format!("field {field} is not an integer: {raw:?}"),
        )
    })
}

/// Reads a per-run CSV written by [`write_run_csv`] back into a [`RunRecord`].
pub fn read_run_csv(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(path.display().to_string(), 0, e.to_string()))?;
    let p = |line: usize, msg: String| Error::data(path.display().to_string(), line, msg);

    let mut agent = None;
    let mut run_index = None;
    let mut master_seed = None;
    let mut dim = None;
    let mut lambda = f64::NAN;
    let mut delta = f64::NAN;
    let mut beta = f64::NAN;
    let mut alpha_t0 = f64::NAN;
    let mut u_true: Vec<f64> = Vec::new();

    let mut lines = text.lines().enumerate();
    let mut header: Option<(usize, String)> = None;
    for (i, line) in lines.by_ref() {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.split_once('=') else {
                continue; // free-form comment
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "agent" => agent = Some(value.to_string()),
                "run" => run_index = Some(parse_int::<u32>(path, lineno, "run", value)?),
                "seed" => master_seed = Some(parse_int::<u64>(path, lineno, "seed", value)?),
                "dim" => dim = Some(parse_int::<usize>(path, lineno, "dim", value)?),
                "lambda" => lambda = parse_f64(path, lineno, "lambda", value)?,
                "delta" => delta = parse_f64(path, lineno, "delta", value)?,
                "beta" => beta = parse_f64(path, lineno, "beta", value)?,
                "alpha_t0" => alpha_t0 = parse_f64(path, lineno, "alpha_t0", value)?,
                "u_true" => {
                    u_true = value
                        .split(',')
                        .map(|v| parse_f64(path, lineno, "u_true", v.trim()))
                        .collect::<Result<_>>()?;
                }
                _ => {} // unrecognized preamble keys are tolerated on read
            }
        } else {
            header = Some((lineno, line.to_string()));
            break;
        }
    }
    let (header_line, header) =
        header.ok_or_else(|| p(0, "missing header row".to_string()))?;
    let agent = agent.ok_or_else(|| p(header_line, "preamble lacks '# agent ='".to_string()))?;
    let run_index =
        run_index.ok_or_else(|| p(header_line, "preamble lacks '# run ='".to_string()))?;
    let master_seed =
        master_seed.ok_or_else(|| p(header_line, "preamble lacks '# seed ='".to_string()))?;
    let dim = dim.ok_or_else(|| p(header_line, "preamble lacks '# dim ='".to_string()))?;

    let cols: Vec<&str> = header.split(',').collect();
    let fixed = ["step", "arm", "reward", "inst_regret", "cum_regret", "alpha_t"];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err(p(
            header_line,
            format!("unexpected header prefix: {header:?}"),
        ));
    }
    let m = cols[fixed.len()..]
        .iter()
        .take_while(|c| c.starts_with("alpha_s"))
        .count();
    let expect_base: Vec<String> = {
        let mut v: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
        v.extend((1..=m).map(|j| format!("alpha_s{j}")));
        v.push("gamma_t".into());
        v.extend((1..=m).map(|j| format!("gamma_s{j}")));
        v.push("exploration".into());
        v
    };
    if cols.len() < expect_base.len()
        || cols[..expect_base.len()]
            .iter()
            .zip(&expect_base)
            .any(|(a, b)| a != b)
    {
        return Err(p(header_line, format!("unexpected header layout: {header:?}")));
    }
    let rest = &cols[expect_base.len()..];
    let (has_diag, has_anorm) = match rest {
        [] => (false, false),
        ["log_det", "width_sq"] => (true, false),
        ["log_det", "width_sq", anorms @ ..]
            if anorms.len() == m && anorms.iter().all(|c| c.starts_with("anorm_s")) =>
        {
            (true, true)
        }
        _ => {
            return Err(p(
                header_line,
                format!("unexpected diagnostic columns: {rest:?}"),
            ))
        }
    };

    let mut steps = Vec::new();
    let mut diag_steps = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(p(
                lineno,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let mut idx = 0;
        let mut next = || {
            let v = f[idx];
            idx += 1;
            v
        };
        let step: u64 = parse_int(path, lineno, "step", next())?;
        let arm: usize = parse_int(path, lineno, "arm", next())?;
        let reward = parse_f64(path, lineno, "reward", next())?;
        let inst_regret = parse_f64(path, lineno, "inst_regret", next())?;
        let cum_regret = parse_f64(path, lineno, "cum_regret", next())?;
        let alpha_target = parse_f64(path, lineno, "alpha_t", next())?;
        let mut alpha_sources = Vec::with_capacity(m);
        for j in 1..=m {
            alpha_sources.push(parse_f64(path, lineno, &format!("alpha_s{j}"), next())?);
        }
        let gamma_target = parse_f64(path, lineno, "gamma_t", next())?;
        let mut gamma_sources = Vec::with_capacity(m);
        for j in 1..=m {
            gamma_sources.push(parse_f64(path, lineno, &format!("gamma_s{j}"), next())?);
        }
        let exploration = parse_f64(path, lineno, "exploration", next())?;
        if has_diag {
            let log_det = parse_f64(path, lineno, "log_det", next())?;
            let width_sq = parse_f64(path, lineno, "width_sq", next())?;
            let mut source_anorms = Vec::new();
            if has_anorm {
                for j in 1..=m {
                    source_anorms.push(parse_f64(path, lineno, &format!("anorm_s{j}"), next())?);
                }
            }
            diag_steps.push(StepDiagnostics {
                step,
                log_det,
                width_sq,
                source_anorms,
                gamma_target,
                gamma_sources: gamma_sources.clone(),
            });
        }
        steps.push(StepRecord {
            step,
            arm,
            reward,
            inst_regret,
            cum_regret,
            alpha_target,
            alpha_sources,
            gamma_target,
            gamma_sources,
            exploration,
        });
    }

    Ok(RunRecord {
        agent,
        run_index,
        master_seed,
        steps,
        diagnostics: RunDiagnostics {
            dim,
            lambda,
            delta,
            beta,
            alpha_t0,
            u_true,
            steps: diag_steps,
        },
    })
}

/// Writes the aggregate table.
pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# std columns are population standard deviations over runs");
    let _ = writeln!(
        out,
        "agent,step,mean_cum_regret,std_cum_regret,mean_alpha_t,std_alpha_t"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.agent, r.step, r.mean_cum_regret, r.std_cum_regret, r.mean_alpha_t, r.std_alpha_t
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Re-reads every per-run CSV in `runs_dir` (sorted by file name) and
/// recomputes the aggregate table from scratch.
pub fn recompute_aggregate(runs_dir: &Path) -> Result<Vec<AggregateRow>> {
    super::require_dir(runs_dir)?;
    let mut files: Vec<_> = fs::read_dir(runs_dir)?
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
    let records = files
        .iter()
        .map(|f| read_run_csv(f))
        .collect::<Result<Vec<_>>>()?;
    super::aggregate_records(&records)
}
