//! Plot-data emission: one long-format CSV per figure plus a self-contained
//! SVG rendering (mean lines with standard-deviation whiskers), generated
//! without any external plotting dependency.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

use super::AggregateRow;

/// Canvas geometry shared by both figures.
const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// At most this many whisker marks per series, evenly spaced over the steps.
const WHISKERS_PER_SERIES: usize = 20;

struct Figure<'a> {
    /// File stem: `<stem>.csv` and `<stem>.svg`.
    stem: &'a str,
    title: &'a str,
    y_label: &'a str,
    /// Extracts (mean, std) from a row.
    value: fn(&AggregateRow) -> (f64, f64),
}

const FIGURES: [Figure<'static>; 2] = [
    Figure {
        stem: "regret",
        title: "Cumulative pseudo-regret (mean over runs)",
        y_label: "cumulative pseudo-regret",
        value: |r| (r.mean_cum_regret, r.std_cum_regret),
    },
    Figure {
        stem: "alpha_target",
        title: "Target weight (mean over runs)",
        y_label: "target weight",
        value: |r| (r.mean_alpha_t, r.std_alpha_t),
    },
];

/// One plotted series: agent name plus (step, mean, std) points.
type Series = (String, Vec<(u64, f64, f64)>);

fn to_series(aggregate: &[AggregateRow], value: fn(&AggregateRow) -> (f64, f64)) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for row in aggregate {
        let (mean, std) = value(row);
        match out.last_mut() {
            Some((name, points)) if *name == row.agent => points.push((row.step, mean, std)),
            _ => out.push((row.agent.clone(), vec![(row.step, mean, std)])),
        }
    }
    out
}

/// Largest "nice" step (1/2/5 × 10^k) that yields at least four intervals.
fn nice_tick(range: f64) -> f64 {
    if !(range > 0.0) {
        return 1.0;
    }
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let residual = raw / mag;
    let factor = if residual >= 5.0 {
        5.0
    } else if residual >= 2.0 {
        2.0
    } else {
        1.0
    };
    factor * mag
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    // Ticks are nice numbers; shortest round-trip keeps them compact.
    if v == 0.0 {
        "0".to_string() // avoid "-0"
    } else {
        format!("{v}")
    }
}

fn render_svg(title: &str, y_label: &str, series: &[Series]) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="Helvetica, Arial, sans-serif">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="26" font-size="16" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

    if series.is_empty() || series.iter().all(|(_, p)| p.is_empty()) {
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-size="14" text-anchor="middle" fill="#666">no data</text></svg>"##,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        return svg;
    }

    let mut x_max = 0u64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, points) in series {
        for &(step, mean, std) in points {
            x_max = x_max.max(step);
            y_min = y_min.min(mean - std);
            y_max = y_max.max(mean + std);
        }
    }
    // Anchor non-negative data at zero; pad the top a little.
    if y_min > 0.0 {
        y_min = 0.0;
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    y_max += 0.05 * (y_max - y_min);
    let x_max_f = x_max.max(1) as f64;

    let sx = |step: u64| MARGIN_LEFT + (step as f64 / x_max_f) * plot_w;
    let sy = |v: f64| MARGIN_TOP + (1.0 - (v - y_min) / (y_max - y_min)) * plot_h;

    // Gridlines and ticks.
    let ytick = nice_tick(y_max - y_min);
    let mut t = (y_min / ytick).ceil() * ytick;
    while t <= y_max {
        let y = sy(t);
        let _ = write!(
            svg,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd" stroke-width="1"/>"##,
            fmt_coord(MARGIN_LEFT),
            fmt_coord(y),
            fmt_coord(WIDTH - MARGIN_RIGHT),
            fmt_coord(y)
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-size="11" text-anchor="end" fill="#444">{}</text>"##,
            fmt_coord(MARGIN_LEFT - 6.0),
            fmt_coord(y + 4.0),
            fmt_tick(t)
        );
        t += ytick;
    }
    let xtick = nice_tick(x_max_f);
    let mut t = 0.0;
    while t <= x_max_f {
        let x = sx(t as u64);
        let _ = write!(
            svg,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd" stroke-width="1"/>"##,
            fmt_coord(x),
            fmt_coord(MARGIN_TOP),
            fmt_coord(x),
            fmt_coord(HEIGHT - MARGIN_BOTTOM)
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-size="11" text-anchor="middle" fill="#444">{}</text>"##,
            fmt_coord(x),
            fmt_coord(HEIGHT - MARGIN_BOTTOM + 16.0),
            fmt_tick(t)
        );
        t += xtick;
    }

    // Axes.
    let _ = write!(
        svg,
        r##"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="#000" stroke-width="1"/><line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="#000" stroke-width="1"/>"##,
        l = fmt_coord(MARGIN_LEFT),
        t = fmt_coord(MARGIN_TOP),
        b = fmt_coord(HEIGHT - MARGIN_BOTTOM),
        r = fmt_coord(WIDTH - MARGIN_RIGHT)
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">step</text>"#,
        fmt_coord(MARGIN_LEFT + plot_w / 2.0),
        fmt_coord(HEIGHT - 14.0)
    );
    let _ = write!(
        svg,
        r#"<text x="18" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {})">{y_label}</text>"#,
        fmt_coord(MARGIN_TOP + plot_h / 2.0),
        fmt_coord(MARGIN_TOP + plot_h / 2.0)
    );

    // Series lines, whiskers, legend.
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for &(step, mean, _) in points {
            if !path.is_empty() {
                path.push(' ');
            }
            let _ = write!(path, "{},{}", fmt_coord(sx(step)), fmt_coord(sy(mean)));
        }
        let _ = write!(
            svg,
            r#"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>"#
        );

        let stride = (points.len() / WHISKERS_PER_SERIES).max(1);
        for &(step, mean, std) in points.iter().step_by(stride) {
            if std <= 0.0 {
                continue;
            }
            let x = sx(step);
            let (y0, y1) = (sy(mean - std), sy(mean + std));
            let _ = write!(
                svg,
                r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="{color}" stroke-width="1" opacity="0.6"/><line x1="{xl}" y1="{y0}" x2="{xr}" y2="{y0}" stroke="{color}" stroke-width="1" opacity="0.6"/><line x1="{xl}" y1="{y1}" x2="{xr}" y2="{y1}" stroke="{color}" stroke-width="1" opacity="0.6"/>"#,
                x = fmt_coord(x),
                xl = fmt_coord(x - 3.0),
                xr = fmt_coord(x + 3.0),
                y0 = fmt_coord(y0),
                y1 = fmt_coord(y1)
            );
        }

        let ly = MARGIN_TOP + 14.0 + 18.0 * i as f64;
        let _ = write!(
            svg,
            r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{xt}" y="{yt}" font-size="12">{name}</text>"#,
            x0 = fmt_coord(MARGIN_LEFT + 10.0),
            x1 = fmt_coord(MARGIN_LEFT + 34.0),
            xt = fmt_coord(MARGIN_LEFT + 40.0),
            y = fmt_coord(ly),
            yt = fmt_coord(ly + 4.0)
        );
    }

    svg.push_str("</svg>");
    svg
}

/// Writes one long-format CSV (`step,series,mean,std`) and one SVG per figure
/// into `dir`, returning the written paths. An empty aggregate yields
/// header-only CSVs.
pub fn emit_plot_data(aggregate: &[AggregateRow], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for fig in &FIGURES {
        let series = to_series(aggregate, fig.value);

        let mut csv = String::from("step,series,mean,std\n");
        for (name, points) in &series {
            for &(step, mean, std) in points {
                let _ = writeln!(csv, "{step},{name},{mean},{std}");
            }
        }
        let csv_path = dir.join(format!("{}.csv", fig.stem));
        std::fs::write(&csv_path, csv)?;
        written.push(csv_path);

        let svg_path = dir.join(format!("{}.svg", fig.stem));
        std::fs::write(&svg_path, render_svg(fig.title, fig.y_label, &series))?;
        written.push(svg_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn row(agent: &str, step: u64, mean: f64, std: f64) -> AggregateRow {
        AggregateRow {
            agent: agent.into(),
            step,
            mean_cum_regret: mean,
            std_cum_regret: std,
            mean_alpha_t: mean / 10.0,
            std_alpha_t: std / 10.0,
        }
    }

    #[test]
    fn empty_aggregate_yields_header_only_csv() {
        let dir = tempdir().unwrap();
        let written = emit_plot_data(&[], dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let csv = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
        assert_eq!(csv, "step,series,mean,std\n");
        let svg = std::fs::read_to_string(dir.path().join("regret.svg")).unwrap();
        assert!(svg.contains("no data"));
    }

    #[test]
    fn two_agents_hundred_steps_make_two_hundred_rows() {
        let mut agg = Vec::new();
        for agent in ["a", "b"] {
            for k in 1..=100u64 {
                agg.push(row(agent, k, k as f64, 0.5));
            }
        }
        let dir = tempdir().unwrap();
        emit_plot_data(&agg, dir.path()).unwrap();
        for stem in ["regret", "alpha_target"] {
            let csv = std::fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
            assert_eq!(csv.lines().count(), 201, "{stem}: header plus 200 rows");
        }
        let svg = std::fs::read_to_string(dir.path().join("regret.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">a</text>"));
        assert!(svg.contains(">b</text>"));
    }

    #[test]
    fn single_run_std_is_zero_and_draws_no_whiskers() {
        let agg: Vec<AggregateRow> = (1..=50).map(|k| row("solo", k, k as f64, 0.0)).collect();
        let dir = tempdir().unwrap();
        emit_plot_data(&agg, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",0"), "std column should be 0: {line}");
        }
        let svg = std::fs::read_to_string(dir.path().join("regret.svg")).unwrap();
        assert!(!svg.contains("opacity=\"0.6\""), "no whiskers expected");
    }

    #[test]
    fn nice_ticks_are_one_two_five() {
        assert_eq!(nice_tick(10.0), 2.0);
        assert_eq!(nice_tick(100.0), 20.0);
        assert_eq!(nice_tick(7.0), 1.0);
        assert_eq!(nice_tick(0.4), 0.05);
        assert_eq!(nice_tick(5000.0), 1000.0);
        assert_eq!(nice_tick(0.0), 1.0);
    }
}
