//! SVG line charts of the aggregate metrics, emitted without a plotting
//! dependency. The CSV next to them is the authoritative data; charts are a
//! deterministic pure function of the aggregate rows, so re-emission is
//! byte-identical.

use std::path::{Path, PathBuf};

use super::{aggregate_to_csv, AggregateRow, ExperimentResult};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

struct Series<'a> {
    label: String,
    color: &'static str,
    rows: Vec<&'a AggregateRow>,
}

fn collect_series<'a>(rows: &'a [AggregateRow]) -> Vec<Series<'a>> {
    let mut series: Vec<Series<'a>> = Vec::new();
    for row in rows {
        let label = format!("{} / {}", row.planner.name(), row.sampler.name());
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.rows.push(row),
            None => {
                let color = PALETTE[series.len() % PALETTE.len()];
                series.push(Series {
                    label,
                    color,
                    rows: vec![row],
                });
            }
        }
    }
    series
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// One chart of `value +- ci` against nodes for every cell series.
fn render_chart(
    title: &str,
    y_label: &str,
    series: &[Series<'_>],
    value: impl Fn(&AggregateRow) -> (f64, f64),
) -> String {
    let mut points: Vec<(f64, f64, f64)> = Vec::new(); // (nodes, lo, hi)
    let mut max_nodes = 0.0f64;
    for s in series {
        for row in &s.rows {
            max_nodes = max_nodes.max(row.nodes as f64);
            let (m, ci) = value(row);
            if m.is_finite() {
                let half = if ci.is_finite() { ci } else { 0.0 };
                points.push((row.nodes as f64, m - half, m + half));
            }
        }
    }
    let (mut y_min, mut y_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.2))
        });
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let x_max = max_nodes.max(1.0);

    let sx = |nodes: f64| MARGIN_L + nodes / x_max * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |v: f64| HEIGHT - MARGIN_B - (v - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // Axes and ticks.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B),
        fmt(WIDTH - MARGIN_R),
        fmt(HEIGHT - MARGIN_B)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B)
    ));
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let x = sx(frac * x_max);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(x),
            fmt(HEIGHT - MARGIN_B),
            fmt(x),
            fmt(HEIGHT - MARGIN_B + 5.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(x),
            fmt(HEIGHT - MARGIN_B + 18.0),
            fmt_tick(frac * x_max)
        ));
        let yv = y_min + frac * (y_max - y_min);
        let y = sy(yv);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(MARGIN_L - 5.0),
            fmt(y),
            fmt(MARGIN_L),
            fmt(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_L - 8.0),
            fmt(y + 4.0),
            fmt_tick(yv)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">nodes</text>\n",
        fmt((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        fmt(HEIGHT - 12.0)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0),
        fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0)
    ));

    // Confidence bands then mean lines; the cost line starts at the first
    // finite checkpoint.
    for s in series {
        let finite: Vec<(f64, f64, f64)> = s
            .rows
            .iter()
            .filter_map(|row| {
                let (m, ci) = value(row);
                if m.is_finite() {
                    let half = if ci.is_finite() { ci } else { 0.0 };
                    Some((row.nodes as f64, m, half))
                } else {
                    None
                }
            })
            .collect();
        if finite.is_empty() {
            continue;
        }
        let mut band = String::new();
        for (n, m, h) in &finite {
            band.push_str(&format!("{},{} ", fmt(sx(*n)), fmt(sy(m + h))));
        }
        for (n, m, h) in finite.iter().rev() {
            band.push_str(&format!("{},{} ", fmt(sx(*n)), fmt(sy(m - h))));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            band.trim_end(),
            s.color
        ));
        let line: Vec<String> = finite
            .iter()
            .map(|(n, m, _)| format!("{},{}", fmt(sx(*n)), fmt(sy(*m))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
            line.join(" "),
            s.color
        ));
    }

    // Legend.
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            fmt(WIDTH - MARGIN_R - 150.0),
            fmt(y),
            fmt(WIDTH - MARGIN_R - 126.0),
            fmt(y),
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            fmt(WIDTH - MARGIN_R - 120.0),
            fmt(y + 4.0),
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the four metric charts plus the underlying CSV. Returns the
/// written paths.
pub fn emit_plots(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let series = collect_series(&result.aggregate);
    let charts: [(&str, &str, fn(&AggregateRow) -> (f64, f64)); 4] = [
        ("cost.svg", "best cost", |r| (r.cost_mean, r.cost_ci95)),
        ("invalid_connections.svg", "invalid connections", |r| {
            (r.invconn_mean, r.invconn_ci95)
        }),
        ("invalid_obstacles.svg", "invalid obstacles", |r| {
            (r.invobs_mean, r.invobs_ci95)
        }),
        ("time.svg", "elapsed seconds", |r| (r.time_mean, r.time_ci95)),
    ];
    let mut written = Vec::new();
    for (file, label, value) in charts {
        let svg = render_chart(label, label, &series, value);
        let path = out_dir.join(file);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let csv_path = out_dir.join("plots_data.csv");
    std::fs::write(&csv_path, aggregate_to_csv(&result.aggregate))
        .map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{run_experiment, ExperimentSpec, SamplerKind};
    use crate::env::RobotKind;
    use crate::planner::PlannerKind;

    #[test]
    fn emission_is_deterministic_and_cost_starts_finite() {
        let mut spec = ExperimentSpec::desk(RobotKind::PointRobot2, 9);
        spec.n_envs = 1;
        spec.pairs_per_env = 1;
        spec.repeats = 1;
        spec.budget = 300;
        spec.planners = vec![PlannerKind::RrtStar];
        spec.samplers = vec![SamplerKind::Uniform];
        let result = run_experiment(&spec, None).unwrap();

        let dir = std::env::temp_dir().join(format!("flowplan-plots-{}", std::process::id()));
        let first = emit_plots(&result, &dir).unwrap();
        let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let again = emit_plots(&result, &dir).unwrap();
        for (path, prev) in again.iter().zip(&bytes) {
            assert_eq!(&std::fs::read(path).unwrap(), prev, "{path:?} changed");
        }

        // Single-run result: the cost chart draws a zero-width band, and the
        // polyline only covers finite checkpoints.
        let cost_svg = std::fs::read_to_string(&first[0]).unwrap();
        assert!(cost_svg.contains("polyline"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
