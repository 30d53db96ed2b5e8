//! Conditioning galleries: sampled configurations under progressively less
//! planning information, rendered as workspace overlays.
//!
//! Five panels: full conditioning, init only, target only, workspace only,
//! and a uniform baseline. Arm configurations are projected into the
//! workspace through forward kinematics; raw samples are drawn without any
//! collision checking.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::env::{encode_workspace, forward_kinematics, Config, Environment, RobotKind};
use crate::error::{Error, Result};
use crate::flow::{ConditioningContext, FlowModel};
use crate::seed;

/// One gallery panel: a label and its sampled configurations.
#[derive(Debug, Clone)]
pub struct GalleryPanel {
    pub label: String,
    pub samples: Vec<Config>,
}

/// The five-panel conditioning gallery.
#[derive(Debug, Clone)]
pub struct Gallery {
    pub panels: Vec<GalleryPanel>,
}

/// Per-coordinate sample variance of a panel.
pub fn per_coordinate_variance(samples: &[Config]) -> Vec<f64> {
    assert!(!samples.is_empty());
    let dim = samples[0].dim();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, c) in mean.iter_mut().zip(s.coords()) {
            *m += c / n;
        }
    }
    let mut var = vec![0.0; dim];
    for s in samples {
        for i in 0..dim {
            let d = s[i] - mean[i];
            var[i] += d * d / n;
        }
    }
    var
}

/// Draw the five sample sets (no rendering).
pub fn conditioning_gallery(
    model: &FlowModel,
    env: &Environment,
    q_init: &Config,
    q_target: &Config,
    n: usize,
    rng_seed: u64,
) -> Gallery {
    let encoding = encode_workspace(env);
    let full = ConditioningContext::new(&encoding, Some(q_init.clone()), Some(q_target.clone()));
    let contexts = [
        ("full", full.clone()),
        ("init-only", full.masked(false, true)),
        ("target-only", full.masked(true, false)),
        ("omega-only", full.masked(true, true)),
    ];
    let mut panels: Vec<GalleryPanel> = contexts
        .iter()
        .enumerate()
        .map(|(i, (label, ctx))| GalleryPanel {
            label: (*label).to_string(),
            samples: model.sample(ctx, n, seed::derive_n(rng_seed, "gallery", &[i as u64])),
        })
        .collect();
    let mut rng = seed::rng(seed::derive(rng_seed, "gallery-uniform"));
    let dim = env.robot.dim();
    panels.push(GalleryPanel {
        label: "uniform".to_string(),
        samples: (0..n)
            .map(|_| Config::new((0..dim).map(|_| rng.gen::<f64>()).collect()))
            .collect(),
    });
    Gallery { panels }
}

const PANEL: f64 = 250.0;
const PAD: f64 = 12.0;
const LABEL_H: f64 = 26.0;

fn draw_pose(svg: &mut String, robot: RobotKind, q: &Config, color: &str, width: f64, opacity: f64, ox: f64, oy: f64) {
    let map = |p: [f64; 2]| -> (f64, f64) { (ox + p[0] * PANEL, oy + (1.0 - p[1]) * PANEL) };
    match robot {
        RobotKind::PointRobot2 => {
            let (x, y) = map([q[0], q[1]]);
            svg.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"{color}\" fill-opacity=\"{opacity}\"/>\n",
                width + 1.0
            ));
        }
        RobotKind::PlanarArm4 => {
            let [(base, elbow), (_, tip)] = forward_kinematics(q);
            let (bx, by) = map(base);
            let (ex, ey) = map(elbow);
            let (tx, ty) = map(tip);
            svg.push_str(&format!(
                "<polyline points=\"{bx:.2},{by:.2} {ex:.2},{ey:.2} {tx:.2},{ty:.2}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\"/>\n"
            ));
            svg.push_str(&format!(
                "<circle cx=\"{bx:.2}\" cy=\"{by:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"{opacity}\"/>\n"
            ));
        }
    }
}

/// Render the gallery as one SVG plus a CSV of the raw samples; returns the
/// written file paths.
pub fn emit_conditioning_gallery(
    model: &FlowModel,
    env: &Environment,
    q_init: &Config,
    q_target: &Config,
    n: usize,
    rng_seed: u64,
    out_dir: &Path,
) -> Result<(Gallery, Vec<PathBuf>)> {
    let gallery = conditioning_gallery(model, env, q_init, q_target, n, rng_seed);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let panels = gallery.panels.len() as f64;
    let width = panels * (PANEL + PAD) + PAD;
    let height = PANEL + 2.0 * PAD + LABEL_H;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, panel) in gallery.panels.iter().enumerate() {
        let ox = PAD + i as f64 * (PANEL + PAD);
        let oy = PAD;
        svg.push_str(&format!(
            "<rect x=\"{ox:.2}\" y=\"{oy:.2}\" width=\"{PANEL}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#888\"/>\n"
        ));
        for o in &env.obstacles {
            let cx = ox + o.center[0] * PANEL;
            let cy = oy + (1.0 - o.center[1]) * PANEL;
            svg.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"black\" fill-opacity=\"0.85\"/>\n",
                o.radius * PANEL
            ));
        }
        for q in &panel.samples {
            draw_pose(&mut svg, env.robot, q, "#2ca02c", 1.2, 0.3, ox, oy);
        }
        draw_pose(&mut svg, env.robot, q_init, "#1f77b4", 2.5, 1.0, ox, oy);
        draw_pose(&mut svg, env.robot, q_target, "#d62728", 2.5, 1.0, ox, oy);
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            ox + PANEL / 2.0,
            oy + PANEL + 18.0,
            panel.label
        ));
    }
    svg.push_str("</svg>\n");

    let svg_path = out_dir.join("gallery.svg");
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;

    let dim = env.robot.dim();
    let mut csv = String::from("panel");
    for i in 0..dim {
        csv.push_str(&format!(",c{i}"));
    }
    csv.push('\n');
    for panel in &gallery.panels {
        for q in &panel.samples {
            csv.push_str(&panel.label);
            for i in 0..dim {
                csv.push_str(&format!(",{}", q[i]));
            }
            csv.push('\n');
        }
    }
    let csv_path = out_dir.join("gallery.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    Ok((gallery, vec![svg_path, csv_path]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowLayout;
    use crate::stats::{ks_p_value, ks_statistic_uniform};

    fn small_model(robot: RobotKind) -> FlowModel {
        let dim = robot.dim();
        FlowModel::new(
            FlowLayout {
                dim,
                blocks: 2,
                hidden: vec![8],
                ctx_len: 2 * crate::env::ENCODING_POINTS + 2 * dim + 2,
                scale_clamp: 2.0,
                boundary_eps: 1e-4,
            },
            3,
        )
    }

    #[test]
    fn panels_have_requested_counts() {
        let env = crate::env::generate_environment(3, RobotKind::PlanarArm4, 0.15).unwrap();
        let model = small_model(RobotKind::PlanarArm4);
        let q_init = Config::new(vec![0.1, 0.1, 0.5, 0.5]);
        let q_target = Config::new(vec![0.9, 0.9, 0.5, 0.5]);
        let gallery = conditioning_gallery(&model, &env, &q_init, &q_target, 100, 7);
        assert_eq!(gallery.panels.len(), 5);
        for p in &gallery.panels {
            assert_eq!(p.samples.len(), 100);
        }
        let labels: Vec<&str> = gallery.panels.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(
            labels,
            ["full", "init-only", "target-only", "omega-only", "uniform"]
        );
    }

    /// Diagnostic variant of the uniform panel: per-axis KS against U(0,1)
    /// at n = 10^4.
    #[test]
    fn uniform_panel_is_uniform() {
        let env = crate::env::generate_environment(5, RobotKind::PointRobot2, 0.15).unwrap();
        let model = small_model(RobotKind::PointRobot2);
        let q_init = Config::new(vec![0.1, 0.1]);
        let q_target = Config::new(vec![0.9, 0.9]);
        let gallery = conditioning_gallery(&model, &env, &q_init, &q_target, 10_000, 11);
        let uniform = &gallery.panels[4];
        for axis in 0..2 {
            let coords: Vec<f64> = uniform.samples.iter().map(|q| q[axis]).collect();
            let d = ks_statistic_uniform(&coords);
            assert!(ks_p_value(d, coords.len()) > 0.01, "axis {axis} rejected");
        }
    }

    #[test]
    fn emission_writes_svg_and_csv() {
        let env = crate::env::generate_environment(7, RobotKind::PlanarArm4, 0.2).unwrap();
        let model = small_model(RobotKind::PlanarArm4);
        let q_init = Config::new(vec![0.2, 0.2, 0.5, 0.5]);
        let q_target = Config::new(vec![0.8, 0.8, 0.25, 0.5]);
        let dir = std::env::temp_dir().join(format!("flowplan-gallery-{}", std::process::id()));
        let (gallery, files) =
            emit_conditioning_gallery(&model, &env, &q_init, &q_target, 20, 13, &dir).unwrap();
        assert_eq!(gallery.panels.len(), 5);
        for f in &files {
            assert!(f.exists());
        }
        let svg = std::fs::read_to_string(&files[0]).unwrap();
        assert!(svg.contains("polyline"), "arm poses are drawn as chains");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn variance_helper() {
        let samples = vec![
            Config::new(vec![0.0, 0.5]),
            Config::new(vec![1.0, 0.5]),
        ];
        let var = per_coordinate_variance(&samples);
        assert!((var[0] - 0.25).abs() < 1e-12);
        assert_eq!(var[1], 0.0);
    }
}
