//! Static SVG curves from a metrics stream.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use icrl::harness::StepMetrics;
use plotters::prelude::*;

const PALETTE: [RGBColor; 5] = [BLUE, RED, GREEN, MAGENTA, CYAN];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series<F>(metrics: &[StepMetrics], label: &str, pick: F) -> Series
where
    F: Fn(&StepMetrics) -> Option<f64>,
{
    Series {
        label: label.to_string(),
        points: metrics
            .iter()
            .filter_map(|m| pick(m).map(|v| (m.step as f64, v)))
            .collect(),
    }
}

fn draw(path: &Path, title: &str, lines: &[Series]) -> Result<()> {
    let pts = lines.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return Err(anyhow!("no data for `{title}`"));
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1.max(x0 + 1.0), (y0 - pad)..(y1 + pad))
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("step")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, s) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if lines.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Writes one SVG per metric with data; returns the files written.
pub fn plot_metrics(metrics: &[StepMetrics], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let rounds = metrics
        .iter()
        .filter_map(|m| m.eval.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let eval: Vec<Series> = (0..rounds)
        .map(|k| {
            series(metrics, &format!("round {}", k + 1), |m| {
                m.eval.as_ref().and_then(|e| e.get(k).copied())
            })
        })
        .collect();
    let plots: Vec<(&str, &str, Vec<Series>)> = vec![
        ("solver_reward", "solver mean reward", vec![series(metrics, "solver", |m| Some(m.solver_mean_reward))]),
        ("critic_reward", "critic mean reward", vec![series(metrics, "critic", |m| m.critic_mean_reward)]),
        ("mean_weight", "mean calibration weight", vec![series(metrics, "weight", |m| m.mean_weight)]),
        ("grad_norm", "gradient norm", vec![series(metrics, "norm", |m| Some(m.grad_norm))]),
        ("eval_success", "eval success by round", eval),
    ];
    let mut written = Vec::new();
    for (name, title, lines) in plots {
        let lines: Vec<Series> = lines.into_iter().filter(|s| !s.points.is_empty()).collect();
        if lines.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{name}.svg"));
        draw(&path, title, &lines)?;
        written.push(path);
    }
    Ok(written)
}
