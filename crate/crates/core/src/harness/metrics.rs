//! Metric files: JSON lines for the full record, CSV for plotting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::eval::AblationRow;
use super::train::StepMetrics;
use crate::error::{Error, Result};

/// Append-only JSON-lines writer, flushed after every record.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        serde_json::to_writer(&mut self.out, m)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_metrics_jsonl(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut log = MetricsLog::create(path)?;
    metrics.iter().try_for_each(|m| log.append(m))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<StepMetrics>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Flat per-step table. Absent values are empty cells; evaluation columns
/// `eval_round_k` appear for every round seen anywhere in the stream.
pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let rounds = metrics
        .iter()
        .filter_map(|m| m.eval.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header: Vec<String> = [
        "step",
        "solver_mean_reward",
        "critic_mean_reward",
        "mean_weight",
        "grad_norm",
        "solver_samples",
        "critic_samples",
        "solver_tokens",
        "critic_tokens",
        "round1_success",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=rounds).map(|k| format!("eval_round_{k}")));
    w.write_record(&header).map_err(&err)?;
    for m in metrics {
        let mut row = vec![
            m.step.to_string(),
            m.solver_mean_reward.to_string(),
            opt(m.critic_mean_reward),
            opt(m.mean_weight),
            m.grad_norm.to_string(),
            m.solver_samples.to_string(),
            m.critic_samples.to_string(),
            m.solver_tokens.to_string(),
            m.critic_tokens.to_string(),
            m.round1_success.to_string(),
        ];
        row.extend((0..rounds).map(|k| opt(m.eval.as_ref().and_then(|e| e.get(k).copied()))));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush()?;
    Ok(())
}

/// `round,success` table for a success-by-round curve.
pub fn write_curve_csv(path: &Path, by_round: &[f64]) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["round", "success"]).map_err(&err)?;
    for (k, s) in by_round.iter().enumerate() {
        w.write_record([(k + 1).to_string(), s.to_string()]).map_err(&err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (variant, seed).
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["variant", "seed", "final_round1_success"]).map_err(&err)?;
    for r in rows {
        w.write_record([r.variant.name().to_string(), r.seed.to_string(), r.final_round1_success.to_string()])
            .map_err(&err)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing moving average over the steps where `pick` is defined, indexed
/// by step: the value at step `s` averages the last `window` defined values
/// at or before `s`.
pub fn moving_average_at<F>(metrics: &[StepMetrics], step: usize, window: usize, pick: F) -> Option<f64>
where
    F: Fn(&StepMetrics) -> Option<f64>,
{
    let vals: Vec<f64> = metrics
        .iter()
        .filter(|m| m.step <= step)
        .filter_map(pick)
        .collect();
    if vals.is_empty() || window == 0 {
        return None;
    }
    let tail = &vals[vals.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(step: usize, w: Option<f64>, eval: Option<Vec<f64>>) -> StepMetrics {
        StepMetrics {
            step,
            solver_mean_reward: 0.5,
            critic_mean_reward: None,
            mean_weight: w,
            grad_norm: 1.0,
            solver_samples: 8,
            critic_samples: 0,
            solver_tokens: 20,
            critic_tokens: 0,
            round1_success: 0.5,
            eval,
        }
    }

    #[test]
    fn jsonl_round_trip_and_csv_shape() {
        let ms = vec![m(1, Some(0.5), None), m(2, None, Some(vec![0.25, 0.5, 0.5]))];
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("m.jsonl");
        write_metrics_jsonl(&j, &ms).unwrap();
        assert_eq!(read_metrics_jsonl(&j).unwrap(), ms);
        let c = dir.path().join("m.csv");
        write_metrics_csv(&c, &ms).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ends_with("eval_round_3"));
        assert!(lines[1].contains(",0.5,"));
        assert!(lines[2].ends_with("0.25,0.5,0.5"));
    }

    #[test]
    fn moving_average_skips_absent_steps() {
        let ms: Vec<StepMetrics> = (1..=6)
            .map(|s| m(s, (s % 2 == 0).then_some(s as f64), None))
            .collect();
        assert_eq!(moving_average_at(&ms, 6, 2, |x| x.mean_weight), Some(5.0));
        assert_eq!(moving_average_at(&ms, 1, 2, |x| x.mean_weight), None);
        assert_eq!(moving_average_at(&ms, 3, 5, |x| x.mean_weight), Some(2.0));
    }
}
