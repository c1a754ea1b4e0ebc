//! Group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageConfig {
    /// Added to the group standard deviation before dividing.
    pub delta: f64,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self { delta: 1e-4 }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(r_i − mean) / (std + delta)` with the population standard deviation.
/// An empty group yields an empty result.
pub fn role_advantages(rewards: &[f64], delta: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_std(rewards.iter());
    rewards.iter().map(|r| (r - mean) / (std + delta)).collect()
}

/// Normalizes both groups with one shared mean and standard deviation.
pub fn pooled_advantages(solver: &[f64], critic: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    if solver.is_empty() && critic.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let (mean, std) = mean_std(solver.iter().chain(critic));
    let norm = |xs: &[f64]| xs.iter().map(|r| (r - mean) / (std + delta)).collect();
    (norm(solver), norm(critic))
}
