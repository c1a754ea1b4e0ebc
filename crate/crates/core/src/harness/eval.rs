use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::train::{train, StepMetrics, STREAM_EVAL};
use crate::envs::{Env, Query};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rollout::{run_attempt, run_session, CriticMode, Session, SessionConfig};
use crate::seed::{derive_rng, derive_seed};

/// Cumulative success rate by round: entry `k − 1` is the fraction of
/// queries solved within `k` attempts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementCurve {
    pub by_round: Vec<f64>,
    pub queries: usize,
}

fn sessions(
    params: &PolicyParams,
    env: &Env,
    eval_set: &[Query],
    cfg: &SessionConfig,
    mode: CriticMode,
    seed: u64,
    repeats: usize,
) -> Result<Vec<Session>> {
    let jobs: Vec<(usize, usize)> = (0..eval_set.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, r)| {
            let q = &eval_set[i];
            let mut rng = derive_rng(seed, &[q.id, r as u64]);
            run_session(params, env, q, cfg, mode, &mut rng)
        })
        .collect()
}

/// Runs one session per eval query with the learned critic and reports the
/// success-by-round curve.
pub fn evaluate_refinement(
    params: &PolicyParams,
    env: &Env,
    eval_set: &[Query],
    cfg: &SessionConfig,
    seed: u64,
) -> Result<RefinementCurve> {
    cfg.validate()?;
    if eval_set.is_empty() {
        return Err(Error::InvalidInput("empty eval set".into()));
    }
    let runs = sessions(params, env, eval_set, cfg, CriticMode::Learned, seed, 1)?;
    let n = runs.len() as f64;
    let by_round = (1..=cfg.max_rounds)
        .map(|k| runs.iter().filter(|s| s.solved_by(k)).count() as f64 / n)
        .collect();
    Ok(RefinementCurve {
        by_round,
        queries: eval_set.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub critic: CriticMode,
    /// Sessions run (queries × repeats).
    pub trials: usize,
    pub round1_success: f64,
    /// Fraction of sessions solved within two attempts.
    pub round2_success: f64,
    /// Mean critique length in tokens (including `<eos>`); absent when no
    /// critique was written.
    pub mean_critique_tokens: Option<f64>,
}

/// Two-round sessions with the solver fixed and the critic replaced by `mode`.
pub fn critic_swap(
    params: &PolicyParams,
    env: &Env,
    eval_set: &[Query],
    mode: CriticMode,
    cfg: &SessionConfig,
    seed: u64,
    repeats: usize,
) -> Result<SwapOutcome> {
    let cfg = SessionConfig {
        max_rounds: 2,
        ..*cfg
    };
    cfg.validate()?;
    if eval_set.is_empty() || repeats == 0 {
        return Err(Error::InvalidInput("critic swap needs queries and repeats".into()));
    }
    let runs = sessions(params, env, eval_set, &cfg, mode, seed, repeats)?;
    let n = runs.len() as f64;
    let lengths: Vec<usize> = runs
        .iter()
        .flat_map(|s| s.critic_samples().map(|c| c.tokens.len()))
        .collect();
    Ok(SwapOutcome {
        critic: mode,
        trials: runs.len(),
        round1_success: runs.iter().filter(|s| s.solved_by(1)).count() as f64 / n,
        round2_success: runs.iter().filter(|s| s.solved_by(2)).count() as f64 / n,
        mean_critique_tokens: (!lengths.is_empty())
            .then(|| lengths.iter().sum::<usize>() as f64 / lengths.len() as f64),
    })
}

/// Fraction of trials where either of two independent critique-free
/// attempts succeeds.
pub fn fresh_attempt_baseline(
    params: &PolicyParams,
    env: &Env,
    eval_set: &[Query],
    temperature: f64,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    let jobs: Vec<(usize, usize)> = (0..eval_set.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    let solved: Vec<bool> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let q = &eval_set[i];
            let mut rng = derive_rng(seed, &[q.id, r as u64]);
            let a = run_attempt(params, env, q, None, 1, temperature, &mut rng)?;
            let b = run_attempt(params, env, q, None, 1, temperature, &mut rng)?;
            Ok(a.success || b.success)
        })
        .collect::<Result<_>>()?;
    if solved.is_empty() {
        return Err(Error::InvalidInput("fresh-attempt baseline needs queries and repeats".into()));
    }
    Ok(solved.iter().filter(|&&s| s).count() as f64 / solved.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    /// Round-1 (critique-free) success on the eval set after training.
    pub final_round1_success: f64,
    pub final_curve: Vec<f64>,
    pub metrics: Vec<StepMetrics>,
}

/// Trains every variant on every seed from the same base config and reports
/// the final critique-free success of each run.
pub fn ablate(base: &TrainConfig, variants: &[Variant], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        for &variant in variants {
            let cfg = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            rows.push(run_and_score(&cfg)?);
        }
    }
    Ok(rows)
}

/// Trains `cfg` and evaluates the result on its eval set.
pub fn run_and_score(cfg: &TrainConfig) -> Result<AblationRow> {
    let out = train(cfg)?;
    let env = Env::new(cfg.env)?;
    let (_, eval_set) = crate::envs::split_train_eval(
        &env,
        cfg.data.train_size,
        cfg.data.eval_size,
        cfg.data.seed,
    );
    // The final evaluation stream depends only on the seed, not the variant.
    let curve = evaluate_refinement(
        &out.params,
        &env,
        &eval_set,
        &cfg.eval_session(),
        derive_seed(cfg.seed, &[STREAM_EVAL, u64::MAX]),
    )?;
    Ok(AblationRow {
        variant: cfg.variant,
        seed: cfg.seed,
        final_round1_success: curve.by_round[0],
        final_curve: curve.by_round,
        metrics: out.metrics,
    })
}
