use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::eval::{evaluate_refinement, RefinementCurve};
use crate::advantage::{pooled_advantages, role_advantages};
use crate::envs::{split_train_eval, Env, Query};
use crate::error::{Error, Result};
use crate::objective::{
    critic_terms, grad_grpo_surrogate, grad_surrogate, optimizer_step, solver_terms, AdamState,
    TokenTerm,
};
use crate::policy::PolicyParams;
use crate::rollout::{collect_groups, dump_sessions, run_session, CriticMode, QueryGroups, Session};
use crate::seed::{derive_rng, derive_seed};

const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_ROLLOUT: u64 = 2;
pub(crate) const STREAM_EVAL: u64 = 3;

/// Everything logged for one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based step index.
    pub step: usize,
    /// Mean reward over every solver attempt in the batch.
    pub solver_mean_reward: f64,
    /// Mean critique reward; absent when no attempt failed.
    pub critic_mean_reward: Option<f64>,
    /// Mean capped calibration weight over critique-guided solver tokens;
    /// absent when there were none.
    pub mean_weight: Option<f64>,
    /// Frobenius norm of the first-epoch gradient.
    pub grad_norm: f64,
    pub solver_samples: usize,
    pub critic_samples: usize,
    pub solver_tokens: usize,
    pub critic_tokens: usize,
    /// Fraction of sessions whose first attempt succeeded.
    pub round1_success: f64,
    /// Success-by-round on the eval set, on evaluation steps only.
    pub eval: Option<Vec<f64>>,
}

/// Stateful training loop.
pub struct Trainer {
    cfg: TrainConfig,
    env: Env,
    train_set: Vec<Query>,
    eval_set: Vec<Query>,
    params: PolicyParams,
    adam: AdamState,
    step: usize,
    dump: Option<Box<dyn Write + Send>>,
}

/// Initial weights for `cfg`: small Gaussian noise plus the hint prior.
pub fn init_params(cfg: &TrainConfig, env: &Env) -> Result<PolicyParams> {
    let mut rng = derive_rng(cfg.seed, &[STREAM_INIT]);
    let mut p = PolicyParams::random(
        Arc::clone(env.vocab()),
        cfg.init.context_order,
        cfg.init.scale,
        &mut rng,
    )?;
    p.add_hint_prior(env.action_tokens(), cfg.init.hint_prior);
    Ok(p)
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Env::new(cfg.env)?;
        let params = init_params(&cfg, &env)?;
        Self::with_params(cfg, params)
    }

    /// Starts from the given weights instead of a fresh initialization.
    pub fn with_params(cfg: TrainConfig, params: PolicyParams) -> Result<Self> {
        cfg.validate()?;
        let env = Env::new(cfg.env)?;
        if params.vocab().as_ref() != env.vocab().as_ref() {
            return Err(Error::Config("parameters were built for a different vocabulary".into()));
        }
        let (train_set, eval_set) =
            split_train_eval(&env, cfg.data.train_size, cfg.data.eval_size, cfg.data.seed);
        let adam = AdamState::for_params(&params);
        Ok(Self {
            cfg,
            env,
            train_set,
            eval_set,
            params,
            adam,
            step: 0,
            dump: None,
        })
    }

    /// Writes every rollout session as a JSON line to `out`.
    pub fn set_rollout_dump(&mut self, out: Box<dyn Write + Send>) {
        self.dump = Some(out);
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn train_set(&self) -> &[Query] {
        &self.train_set
    }

    pub fn eval_set(&self) -> &[Query] {
        &self.eval_set
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Queries used at 1-based `step`.
    fn batch(&self, step: usize) -> Vec<&Query> {
        let mut rng = derive_rng(self.cfg.seed, &[STREAM_BATCH, step as u64]);
        let n = self.cfg.batch_queries.min(self.train_set.len());
        sample(&mut rng, self.train_set.len(), n)
            .into_iter()
            .map(|i| &self.train_set[i])
            .collect()
    }

    /// `G` sessions per batch query against the current weights, grouped by query.
    pub fn rollout(&self, step: usize) -> Result<Vec<Vec<Session>>> {
        let queries = self.batch(step);
        let g = self.cfg.group_size;
        let session_cfg = self.cfg.session();
        let jobs: Vec<(usize, usize)> = (0..queries.len())
            .flat_map(|qi| (0..g).map(move |j| (qi, j)))
            .collect();
        let (params, env, seed) = (&self.params, &self.env, self.cfg.seed);
        let sessions: Vec<Session> = jobs
            .par_iter()
            .map(|&(qi, j)| {
                let mut rng = derive_rng(seed, &[STREAM_ROLLOUT, step as u64, qi as u64, j as u64]);
                run_session(params, env, queries[qi], &session_cfg, CriticMode::Learned, &mut rng)
            })
            .collect::<Result<_>>()?;
        Ok(sessions.chunks(g).map(<[Session]>::to_vec).collect())
    }

    /// Runs one step: rollout, advantages, token terms, optimization.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step + 1;
        let sessions = self.rollout(step)?;
        if let Some(out) = self.dump.as_mut() {
            for per_query in &sessions {
                dump_sessions(out, step, per_query)?;
            }
        }
        let groups: Vec<QueryGroups> = sessions
            .iter()
            .map(|s| collect_groups(s))
            .collect::<Result<_>>()?;
        let terms = batch_terms(&self.params, &self.env, &self.cfg, &groups)?;
        let mut grad_norm = 0.0;
        for epoch in 0..self.cfg.optimizer.epochs {
            let grad = match self.cfg.variant {
                Variant::Grpo => grad_grpo_surrogate(&self.params, &terms, &self.cfg.optimizer)?,
                _ => grad_surrogate(&self.params, &terms, &self.cfg.optimizer)?,
            };
            if epoch == 0 {
                grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            }
            optimizer_step(&mut self.params, &grad, &self.cfg.optimizer, &mut self.adam)?;
        }
        self.step = step;
        let mut metrics = summarize(step, &groups, &terms, grad_norm, self.cfg.optimizer.w_max);
        if self.cfg.eval_every > 0 && step.is_multiple_of(self.cfg.eval_every) {
            metrics.eval = Some(self.evaluate(step as u64)?.by_round);
        }
        if !metrics.grad_norm.is_finite() {
            return Err(Error::Numerical(format!("gradient norm is not finite at step {step}")));
        }
        Ok(metrics)
    }

    /// Success-by-round of the current weights on the eval set.
    pub fn evaluate(&self, tag: u64) -> Result<RefinementCurve> {
        evaluate_refinement(
            &self.params,
            &self.env,
            &self.eval_set,
            &self.cfg.eval_session(),
            derive_seed(self.cfg.seed, &[STREAM_EVAL, tag]),
        )
    }
}

/// Token terms for a whole batch under the configured variant.
pub fn batch_terms(
    params: &PolicyParams,
    env: &Env,
    cfg: &TrainConfig,
    groups: &[QueryGroups],
) -> Result<Vec<TokenTerm>> {
    let delta = cfg.advantage.delta;
    let calibrate = cfg.variant != Variant::NoReweight;
    let mut terms = Vec::new();
    for g in groups {
        let sr: Vec<f64> = g.solver.iter().map(|s| s.reward).collect();
        let cr: Vec<f64> = g.critic.iter().map(|c| c.reward).collect();
        let (sa, ca) = match cfg.variant {
            Variant::NoRoleAdv => pooled_advantages(&sr, &cr, delta),
            _ => (role_advantages(&sr, delta), role_advantages(&cr, delta)),
        };
        for (s, &a) in g.solver.iter().zip(&sa) {
            terms.extend(solver_terms(params, env, &g.query_tokens, s, a, calibrate)?);
        }
        for (c, &a) in g.critic.iter().zip(&ca) {
            terms.extend(critic_terms(params, env, &g.query_tokens, c, a, cfg.temperature)?);
        }
    }
    Ok(terms)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn summarize(
    step: usize,
    groups: &[QueryGroups],
    terms: &[TokenTerm],
    grad_norm: f64,
    w_max: f64,
) -> StepMetrics {
    let solver = || groups.iter().flat_map(|g| g.solver.iter());
    let critic = || groups.iter().flat_map(|g| g.critic.iter());
    // Computed from the samples so the figure exists for every variant.
    let weights = solver()
        .filter(|s| s.is_critique_guided())
        .flat_map(|s| s.logp_free.iter().zip(&s.logp_sampling))
        .map(|(f, c)| crate::objective::reweight(*f, *c).min(w_max));
    let first: Vec<bool> = solver().filter(|s| s.round == 1).map(|s| s.success).collect();
    StepMetrics {
        step,
        solver_mean_reward: mean(solver().map(|s| s.reward)).unwrap_or(0.0),
        critic_mean_reward: mean(critic().map(|c| c.reward)),
        mean_weight: mean(weights),
        grad_norm,
        solver_samples: solver().count(),
        critic_samples: critic().count(),
        solver_tokens: terms.iter().filter(|t| t.role == crate::policy::Role::Solver).count(),
        critic_tokens: terms.iter().filter(|t| t.role == crate::policy::Role::Critic).count(),
        round1_success: first.iter().filter(|&&s| s).count() as f64 / first.len().max(1) as f64,
        eval: None,
    }
}

/// Final weights and the per-step metric stream of a completed run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
}

/// Trains for `cfg.steps` steps, calling `on_step` after each.
pub fn train_with<F>(cfg: &TrainConfig, mut on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepMetrics, &Trainer),
{
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut metrics = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let m = trainer.step()?;
        on_step(&m, &trainer);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        params: trainer.params,
        metrics,
    })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_, _| {})
}
