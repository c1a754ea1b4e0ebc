//! Exhaustive ground truth on tiny instances.
//!
//! [`enumerate`] walks every action sequence the solver can produce within the
//! horizon and records its exact probability, together with its probability
//! under the critique-free version of the same prompt. Everything else here is
//! exact summation over that ensemble.

use std::sync::Arc;

use ndarray::Array2;

use crate::envs::{Env, EnvState, Query};
use crate::error::{Error, Result};
use crate::policy::{accumulate_score, PolicyParams, PromptContext, TokenId};

/// Largest number of leaves `enumerate` will attempt.
pub const ENUMERATION_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedTrajectory {
    pub actions: Vec<TokenId>,
    pub observations: Vec<Vec<TokenId>>,
    /// Log-probability under the enumerated prompt.
    pub log_prob: f64,
    /// Log-probability of the same actions with the critique removed.
    pub log_prob_free: f64,
    /// Per-action log-probabilities under the enumerated prompt.
    pub step_log_probs: Vec<f64>,
    /// Per-action log-probabilities with the critique removed.
    pub step_log_probs_free: Vec<f64>,
    pub reward: f64,
}

impl EnumeratedTrajectory {
    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }
}

#[derive(Clone, Debug)]
pub struct EnumeratedEnsemble {
    pub prompt: PromptContext,
    pub trajectories: Vec<EnumeratedTrajectory>,
}

impl EnumeratedEnsemble {
    pub fn total_probability(&self) -> f64 {
        sorted_sum(self.trajectories.iter().map(|t| t.prob()))
    }
}

/// Sum in ascending order of magnitude, so results do not depend on the
/// enumeration order.
pub fn sorted_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    v.into_iter().sum()
}

/// Solver prompt for `query` under `critique`, restricted to the environment's actions.
pub fn solver_prompt(env: &Env, query: &Query, critique: Option<Vec<TokenId>>) -> Result<PromptContext> {
    Ok(PromptContext::solver(env.encode_description(query)?, critique)
        .with_support(Arc::clone(env.action_tokens())))
}

struct Walker<'a> {
    params: &'a PolicyParams,
    env: &'a Env,
    out: Vec<EnumeratedTrajectory>,
}

impl Walker<'_> {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        &mut self,
        state: &EnvState,
        ctx: &PromptContext,
        free: &PromptContext,
        actions: &mut Vec<TokenId>,
        observations: &mut Vec<Vec<TokenId>>,
        lps: &mut Vec<f64>,
        lps_free: &mut Vec<f64>,
    ) -> Result<()> {
        let support = ctx.support.as_deref();
        let dist = self
            .params
            .distribution(&self.params.features_unchecked(ctx), support, 1.0)?;
        let dist_free = self
            .params
            .distribution(&self.params.features_unchecked(free), support, 1.0)?;
        let choices: Vec<TokenId> = match support {
            Some(s) => s.to_vec(),
            None => (0..self.params.vocab_size() as u32).map(TokenId).collect(),
        };
        for a in choices {
            let mut s = state.clone();
            let step = self.env.step(&mut s, &[a])?;
            actions.push(a);
            observations.push(step.observation.clone());
            lps.push(dist.log_prob(a));
            lps_free.push(dist_free.log_prob(a));
            if step.done {
                self.out.push(EnumeratedTrajectory {
                    actions: actions.clone(),
                    observations: observations.clone(),
                    log_prob: lps.iter().sum(),
                    log_prob_free: lps_free.iter().sum(),
                    step_log_probs: lps.clone(),
                    step_log_probs_free: lps_free.clone(),
                    reward: step.reward,
                });
            } else {
                let mut c = ctx.clone();
                let mut f = free.clone();
                for x in [&mut c, &mut f] {
                    x.push_action_token(a);
                    x.push_observation(step.observation.clone());
                }
                self.walk(&s, &c, &f, actions, observations, lps, lps_free)?;
            }
            actions.pop();
            observations.pop();
            lps.pop();
            lps_free.pop();
        }
        Ok(())
    }
}

/// Every solver trajectory reachable from `prompt` on `query`, with exact
/// probabilities at temperature 1. Refuses when `branching^H` exceeds
/// [`ENUMERATION_LIMIT`].
pub fn enumerate(
    params: &PolicyParams,
    prompt: &PromptContext,
    env: &Env,
    query: &Query,
) -> Result<EnumeratedEnsemble> {
    prompt.validate(params.vocab())?;
    if !prompt.history.is_empty() {
        return Err(Error::InvalidInput("enumeration starts from an empty history".into()));
    }
    let branching = prompt
        .support
        .as_ref()
        .map_or(params.vocab_size(), |s| s.len());
    let horizon = env.horizon();
    let estimate = (branching as f64).powi(horizon as i32);
    if estimate > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            branching,
            horizon,
            estimate,
            limit: ENUMERATION_LIMIT,
        });
    }
    let (state, first) = env.reset(query)?;
    let mut ctx = prompt.clone();
    ctx.push_observation(first.observation.clone());
    let mut free = ctx.without_critique();
    free.support = ctx.support.clone();
    let mut walker = Walker {
        params,
        env,
        out: Vec::new(),
    };
    walker.walk(
        &state,
        &ctx,
        &free,
        &mut Vec::new(),
        &mut vec![first.observation],
        &mut Vec::new(),
        &mut Vec::new(),
    )?;
    Ok(EnumeratedEnsemble {
        prompt: prompt.clone(),
        trajectories: walker.out,
    })
}

/// `Σ p(τ) r(τ)`.
pub fn exact_objective(ensemble: &EnumeratedEnsemble) -> f64 {
    sorted_sum(ensemble.trajectories.iter().map(|t| t.prob() * t.reward))
}

/// `Σ p(τ) r(τ) ∇ log p(τ)` with respect to the policy weights.
pub fn exact_gradient(ensemble: &EnumeratedEnsemble, params: &PolicyParams) -> Result<Array2<f64>> {
    let mut grad = Array2::zeros(params.weights().dim());
    for traj in &ensemble.trajectories {
        let scale = traj.prob() * traj.reward;
        if scale == 0.0 {
            continue;
        }
        let mut ctx = ensemble.prompt.clone();
        for (t, &a) in traj.actions.iter().enumerate() {
            ctx.push_observation(traj.observations[t].clone());
            let feats = params.features_unchecked(&ctx);
            let dist = params.distribution(&feats, ctx.support.as_deref(), 1.0)?;
            accumulate_score(&mut grad, &feats, &dist, a, 1.0, scale);
            ctx.push_action_token(a);
        }
    }
    Ok(grad)
}

/// Both sides of the calibration identity
/// `Σ π(τ|q,c) W(τ) f(τ) = Σ π(τ|q) f(τ)` with `W(τ) = Π_t w_t`.
///
/// With `cap = Some(w_max)` each `w_t` is capped before the product, which
/// generally breaks the identity.
pub fn check_calibration<F>(
    params: &PolicyParams,
    env: &Env,
    query: &Query,
    critique: &[TokenId],
    f: F,
    cap: Option<f64>,
) -> Result<(f64, f64)>
where
    F: Fn(&EnumeratedTrajectory) -> f64,
{
    let guided = enumerate(params, &solver_prompt(env, query, Some(critique.to_vec()))?, env, query)?;
    let free = enumerate(params, &solver_prompt(env, query, None)?, env, query)?;
    let lhs = sorted_sum(guided.trajectories.iter().map(|t| {
        let w: f64 = match cap {
            None => (t.log_prob_free - t.log_prob).exp(),
            Some(c) => t
                .step_log_probs_free
                .iter()
                .zip(&t.step_log_probs)
                .map(|(lf, lc)| (lf - lc).exp().min(c))
                .product(),
        };
        t.prob() * w * f(t)
    }));
    let rhs = sorted_sum(free.trajectories.iter().map(|t| t.prob() * f(t)));
    Ok((lhs, rhs))
}
