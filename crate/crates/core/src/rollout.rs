//! Attempt / critique / revise sessions and their bookkeeping.
//!
//! A session starts with a critique-free attempt. After a failed attempt (and
//! while rounds remain) the shared policy switches to the critic role, reads
//! the failed trajectory, and writes a critique; the solver then retries with
//! the critique in its prompt. Every solver token carries two behavior
//! log-probabilities under the rollout snapshot: one under the context it was
//! actually sampled from and one under the same context with the critique
//! removed.

use std::io::Write;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{is_success, Env, EnvStep, Query};
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, PromptContext, TokenId};

/// Longest critique the critic may write, counting the terminating `<eos>`.
pub const DEFAULT_CRITIQUE_BUDGET: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Maximum number of solver attempts, `K`.
    pub max_rounds: usize,
    pub temperature: f64,
    pub critique_budget: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_rounds: 2,
            temperature: 1.0,
            critique_budget: DEFAULT_CRITIQUE_BUDGET,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.critique_budget == 0 {
            return Err(Error::Config("critique_budget must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Who writes the critique between rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// The shared policy in the critic role.
    Learned,
    /// The environment's ground-truth hint.
    OracleScripted,
    /// Uniformly random hint tokens, as many as the ground-truth hint has.
    NoiseScripted,
    /// An empty critique.
    Null,
}

/// One solver attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSample {
    pub query_id: u64,
    /// 1-based round index within the session.
    pub round: usize,
    /// Critique in the prompt, without its `<eos>`. `None` for first attempts.
    pub critique: Option<Vec<TokenId>>,
    /// Environment observations: the initial one and one after every action.
    pub observations: Vec<Vec<TokenId>>,
    /// One action token per turn; these are the only trained tokens.
    pub actions: Vec<TokenId>,
    /// `log π_rollout(a_t | prompt actually used, history)`.
    pub logp_sampling: Vec<f64>,
    /// `log π_rollout(a_t | query, history)` with the critique removed.
    pub logp_free: Vec<f64>,
    pub temperature: f64,
    pub reward: f64,
    pub success: bool,
}

impl SolverSample {
    pub fn is_critique_guided(&self) -> bool {
        self.critique.as_ref().is_some_and(|c| !c.is_empty())
    }

    /// Interleaved `o_0 a_0 o_1 a_1 … o_T` transcript shown to the critic.
    pub fn transcript(&self) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (t, obs) in self.observations.iter().enumerate() {
            out.extend_from_slice(obs);
            if let Some(&a) = self.actions.get(t) {
                out.push(a);
            }
        }
        out
    }

    pub fn check_shape(&self) -> Result<()> {
        let n = self.actions.len();
        if self.observations.len() != n + 1
            || self.logp_sampling.len() != n
            || self.logp_free.len() != n
        {
            return Err(Error::Integrity(format!(
                "solver sample for query {} round {} has inconsistent lengths",
                self.query_id, self.round
            )));
        }
        Ok(())
    }
}

/// One critique of a failed attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticSample {
    pub query_id: u64,
    /// Round of the attempt being critiqued.
    pub round: usize,
    pub failed_trajectory: Vec<TokenId>,
    /// Emitted tokens, including the terminating `<eos>` when one was emitted.
    pub tokens: Vec<TokenId>,
    /// Per-token behavior log-probabilities; empty for scripted critics.
    pub logprobs: Vec<f64>,
    pub reward: f64,
}

impl CriticSample {
    /// The critique as the solver sees it.
    pub fn critique(&self, eos: TokenId) -> Vec<TokenId> {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest.to_vec(),
            _ => self.tokens.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub solver: SolverSample,
    /// Critique written after this attempt failed, if another round followed.
    pub critic: Option<CriticSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub query_id: u64,
    pub query_tokens: Vec<TokenId>,
    pub rounds: Vec<Round>,
}

impl Session {
    pub fn k(&self) -> usize {
        self.rounds.len()
    }

    pub fn solved(&self) -> bool {
        self.rounds.last().is_some_and(|r| r.solver.success)
    }

    /// Whether some attempt at or before `round` (1-based) succeeded.
    pub fn solved_by(&self, round: usize) -> bool {
        self.rounds.iter().take(round).any(|r| r.solver.success)
    }

    pub fn solver_samples(&self) -> impl Iterator<Item = &SolverSample> {
        self.rounds.iter().map(|r| &r.solver)
    }

    pub fn critic_samples(&self) -> impl Iterator<Item = &CriticSample> {
        self.rounds.iter().filter_map(|r| r.critic.as_ref())
    }
}

/// `r(c) = 1` when the revision succeeds, else the reward improvement.
pub fn critic_reward(r_prev: f64, r_next: f64, success_next: bool) -> f64 {
    if success_next {
        1.0
    } else {
        r_next - r_prev
    }
}

fn solver_prompt(env: &Env, query: Vec<TokenId>, critique: Option<Vec<TokenId>>) -> PromptContext {
    PromptContext::solver(query, critique).with_support(Arc::clone(env.action_tokens()))
}

/// Runs one solver episode under `critique`, recording both log-probability lists.
pub fn run_attempt<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &Env,
    query: &Query,
    critique: Option<Vec<TokenId>>,
    round: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<SolverSample> {
    let query_tokens = env.encode_description(query)?;
    let (mut state, first) = env.reset(query)?;
    let mut ctx = solver_prompt(env, query_tokens.clone(), critique.clone());
    ctx.validate(params.vocab())?;
    let mut observations = vec![first.observation.clone()];
    ctx.push_observation(first.observation);
    let mut actions = Vec::new();
    let mut logp_sampling = Vec::new();
    let mut last = EnvStep {
        observation: Vec::new(),
        done: false,
        reward: 0.0,
    };
    while !last.done {
        let feats = params.features_unchecked(&ctx);
        let dist = params.distribution(&feats, ctx.support.as_deref(), temperature)?;
        let (a, lp) = PolicyParams::draw(&dist, rng);
        actions.push(a);
        logp_sampling.push(lp);
        last = env.step(&mut state, &[a])?;
        ctx.push_action_token(a);
        ctx.push_observation(last.observation.clone());
        observations.push(last.observation.clone());
    }
    let mut sample = SolverSample {
        query_id: query.id,
        round,
        critique,
        observations,
        actions,
        logp_free: Vec::new(),
        logp_sampling,
        temperature,
        reward: last.reward,
        success: is_success(last.reward),
    };
    sample.logp_free = rescore_critique_free(params, env, &query_tokens, &sample)?;
    Ok(sample)
}

/// Teacher-forced log-probabilities of the sample's actions under the
/// critique-free prompt, scored with `params` at the sample's temperature.
pub fn rescore_critique_free(
    params: &PolicyParams,
    env: &Env,
    query_tokens: &[TokenId],
    sample: &SolverSample,
) -> Result<Vec<f64>> {
    if sample.observations.len() != sample.actions.len() + 1
        || sample.logp_sampling.len() != sample.actions.len()
    {
        return Err(Error::Integrity(format!(
            "cannot rescore query {} round {}: token lists disagree",
            sample.query_id, sample.round
        )));
    }
    if !sample.is_critique_guided() {
        return Ok(sample.logp_sampling.clone());
    }
    let mut ctx = solver_prompt(env, query_tokens.to_vec(), None);
    ctx.validate(params.vocab())?;
    let mut out = Vec::with_capacity(sample.actions.len());
    for (t, &a) in sample.actions.iter().enumerate() {
        ctx.push_observation(sample.observations[t].clone());
        let feats = params.features_unchecked(&ctx);
        let dist = params.distribution(&feats, ctx.support.as_deref(), sample.temperature)?;
        let lp = dist.log_prob(a);
        if !lp.is_finite() {
            return Err(Error::Integrity(format!(
                "action {} of query {} is outside the critique-free support",
                params.vocab().name(a),
                sample.query_id
            )));
        }
        out.push(lp);
        ctx.push_action_token(a);
    }
    Ok(out)
}

/// Critic-role context for critiquing `failed`.
pub fn critic_prompt(env: &Env, query_tokens: Vec<TokenId>, failed: Vec<TokenId>) -> PromptContext {
    let mut ctx = PromptContext::critic(query_tokens, failed)
        .with_support(Arc::clone(env.critique_support()));
    ctx.push_observation(Vec::new());
    ctx
}

fn sample_critique<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &Env,
    query_tokens: &[TokenId],
    failed: &[TokenId],
    cfg: &SessionConfig,
    rng: &mut R,
) -> Result<(Vec<TokenId>, Vec<f64>)> {
    let eos = params.vocab().eos();
    let mut ctx = critic_prompt(env, query_tokens.to_vec(), failed.to_vec());
    ctx.validate(params.vocab())?;
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    while tokens.len() < cfg.critique_budget {
        let feats = params.features_unchecked(&ctx);
        let dist = params.distribution(&feats, ctx.support.as_deref(), cfg.temperature)?;
        let (t, lp) = PolicyParams::draw(&dist, rng);
        tokens.push(t);
        logprobs.push(lp);
        if t == eos {
            break;
        }
        ctx.push_action_token(t);
    }
    Ok((tokens, logprobs))
}

fn scripted_critique<R: Rng + ?Sized>(
    env: &Env,
    query: &Query,
    mode: CriticMode,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    Ok(match mode {
        CriticMode::OracleScripted => env.oracle_hint(query)?,
        CriticMode::NoiseScripted => {
            let n = env.oracle_hint(query)?.len();
            let pool = env.action_tokens();
            (0..n).map(|_| *pool.choose(rng).expect("non-empty action set")).collect()
        }
        CriticMode::Null => Vec::new(),
        CriticMode::Learned => unreachable!("learned critiques are sampled"),
    })
}

/// Runs one self-improvement session of at most `cfg.max_rounds` attempts.
pub fn run_session<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &Env,
    query: &Query,
    cfg: &SessionConfig,
    mode: CriticMode,
    rng: &mut R,
) -> Result<Session> {
    cfg.validate()?;
    let query_tokens = env.encode_description(query)?;
    let eos = params.vocab().eos();
    let mut rounds: Vec<Round> = Vec::new();
    let mut critique: Option<Vec<TokenId>> = None;
    for i in 1..=cfg.max_rounds {
        let sample = run_attempt(params, env, query, critique.take(), i, cfg.temperature, rng)?;
        if let Some(prev) = rounds.last_mut() {
            let c = prev.critic.as_mut().expect("critique precedes every revision");
            c.reward = critic_reward(prev.solver.reward, sample.reward, sample.success);
        }
        let stop = sample.success || i == cfg.max_rounds;
        let critic = if stop {
            None
        } else {
            let failed = sample.transcript();
            let (tokens, logprobs) = match mode {
                CriticMode::Learned => {
                    sample_critique(params, env, &query_tokens, &failed, cfg, rng)?
                }
                scripted => (scripted_critique(env, query, scripted, rng)?, Vec::new()),
            };
            let c = CriticSample {
                query_id: query.id,
                round: i,
                failed_trajectory: failed,
                tokens,
                logprobs,
                reward: 0.0,
            };
            critique = Some(c.critique(eos));
            Some(c)
        };
        rounds.push(Round { solver: sample, critic });
        if stop {
            break;
        }
    }
    Ok(Session {
        query_id: query.id,
        query_tokens,
        rounds,
    })
}

/// All samples of one query's sessions, split by role.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGroups {
    pub query_id: u64,
    pub query_tokens: Vec<TokenId>,
    pub solver: Vec<SolverSample>,
    pub critic: Vec<CriticSample>,
}

pub fn collect_groups(sessions: &[Session]) -> Result<QueryGroups> {
    let first = sessions
        .first()
        .ok_or_else(|| Error::Integrity("no sessions to group".into()))?;
    if let Some(s) = sessions.iter().find(|s| s.query_id != first.query_id) {
        return Err(Error::Integrity(format!(
            "sessions mix queries {} and {}",
            first.query_id, s.query_id
        )));
    }
    Ok(QueryGroups {
        query_id: first.query_id,
        query_tokens: first.query_tokens.clone(),
        solver: sessions.iter().flat_map(|s| s.solver_samples().cloned()).collect(),
        critic: sessions.iter().flat_map(|s| s.critic_samples().cloned()).collect(),
    })
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    step: usize,
    session: &'a Session,
}

/// Appends one JSON line per session.
pub fn dump_sessions<W: Write>(out: &mut W, step: usize, sessions: &[Session]) -> Result<()> {
    for session in sessions {
        serde_json::to_writer(&mut *out, &DumpRecord { step, session })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
