//! Clipped, calibrated surrogate objective and its exact gradient.
//!
//! Every trained token contributes
//!
//! ```text
//! min(w_t, w_max) · min(ρ_t Â, clip(ρ_t, 1 − ε, 1 + ε) Â)
//! ```
//!
//! averaged over all trained tokens in the batch. For solver tokens `ρ_t` is
//! evaluated in the critique-free context; `w_t = π_rollout(y_t | q, y_<t) /
//! π_rollout(y_t | q, c, y_<t)` moves critique-guided tokens back to the
//! critique-free distribution and is 1 everywhere else. `w_t`, the behavior
//! log-probabilities, and `Â` are constants for differentiation.

mod optimizer;

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use optimizer::{load_adam_state, optimizer_step, save_adam_state, AdamState, ADAM_MAGIC};

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::{accumulate_score, Features, PolicyParams, PromptContext, Role, TokenId};
use crate::rollout::{critic_prompt, CriticSample, SolverSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Clip radius for the importance ratio.
    pub epsilon: f64,
    /// Upper cap on the calibration weight.
    pub w_max: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled weight decay, applied as `θ ← θ − lr · λ · θ`.
    pub weight_decay: f64,
    pub adam_eps: f64,
    /// Optimization passes over each rollout batch.
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            w_max: 2.0,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.1,
            adam_eps: 1e-8,
            epochs: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.w_max.is_nan() || self.w_max < 1.0 {
            return bad(format!("w_max must be at least 1, got {}", self.w_max));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// `exp(logp_free − logp_cond)`; exactly 1 when the two agree.
pub fn reweight(logp_free: f64, logp_cond: f64) -> f64 {
    if logp_free == logp_cond {
        1.0
    } else {
        (logp_free - logp_cond).exp()
    }
}

/// `exp(logp_current − logp_behavior)`.
pub fn importance_ratio(logp_current: f64, logp_behavior: f64) -> f64 {
    if logp_current == logp_behavior {
        1.0
    } else {
        (logp_current - logp_behavior).exp()
    }
}

/// Context in which the current policy is evaluated for one token.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringContext {
    pub features: Features,
    pub support: Option<Arc<[TokenId]>>,
    pub temperature: f64,
}

/// Behavior log-probabilities behind a calibration weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub logp_free: f64,
    pub logp_cond: f64,
}

impl Calibration {
    pub fn weight(&self) -> f64 {
        reweight(self.logp_free, self.logp_cond)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenTerm {
    pub role: Role,
    pub token: TokenId,
    /// Critique-free prompt for solver tokens, the critic prompt for critic tokens.
    pub context: ScoringContext,
    pub advantage: f64,
    /// Behavior log-probability in `context` under the rollout snapshot.
    pub logp_behavior: f64,
    /// Present only for critique-guided solver tokens.
    pub calibration: Option<Calibration>,
    /// Untrained tokens are carried for bookkeeping but contribute nothing.
    pub trained: bool,
}

impl TokenTerm {
    /// Uncapped calibration weight.
    pub fn weight(&self) -> f64 {
        self.calibration.map_or(1.0, |c| c.weight())
    }
}

/// Terms for one solver sample. With `calibrate` false the calibration
/// weights are dropped, which is the no-reweighting ablation.
pub fn solver_terms(
    params: &PolicyParams,
    env: &Env,
    query_tokens: &[TokenId],
    sample: &SolverSample,
    advantage: f64,
    calibrate: bool,
) -> Result<Vec<TokenTerm>> {
    sample.check_shape()?;
    let mut ctx = PromptContext::solver(query_tokens.to_vec(), None)
        .with_support(Arc::clone(env.action_tokens()));
    ctx.validate(params.vocab())?;
    let guided = sample.is_critique_guided();
    let mut out = Vec::with_capacity(sample.actions.len());
    for (t, &a) in sample.actions.iter().enumerate() {
        ctx.push_observation(sample.observations[t].clone());
        let calibration = (guided && calibrate).then(|| Calibration {
            logp_free: sample.logp_free[t],
            logp_cond: sample.logp_sampling[t],
        });
        out.push(TokenTerm {
            role: Role::Solver,
            token: a,
            context: ScoringContext {
                features: params.features_unchecked(&ctx),
                support: ctx.support.clone(),
                temperature: sample.temperature,
            },
            advantage,
            logp_behavior: sample.logp_free[t],
            calibration,
            trained: true,
        });
        ctx.push_action_token(a);
    }
    Ok(out)
}

/// Terms for one critique, one per emitted token including `<eos>`.
pub fn critic_terms(
    params: &PolicyParams,
    env: &Env,
    query_tokens: &[TokenId],
    sample: &CriticSample,
    advantage: f64,
    temperature: f64,
) -> Result<Vec<TokenTerm>> {
    if sample.logprobs.len() != sample.tokens.len() {
        return Err(Error::Integrity(format!(
            "critique for query {} has no behavior log-probabilities",
            sample.query_id
        )));
    }
    let mut ctx = critic_prompt(env, query_tokens.to_vec(), sample.failed_trajectory.clone());
    ctx.validate(params.vocab())?;
    let mut out = Vec::with_capacity(sample.tokens.len());
    for (&tok, &lp) in sample.tokens.iter().zip(&sample.logprobs) {
        out.push(TokenTerm {
            role: Role::Critic,
            token: tok,
            context: ScoringContext {
                features: params.features_unchecked(&ctx),
                support: ctx.support.clone(),
                temperature,
            },
            advantage,
            logp_behavior: lp,
            calibration: None,
            trained: true,
        });
        ctx.push_action_token(tok);
    }
    Ok(out)
}

fn evaluate(
    params: &PolicyParams,
    batch: &[TokenTerm],
    cfg: &OptimizerConfig,
    use_weights: bool,
    grad: Option<&mut Array2<f64>>,
) -> Result<f64> {
    let n = batch.iter().filter(|t| t.trained).count();
    if n == 0 {
        return Err(Error::InvalidInput("surrogate needs at least one trained token".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (i, term) in batch.iter().enumerate().filter(|(_, t)| t.trained) {
        let fail = |what: &str| {
            Error::Numerical(format!(
                "{what} at token {i} (`{}`, {:?})",
                params.vocab().name(term.token),
                term.role
            ))
        };
        let ctx = &term.context;
        let dist = params.distribution(&ctx.features, ctx.support.as_deref(), ctx.temperature)?;
        let lp = dist.log_prob(term.token);
        let w = if use_weights {
            term.weight().min(cfg.w_max)
        } else {
            1.0
        };
        let rho = importance_ratio(lp, term.logp_behavior);
        let a = term.advantage;
        let unclipped = rho * a;
        let clipped = rho.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * a;
        let value = w * unclipped.min(clipped);
        if !value.is_finite() {
            return Err(fail("non-finite surrogate term"));
        }
        total += value;
        if let Some(g) = grad.as_deref_mut() {
            if unclipped <= clipped && a != 0.0 && w != 0.0 {
                accumulate_score(g, &ctx.features, &dist, term.token, ctx.temperature, w * a * rho * inv_n);
            }
        }
    }
    Ok(total * inv_n)
}

/// Token-mean calibrated clipped surrogate.
pub fn surrogate(params: &PolicyParams, batch: &[TokenTerm], cfg: &OptimizerConfig) -> Result<f64> {
    evaluate(params, batch, cfg, true, None)
}

/// Gradient of [`surrogate`]; an active clip contributes zero.
pub fn grad_surrogate(
    params: &PolicyParams,
    batch: &[TokenTerm],
    cfg: &OptimizerConfig,
) -> Result<Array2<f64>> {
    let mut g = Array2::zeros(params.weights().dim());
    evaluate(params, batch, cfg, true, Some(&mut g))?;
    check_finite(&g)?;
    Ok(g)
}

/// Plain clipped surrogate: every calibration weight treated as 1.
pub fn grpo_surrogate(params: &PolicyParams, batch: &[TokenTerm], cfg: &OptimizerConfig) -> Result<f64> {
    evaluate(params, batch, cfg, false, None)
}

pub fn grad_grpo_surrogate(
    params: &PolicyParams,
    batch: &[TokenTerm],
    cfg: &OptimizerConfig,
) -> Result<Array2<f64>> {
    let mut g = Array2::zeros(params.weights().dim());
    evaluate(params, batch, cfg, false, Some(&mut g))?;
    check_finite(&g)?;
    Ok(g)
}

fn check_finite(g: &Array2<f64>) -> Result<()> {
    if g.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite gradient".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Vocabulary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::with_specials(["a", "b", "c", "d", "e"]).unwrap())
    }

    fn random_term(params: &PolicyParams, rng: &mut ChaCha8Rng) -> TokenTerm {
        let v = params.vocab().len() as u32;
        let mut ctx = PromptContext::solver(vec![TokenId(rng.random_range(4..v))], None);
        ctx.push_observation(vec![TokenId(rng.random_range(4..v))]);
        let features = params.features(&ctx).unwrap();
        let token = TokenId(rng.random_range(0..v));
        let lp = params
            .distribution(&features, None, 1.0)
            .unwrap()
            .log_prob(token);
        let calibration = rng.random_bool(0.5).then(|| Calibration {
            logp_free: lp,
            logp_cond: lp + rng.random_range(-1.5..1.5),
        });
        TokenTerm {
            role: if rng.random_bool(0.5) { Role::Solver } else { Role::Critic },
            token,
            context: ScoringContext {
                features,
                support: None,
                temperature: 1.0,
            },
            advantage: rng.random_range(-2.0..2.0),
            logp_behavior: lp + rng.random_range(-0.5..0.5),
            calibration,
            trained: true,
        }
    }

    fn simple_term(params: &PolicyParams, rho: f64, adv: f64, w: f64) -> TokenTerm {
        let mut ctx = PromptContext::solver(vec![TokenId(4)], None);
        ctx.push_observation(vec![TokenId(5)]);
        let features = params.features(&ctx).unwrap();
        let lp = params.distribution(&features, None, 1.0).unwrap().log_prob(TokenId(6));
        TokenTerm {
            role: Role::Solver,
            token: TokenId(6),
            context: ScoringContext {
                features,
                support: None,
                temperature: 1.0,
            },
            advantage: adv,
            logp_behavior: lp - rho.ln(),
            calibration: (w != 1.0).then(|| Calibration {
                logp_free: w.ln(),
                logp_cond: 0.0,
            }),
            trained: true,
        }
    }

    #[test]
    fn weight_and_ratio_identities() {
        assert_eq!(reweight(-1.3, -1.3), 1.0);
        assert!((reweight(2f64.ln(), 0.0) - 2.0).abs() < 1e-15);
        assert!((reweight(-(4f64.ln()), 0.0) - 0.25).abs() < 1e-15);
        assert!((importance_ratio(1.5f64.ln(), 0.0) - 1.5).abs() < 1e-15);
        assert_eq!(importance_ratio(-0.7, -0.7), 1.0);
    }

    #[test]
    fn surrogate_hand_cases() {
        let p = PolicyParams::zeros(vocab(), 3).unwrap();
        let cfg = OptimizerConfig::default();
        let v = |rho, a, w| surrogate(&p, &[simple_term(&p, rho, a, w)], &cfg).unwrap();
        assert!((v(1.0, 1.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((v(1.5, 1.0, 1.0) - 1.2).abs() < 1e-12);
        assert!((v(0.5, -1.0, 1.0) + 0.8).abs() < 1e-12);
        // Cap applies above w_max only.
        assert!((v(1.0, 1.0, 3.0) - 2.0).abs() < 1e-12);
        assert!((v(1.0, 1.0, 0.25) - 0.25).abs() < 1e-12);
        let mixed = [simple_term(&p, 1.0, 1.0, 1.0), simple_term(&p, 1.0, -1.0, 1.0), simple_term(&p, 1.0, 1.0, 1.0)];
        assert!((grpo_surrogate(&p, &mixed, &cfg).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(surrogate(&p, &[], &cfg).is_err());
    }

    #[test]
    fn first_epoch_gradient_is_weighted_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::random(vocab(), 3, 0.5, &mut rng).unwrap();
        let cfg = OptimizerConfig::default();
        let mut batch: Vec<TokenTerm> = (0..6).map(|_| random_term(&p, &mut rng)).collect();
        for t in &mut batch {
            let d = p.distribution(&t.context.features, None, 1.0).unwrap();
            t.logp_behavior = d.log_prob(t.token);
        }
        let g = grad_surrogate(&p, &batch, &cfg).unwrap();
        let mut want = Array2::zeros(p.weights().dim());
        for t in &batch {
            let d = p.distribution(&t.context.features, None, 1.0).unwrap();
            let mut s = Array2::zeros(p.weights().dim());
            accumulate_score(&mut s, &t.context.features, &d, t.token, 1.0, 1.0);
            want.scaled_add(t.weight().min(cfg.w_max) * t.advantage / batch.len() as f64, &s);
        }
        let err = (&g - &want).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicyParams::random(vocab(), 3, 0.5, &mut rng).unwrap();
        let mut batch: Vec<TokenTerm> = (0..5).map(|_| random_term(&p, &mut rng)).collect();
        batch.iter_mut().for_each(|t| t.advantage = 0.0);
        let g = grad_surrogate(&p, &batch, &OptimizerConfig::default()).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn untrained_tokens_are_inert() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::random(vocab(), 3, 0.5, &mut rng).unwrap();
        let cfg = OptimizerConfig::default();
        let batch: Vec<TokenTerm> = (0..5).map(|_| random_term(&p, &mut rng)).collect();
        let mut padded = batch.clone();
        for _ in 0..3 {
            let mut t = random_term(&p, &mut rng);
            t.trained = false;
            padded.insert(2, t);
        }
        assert_eq!(surrogate(&p, &batch, &cfg).unwrap(), surrogate(&p, &padded, &cfg).unwrap());
        assert_eq!(
            grad_surrogate(&p, &batch, &cfg).unwrap(),
            grad_surrogate(&p, &padded, &cfg).unwrap()
        );
    }

    #[test]
    fn non_finite_terms_name_the_token() {
        let p = PolicyParams::zeros(vocab(), 3).unwrap();
        let mut t = simple_term(&p, 1.0, 1.0, 1.0);
        t.advantage = f64::NAN;
        let err = surrogate(&p, &[t], &OptimizerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`c`"), "{err}");
    }

    proptest! {
        #[test]
        fn reduction_to_grpo_without_critiques(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PolicyParams::random(vocab(), 3, 0.8, &mut rng).unwrap();
            let cfg = OptimizerConfig::default();
            let mut batch: Vec<TokenTerm> = (0..8).map(|_| random_term(&p, &mut rng)).collect();
            batch.iter_mut().for_each(|t| t.calibration = None);
            prop_assert_eq!(surrogate(&p, &batch, &cfg).unwrap(), grpo_surrogate(&p, &batch, &cfg).unwrap());
            prop_assert_eq!(grad_surrogate(&p, &batch, &cfg).unwrap(), grad_grpo_surrogate(&p, &batch, &cfg).unwrap());
        }

        #[test]
        fn per_token_contribution_is_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PolicyParams::random(vocab(), 3, 0.8, &mut rng).unwrap();
            let cfg = OptimizerConfig::default();
            let t = random_term(&p, &mut rng);
            let v = surrogate(&p, std::slice::from_ref(&t), &cfg).unwrap();
            let bound = cfg.w_max * (1.0 + cfg.epsilon) * t.advantage.abs() + 1e-12;
            prop_assert!(v <= bound);
            // From below the pessimistic branch is unclipped, so the bound
            // holds only while the ratio stays inside the clip range.
            let d = p.distribution(&t.context.features, None, 1.0).unwrap();
            let rho = importance_ratio(d.log_prob(t.token), t.logp_behavior);
            if t.advantage >= 0.0 || rho <= 1.0 + cfg.epsilon {
                prop_assert!(v.abs() <= bound);
            }
        }

        #[test]
        fn raising_the_cap_never_lowers_a_weight(w in 0.01f64..10.0, c1 in 1.0f64..5.0, dc in 0.0f64..5.0) {
            let p = PolicyParams::zeros(vocab(), 3).unwrap();
            let t = simple_term(&p, 1.0, 1.0, w);
            let at = |cap: f64| surrogate(&p, std::slice::from_ref(&t), &OptimizerConfig { w_max: cap, ..Default::default() }).unwrap();
            prop_assert!(at(c1 + dc) >= at(c1));
            // With the cap at 1, downweighting still applies.
            prop_assert!((at(1.0) - w.min(1.0)).abs() < 1e-12);
        }
    }
}
