//! Linear-softmax policy over one-hot features of the trailing context.
//!
//! Feature layout for context order `m` and vocabulary size `V`:
//! slot `s` (0 = oldest of the last `m` tokens) holding token `v` sets
//! feature `s * V + v`; the two role-indicator features sit at `m * V`
//! (solver) and `m * V + 1` (critic). Padding slots set nothing.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::context::{PromptContext, Role};
use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Active (value 1.0) feature indices of one context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Features {
    active: Vec<u32>,
}

impl Features {
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().map(|&i| i as usize)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Dense feature vector of length `m * V + 2`.
pub fn featurize(ctx: &PromptContext, vocab: &Vocabulary, m: usize) -> Result<Array1<f64>> {
    ctx.validate(vocab)?;
    let feats = sparse_features(ctx, vocab, m);
    let mut out = Array1::zeros(m * vocab.len() + 2);
    for i in feats.active() {
        out[i] = 1.0;
    }
    Ok(out)
}

fn sparse_features(ctx: &PromptContext, vocab: &Vocabulary, m: usize) -> Features {
    let v = vocab.len();
    let mut active: Vec<u32> = ctx
        .tail(vocab.sep(), m)
        .into_iter()
        .enumerate()
        .filter_map(|(slot, tok)| tok.map(|t| (slot * v + t.index()) as u32))
        .collect();
    let role_dim = match ctx.role {
        Role::Solver => 0,
        Role::Critic => 1,
    };
    active.push((m * v + role_dim) as u32);
    Features { active }
}

/// Probability vector over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token.index()]
    }

    /// Natural log-probability; `-inf` outside the support.
    pub fn log_prob(&self, token: TokenId) -> f64 {
        self.log_probs[token.index()]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Inverse-CDF draw driven by one uniform variate.
    fn draw(&self, u: f64) -> TokenId {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return TokenId(i as u32);
                }
            }
        }
        TokenId(last as u32)
    }
}

/// Shared policy weights. Solver and critic read the same matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    vocab: Arc<Vocabulary>,
    context_order: usize,
    weights: Array2<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab: Arc<Vocabulary>, context_order: usize) -> Result<Self> {
        if context_order == 0 {
            return Err(Error::InvalidInput("context order must be positive".into()));
        }
        let f = context_order * vocab.len() + 2;
        let weights = Array2::zeros((vocab.len(), f));
        Ok(Self {
            vocab,
            context_order,
            weights,
        })
    }

    /// Gaussian initialization with standard deviation `scale`.
    pub fn random<R: Rng + ?Sized>(
        vocab: Arc<Vocabulary>,
        context_order: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(vocab, context_order)?;
        if scale > 0.0 {
            let normal = Normal::new(0.0, scale)
                .map_err(|e| Error::InvalidInput(format!("init scale: {e}")))?;
            p.weights.mapv_inplace(|_| normal.sample(rng));
        }
        Ok(p)
    }

    pub fn from_weights(
        vocab: Arc<Vocabulary>,
        context_order: usize,
        weights: Array2<f64>,
    ) -> Result<Self> {
        let mut p = Self::zeros(vocab, context_order)?;
        if weights.dim() != p.weights.dim() {
            return Err(Error::InvalidInput(format!(
                "weight shape {:?} does not match expected {:?}",
                weights.dim(),
                p.weights.dim()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite weight".into()));
        }
        p.weights = weights;
        Ok(p)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    /// Promotes emitting the token found three positions back, for each token
    /// in `tokens`. At a revision's first turn that slot holds the last
    /// critique token, so this gives the backbone a starting ability to act on
    /// a hinted action.
    pub fn add_hint_prior(&mut self, tokens: &[TokenId], strength: f64) {
        let m = self.context_order;
        if m < 3 {
            return;
        }
        let v = self.vocab.len();
        for &t in tokens {
            self.weights[[t.index(), (m - 3) * v + t.index()]] += strength;
        }
    }

    pub fn featurize(&self, ctx: &PromptContext) -> Result<Array1<f64>> {
        featurize(ctx, &self.vocab, self.context_order)
    }

    /// Sparse features of a validated context.
    pub fn features(&self, ctx: &PromptContext) -> Result<Features> {
        ctx.validate(&self.vocab)?;
        Ok(sparse_features(ctx, &self.vocab, self.context_order))
    }

    /// Features without re-validating; the caller guarantees `ctx` is well formed.
    pub(crate) fn features_unchecked(&self, ctx: &PromptContext) -> Features {
        sparse_features(ctx, &self.vocab, self.context_order)
    }

    pub fn logits(&self, feats: &Features) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab.len()];
        for f in feats.active() {
            for (o, w) in out.iter_mut().zip(self.weights.column(f)) {
                *o += w;
            }
        }
        out
    }

    /// Softmax of `logits / temperature` restricted to `support`.
    pub fn distribution(
        &self,
        feats: &Features,
        support: Option<&[TokenId]>,
        temperature: f64,
    ) -> Result<TokenDistribution> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let logits = self.logits(feats);
        let v = logits.len();
        let mut scaled = vec![f64::NEG_INFINITY; v];
        match support {
            None => {
                for (s, l) in scaled.iter_mut().zip(&logits) {
                    *s = l / temperature;
                }
            }
            Some(sup) => {
                if sup.is_empty() {
                    return Err(Error::InvalidInput("empty support".into()));
                }
                for &t in sup {
                    let l = logits
                        .get(t.index())
                        .ok_or(Error::TokenOutOfRange(t.index()))?;
                    scaled[t.index()] = l / temperature;
                }
            }
        }
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || scaled.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(Error::Numerical(format!("non-finite logits (max {max})")));
        }
        let sum: f64 = scaled.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        let log_probs: Vec<f64> = scaled.iter().map(|s| s - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(TokenDistribution { probs, log_probs })
    }

    pub fn token_distribution(
        &self,
        ctx: &PromptContext,
        temperature: f64,
    ) -> Result<TokenDistribution> {
        let feats = self.features(ctx)?;
        self.distribution(&feats, ctx.support.as_deref(), temperature)
    }

    /// `log π(token | ctx)` at temperature 1.
    pub fn log_prob(&self, ctx: &PromptContext, token: TokenId) -> Result<f64> {
        self.vocab.check(token)?;
        let d = self.token_distribution(ctx, 1.0)?;
        let lp = d.log_prob(token);
        if lp == f64::NEG_INFINITY {
            return Err(Error::OutsideSupport(self.vocab.name(token).to_string()));
        }
        Ok(lp)
    }

    /// Score function `∇_W log π(token | ctx) = (onehot(token) − p) ⊗ φ(ctx)`.
    pub fn grad_log_prob(&self, ctx: &PromptContext, token: TokenId) -> Result<Array2<f64>> {
        self.vocab.check(token)?;
        let feats = self.features(ctx)?;
        let dist = self.distribution(&feats, ctx.support.as_deref(), 1.0)?;
        if dist.prob(token) == 0.0 {
            return Err(Error::OutsideSupport(self.vocab.name(token).to_string()));
        }
        let mut grad = Array2::zeros(self.weights.dim());
        accumulate_score(&mut grad, &feats, &dist, token, 1.0, 1.0);
        Ok(grad)
    }

    pub fn sample_token<R: Rng + ?Sized>(
        &self,
        ctx: &PromptContext,
        temperature: f64,
        rng: &mut R,
    ) -> Result<TokenId> {
        let d = self.token_distribution(ctx, temperature)?;
        Ok(d.draw(rng.random::<f64>()))
    }

    /// Draws from an already computed distribution; returns the token and its
    /// log-probability.
    pub(crate) fn draw<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> (TokenId, f64) {
        let t = dist.draw(rng.random::<f64>());
        (t, dist.log_prob(t))
    }

    /// Teacher-forced per-token log-probabilities of `tokens` appended to
    /// `prompt` as one action segment.
    pub fn score_sequence(&self, prompt: &PromptContext, tokens: &[TokenId]) -> Result<Vec<f64>> {
        prompt.validate(&self.vocab)?;
        let mut ctx = prompt.clone();
        if ctx.history.last().is_none_or(|s| s.is_action()) {
            ctx.push_observation(Vec::new());
        }
        let mut out = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            self.vocab.check(tok)?;
            let feats = self.features_unchecked(&ctx);
            let d = self.distribution(&feats, ctx.support.as_deref(), 1.0)?;
            let lp = d.log_prob(tok);
            if lp == f64::NEG_INFINITY {
                return Err(Error::OutsideSupport(self.vocab.name(tok).to_string()));
            }
            out.push(lp);
            ctx.push_action_token(tok);
        }
        Ok(out)
    }
}

/// `grad += scale · (onehot(token) − p) ⊗ φ / temperature`.
pub(crate) fn accumulate_score(
    grad: &mut Array2<f64>,
    feats: &Features,
    dist: &TokenDistribution,
    token: TokenId,
    temperature: f64,
    scale: f64,
) {
    let k = scale / temperature;
    for (v, &p) in dist.probs.iter().enumerate() {
        let indicator = if v == token.index() { 1.0 } else { 0.0 };
        let c = k * (indicator - p);
        if c == 0.0 {
            continue;
        }
        let mut row = grad.row_mut(v);
        for f in feats.active() {
            row[f] += c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Segment;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(n: usize) -> Arc<Vocabulary> {
        Arc::new(Vocabulary::with_specials((0..n).map(|i| format!("t{i}"))).unwrap())
    }

    fn ctx_with_history(v: &Vocabulary) -> PromptContext {
        let id = |s: &str| v.id(s).unwrap();
        let mut ctx = PromptContext::solver(vec![id("t0")], None);
        ctx.push_observation(vec![id("t1")]);
        ctx.push_action_token(id("t2"));
        ctx.push_observation(vec![id("t3")]);
        ctx
    }

    #[test]
    fn featurize_padding_case() {
        let v = vocab(6);
        let ctx = PromptContext::solver(vec![], None);
        let phi = featurize(&ctx, &v, 2).unwrap();
        assert_eq!(phi.len(), 2 * v.len() + 2);
        assert!(phi.iter().take(2 * v.len()).all(|&x| x == 0.0));
        assert_eq!(phi[2 * v.len()], 1.0);
        assert_eq!(phi[2 * v.len() + 1], 0.0);
    }

    #[test]
    fn featurize_deterministic_and_role_only_difference() {
        let v = vocab(6);
        let ctx = ctx_with_history(&v);
        let a = featurize(&ctx, &v, 4).unwrap();
        let b = featurize(&ctx, &v, 4).unwrap();
        assert_eq!(a, b);

        let mut critic = ctx.clone();
        critic.role = Role::Critic;
        let c = featurize(&critic, &v, 4).unwrap();
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != c[i]).collect();
        let base = 4 * v.len();
        assert_eq!(diffs, vec![base, base + 1]);
    }

    #[test]
    fn featurize_rejects_unknown_token() {
        let v = vocab(6);
        let ctx = PromptContext::solver(vec![TokenId(999)], None);
        assert!(featurize(&ctx, &v, 4).is_err());
    }

    #[test]
    fn zero_weights_are_uniform() {
        let v = vocab(6);
        let p = PolicyParams::zeros(v.clone(), 4).unwrap();
        let d = p.token_distribution(&ctx_with_history(&v), 1.0).unwrap();
        for &x in &d.probs {
            assert!((x - 1.0 / v.len() as f64).abs() < 1e-15);
        }
        let lp = p.log_prob(&ctx_with_history(&v), TokenId(3)).unwrap();
        assert!((lp + (v.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_softmax() {
        let v = vocab(6);
        let n = v.len();
        let mut p = PolicyParams::zeros(v.clone(), 4).unwrap();
        // Only the solver role feature is active for an empty context.
        p.weights_mut()[[0, 4 * n]] = 2f64.ln();
        let ctx = PromptContext::solver(vec![], None);
        let d = p.token_distribution(&ctx, 1.0).unwrap();
        assert!((d.probs[0] - 2.0 / (n as f64 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn high_temperature_flattens() {
        let v = vocab(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = PolicyParams::random(v.clone(), 4, 1.0, &mut rng).unwrap();
        p.weights_mut().mapv_inplace(|w| w.clamp(-1.0, 1.0));
        let d = p.token_distribution(&ctx_with_history(&v), 1e4).unwrap();
        let max = d.probs.iter().cloned().fold(f64::MIN, f64::max);
        let min = d.probs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-3);
    }

    #[test]
    fn rejects_bad_temperature_and_non_finite_logits() {
        let v = vocab(6);
        let mut p = PolicyParams::zeros(v.clone(), 4).unwrap();
        let ctx = ctx_with_history(&v);
        assert!(p.token_distribution(&ctx, 0.0).is_err());
        p.weights_mut()[[0, 4 * v.len()]] = f64::NAN;
        assert!(matches!(
            p.token_distribution(&ctx, 1.0),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn support_masks_tokens() {
        let v = vocab(6);
        let p = PolicyParams::zeros(v.clone(), 4).unwrap();
        let sup: Arc<[TokenId]> = Arc::from(vec![TokenId(4), TokenId(5)]);
        let ctx = ctx_with_history(&v).with_support(sup);
        let d = p.token_distribution(&ctx, 1.0).unwrap();
        assert_eq!(d.probs[4], 0.5);
        assert_eq!(d.probs[0], 0.0);
        assert!(matches!(p.log_prob(&ctx, TokenId(0)), Err(Error::OutsideSupport(_))));
    }

    #[test]
    fn uniform_gradient_closed_form() {
        let v = vocab(6);
        let n = v.len();
        let p = PolicyParams::zeros(v.clone(), 4).unwrap();
        let ctx = ctx_with_history(&v);
        let phi = p.featurize(&ctx).unwrap();
        let g = p.grad_log_prob(&ctx, TokenId(5)).unwrap();
        for r in 0..n {
            let c = if r == 5 { 1.0 } else { 0.0 } - 1.0 / n as f64;
            for f in 0..phi.len() {
                assert!((g[[r, f]] - c * phi[f]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn score_function_has_zero_mean() {
        let v = vocab(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PolicyParams::random(v.clone(), 4, 0.7, &mut rng).unwrap();
        let ctx = ctx_with_history(&v);
        let d = p.token_distribution(&ctx, 1.0).unwrap();
        let mut acc = Array2::<f64>::zeros(p.weights().dim());
        for t in 0..v.len() {
            let g = p.grad_log_prob(&ctx, TokenId(t as u32)).unwrap();
            acc.scaled_add(d.probs[t], &g);
        }
        assert!(acc.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn sampling_is_seeded_and_concentrates() {
        let v = vocab(6);
        let mut p = PolicyParams::zeros(v.clone(), 4).unwrap();
        let ctx = ctx_with_history(&v);
        let a = p
            .sample_token(&ctx, 1.0, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = p
            .sample_token(&ctx, 1.0, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);

        // Scale weights toward token 7 until it dominates.
        let n = v.len();
        p.weights_mut()[[7, 4 * n]] = 1.0;
        p.weights_mut().mapv_inplace(|w| w * 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..1000)
            .filter(|_| p.sample_token(&ctx, 1.0, &mut rng).unwrap() == TokenId(7))
            .count();
        assert!(hits > 990, "hits = {hits}");
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let v = vocab(6);
        let n = v.len();
        let p = PolicyParams::zeros(v.clone(), 4).unwrap();
        let ctx = ctx_with_history(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[p.sample_token(&ctx, 1.0, &mut rng).unwrap().index()] += 1;
        }
        let q = 1.0 / n as f64;
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * q).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn score_sequence_consistency() {
        let v = vocab(6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::random(v.clone(), 4, 0.5, &mut rng).unwrap();
        let ctx = ctx_with_history(&v);
        assert!(p.score_sequence(&ctx, &[]).unwrap().is_empty());
        let one = p.score_sequence(&ctx, &[TokenId(6)]).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0] - p.log_prob(&ctx, TokenId(6)).unwrap()).abs() < 1e-15);

        // Second element conditions on the first.
        let two = p.score_sequence(&ctx, &[TokenId(6), TokenId(7)]).unwrap();
        let mut next = ctx.clone();
        next.history.push(Segment::Action(vec![TokenId(6)]));
        assert!((two[1] - p.log_prob(&next, TokenId(7)).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn hint_prior_targets_third_from_last_slot() {
        let v = vocab(6);
        let n = v.len();
        let mut p = PolicyParams::zeros(v.clone(), 4).unwrap();
        p.add_hint_prior(&[TokenId(5)], 2.0);
        assert_eq!(p.weights()[[5, n + 5]], 2.0);
        assert_eq!(p.weights().sum(), 2.0);
    }
}
