//! Conditioning contexts for the two roles.
//!
//! A context flattens to a token sequence. Each non-empty prompt part is
//! followed by a separator and the interaction history comes last:
//!
//! ```text
//! solver:  query <sep> [critique <sep>] history
//! critic:  failed_trajectory <sep> query <sep> critique-so-far
//! ```
//!
//! The critic sees the query immediately before its own output so that the
//! short featurization window covers both the tail of the failed attempt and
//! the task it is about. The role itself is carried by the role-indicator
//! features; the leading `<solver>` / `<critic>` token only appears in
//! rendered transcripts.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Solver,
    Critic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Observation(Vec<TokenId>),
    Action(Vec<TokenId>),
}

impl Segment {
    pub fn tokens(&self) -> &[TokenId] {
        match self {
            Segment::Observation(t) | Segment::Action(t) => t,
        }
    }

    pub fn is_action(&self) -> bool {
        matches!(self, Segment::Action(_))
    }
}

/// Everything a role conditions on when emitting its next token.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptContext {
    pub role: Role,
    pub query: Vec<TokenId>,
    /// Critique text; solver revisions only. An empty critique is treated
    /// exactly like an absent one.
    pub critique: Option<Vec<TokenId>>,
    /// The failed attempt under review; critic only.
    pub failed_trajectory: Option<Vec<TokenId>>,
    /// Alternating observation / action segments, starting with an observation.
    pub history: Vec<Segment>,
    /// Tokens the role may emit. `None` means the whole vocabulary.
    pub support: Option<Arc<[TokenId]>>,
}

impl PromptContext {
    pub fn solver(query: Vec<TokenId>, critique: Option<Vec<TokenId>>) -> Self {
        Self {
            role: Role::Solver,
            query,
            critique,
            failed_trajectory: None,
            history: Vec::new(),
            support: None,
        }
    }

    pub fn critic(query: Vec<TokenId>, failed_trajectory: Vec<TokenId>) -> Self {
        Self {
            role: Role::Critic,
            query,
            critique: None,
            failed_trajectory: Some(failed_trajectory),
            history: Vec::new(),
            support: None,
        }
    }

    pub fn with_support(mut self, support: Arc<[TokenId]>) -> Self {
        self.support = Some(support);
        self
    }

    /// Same context with the critique removed.
    pub fn without_critique(&self) -> Self {
        Self {
            critique: None,
            ..self.clone()
        }
    }

    pub fn has_critique(&self) -> bool {
        self.critique.as_ref().is_some_and(|c| !c.is_empty())
    }

    pub fn push_observation(&mut self, tokens: Vec<TokenId>) {
        self.history.push(Segment::Observation(tokens));
    }

    /// Appends `token` to the trailing action segment, opening one if needed.
    pub fn push_action_token(&mut self, token: TokenId) {
        match self.history.last_mut() {
            Some(Segment::Action(a)) => a.push(token),
            _ => self.history.push(Segment::Action(vec![token])),
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.critique.is_some() && self.role != Role::Solver {
            return Err(Error::InvalidInput("critique given to a non-solver context".into()));
        }
        if self.failed_trajectory.is_some() && self.role != Role::Critic {
            return Err(Error::InvalidInput(
                "failed trajectory given to a non-critic context".into(),
            ));
        }
        if let Some(first) = self.history.first() {
            if first.is_action() {
                return Err(Error::InvalidInput(
                    "history must begin with an observation segment".into(),
                ));
            }
        }
        for w in self.history.windows(2) {
            if w[0].is_action() == w[1].is_action() {
                return Err(Error::InvalidInput(
                    "history segments must alternate".into(),
                ));
            }
        }
        let parts = self
            .query
            .iter()
            .chain(self.critique.iter().flatten())
            .chain(self.failed_trajectory.iter().flatten())
            .chain(self.history.iter().flat_map(|s| s.tokens()))
            .chain(self.support.iter().flat_map(|s| s.iter()));
        for &t in parts {
            vocab.check(t)?;
        }
        Ok(())
    }

    fn prompt_parts(&self) -> [&[TokenId]; 2] {
        let critique = self.critique.as_deref().unwrap_or(&[]);
        let failed = self.failed_trajectory.as_deref().unwrap_or(&[]);
        match self.role {
            Role::Solver => [&self.query, critique],
            Role::Critic => [failed, &self.query],
        }
    }

    /// Full flattened token sequence (without the role prefix).
    pub fn flatten(&self, sep: TokenId) -> Vec<TokenId> {
        let mut out = Vec::new();
        for part in self.prompt_parts() {
            if !part.is_empty() {
                out.extend_from_slice(part);
                out.push(sep);
            }
        }
        for seg in &self.history {
            out.extend_from_slice(seg.tokens());
        }
        out
    }

    /// Last `m` tokens of the flattened context, oldest first; slots before
    /// the start of the context are `None`.
    pub fn tail(&self, sep: TokenId, m: usize) -> Vec<Option<TokenId>> {
        let mut rev: Vec<TokenId> = Vec::with_capacity(m);
        let sep_slice = [sep];
        let [p0, p1] = self.prompt_parts();
        let prompt: [&[TokenId]; 4] = [
            p0,
            if p0.is_empty() { &[] } else { &sep_slice },
            p1,
            if p1.is_empty() { &[] } else { &sep_slice },
        ];
        'outer: for part in self
            .history
            .iter()
            .rev()
            .map(Segment::tokens)
            .chain(prompt.into_iter().rev())
        {
            for &t in part.iter().rev() {
                if rev.len() == m {
                    break 'outer;
                }
                rev.push(t);
            }
        }
        let mut out = vec![None; m - rev.len()];
        out.extend(rev.into_iter().rev().map(Some));
        out
    }

    /// Human-readable transcript including the role prefix.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let prefix = match self.role {
            Role::Solver => vocab.role_solver(),
            Role::Critic => vocab.role_critic(),
        };
        std::iter::once(prefix)
            .chain(self.flatten(vocab.sep()))
            .map(|t| vocab.name(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: u32) -> TokenId {
        TokenId(i)
    }

    #[test]
    fn tail_matches_flatten_suffix() {
        let mut ctx = PromptContext::solver(vec![t(5), t(6)], Some(vec![t(7)]));
        ctx.push_observation(vec![t(8)]);
        ctx.push_action_token(t(9));
        ctx.push_observation(vec![t(10), t(11)]);
        let sep = t(2);
        let flat = ctx.flatten(sep);
        assert_eq!(flat, vec![t(5), t(6), sep, t(7), sep, t(8), t(9), t(10), t(11)]);
        for m in 0..12 {
            let tail = ctx.tail(sep, m);
            assert_eq!(tail.len(), m);
            let got: Vec<TokenId> = tail.iter().flatten().copied().collect();
            let want = &flat[flat.len().saturating_sub(m)..];
            assert_eq!(got, want, "m={m}");
            let pads = tail.iter().take_while(|x| x.is_none()).count();
            assert_eq!(pads, m.saturating_sub(flat.len()));
        }
    }

    #[test]
    fn empty_critique_flattens_like_none() {
        let a = PromptContext::solver(vec![t(5)], Some(vec![]));
        let b = PromptContext::solver(vec![t(5)], None);
        assert_eq!(a.flatten(t(2)), b.flatten(t(2)));
        assert!(!a.has_critique());
    }

    #[test]
    fn critic_puts_query_after_trajectory() {
        let ctx = PromptContext::critic(vec![t(5)], vec![t(8), t(9)]);
        assert_eq!(ctx.flatten(t(2)), vec![t(8), t(9), t(2), t(5), t(2)]);
    }

    #[test]
    fn validation_catches_role_mismatch_and_ordering() {
        let vocab = Vocabulary::with_specials(["a", "b", "c", "d"]).unwrap();
        let mut bad = PromptContext::critic(vec![t(4)], vec![t(5)]);
        bad.critique = Some(vec![t(6)]);
        assert!(bad.validate(&vocab).is_err());

        let mut bad = PromptContext::solver(vec![t(4)], None);
        bad.history.push(Segment::Action(vec![t(5)]));
        assert!(bad.validate(&vocab).is_err());

        let bad = PromptContext::solver(vec![t(40)], None);
        assert!(bad.validate(&vocab).is_err());
    }
}
