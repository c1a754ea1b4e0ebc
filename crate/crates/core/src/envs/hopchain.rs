//! Two-hop fact lookup.
//!
//! Each query asks about entity `x`. A hidden functional fact table maps every
//! entity to another one; the answer is `f(f(x))`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{EnvKind, HiddenTruth, Outcome, Query};
use crate::error::{Error, Result};
use crate::policy::{TokenId, Vocabulary};

#[derive(Clone, Debug, Default, PartialEq)]
pub(super) struct State;

#[derive(Clone, Debug)]
pub(super) struct Tokens {
    entities: usize,
    pub ask: Vec<TokenId>,
    ent: Vec<TokenId>,
    lookup: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    correct: TokenId,
    wrong: TokenId,
    pub timeout: TokenId,
    nothing: TokenId,
}

pub(super) fn ask(e: usize) -> String {
    format!("ask_{e}")
}

pub(super) fn tables(entities: usize) -> Result<(Vec<String>, Tokens)> {
    if entities < 3 {
        return Err(Error::Config(format!(
            "hop_chain needs at least 3 entities, got {entities}"
        )));
    }
    let mut names = Vec::new();
    for prefix in ["ask", "ent", "lookup", "answer"] {
        names.extend((0..entities).map(|e| format!("{prefix}_{e}")));
    }
    names.extend(["correct", "wrong", "timeout", "nothing"].map(String::from));
    let p = TokenId(0);
    Ok((
        names,
        Tokens {
            entities,
            ask: Vec::new(),
            ent: Vec::new(),
            lookup: Vec::new(),
            answer: Vec::new(),
            correct: p,
            wrong: p,
            timeout: p,
            nothing: p,
        },
    ))
}

impl Tokens {
    pub(super) fn resolve(self, vocab: &Vocabulary) -> Result<Self> {
        let family = |prefix: &str| -> Result<Vec<TokenId>> {
            (0..self.entities)
                .map(|e| vocab.id(&format!("{prefix}_{e}")))
                .collect()
        };
        Ok(Self {
            entities: self.entities,
            ask: family("ask")?,
            ent: family("ent")?,
            lookup: family("lookup")?,
            answer: family("answer")?,
            correct: vocab.id("correct")?,
            wrong: vocab.id("wrong")?,
            timeout: vocab.id("timeout")?,
            nothing: vocab.id("nothing")?,
        })
    }

    pub(super) fn actions(&self) -> Vec<TokenId> {
        let mut a = self.lookup.clone();
        a.extend(&self.answer);
        a
    }

    pub(super) fn validate(&self, start: usize, facts: &[usize]) -> Result<()> {
        if facts.len() != self.entities || start >= self.entities {
            return Err(Error::Config("hop_chain fact table has the wrong size".into()));
        }
        if let Some(e) = (0..facts.len()).find(|&e| facts[e] >= self.entities || facts[e] == e) {
            return Err(Error::Config(format!("entity {e} has an invalid fact")));
        }
        let y = facts[start];
        if facts[y] == start {
            return Err(Error::Config("two-hop target equals the question entity".into()));
        }
        Ok(())
    }

    pub(super) fn step(&self, query: &Query, action: Option<TokenId>) -> Outcome {
        let HiddenTruth::HopChain { start, ref facts } = query.hidden_truth else {
            unreachable!("query validated at reset")
        };
        let Some(a) = action else {
            return Outcome::Continue(vec![self.nothing]);
        };
        if let Some(e) = self.lookup.iter().position(|&t| t == a) {
            Outcome::Continue(vec![self.ent[facts[e]]])
        } else if let Some(e) = self.answer.iter().position(|&t| t == a) {
            if e == facts[facts[start]] {
                Outcome::Finish(vec![self.correct], 1.0)
            } else {
                Outcome::Finish(vec![self.wrong], 0.0)
            }
        } else {
            Outcome::Continue(vec![self.nothing])
        }
    }
}

/// Random fact table without fixed points whose chain from `start` visits
/// three distinct entities.
pub(super) fn generate<R: Rng + ?Sized>(id: u64, entities: usize, rng: &mut R) -> Query {
    let start = rng.random_range(0..entities);
    let mut others: Vec<usize> = (0..entities).filter(|&e| e != start).collect();
    others.shuffle(rng);
    let (y, z) = (others[0], others[1]);
    let facts = (0..entities)
        .map(|e| {
            if e == start {
                y
            } else if e == y {
                z
            } else {
                let mut f = rng.random_range(0..entities - 1);
                if f >= e {
                    f += 1;
                }
                f
            }
        })
        .collect();
    Query {
        id,
        kind: EnvKind::HopChain,
        description: vec![ask(start)],
        hidden_truth: HiddenTruth::HopChain { start, facts },
    }
}
