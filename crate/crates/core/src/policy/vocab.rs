use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a token inside a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub const ROLE_SOLVER: &str = "<solver>";
pub const ROLE_CRITIC: &str = "<critic>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";

/// Smallest vocabulary the policy accepts.
pub const MIN_VOCAB: usize = 8;

/// Ordered set of distinct symbolic tokens, including the four special tokens.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
    role_solver: TokenId,
    role_critic: TokenId,
    sep: TokenId,
    eos: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary with the special tokens first, followed by `extra`.
    pub fn with_specials<I, S>(extra: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = [ROLE_SOLVER, ROLE_CRITIC, SEP, EOS]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(extra.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from an explicit token list, which must already
    /// contain every special token.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < MIN_VOCAB {
            return Err(Error::InvalidInput(format!(
                "vocabulary has {} tokens, need at least {MIN_VOCAB}",
                tokens.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if lookup.insert(tok.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::InvalidInput(format!("duplicate token `{tok}`")));
            }
        }
        let special = |name: &str| {
            lookup
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("missing special token `{name}`")))
        };
        Ok(Self {
            role_solver: special(ROLE_SOLVER)?,
            role_critic: special(ROLE_CRITIC)?,
            sep: special(SEP)?,
            eos: special(EOS)?,
            tokens,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn role_solver(&self) -> TokenId {
        self.role_solver
    }

    pub fn role_critic(&self) -> TokenId {
        self.role_critic
    }

    pub fn sep(&self) -> TokenId {
        self.sep
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, name: &str) -> Result<TokenId> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownToken(name.to_string()))
    }

    pub fn name(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange(id.index()))
        }
    }

    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<TokenId>> {
        names.iter().map(|n| self.id(n.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.name(id).to_string()).collect()
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let v = Vocabulary::with_specials(["a", "b", "c", "d"]).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.role_solver(), TokenId(0));
        assert_eq!(v.eos(), TokenId(3));
        assert_eq!(v.id("c").unwrap(), TokenId(6));
        assert_eq!(v.name(TokenId(4)), "a");
    }

    #[test]
    fn rejects_duplicates_small_and_missing_specials() {
        assert!(Vocabulary::with_specials(["a", "a", "b", "c"]).is_err());
        assert!(Vocabulary::with_specials(["a", "b"]).is_err());
        let no_eos: Vec<String> = ["<solver>", "<critic>", "<sep>", "a", "b", "c", "d", "e"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(Vocabulary::from_tokens(no_eos).is_err());
    }

    #[test]
    fn unknown_tokens_are_rejected() {
        let v = Vocabulary::with_specials(["a", "b", "c", "d"]).unwrap();
        assert!(matches!(v.id("zz"), Err(Error::UnknownToken(_))));
        assert!(v.check(TokenId(99)).is_err());
    }
}
