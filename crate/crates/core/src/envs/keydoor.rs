//! Rooms, a hidden key, and a locked door.
//!
//! The description shows a single landmark `mark_j`; the key lies in room
//! `(j + 1) mod L`. Nothing in the observations names the key room, so the
//! solver either learns the landmark mapping or searches.

use rand::Rng;

use super::{HiddenTruth, EnvKind, Outcome, Query};
use crate::error::{Error, Result};
use crate::policy::{TokenId, Vocabulary};

const OBS: [&str; 8] = [
    "hall", "arrived", "got_key", "no_key", "locked", "unlocked", "timeout", "nothing",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub(super) struct State {
    room: Option<usize>,
    has_key: bool,
}

#[derive(Clone, Debug)]
pub(super) struct Tokens {
    rooms: usize,
    pub goto: Vec<TokenId>,
    take: TokenId,
    open: TokenId,
    pub hall: TokenId,
    arrived: TokenId,
    got_key: TokenId,
    no_key: TokenId,
    locked: TokenId,
    unlocked: TokenId,
    pub timeout: TokenId,
    nothing: TokenId,
}

pub(super) fn mark(j: usize) -> String {
    format!("mark_{j}")
}

/// Token names (beyond the specials) and an unresolved table.
pub(super) fn tables(rooms: usize) -> Result<(Vec<String>, Tokens)> {
    if rooms < 2 {
        return Err(Error::Config(format!("key_door needs at least 2 rooms, got {rooms}")));
    }
    let mut names: Vec<String> = (0..rooms).map(mark).collect();
    names.extend((0..rooms).map(|i| format!("goto_{i}")));
    names.extend(["take", "open"].map(String::from));
    names.extend(OBS.map(String::from));
    let placeholder = TokenId(0);
    Ok((
        names,
        Tokens {
            rooms,
            goto: Vec::new(),
            take: placeholder,
            open: placeholder,
            hall: placeholder,
            arrived: placeholder,
            got_key: placeholder,
            no_key: placeholder,
            locked: placeholder,
            unlocked: placeholder,
            timeout: placeholder,
            nothing: placeholder,
        },
    ))
}

impl Tokens {
    pub(super) fn resolve(self, vocab: &Vocabulary) -> Result<Self> {
        Ok(Self {
            rooms: self.rooms,
            goto: (0..self.rooms)
                .map(|i| vocab.id(&format!("goto_{i}")))
                .collect::<Result<_>>()?,
            take: vocab.id("take")?,
            open: vocab.id("open")?,
            hall: vocab.id("hall")?,
            arrived: vocab.id("arrived")?,
            got_key: vocab.id("got_key")?,
            no_key: vocab.id("no_key")?,
            locked: vocab.id("locked")?,
            unlocked: vocab.id("unlocked")?,
            timeout: vocab.id("timeout")?,
            nothing: vocab.id("nothing")?,
        })
    }

    pub(super) fn actions(&self) -> Vec<TokenId> {
        let mut a = self.goto.clone();
        a.extend([self.take, self.open]);
        a
    }

    pub(super) fn validate(&self, key_room: usize) -> Result<()> {
        if key_room >= self.rooms {
            return Err(Error::Config(format!(
                "key room {key_room} out of range for {} rooms",
                self.rooms
            )));
        }
        Ok(())
    }

    pub(super) fn step(&self, s: &mut State, query: &Query, action: Option<TokenId>) -> Outcome {
        let HiddenTruth::KeyDoor { key_room } = query.hidden_truth else {
            unreachable!("query validated at reset")
        };
        let Some(a) = action else {
            return Outcome::Continue(vec![self.nothing]);
        };
        if let Some(i) = self.goto.iter().position(|&g| g == a) {
            s.room = Some(i);
            Outcome::Continue(vec![self.arrived])
        } else if a == self.take {
            if s.room == Some(key_room) && !s.has_key {
                s.has_key = true;
                Outcome::Continue(vec![self.got_key])
            } else {
                Outcome::Continue(vec![self.no_key])
            }
        } else if a == self.open {
            if s.has_key {
                Outcome::Finish(vec![self.unlocked], 1.0)
            } else {
                Outcome::Continue(vec![self.locked])
            }
        } else {
            Outcome::Continue(vec![self.nothing])
        }
    }
}

pub(super) fn generate<R: Rng + ?Sized>(id: u64, rooms: usize, rng: &mut R) -> Query {
    let j = rng.random_range(0..rooms);
    Query {
        id,
        kind: EnvKind::KeyDoor,
        description: vec![mark(j)],
        hidden_truth: HiddenTruth::KeyDoor {
            key_room: (j + 1) % rooms,
        },
    }
}
