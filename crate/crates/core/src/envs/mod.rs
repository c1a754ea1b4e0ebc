//! Synthetic partially observable environments with token-level interfaces.
//!
//! Three task families, all with terminal rewards in `[0, 1]`:
//!
//! * [`EnvKind::KeyDoor`]: navigate rooms, take the hidden key, open the door.
//! * [`EnvKind::AttrShop`]: search a small catalog, inspect items, buy one;
//!   the reward scores the purchase against the shopping instruction.
//! * [`EnvKind::HopChain`]: look up facts and answer a two-hop question.
//!
//! Every action is a single token. Tokens outside the action set are accepted
//! but waste the turn with a `nothing` observation.

mod attrshop;
mod dataset;
mod hopchain;
mod keydoor;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attrshop::{shop_reward, ShopInstruction, ShopPurchase};
pub use dataset::{generate_queries, read_dataset, split_train_eval, write_dataset};

use crate::error::{Error, Result};
use crate::policy::{TokenId, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    KeyDoor,
    AttrShop,
    HopChain,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::KeyDoor, EnvKind::AttrShop, EnvKind::HopChain];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::KeyDoor => "key_door",
            EnvKind::AttrShop => "attr_shop",
            EnvKind::HopChain => "hop_chain",
        }
    }

    /// Default configuration for this kind.
    pub fn default_config(self) -> EnvConfig {
        match self {
            EnvKind::KeyDoor => EnvConfig::KeyDoor {
                rooms: 3,
                horizon: 6,
            },
            EnvKind::AttrShop => EnvConfig::AttrShop { horizon: 5 },
            EnvKind::HopChain => EnvConfig::HopChain {
                entities: 4,
                horizon: 4,
            },
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "key_door" | "keydoor" => Ok(EnvKind::KeyDoor),
            "attr_shop" | "attrshop" => Ok(EnvKind::AttrShop),
            "hop_chain" | "hopchain" => Ok(EnvKind::HopChain),
            other => Err(Error::Config(format!("unknown environment kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    KeyDoor { rooms: usize, horizon: usize },
    AttrShop { horizon: usize },
    HopChain { entities: usize, horizon: usize },
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::KeyDoor { .. } => EnvKind::KeyDoor,
            EnvConfig::AttrShop { .. } => EnvKind::AttrShop,
            EnvConfig::HopChain { .. } => EnvKind::HopChain,
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            EnvConfig::KeyDoor { horizon, .. }
            | EnvConfig::AttrShop { horizon }
            | EnvConfig::HopChain { horizon, .. } => horizon,
        }
    }

    pub fn with_horizon(self, h: usize) -> Self {
        match self {
            EnvConfig::KeyDoor { rooms, .. } => EnvConfig::KeyDoor { rooms, horizon: h },
            EnvConfig::AttrShop { .. } => EnvConfig::AttrShop { horizon: h },
            EnvConfig::HopChain { entities, .. } => EnvConfig::HopChain {
                entities,
                horizon: h,
            },
        }
    }
}

/// Environment-specific ground truth that the description does not reveal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenTruth {
    KeyDoor {
        key_room: usize,
    },
    AttrShop {
        instruction: ShopInstruction,
        catalog: Vec<ShopPurchase>,
    },
    HopChain {
        start: usize,
        /// `facts[e]` is the entity that `lookup(e)` returns.
        facts: Vec<usize>,
    },
}

/// One task instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub kind: EnvKind,
    pub description: Vec<String>,
    pub hidden_truth: HiddenTruth,
}

/// Result of `reset` or `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<TokenId>,
    pub done: bool,
    /// Terminal reward; zero until `done`.
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum KindState {
    KeyDoor(keydoor::State),
    AttrShop(attrshop::State),
    HopChain(hopchain::State),
}

/// Per-episode mutable state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    query: Query,
    steps: usize,
    done: bool,
    reward: f64,
    inner: KindState,
}

impl EnvState {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    pub fn query(&self) -> &Query {
        &self.query
    }
}

#[derive(Clone, Debug)]
enum Tables {
    KeyDoor(keydoor::Tokens),
    AttrShop(attrshop::Tokens),
    HopChain(hopchain::Tokens),
}

/// A configured environment: vocabulary, action set, and transition rules.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    vocab: Arc<Vocabulary>,
    actions: Arc<[TokenId]>,
    critique_support: Arc<[TokenId]>,
    tables: Tables,
}

/// Reward at or above this counts as success.
pub const SUCCESS_TOLERANCE: f64 = 1e-9;

pub fn is_success(reward: f64) -> bool {
    reward >= 1.0 - SUCCESS_TOLERANCE
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        if config.horizon() == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let (names, tables) = match config {
            EnvConfig::KeyDoor { rooms, .. } => {
                let (n, t) = keydoor::tables(rooms)?;
                (n, Tables::KeyDoor(t))
            }
            EnvConfig::AttrShop { .. } => {
                let (n, t) = attrshop::tables();
                (n, Tables::AttrShop(t))
            }
            EnvConfig::HopChain { entities, .. } => {
                let (n, t) = hopchain::tables(entities)?;
                (n, Tables::HopChain(t))
            }
        };
        let vocab = Arc::new(Vocabulary::with_specials(names)?);
        let tables = match tables {
            Tables::KeyDoor(t) => Tables::KeyDoor(t.resolve(&vocab)?),
            Tables::AttrShop(t) => Tables::AttrShop(t.resolve(&vocab)?),
            Tables::HopChain(t) => Tables::HopChain(t.resolve(&vocab)?),
        };
        let actions: Vec<TokenId> = match &tables {
            Tables::KeyDoor(t) => t.actions(),
            Tables::AttrShop(t) => t.actions(),
            Tables::HopChain(t) => t.actions(),
        };
        let mut critique: Vec<TokenId> = actions.clone();
        critique.push(vocab.eos());
        Ok(Self {
            config,
            vocab,
            actions: actions.into(),
            critique_support: critique.into(),
            tables,
        })
    }

    pub fn with_defaults(kind: EnvKind) -> Result<Self> {
        Self::new(kind.default_config())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn kind(&self) -> EnvKind {
        self.config.kind()
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon()
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Tokens the solver may emit as actions.
    pub fn action_tokens(&self) -> &Arc<[TokenId]> {
        &self.actions
    }

    /// Tokens the critic may emit: every action token as a hint, plus `<eos>`.
    pub fn critique_support(&self) -> &Arc<[TokenId]> {
        &self.critique_support
    }

    pub fn encode_description(&self, query: &Query) -> Result<Vec<TokenId>> {
        self.vocab.encode(&query.description)
    }

    pub fn validate_query(&self, query: &Query) -> Result<()> {
        if query.kind != self.kind() {
            return Err(Error::Config(format!(
                "query {} is for {}, environment is {}",
                query.id,
                query.kind,
                self.kind()
            )));
        }
        self.encode_description(query)?;
        match (&self.tables, &query.hidden_truth) {
            (Tables::KeyDoor(t), HiddenTruth::KeyDoor { key_room }) => t.validate(*key_room),
            (Tables::AttrShop(_), HiddenTruth::AttrShop { instruction, catalog }) => {
                attrshop::validate(instruction, catalog)
            }
            (Tables::HopChain(t), HiddenTruth::HopChain { start, facts }) => {
                t.validate(*start, facts)
            }
            _ => Err(Error::Config(format!(
                "hidden truth of query {} does not match {}",
                query.id,
                self.kind()
            ))),
        }
    }

    pub fn reset(&self, query: &Query) -> Result<(EnvState, EnvStep)> {
        self.validate_query(query)?;
        let (inner, observation) = match &self.tables {
            Tables::KeyDoor(t) => (KindState::KeyDoor(keydoor::State::default()), vec![t.hall]),
            Tables::AttrShop(t) => (
                KindState::AttrShop(attrshop::State::default()),
                vec![t.storefront],
            ),
            Tables::HopChain(t) => {
                let HiddenTruth::HopChain { start, .. } = &query.hidden_truth else {
                    unreachable!("validated above")
                };
                (KindState::HopChain(hopchain::State), vec![t.ask[*start]])
            }
        };
        let state = EnvState {
            query: query.clone(),
            steps: 0,
            done: false,
            reward: 0.0,
            inner,
        };
        Ok((
            state,
            EnvStep {
                observation,
                done: false,
                reward: 0.0,
            },
        ))
    }

    /// Applies one action. Stepping a finished episode is an error.
    pub fn step(&self, state: &mut EnvState, action: &[TokenId]) -> Result<EnvStep> {
        if state.done {
            return Err(Error::Environment("step called on a finished episode".into()));
        }
        let single = match action {
            [t] => Some(*t),
            _ => None,
        };
        let outcome = match (&self.tables, &mut state.inner) {
            (Tables::KeyDoor(t), KindState::KeyDoor(s)) => t.step(s, &state.query, single),
            (Tables::AttrShop(t), KindState::AttrShop(s)) => t.step(s, &state.query, single),
            (Tables::HopChain(t), KindState::HopChain(_)) => t.step(&state.query, single),
            _ => return Err(Error::Environment("state does not belong to this environment".into())),
        };
        state.steps += 1;
        let step = match outcome {
            Outcome::Continue(_) if state.steps >= self.horizon() => EnvStep {
                observation: vec![self.timeout_token()],
                done: true,
                reward: 0.0,
            },
            Outcome::Continue(observation) => EnvStep {
                observation,
                done: false,
                reward: 0.0,
            },
            Outcome::Finish(observation, reward) => EnvStep {
                observation,
                done: true,
                reward,
            },
        };
        state.done = step.done;
        state.reward = step.reward;
        Ok(step)
    }

    fn timeout_token(&self) -> TokenId {
        match &self.tables {
            Tables::KeyDoor(t) => t.timeout,
            Tables::AttrShop(t) => t.timeout,
            Tables::HopChain(t) => t.timeout,
        }
    }

    /// Ground-truth hint a perfectly informed critic would give.
    pub fn oracle_hint(&self, query: &Query) -> Result<Vec<TokenId>> {
        self.validate_query(query)?;
        Ok(match (&self.tables, &query.hidden_truth) {
            (Tables::KeyDoor(t), HiddenTruth::KeyDoor { key_room }) => vec![t.goto[*key_room]],
            (Tables::AttrShop(t), HiddenTruth::AttrShop { instruction, catalog }) => {
                vec![t.select[attrshop::best_item(instruction, catalog)]]
            }
            (Tables::HopChain(t), HiddenTruth::HopChain { start, facts }) => {
                vec![t.answer[facts[facts[*start]]]]
            }
            _ => unreachable!("validated above"),
        })
    }

    /// Draws a fresh query with the given id.
    pub fn generate_query<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> Query {
        match self.config {
            EnvConfig::KeyDoor { rooms, .. } => keydoor::generate(id, rooms, rng),
            EnvConfig::AttrShop { .. } => attrshop::generate(id, rng),
            EnvConfig::HopChain { entities, .. } => hopchain::generate(id, entities, rng),
        }
    }

    /// Replays `actions` from reset and returns the terminal step, if reached.
    pub fn replay(&self, query: &Query, actions: &[TokenId]) -> Result<(EnvState, Vec<EnvStep>)> {
        let (mut state, first) = self.reset(query)?;
        let mut steps = vec![first];
        for &a in actions {
            steps.push(self.step(&mut state, &[a])?);
        }
        Ok((state, steps))
    }
}

pub(crate) enum Outcome {
    Continue(Vec<TokenId>),
    Finish(Vec<TokenId>, f64),
}
