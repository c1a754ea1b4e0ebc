//! Featurized autoregressive softmax policy shared by the solver and critic roles.

pub mod checkpoint;
mod context;
mod params;
mod vocab;

pub use context::{PromptContext, Role, Segment};
pub use params::{featurize, Features, PolicyParams, TokenDistribution};
pub(crate) use params::accumulate_score;
pub use vocab::{TokenId, Vocabulary, EOS, MIN_VOCAB, ROLE_CRITIC, ROLE_SOLVER, SEP};
