//! Joint solver/critic policy optimization on small token-level POMDPs.
//!
//! A single linear-softmax policy plays two roles. As the solver it acts in
//! an environment; after a failure it switches to the critic role, writes a
//! short critique, and the solver retries with that critique in context. The
//! critic is rewarded by how much its critique improved the retry, and the
//! solver is trained on critique-guided retries as if they were
//! critique-free, with a capped importance weight correcting the mismatch.

pub mod advantage;
pub mod envs;
pub mod error;
pub mod harness;
pub mod objective;
pub mod oracle;
pub mod policy;
pub mod rollout;
pub mod seed;

pub use error::{Error, Result};
