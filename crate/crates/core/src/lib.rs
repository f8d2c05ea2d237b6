//! Decision-based black-box attacks that search for one universal
//! perturbation lowering a victim classifier's batch accuracy.
//!
//! The victim is only reachable through [`victim::QueryOracle`], which
//! returns one-hot decisions (or softmax scores for ablations) and counts
//! every queried row. The attacker estimates a descent direction from two
//! queries per update with a Rademacher probe ([`optim`]) and drives a
//! batch loss ([`losses`]) down over mini-batches ([`attack`]).

pub mod error;
pub(crate) mod codec;
pub mod data;
pub mod victim;
pub mod losses;
pub mod optim;
pub mod perturbation;
pub mod attack;
pub mod eval;

pub use error::{BadgeError, Result};
