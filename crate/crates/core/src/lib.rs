//! Value-guided iterative reweighting on synthetic token-level MDPs.
//!
//! A small, exactly solvable setting for studying the iterative
//! reweight-then-optimize loop: a frozen base policy is steered at decode time
//! by a growing stack of fitted value functions, and every approximate
//! component can be checked against exact dynamic programming on the full
//! generation tree.

pub mod analysis;
pub mod error;
pub mod exec;
pub mod iro;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod search;
pub mod tree;
pub mod value_fn;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{MdpSpec, Prefix, Reward, RewardSpec, ScoredTrajectory, TokenId, Trajectory};
pub use oracle::{ExactModel, NodePolicy};
pub use policy::{BasePolicy, ExplicitPolicy, GuidanceStack, Policy, ReweightedPolicy};
pub use rng::RngStream;
pub use value_fn::{FitDataset, ValueFn, ValueReprChoice};
