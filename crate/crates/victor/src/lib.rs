//! Hierarchical vision-instruction correlation (VIC) reward model on a 2-D tabletop world.
//!
//! The crate is organized around a small pipeline: a task instruction is decomposed
//! into stages and motions ([`knowledge`]), object states detected from observation
//! crops select the current stage ([`stage`]), a contrastively trained motion
//! progress evaluator scores in-stage progress ([`mpe`]), and the combined
//! potential is turned into a shaped reward ([`reward`]) that drives a PPO
//! learner ([`policy`]) inside the self-contained tabletop environment ([`world`]).

pub mod analysis;
pub mod catalog;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod knowledge;
pub mod lang;
pub mod mpe;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod stage;
pub mod trace;
pub mod world;

/// Code-version identifier stamped into resolved configs and reports.
pub const CODE_VERSION: &str = concat!("victor-", env!("CARGO_PKG_VERSION"));
