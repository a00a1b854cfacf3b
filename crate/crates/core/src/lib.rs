//! Adaptive frontier exploration on graphs.
//!
//! A node-labelled graph is explored one node at a time; only nodes adjacent
//! to already-tested nodes (plus one priority root per untouched connected
//! component) may be acted on. Labels are drawn from a pairwise Markov random
//! field and every revealed label earns a discounted reward.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: graphs, components, BFS rooted forests, random generators.
//! - [`pwl`]: exact algebra of monotone piecewise-linear functions.
//! - [`mrf`]: the shared-parameter pairwise MRF with exact inference.
//! - [`gittins`]: leaf-to-root computation of Gittins indices.
//! - [`policy`]: the exploration state machine and the Random, Greedy,
//!   Gittins and Optimal policies.
//! - [`eval`]: exact and Monte Carlo policy evaluation, experiment runner.
//! - [`fit`]: pseudo-likelihood parameter estimation.
//! - [`formats`]: the JSON / JSON-lines / CSV file formats.
//! - [`exec`]: sequential or rayon-backed execution of independent jobs.

pub mod eval;
pub mod exec;
pub mod fit;
pub mod formats;
pub mod gittins;
pub mod graph;
pub mod mrf;
pub mod policy;
pub mod pwl;

pub use graph::{Graph, NodeId, RootedForest};
pub use mrf::{Evidence, Label, PairwiseModel};
pub use pwl::{PwcFunction, PwlFunction};

/// Errors surfaced by the crate. Each module has its own error type; this
/// enum lets callers that cross module boundaries use a single `Result`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Pwl(#[from] pwl::PwlError),
    #[error(transparent)]
    Mrf(#[from] mrf::MrfError),
    #[error(transparent)]
    Gittins(#[from] gittins::GittinsError),
    #[error(transparent)]
    Policy(#[from] policy::PolicyError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Fit(#[from] fit::FitError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
