//! Blicket-detector causal induction workbench.
//!
//! - [`model`]: objects, trials, queries, problems and validation.
//! - [`codec`]: the JSONL problem file format.
//! - [`generator`]: seeded problem and split generation with label balancing.
//! - [`oracle`]: exact hypothesis enumeration, labels and query types.
//! - [`solver`]: covariation, constraint-based and continuous-optimization solvers.
//! - [`eval`]: predictions, metrics, baselines and reports.

pub mod codec;
pub mod eval;
pub mod generator;
pub mod model;
pub mod oracle;
pub mod solver;
