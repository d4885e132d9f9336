//! Causal-induction solvers. Each one sees only a [`ProblemView`].

use crate::model::{Label, ProblemView};

pub mod opt;
pub mod pc;
pub mod rw;

pub trait Solver: Sync {
    fn name(&self) -> &'static str;

    /// One label per query, in query order.
    fn predict(&self, view: &ProblemView) -> Vec<Label>;
}
