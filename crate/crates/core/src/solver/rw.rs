//! Covariation baseline.
//!
//! An object's score is how often the machine was on when the object was on
//! it. A query is predicted activated when its best-scoring object reaches the
//! threshold. There is no third state: this solver never answers undetermined.

use serde::{Deserialize, Serialize};

use crate::model::{ContextTrial, Label, ObjectSet, ProblemView};

use super::Solver;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RwMode {
    /// Fraction of an object's trials with the machine on.
    CoOccurrence,
    /// Trial-by-trial Rescorla-Wagner updates, clamped to [0, 1].
    Iterative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RwConfig {
    pub threshold: f64,
    pub mode: RwMode,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for RwConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            mode: RwMode::CoOccurrence,
            learning_rate: 0.25,
            epochs: 10,
        }
    }
}

/// Per-object Blicketness scores in [0, 1]. Unobserved objects score 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    scores: [f64; ObjectSet::CAPACITY],
    observed: ObjectSet,
}

impl ScoreTable {
    pub fn score(&self, object: usize) -> f64 {
        self.scores.get(object).copied().unwrap_or(0.0)
    }

    pub fn observed(&self) -> ObjectSet {
        self.observed
    }

    /// Highest score among `config`, 0 for an empty set.
    pub fn max_over(&self, config: ObjectSet) -> f64 {
        config.iter().map(|o| self.score(o)).fold(0.0, f64::max)
    }
}

pub fn fit_scores(context: &[ContextTrial]) -> ScoreTable {
    let mut on = [0usize; ObjectSet::CAPACITY];
    let mut seen = [0usize; ObjectSet::CAPACITY];
    let mut observed = ObjectSet::EMPTY;
    for t in context {
        for o in t.objects.iter() {
            seen[o] += 1;
            on[o] += usize::from(t.state.is_on());
        }
        observed = observed.union(t.objects);
    }
    let mut scores = [0.0; ObjectSet::CAPACITY];
    for o in observed.iter() {
        scores[o] = on[o] as f64 / seen[o] as f64;
    }
    ScoreTable { scores, observed }
}

/// Associative strengths after `epochs` passes of the Rescorla-Wagner rule
/// `V_o += rate * (lambda - sum of V over present objects)`.
pub fn fit_iterative(context: &[ContextTrial], learning_rate: f64, epochs: usize) -> ScoreTable {
    let mut v = [0.0f64; ObjectSet::CAPACITY];
    let mut observed = ObjectSet::EMPTY;
    for _ in 0..epochs {
        for t in context {
            observed = observed.union(t.objects);
            let lambda = if t.state.is_on() { 1.0 } else { 0.0 };
            let total: f64 = t.objects.iter().map(|o| v[o]).sum();
            let delta = learning_rate * (lambda - total);
            for o in t.objects.iter() {
                v[o] += delta;
            }
        }
    }
    for x in &mut v {
        *x = x.clamp(0.0, 1.0);
    }
    ScoreTable {
        scores: v,
        observed,
    }
}

/// Activated if the best score in `config` reaches `threshold` (ties go high).
pub fn predict_rw(scores: &ScoreTable, config: ObjectSet, threshold: f64) -> Label {
    if scores.max_over(config) >= threshold {
        Label::Activated
    } else {
        Label::Inactivated
    }
}

#[derive(Clone, Debug, Default)]
pub struct RwSolver {
    pub config: RwConfig,
}

impl RwSolver {
    pub fn new(config: RwConfig) -> Self {
        Self { config }
    }

    pub fn scores(&self, context: &[ContextTrial]) -> ScoreTable {
        match self.config.mode {
            RwMode::CoOccurrence => fit_scores(context),
            RwMode::Iterative => fit_iterative(context, self.config.learning_rate, self.config.epochs),
        }
    }
}

impl Solver for RwSolver {
    fn name(&self) -> &'static str {
        "rw"
    }

    fn predict(&self, view: &ProblemView) -> Vec<Label> {
        let scores = self.scores(&view.context);
        view.queries
            .iter()
            .map(|q| predict_rw(&scores, q.objects, self.config.threshold))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MachineState::{self, Off, On};

    fn ctx(trials: &[(&[usize], MachineState)]) -> Vec<ContextTrial> {
        trials
            .iter()
            .map(|(ids, s)| ContextTrial::new(ids.iter().copied().collect(), *s))
            .collect()
    }

    #[test]
    fn familiarization_scores() {
        let s = fit_scores(&ctx(&[(&[0], On), (&[1], Off), (&[0, 1], On)]));
        assert_eq!(s.score(0), 1.0);
        assert_eq!(s.score(1), 0.5);
        assert_eq!(s.score(5), 0.0);
        assert_eq!(predict_rw(&s, ObjectSet::singleton(0), 0.5), Label::Activated);
        // Ties go high: the screened-off object is predicted to activate.
        assert_eq!(predict_rw(&s, ObjectSet::singleton(1), 0.5), Label::Activated);
        assert_eq!(predict_rw(&s, ObjectSet::singleton(5), 0.5), Label::Inactivated);
    }

    #[test]
    fn pure_trials_score_extremes() {
        let s = fit_scores(&ctx(&[(&[2, 3], Off), (&[3], Off), (&[4], On), (&[4, 5], On)]));
        assert_eq!(s.score(2), 0.0);
        assert_eq!(s.score(3), 0.0);
        assert_eq!(s.score(4), 1.0);
        assert_eq!(s.score(5), 1.0);
        assert_eq!(predict_rw(&s, [2, 3].into_iter().collect(), 0.5), Label::Inactivated);
    }

    #[test]
    fn iterative_variant_clamps_and_learns_blicket() {
        let c = ctx(&[(&[0], On), (&[1], Off), (&[0, 1], On)]);
        let s = fit_iterative(&c, 0.25, 10);
        assert!(s.score(0) > 0.8);
        assert!((0.0..=1.0).contains(&s.score(1)));
        assert!(s.score(1) < s.score(0));
    }

    #[test]
    fn never_predicts_undetermined() {
        let view = ProblemView {
            problem_id: "x".into(),
            n_objects: 3,
            context: ctx(&[(&[0], On), (&[1], Off), (&[0, 1], On), (&[0, 2], On)]),
            queries: vec![],
        };
        let scores = RwSolver::default().scores(&view.context);
        for bits in 1u16..8 {
            assert_ne!(predict_rw(&scores, ObjectSet::from_bits(bits), 0.5), Label::Undetermined);
        }
    }
}
