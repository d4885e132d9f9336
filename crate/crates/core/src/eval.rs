//! Batch solving, metrics, baselines, reports and threshold calibration.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse_json, CodecError};
use crate::model::{Label, Problem, ProblemView, QueryType, QUERY_LEN};
use crate::solver::opt::{
    infer_query, label_from_prob, problem_seed, FitDiagnostics, OptConfig, OptSolver,
};
use crate::solver::pc::{PcConfig, PcSolver};
use crate::solver::rw::{RwConfig, RwSolver};
use crate::solver::Solver;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub problem_id: String,
    pub labels: Vec<Label>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction for problems: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("predictions for unknown problems: {}", .0.join(", "))]
    Extra(Vec<String>),
    #[error("duplicate predictions for problems: {}", .0.join(", "))]
    Duplicate(Vec<String>),
    #[error("problem {problem_id}: expected {QUERY_LEN} labels, found {found}")]
    LabelCount { problem_id: String, found: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub fn write_predictions<'a, W: Write>(
    mut out: W,
    predictions: impl IntoIterator<Item = &'a Prediction>,
) -> Result<(), CodecError> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(CodecError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = parse_json(&line).map_err(|e| CodecError::Line {
            line: i + 1,
            source: Box::new(e),
        })?;
        if p.labels.len() != QUERY_LEN {
            return Err(EvalError::LabelCount {
                problem_id: p.problem_id,
                found: p.labels.len(),
            });
        }
        out.push(p);
    }
    Ok(out)
}

/// Runs `solver` on the redacted view of every problem, in parallel.
pub fn solve_all(solver: &dyn Solver, problems: &[Problem]) -> Vec<Prediction> {
    problems
        .par_iter()
        .map(|p| {
            let view = p.view();
            Prediction {
                labels: solver.predict(&view),
                problem_id: view.problem_id,
            }
        })
        .collect()
}

/// Like [`solve_all`] for the optimization solver, also returning each fit's diagnostics.
pub fn solve_opt_with_diagnostics(
    config: &OptConfig,
    problems: &[Problem],
) -> (Vec<Prediction>, Vec<FitDiagnostics>) {
    let solver = OptSolver::new(config.clone());
    problems
        .par_iter()
        .map(|p| {
            let (labels, d) = solver.predict_with_diagnostics(&p.view());
            (
                Prediction {
                    problem_id: p.problem_id.clone(),
                    labels,
                },
                d,
            )
        })
        .unzip()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    AlwaysOn,
    UniformRandom,
}

pub struct BaselineSolver {
    pub kind: Baseline,
    pub seed: u64,
}

impl Solver for BaselineSolver {
    fn name(&self) -> &'static str {
        match self.kind {
            Baseline::AlwaysOn => "always_on",
            Baseline::UniformRandom => "random",
        }
    }

    fn predict(&self, view: &ProblemView) -> Vec<Label> {
        match self.kind {
            Baseline::AlwaysOn => vec![Label::Activated; view.queries.len()],
            Baseline::UniformRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(problem_seed(&view.problem_id, self.seed));
                (0..view.queries.len())
                    .map(|_| Label::ALL[rng.gen_range(0..Label::ALL.len())])
                    .collect()
            }
        }
    }
}

pub fn baseline_predict(kind: Baseline, problems: &[Problem], seed: u64) -> Vec<Prediction> {
    solve_all(&BaselineSolver { kind, seed }, problems)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_problems: usize,
    pub n_queries: usize,
    pub query_accuracy: f64,
    pub problem_accuracy: f64,
    /// Keyed by the ground-truth query type; types absent from the fold are omitted.
    pub per_type: BTreeMap<QueryType, TypeAccuracy>,
    /// `confusion[truth][predicted]`, indexed inactivated, undetermined, activated.
    pub confusion: [[usize; 3]; 3],
}

impl Metrics {
    pub fn type_accuracy(&self, t: QueryType) -> Option<f64> {
        self.per_type.get(&t).map(|a| a.accuracy)
    }
}

#[derive(Clone, Debug, Default)]
struct Tally {
    problems: usize,
    solved: usize,
    queries: usize,
    correct: usize,
    per_type: [[usize; 2]; 4],
    confusion: [[usize; 3]; 3],
}

impl Tally {
    fn add(mut self, problem: &Problem, labels: &[Label]) -> Self {
        let mut all = true;
        for (q, &l) in problem.queries.iter().zip(labels) {
            let ok = q.label == l;
            all &= ok;
            self.queries += 1;
            self.correct += usize::from(ok);
            let t = QueryType::ALL.iter().position(|&x| x == q.query_type).expect("known type");
            self.per_type[t][0] += usize::from(ok);
            self.per_type[t][1] += 1;
            self.confusion[q.label.index()][l.index()] += 1;
        }
        self.problems += 1;
        self.solved += usize::from(all);
        self
    }

    fn merge(mut self, other: Self) -> Self {
        self.problems += other.problems;
        self.solved += other.solved;
        self.queries += other.queries;
        self.correct += other.correct;
        for t in 0..4 {
            self.per_type[t][0] += other.per_type[t][0];
            self.per_type[t][1] += other.per_type[t][1];
        }
        for r in 0..3 {
            for c in 0..3 {
                self.confusion[r][c] += other.confusion[r][c];
            }
        }
        self
    }

    fn metrics(self) -> Metrics {
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_type = QueryType::ALL
            .iter()
            .zip(self.per_type)
            .filter(|(_, [_, total])| *total > 0)
            .map(|(&t, [correct, total])| {
                (
                    t,
                    TypeAccuracy {
                        correct,
                        total,
                        accuracy: frac(correct, total),
                    },
                )
            })
            .collect();
        Metrics {
            n_problems: self.problems,
            n_queries: self.queries,
            query_accuracy: frac(self.correct, self.queries),
            problem_accuracy: frac(self.solved, self.problems),
            per_type,
            confusion: self.confusion,
        }
    }
}

/// Scores `predictions` against `problems`; each problem needs exactly one prediction.
pub fn evaluate(predictions: &[Prediction], problems: &[Problem]) -> Result<Metrics, EvalError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(predictions.len());
    let mut duplicates = Vec::new();
    for p in predictions {
        if p.labels.len() != QUERY_LEN {
            return Err(EvalError::LabelCount {
                problem_id: p.problem_id.clone(),
                found: p.labels.len(),
            });
        }
        if by_id.insert(&p.problem_id, p).is_some() {
            duplicates.push(p.problem_id.clone());
        }
    }
    if !duplicates.is_empty() {
        return Err(EvalError::Duplicate(duplicates));
    }
    let known: std::collections::HashSet<&str> = problems.iter().map(|p| p.problem_id.as_str()).collect();
    let missing: Vec<String> = problems
        .iter()
        .filter(|p| !by_id.contains_key(p.problem_id.as_str()))
        .map(|p| p.problem_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::Missing(missing));
    }
    let extra: Vec<String> = predictions
        .iter()
        .filter(|p| !known.contains(p.problem_id.as_str()))
        .map(|p| p.problem_id.clone())
        .collect();
    if !extra.is_empty() {
        return Err(EvalError::Extra(extra));
    }
    let tally = problems
        .par_iter()
        .fold(Tally::default, |t, p| t.add(p, &by_id[p.problem_id.as_str()].labels))
        .reduce(Tally::default, Tally::merge);
    Ok(tally.metrics())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Rw,
    Pc,
    Opt,
    AlwaysOn,
    Random,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Rw,
        SolverKind::Pc,
        SolverKind::Opt,
        SolverKind::AlwaysOn,
        SolverKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Rw => "rw",
            SolverKind::Pc => "pc",
            SolverKind::Opt => "opt",
            SolverKind::AlwaysOn => "always_on",
            SolverKind::Random => "random",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown solver `{s}`"))
    }
}

/// Hyperparameters for every solver, as read from a JSON config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rw: RwConfig,
    pub pc: PcConfig,
    pub opt: OptConfig,
    pub random_seed: u64,
}

impl SolverConfig {
    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        parse_json(text)
    }

    pub fn build(&self, kind: SolverKind) -> Box<dyn Solver> {
        match kind {
            SolverKind::Rw => Box::new(RwSolver::new(self.rw.clone())),
            SolverKind::Pc => Box::new(PcSolver::new(self.pc.clone())),
            SolverKind::Opt => Box::new(OptSolver::new(self.opt.clone())),
            SolverKind::AlwaysOn => Box::new(BaselineSolver {
                kind: Baseline::AlwaysOn,
                seed: self.random_seed,
            }),
            SolverKind::Random => Box::new(BaselineSolver {
                kind: Baseline::UniformRandom,
                seed: self.random_seed,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub solver: String,
    pub split: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        parse_json(text)
    }

    fn axes(&self) -> (Vec<&str>, Vec<&str>) {
        let mut solvers: Vec<&str> = Vec::new();
        let mut splits: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !solvers.contains(&e.solver.as_str()) {
                solvers.push(&e.solver);
            }
            if !splits.contains(&e.split.as_str()) {
                splits.push(&e.split);
            }
        }
        (solvers, splits)
    }

    fn find(&self, solver: &str, split: &str) -> Option<&Metrics> {
        self.entries
            .iter()
            .find(|e| e.solver == solver && e.split == split)
            .map(|e| &e.metrics)
    }

    /// Accuracy table: one Qry. and one Pro. row per solver, one column per split.
    pub fn render_table(&self) -> String {
        let (solvers, splits) = self.axes();
        let mut rows: Vec<Vec<String>> = vec![std::iter::once(String::new())
            .chain(std::iter::once(String::new()))
            .chain(splits.iter().map(|s| s.to_string()))
            .collect()];
        for solver in &solvers {
            for (name, pick) in [("Qry.", true), ("Pro.", false)] {
                let mut row = vec![solver.to_string(), name.to_string()];
                for split in &splits {
                    row.push(match self.find(solver, split) {
                        Some(m) => percent(if pick { m.query_accuracy } else { m.problem_accuracy }),
                        None => "-".into(),
                    });
                }
                rows.push(row);
            }
        }
        align(&rows)
    }

    /// Per-type accuracy: one row per query type, one column per solver and split.
    pub fn render_type_table(&self) -> String {
        let columns: Vec<&ReportEntry> = self.entries.iter().collect();
        let mut rows = vec![std::iter::once(String::new())
            .chain(columns.iter().map(|e| format!("{}/{}", e.solver, e.split)))
            .collect::<Vec<_>>()];
        for &t in QueryType::ALL {
            let mut row = vec![t.abbrev().to_string()];
            row.extend(
                columns
                    .iter()
                    .map(|e| e.metrics.type_accuracy(t).map_or_else(|| "-".into(), percent)),
            );
            rows.push(row);
        }
        align(&rows)
    }

    pub fn render_text(&self) -> String {
        format!("{}\n{}", self.render_table(), self.render_type_table())
    }
}

fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c < 2 && cell.parse::<f64>().is_err() {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Best setting found by [`calibrate`] and its validation accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub solver: SolverKind,
    pub config: SolverConfig,
    pub query_accuracy: f64,
    pub evaluated: usize,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

fn accuracy_of(problems: &[Problem], predict: impl Fn(usize, usize) -> Label) -> f64 {
    let mut correct = 0;
    let mut total = 0;
    for (i, p) in problems.iter().enumerate() {
        for (j, q) in p.queries.iter().enumerate() {
            correct += usize::from(predict(i, j) == q.label);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Grid search of the solver's decision thresholds on `problems` (normally the
/// val fold), maximizing query accuracy. Other hyperparameters are kept.
pub fn calibrate(kind: SolverKind, base: &SolverConfig, problems: &[Problem]) -> Calibration {
    let mut config = base.clone();
    let query_accuracy = match kind {
        SolverKind::Rw => {
            let solver = RwSolver::new(base.rw.clone());
            let scores: Vec<Vec<f64>> = problems
                .par_iter()
                .map(|p| {
                    let table = solver.scores(&p.context);
                    p.queries.iter().map(|q| table.max_over(q.spec.objects)).collect()
                })
                .collect();
            let mut best = (f64::NEG_INFINITY, base.rw.threshold);
            for theta in grid(0.05, 0.95, 0.05) {
                let acc = accuracy_of(problems, |i, j| {
                    if scores[i][j] >= theta {
                        Label::Activated
                    } else {
                        Label::Inactivated
                    }
                });
                if acc > best.0 {
                    best = (acc, theta);
                }
            }
            config.rw.threshold = best.1;
            best.0
        }
        SolverKind::Pc => {
            let solver = PcSolver::new(base.pc.clone());
            let probs: Vec<Vec<Option<f64>>> = problems
                .par_iter()
                .map(|p| {
                    let cpt = solver.fit(&p.context);
                    p.queries.iter().map(|q| cpt.probability(q.spec.objects)).collect()
                })
                .collect();
            let mut best = (f64::NEG_INFINITY, base.pc.delta);
            for delta in grid(0.0, 0.45, 0.05) {
                let acc = accuracy_of(problems, |i, j| match probs[i][j] {
                    None => Label::Undetermined,
                    Some(p) if p >= 0.5 + delta => Label::Activated,
                    Some(p) if p <= 0.5 - delta => Label::Inactivated,
                    Some(_) => Label::Undetermined,
                });
                if acc > best.0 {
                    best = (acc, delta);
                }
            }
            config.pc.delta = best.1;
            best.0
        }
        SolverKind::Opt => {
            let solver = OptSolver::new(base.opt.clone());
            let probs: Vec<Vec<f64>> = problems
                .par_iter()
                .map(|p| {
                    let view = p.view();
                    let (data, fit) = solver.fit(&view);
                    view.queries.iter().map(|q| infer_query(&fit.sem, &data, q.objects).p).collect()
                })
                .collect();
            let mut best = (f64::NEG_INFINITY, base.opt.tau_low, base.opt.tau_high);
            for lo in grid(0.05, 0.5, 0.05) {
                for hi in grid(0.5, 0.95, 0.05) {
                    if lo > hi {
                        continue;
                    }
                    let acc = accuracy_of(problems, |i, j| label_from_prob(probs[i][j], lo, hi));
                    if acc > best.0 {
                        best = (acc, lo, hi);
                    }
                }
            }
            config.opt.tau_low = best.1;
            config.opt.tau_high = best.2;
            best.0
        }
        SolverKind::AlwaysOn | SolverKind::Random => {
            let preds = solve_all(config.build(kind).as_ref(), problems);
            accuracy_of(problems, |i, j| preds[i].labels[j])
        }
    };
    Calibration {
        solver: kind,
        config,
        query_accuracy,
        evaluated: problems.len(),
    }
}
