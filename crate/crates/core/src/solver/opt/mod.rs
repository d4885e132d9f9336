//! Neuro-symbolic learner: fit a generalized SEM under a smooth acyclicity
//! constraint, then infer each query's machine state by minimizing the
//! reconstruction loss over a relaxed machine value.

pub mod acyclicity;
pub mod lbfgsb;
pub mod sem;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Label, ObjectSet, ProblemView};

use self::lbfgsb::{minimize, Bounds, LbfgsbOptions};
use self::sem::{augmented_objective, DataMatrix, GeneralizedSem, Penalty};

use super::Solver;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub hidden: usize,
    pub init_scale: f64,
    pub l1: f64,
    pub l2: f64,
    pub rho_init: f64,
    pub rho_mult: f64,
    pub rho_max: f64,
    /// Raise `rho` while the new `h` exceeds this fraction of the previous one.
    pub h_shrink: f64,
    pub h_tol: f64,
    pub max_outer: usize,
    pub inner_max_iter: usize,
    /// Probabilities at or below this are inactivated.
    pub tau_low: f64,
    /// Probabilities at or above this are activated.
    pub tau_high: f64,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            init_scale: 1.0,
            l1: 0.001,
            l2: 0.001,
            rho_init: 1.0,
            rho_mult: 10.0,
            rho_max: 1e16,
            h_shrink: 0.25,
            h_tol: 1e-8,
            max_outer: 100,
            inner_max_iter: 500,
            tau_low: 0.35,
            tau_high: 0.65,
            seed: 0,
        }
    }
}

impl OptConfig {
    fn inner_options(&self) -> LbfgsbOptions {
        LbfgsbOptions {
            max_iter: self.inner_max_iter,
            pgtol: 1e-6,
            ftol: 1e-10,
            ..LbfgsbOptions::default()
        }
    }
}

/// Outcome of fitting one problem's context.
#[derive(Clone, Debug)]
pub struct Fit {
    pub sem: GeneralizedSem,
    pub h: f64,
    pub loss: f64,
    pub rho: f64,
    pub alpha: f64,
    /// `h` after each accepted outer iteration.
    pub h_history: Vec<f64>,
    pub inner_solves: usize,
    /// Whether `h` reached the tolerance.
    pub converged: bool,
}

/// Box for the flat parameter vector: sign-split weights are non-negative and
/// self-inputs are pinned to zero.
fn parameter_bounds(sem: &GeneralizedSem) -> Bounds {
    let layout = sem.layout;
    let mut bounds = Bounds::unbounded(layout.len());
    for i in 0..layout.len() {
        if layout.is_self_input(i) {
            bounds.lower[i] = 0.0;
            bounds.upper[i] = 0.0;
        } else if layout.is_first_layer(i) {
            bounds.lower[i] = 0.0;
        }
    }
    bounds
}

/// Stable seed from a problem id, so fits do not depend on processing order.
pub fn problem_seed(problem_id: &str, seed: u64) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in problem_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Augmented Lagrangian fit of the SEM to `data`.
pub fn fit_sem(data: &DataMatrix, config: &OptConfig, seed: u64) -> Fit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sem = GeneralizedSem::init(data.cols(), config.hidden, config.init_scale, &mut rng);
    let layout = sem.layout;
    let bounds = parameter_bounds(&sem);
    let options = config.inner_options();

    let mut alpha = 0.0;
    let mut rho = config.rho_init;
    let mut h = f64::INFINITY;
    let mut h_history = Vec::new();
    let mut inner_solves = 0;

    let solve = |start: &[f64], penalty: Penalty| {
        minimize(
            |x, g| match augmented_objective(&layout, x, data, penalty, g) {
                Ok((v, _)) => v,
                Err(_) => f64::NAN,
            },
            start,
            &bounds,
            &options,
        )
        .x
    };
    let h_of = |params: &[f64]| {
        let a = sem::squared_adjacency(&layout, params);
        acyclicity::acyclicity_of_squares(&a).map_or(f64::INFINITY, |(h, _)| h)
    };

    while inner_solves < config.max_outer {
        let (mut candidate, mut h_new);
        loop {
            candidate = solve(&sem.params, Penalty { l1: config.l1, l2: config.l2, alpha, rho });
            h_new = h_of(&candidate);
            inner_solves += 1;
            if h_new > config.h_shrink * h && rho < config.rho_max && inner_solves < config.max_outer {
                rho *= config.rho_mult;
            } else {
                break;
            }
        }
        sem.params = candidate;
        h = h_new;
        h_history.push(h);
        alpha += rho * h;
        if h <= config.h_tol || rho >= config.rho_max {
            break;
        }
    }

    let loss = sem.loss(data);
    Fit {
        sem,
        h,
        loss,
        rho,
        alpha,
        h_history,
        inner_solves,
        converged: h <= config.h_tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    MultiStart,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inference {
    pub p: f64,
    pub objective: f64,
    pub method: InferenceMethod,
}

pub const GRID_POINTS: usize = 101;

/// Grid search over `p ∈ {0, 0.01, ..., 1}`.
pub fn grid_inference(sem: &GeneralizedSem, data: &DataMatrix, config: ObjectSet) -> Inference {
    let mut x = data.query_vector(config, 0.0);
    let m = data.machine();
    let mut best = Inference {
        p: 0.0,
        objective: f64::INFINITY,
        method: InferenceMethod::Grid,
    };
    for i in 0..GRID_POINTS {
        let p = i as f64 / (GRID_POINTS - 1) as f64;
        x[m] = p;
        let (f, _) = sem.row_objective(&x);
        if f < best.objective {
            best.p = p;
            best.objective = f;
        }
    }
    best
}

/// Most plausible machine value for `config`: projected L-BFGS from
/// `{0, 0.5, 1}`, with the grid as fallback when every start fails.
pub fn infer_query(sem: &GeneralizedSem, data: &DataMatrix, config: ObjectSet) -> Inference {
    let base = data.query_vector(config, 0.0);
    let m = data.machine();
    let bounds = Bounds::uniform(1, 0.0, 1.0);
    let options = LbfgsbOptions {
        pgtol: 1e-9,
        ftol: 1e-14,
        ..LbfgsbOptions::default()
    };
    let mut best: Option<Inference> = None;
    for start in [0.0, 0.5, 1.0] {
        let mut x = base.clone();
        let found = minimize(
            |p, g| {
                x[m] = p[0];
                let (f, d) = sem.row_objective(&x);
                g[0] = d;
                f
            },
            &[start],
            &bounds,
            &options,
        );
        if found.f.is_finite() && best.is_none_or(|b| found.f < b.objective) {
            best = Some(Inference {
                p: found.x[0],
                objective: found.f,
                method: InferenceMethod::MultiStart,
            });
        }
    }
    best.unwrap_or_else(|| grid_inference(sem, data, config))
}

pub fn label_from_prob(p: f64, tau_low: f64, tau_high: f64) -> Label {
    if p > tau_high {
        Label::Activated
    } else if p < tau_low {
        Label::Inactivated
    } else {
        Label::Undetermined
    }
}

/// Per-problem record of a fit, for offline inspection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub problem_id: String,
    pub h: f64,
    pub loss: f64,
    pub converged: bool,
    pub inner_solves: usize,
    pub h_history: Vec<f64>,
    /// Column order of `adjacency`; the machine is the last column.
    pub objects: Vec<usize>,
    pub adjacency: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct OptSolver {
    pub config: OptConfig,
}

impl OptSolver {
    pub fn new(config: OptConfig) -> Self {
        Self { config }
    }

    pub fn fit(&self, view: &ProblemView) -> (DataMatrix, Fit) {
        let data = DataMatrix::from_context(&view.context);
        let fit = fit_sem(&data, &self.config, problem_seed(&view.problem_id, self.config.seed));
        (data, fit)
    }

    pub fn predict_with_diagnostics(&self, view: &ProblemView) -> (Vec<Label>, FitDiagnostics) {
        let (data, fit) = self.fit(view);
        let probabilities: Vec<f64> = view
            .queries
            .iter()
            .map(|q| infer_query(&fit.sem, &data, q.objects).p)
            .collect();
        let labels = probabilities
            .iter()
            .map(|&p| label_from_prob(p, self.config.tau_low, self.config.tau_high))
            .collect();
        let w = fit.sem.adjacency();
        let diagnostics = FitDiagnostics {
            problem_id: view.problem_id.clone(),
            h: fit.h,
            loss: fit.loss,
            converged: fit.converged,
            inner_solves: fit.inner_solves,
            h_history: fit.h_history,
            objects: data.objects().to_vec(),
            adjacency: w.row_iter().map(|r| r.iter().copied().collect()).collect(),
            probabilities,
        };
        (labels, diagnostics)
    }
}

impl Solver for OptSolver {
    fn name(&self) -> &'static str {
        "opt"
    }

    fn predict(&self, view: &ProblemView) -> Vec<Label> {
        self.predict_with_diagnostics(view).0
    }
}
