//! Projected limited-memory BFGS for box-constrained minimization.
//!
//! Each iteration fixes the variables sitting on a bound whose gradient points
//! outward, takes an L-BFGS step in the remaining free variables, and
//! backtracks along the projected path `P(x + t d)` until an Armijo condition
//! holds.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; n],
            upper: vec![upper; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(l, u);
        }
    }

    /// Gradient with components that point out of the box at an active bound zeroed.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&xi, &gi), (&l, &u))| {
                if (xi <= l && gi > 0.0) || (xi >= u && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsbOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pgtol: f64,
    /// Stop when the relative objective decrease of a step falls below this.
    pub ftol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 1_000,
            pgtol: 1e-6,
            ftol: 1e-12,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ProjectedGradient,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    /// Whether the run ended on a stationarity or progress criterion.
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::ProjectedGradient | Termination::RelativeDecrease
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

/// Minimizes `f` over `bounds`. `f` writes the gradient into its second
/// argument and returns the objective value.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &LbfgsbOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(bounds.len(), n, "bounds and start point disagree in length");
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(opts.memory);

    let done = |x: Vec<f64>, f: f64, iterations, evaluations, termination| Minimum {
        x,
        f,
        iterations,
        evaluations,
        termination,
    };

    if !fx.is_finite() {
        return done(x, fx, 0, evaluations, Termination::NonFinite);
    }

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for iter in 0..opts.max_iter {
        let pg = bounds.projected_gradient(&x, &g);
        if inf_norm(&pg) <= opts.pgtol {
            return done(x, fx, iter, evaluations, Termination::ProjectedGradient);
        }
        let free: Vec<bool> = pg.iter().map(|&v| v != 0.0).collect();

        let mut d = two_loop(&pg, &history, &free);
        if dot(&d, &pg) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        // Without curvature information, start with a unit-length step.
        let mut step = if history.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            bounds.project(&mut x_new);
            let f_trial = f(&x_new, &mut g_new);
            evaluations += 1;
            let moved: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if f_trial.is_finite() && f_trial <= fx + 1e-4 * moved {
                accepted = true;
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y));
                }
                let decrease = fx - f_trial;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                let scale = fx.abs().max(f_trial.abs()).max(1.0);
                fx = f_trial;
                if decrease <= opts.ftol * scale {
                    return done(x, fx, iter + 1, evaluations, Termination::RelativeDecrease);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // A stale curvature model is the usual culprit; retry once with steepest descent.
            if !history.is_empty() {
                history.clear();
                continue;
            }
            return done(x, fx, iter, evaluations, Termination::LineSearchFailed);
        }
    }
    done(x, fx, opts.max_iter, evaluations, Termination::MaxIterations)
}

/// L-BFGS two-loop recursion restricted to the free variables.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>, free: &[bool]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let masked_dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(free)
            .filter(|(_, &f)| f)
            .map(|((x, y), _)| x * y)
            .sum()
    };
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let sy = masked_dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = masked_dot(s, &q) / sy;
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    if let Some((s, y)) = history.back() {
        let yy = masked_dot(y, y);
        let sy = masked_dot(s, y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y), a) in history.iter().zip(alphas.into_iter().rev()) {
        let sy = masked_dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = masked_dot(y, &q) / sy;
        for i in 0..q.len() {
            if free[i] {
                q[i] += (a - b) * s[i];
            }
        }
    }
    q.iter()
        .zip(free)
        .map(|(&v, &f)| if f { -v } else { 0.0 })
        .collect()
}
