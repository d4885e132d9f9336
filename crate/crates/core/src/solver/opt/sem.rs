//! Generalized structural equation model: one small MLP per variable.
//!
//! Node `j` predicts its own column from every other column through a single
//! sigmoid hidden layer and a sigmoid output. The input from column `j` itself
//! is structurally absent. First-layer weights are stored as a non-negative
//! pair `(pos, neg)` with effective weight `pos - neg`, so the L1 penalty is a
//! smooth linear term under simple bound constraints.

use nalgebra::DMatrix;
use rand::Rng;

use crate::model::{ContextTrial, ObjectSet};

use super::acyclicity::{acyclicity_of_squares, NumericError};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the loss.
pub const CLAMP: f64 = 1e-7;

/// Binary presence matrix over the context objects, machine state last.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Object id of each non-machine column, ascending.
    objects: Vec<usize>,
}

impl DataMatrix {
    pub fn from_context(context: &[ContextTrial]) -> Self {
        let present = context
            .iter()
            .fold(ObjectSet::EMPTY, |acc, t| acc.union(t.objects));
        let objects: Vec<usize> = present.iter().collect();
        let cols = objects.len() + 1;
        let mut values = Vec::with_capacity(context.len() * cols);
        for t in context {
            values.extend(objects.iter().map(|&o| f64::from(u8::from(t.objects.contains(o)))));
            values.push(f64::from(u8::from(t.state.is_on())));
        }
        Self {
            rows: context.len(),
            cols,
            values,
            objects,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of variables, machine included.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn machine(&self) -> usize {
        self.cols - 1
    }

    pub fn objects(&self) -> &[usize] {
        &self.objects
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Presence vector for a query configuration with the machine entry set
    /// to `machine`. Objects outside the context have no column.
    pub fn query_vector(&self, config: ObjectSet, machine: f64) -> Vec<f64> {
        debug_assert!(
            config.iter().all(|o| self.objects.contains(&o)),
            "query references an object never seen in context"
        );
        let mut x: Vec<f64> = self
            .objects
            .iter()
            .map(|&o| f64::from(u8::from(config.contains(o))))
            .collect();
        x.push(machine);
        x
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross entropy of a clamped prediction and its derivative with
/// respect to the unclamped prediction (zero where clamping is active).
fn bce(target: f64, p: f64) -> (f64, f64) {
    let q = p.clamp(CLAMP, 1.0 - CLAMP);
    let loss = -(target * q.ln() + (1.0 - target) * (1.0 - q).ln());
    let d = if p == q {
        (1.0 - target) / (1.0 - q) - target / q
    } else {
        0.0
    };
    (loss, d)
}

/// Flat parameter layout shared by the model and the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub nodes: usize,
    pub hidden: usize,
}

impl Layout {
    fn first_layer_len(&self) -> usize {
        self.nodes * self.hidden * self.nodes
    }

    pub fn len(&self) -> usize {
        2 * self.first_layer_len() + 2 * self.nodes * self.hidden + self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    /// Index of the positive part of the weight from input `k` to hidden unit `h` of node `j`.
    pub fn pos(&self, j: usize, h: usize, k: usize) -> usize {
        (j * self.hidden + h) * self.nodes + k
    }

    pub fn neg(&self, j: usize, h: usize, k: usize) -> usize {
        self.first_layer_len() + self.pos(j, h, k)
    }

    pub fn bias(&self, j: usize, h: usize) -> usize {
        2 * self.first_layer_len() + j * self.hidden + h
    }

    pub fn out(&self, j: usize, h: usize) -> usize {
        2 * self.first_layer_len() + self.nodes * self.hidden + j * self.hidden + h
    }

    pub fn out_bias(&self, j: usize) -> usize {
        2 * self.first_layer_len() + 2 * self.nodes * self.hidden + j
    }

    /// Whether parameter `i` belongs to the sign-split first layer.
    pub fn is_first_layer(&self, i: usize) -> bool {
        i < 2 * self.first_layer_len()
    }

    /// Whether parameter `i` is a first-layer weight on a node's own input.
    pub fn is_self_input(&self, i: usize) -> bool {
        if !self.is_first_layer(i) {
            return false;
        }
        let i = i % self.first_layer_len();
        i % self.nodes == i / (self.hidden * self.nodes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedSem {
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl GeneralizedSem {
    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn init<R: Rng + ?Sized>(nodes: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let layout = Layout { nodes, hidden };
        let mut params = vec![0.0; layout.len()];
        for j in 0..nodes {
            for h in 0..hidden {
                for k in 0..nodes {
                    let w = rng.gen_range(-scale..=scale);
                    if k != j {
                        params[layout.pos(j, h, k)] = w.max(0.0);
                        params[layout.neg(j, h, k)] = (-w).max(0.0);
                    }
                }
                params[layout.out(j, h)] = rng.gen_range(-scale..=scale);
            }
        }
        Self { layout, params }
    }

    pub fn nodes(&self) -> usize {
        self.layout.nodes
    }

    pub fn weight(&self, j: usize, h: usize, k: usize) -> f64 {
        self.params[self.layout.pos(j, h, k)] - self.params[self.layout.neg(j, h, k)]
    }

    /// Output of node `j` on input vector `x` (entry `j` is ignored).
    pub fn output(&self, j: usize, x: &[f64]) -> f64 {
        forward_node(&self.layout, &self.params, j, x, &mut vec![0.0; self.layout.hidden])
    }

    /// `A[k][j] = Σ_h w_{j,h,k}²`, the squared input-sensitivity norms.
    pub fn squared_adjacency(&self) -> DMatrix<f64> {
        squared_adjacency(&self.layout, &self.params)
    }

    /// `W[k][j]`: L2 norm of node `j`'s first-layer weights from input `k`.
    pub fn adjacency(&self) -> DMatrix<f64> {
        self.squared_adjacency().map(f64::sqrt)
    }

    /// Mean over nodes of the mean-over-rows binary cross entropy.
    pub fn loss(&self, data: &DataMatrix) -> f64 {
        loss_and_grad(&self.layout, &self.params, data, None)
    }

    /// Objective of the machine-state inference problem at row vector `x`
    /// (machine entry included) and its derivative in the machine entry.
    pub fn row_objective(&self, x: &[f64]) -> (f64, f64) {
        row_objective(&self.layout, &self.params, x)
    }
}

fn forward_node(layout: &Layout, params: &[f64], j: usize, x: &[f64], hidden: &mut [f64]) -> f64 {
    let mut logit = params[layout.out_bias(j)];
    for (h, act) in hidden.iter_mut().enumerate() {
        let mut z = params[layout.bias(j, h)];
        let base = layout.pos(j, h, 0);
        let neg_base = layout.neg(j, h, 0);
        for (k, &xk) in x.iter().enumerate() {
            if k != j && xk != 0.0 {
                z += (params[base + k] - params[neg_base + k]) * xk;
            }
        }
        *act = sigmoid(z);
        logit += params[layout.out(j, h)] * *act;
    }
    sigmoid(logit)
}

pub fn squared_adjacency(layout: &Layout, params: &[f64]) -> DMatrix<f64> {
    let n = layout.nodes;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for h in 0..layout.hidden {
            for k in 0..n {
                if k != j {
                    let w = params[layout.pos(j, h, k)] - params[layout.neg(j, h, k)];
                    a[(k, j)] += w * w;
                }
            }
        }
    }
    a
}

/// Reconstruction loss; accumulates its gradient into `grad` when given.
pub fn loss_and_grad(
    layout: &Layout,
    params: &[f64],
    data: &DataMatrix,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = layout.nodes;
    let scale = 1.0 / (n as f64 * data.rows() as f64);
    let mut hidden = vec![0.0; layout.hidden];
    let mut total = 0.0;
    for r in 0..data.rows() {
        let x = data.row(r);
        for j in 0..n {
            let o = forward_node(layout, params, j, x, &mut hidden);
            let (l, dl_do) = bce(x[j], o);
            total += l;
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            let delta = scale * dl_do * o * (1.0 - o);
            if delta == 0.0 {
                continue;
            }
            g[layout.out_bias(j)] += delta;
            for (h, &a) in hidden.iter().enumerate() {
                g[layout.out(j, h)] += delta * a;
                let dz = delta * params[layout.out(j, h)] * a * (1.0 - a);
                g[layout.bias(j, h)] += dz;
                for (k, &xk) in x.iter().enumerate() {
                    if k != j && xk != 0.0 {
                        g[layout.pos(j, h, k)] += dz * xk;
                        g[layout.neg(j, h, k)] -= dz * xk;
                    }
                }
            }
        }
    }
    total * scale
}

fn row_objective(layout: &Layout, params: &[f64], x: &[f64]) -> (f64, f64) {
    let n = layout.nodes;
    let m = n - 1;
    let mut hidden = vec![0.0; layout.hidden];
    let mut total = 0.0;
    let mut slope = 0.0;
    for j in 0..n {
        let o = forward_node(layout, params, j, x, &mut hidden);
        if j == m {
            // The machine entry is the target here; the loss is linear in it.
            let q = o.clamp(CLAMP, 1.0 - CLAMP);
            total += -(x[m] * q.ln() + (1.0 - x[m]) * (1.0 - q).ln());
            slope += (1.0 - q).ln() - q.ln();
        } else {
            let (l, dl_do) = bce(x[j], o);
            total += l;
            let mut dz_dx = 0.0;
            for (h, &a) in hidden.iter().enumerate() {
                let w = params[layout.pos(j, h, m)] - params[layout.neg(j, h, m)];
                dz_dx += params[layout.out(j, h)] * a * (1.0 - a) * w;
            }
            slope += dl_do * o * (1.0 - o) * dz_dx;
        }
    }
    (total / n as f64, slope / n as f64)
}

/// Terms of the augmented Lagrangian objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalty {
    pub l1: f64,
    /// Ridge weight on first-layer and output weights, as `(l2/2)·Σ w²`.
    pub l2: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// `loss + l1·Σ(pos + neg) + (l2/2)·Σ w² + alpha·h + (rho/2)·h²` with its gradient.
pub fn augmented_objective(
    layout: &Layout,
    params: &[f64],
    data: &DataMatrix,
    penalty: Penalty,
    grad: &mut [f64],
) -> Result<(f64, f64), NumericError> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let loss = loss_and_grad(layout, params, data, Some(grad));
    let a = squared_adjacency(layout, params);
    let (h, grad_a) = acyclicity_of_squares(&a)?;
    let coeff = penalty.alpha + penalty.rho * h;
    let (mut l1, mut l2) = (0.0, 0.0);
    let n = layout.nodes;
    for j in 0..n {
        for hu in 0..layout.hidden {
            for k in 0..n {
                if k == j {
                    continue;
                }
                let (ip, ineg) = (layout.pos(j, hu, k), layout.neg(j, hu, k));
                let w = params[ip] - params[ineg];
                let dh = coeff * grad_a[(k, j)] * 2.0 * w + penalty.l2 * w;
                grad[ip] += dh + penalty.l1;
                grad[ineg] += -dh + penalty.l1;
                l1 += params[ip] + params[ineg];
                l2 += w * w;
            }
            let iv = layout.out(j, hu);
            grad[iv] += penalty.l2 * params[iv];
            l2 += params[iv] * params[iv];
        }
    }
    let value = loss
        + penalty.l1 * l1
        + 0.5 * penalty.l2 * l2
        + penalty.alpha * h
        + 0.5 * penalty.rho * h * h;
    Ok((value, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MachineState::{Off, On};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn familiarization() -> Vec<ContextTrial> {
        vec![
            ContextTrial::new(ObjectSet::singleton(0), On),
            ContextTrial::new(ObjectSet::singleton(1), Off),
            ContextTrial::new([0, 1].into_iter().collect(), On),
        ]
    }

    #[test]
    fn data_matrix_layout() {
        let x = DataMatrix::from_context(&familiarization());
        assert_eq!((x.rows(), x.cols(), x.machine()), (3, 3, 2));
        assert_eq!(x.row(0), &[1.0, 0.0, 1.0]);
        assert_eq!(x.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(x.row(2), &[1.0, 1.0, 1.0]);
        assert_eq!(x.query_vector(ObjectSet::singleton(1), 0.25), vec![0.0, 1.0, 0.25]);
    }

    #[test]
    fn data_matrix_skips_unused_ids() {
        let ctx = vec![
            ContextTrial::new([1, 4].into_iter().collect(), On),
            ContextTrial::new(ObjectSet::singleton(4), Off),
        ];
        let x = DataMatrix::from_context(&ctx);
        assert_eq!(x.objects(), &[1, 4]);
        assert_eq!(x.row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_predictor_costs_ln2() {
        let x = DataMatrix::from_context(&familiarization());
        let sem = GeneralizedSem {
            layout: Layout { nodes: 3, hidden: 4 },
            params: vec![0.0; Layout { nodes: 3, hidden: 4 }.len()],
        };
        assert!((sem.loss(&x) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_predictor_hits_clamp_floor() {
        // Constant column of ones predicted by a huge output bias.
        let ctx = vec![
            ContextTrial::new(ObjectSet::singleton(0), On),
            ContextTrial::new(ObjectSet::singleton(0), On),
        ];
        let x = DataMatrix::from_context(&ctx);
        let layout = Layout { nodes: 2, hidden: 2 };
        let mut params = vec![0.0; layout.len()];
        params[layout.out_bias(0)] = 50.0;
        params[layout.out_bias(1)] = 50.0;
        let sem = GeneralizedSem { layout, params };
        let floor = -(1.0 - CLAMP).ln();
        assert!((sem.loss(&x) - floor).abs() < 1e-12);
    }

    #[test]
    fn self_inputs_have_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sem = GeneralizedSem::init(4, 3, 0.1, &mut rng);
        let w = sem.adjacency();
        for j in 0..4 {
            assert_eq!(w[(j, j)], 0.0);
        }
        for i in 0..sem.layout.len() {
            if sem.layout.is_self_input(i) {
                assert_eq!(sem.params[i], 0.0);
            }
        }
        assert!(w.iter().all(|&v| v >= 0.0));
    }
}
