//! Constraint-based baseline: find the machine's parents with conditional
//! independence tests, estimate their conditional probability table and read
//! each query off it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ContextTrial, Label, ObjectSet, ProblemView};

use super::Solver;

/// Variable index of the machine state; object variables use their ids.
pub const MACHINE: usize = ObjectSet::CAPACITY;

/// Binary observations: object presence per row plus the machine state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySample {
    rows: Vec<(ObjectSet, bool)>,
    objects: ObjectSet,
}

impl BinarySample {
    pub fn from_context(context: &[ContextTrial]) -> Self {
        let rows: Vec<(ObjectSet, bool)> = context.iter().map(|t| (t.objects, t.state.is_on())).collect();
        let objects = rows.iter().fold(ObjectSet::EMPTY, |acc, (o, _)| acc.union(*o));
        Self { rows, objects }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Objects present in at least one row.
    pub fn objects(&self) -> ObjectSet {
        self.objects
    }

    fn value(row: &(ObjectSet, bool), var: usize) -> bool {
        if var == MACHINE {
            row.1
        } else {
            row.0.contains(var)
        }
    }

    /// Conditional mutual information `I(i; j | S)` in nats.
    pub fn cmi(&self, i: usize, j: usize, s: &[usize]) -> f64 {
        // Strata keyed by the conditioning configuration; counts over (x, y).
        let mut strata: BTreeMap<u32, [[usize; 2]; 2]> = BTreeMap::new();
        for row in &self.rows {
            let key = s
                .iter()
                .enumerate()
                .fold(0u32, |k, (b, &v)| k | (u32::from(Self::value(row, v)) << b));
            let c = strata.entry(key).or_default();
            c[usize::from(Self::value(row, i))][usize::from(Self::value(row, j))] += 1;
        }
        let total = self.rows.len() as f64;
        let mut info = 0.0;
        for c in strata.values() {
            let n = (c[0][0] + c[0][1] + c[1][0] + c[1][1]) as f64;
            for x in 0..2 {
                for y in 0..2 {
                    if c[x][y] == 0 {
                        continue;
                    }
                    let pxy = c[x][y] as f64 / n;
                    let px = (c[x][0] + c[x][1]) as f64 / n;
                    let py = (c[0][y] + c[1][y]) as f64 / n;
                    info += (n / total) * pxy * (pxy / (px * py)).ln();
                }
            }
        }
        info.max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Independence {
    Independent,
    Dependent,
}

/// Thresholded conditional mutual information test.
pub fn ci_test(data: &BinarySample, i: usize, j: usize, s: &[usize], epsilon: f64) -> Independence {
    assert!(i != j && !s.contains(&i) && !s.contains(&j), "malformed CI query");
    if data.cmi(i, j, s) > epsilon {
        Independence::Dependent
    } else {
        Independence::Independent
    }
}

/// Objects whose dependence with the machine survives every conditioning set
/// of at most `max_conditioning` other objects.
pub fn learn_parents(data: &BinarySample, epsilon: f64, max_conditioning: usize) -> ObjectSet {
    let objects: Vec<usize> = data.objects().iter().collect();
    let mut parents = ObjectSet::EMPTY;
    for &o in &objects {
        let others: Vec<usize> = objects.iter().copied().filter(|&x| x != o).collect();
        let separated = conditioning_sets(&others, max_conditioning)
            .any(|s| ci_test(data, o, MACHINE, &s, epsilon) == Independence::Independent);
        if !separated {
            parents.insert(o);
        }
    }
    parents
}

/// All subsets of `pool` with at most `max` elements, smallest first.
fn conditioning_sets(pool: &[usize], max: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    let max = max.min(pool.len());
    (0..=max).flat_map(move |size| combinations(pool, size))
}

fn combinations(pool: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], size - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Probability of the machine being on for each observed parent configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpt {
    pub parents: Vec<usize>,
    table: BTreeMap<ObjectSet, f64>,
}

impl Cpt {
    /// `None` when the configuration of the parents was never observed.
    pub fn probability(&self, config: ObjectSet) -> Option<f64> {
        self.table.get(&self.project(config)).copied()
    }

    pub fn project(&self, config: ObjectSet) -> ObjectSet {
        self.parents.iter().copied().filter(|&p| config.contains(p)).collect()
    }

    pub fn observed_configurations(&self) -> impl Iterator<Item = (ObjectSet, f64)> + '_ {
        self.table.iter().map(|(k, v)| (*k, *v))
    }
}

pub fn estimate_cpt(data: &BinarySample, parents: ObjectSet) -> Cpt {
    let parent_list: Vec<usize> = parents.iter().collect();
    let mut counts: BTreeMap<ObjectSet, (usize, usize)> = BTreeMap::new();
    for (objects, on) in &data.rows {
        let c = counts.entry(objects.intersection(parents)).or_default();
        c.0 += usize::from(*on);
        c.1 += 1;
    }
    Cpt {
        parents: parent_list,
        table: counts
            .into_iter()
            .map(|(k, (on, n))| (k, on as f64 / n as f64))
            .collect(),
    }
}

pub fn predict_pc(cpt: &Cpt, config: ObjectSet, delta: f64) -> Label {
    match cpt.probability(config) {
        None => Label::Undetermined,
        Some(p) if p >= 0.5 + delta => Label::Activated,
        Some(p) if p <= 0.5 - delta => Label::Inactivated,
        Some(_) => Label::Undetermined,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcConfig {
    /// Dependence threshold on conditional mutual information, in nats.
    pub epsilon: f64,
    /// Half-width of the undetermined band around 0.5.
    pub delta: f64,
    pub max_conditioning: usize,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            delta: 0.1,
            max_conditioning: 2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PcSolver {
    pub config: PcConfig,
}

impl PcSolver {
    pub fn new(config: PcConfig) -> Self {
        Self { config }
    }

    pub fn fit(&self, context: &[ContextTrial]) -> Cpt {
        let data = BinarySample::from_context(context);
        let parents = learn_parents(&data, self.config.epsilon, self.config.max_conditioning);
        estimate_cpt(&data, parents)
    }
}

impl Solver for PcSolver {
    fn name(&self) -> &'static str {
        "pc"
    }

    fn predict(&self, view: &ProblemView) -> Vec<Label> {
        let cpt = self.fit(&view.context);
        view.queries
            .iter()
            .map(|q| predict_pc(&cpt, q.objects, self.config.delta))
            .collect()
    }
}
