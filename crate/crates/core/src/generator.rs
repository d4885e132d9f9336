//! Seed-driven procedural construction of problems and splits.
//!
//! A problem is built in three stages: objects with hidden Blicket flags, a
//! six-trial context (three familiarization trials followed by three main
//! trials over a disjoint group), and four oracle-labeled queries. Query label
//! multisets are accepted with a per-label weight so that a whole split lands
//! on the requested label shares; [`generate_split`] calibrates those weights
//! on deterministic pilot batches before generating the split itself.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    attribute_space, fold_for_index, Attributes, Color, ContextTrial, Dataset, Fold,
    MachineState, Material, ObjectSet, ObjectSpec, Problem, Query, QueryKind, QuerySpec, Shape,
    SplitKind, MAX_OBJECTS, MIN_OBJECTS, QUERY_LEN,
};
use crate::oracle::{self, HypothesisSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("attribute pool holds {0} triples, need at least {MAX_OBJECTS}")]
    PoolTooSmall(usize),
    #[error("main context infeasible for the sampled Blicket flags")]
    Infeasible,
    #[error("gave up after {rejections} rejections (seed {seed}): {reason}")]
    RejectionLimit {
        seed: u64,
        rejections: usize,
        reason: &'static str,
    },
    #[error("problem {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<GenError>,
    },
    #[error("invalid generator config: {0}")]
    Config(String),
}

/// How many of the three main trials light the machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationCount {
    One,
    Two,
    Either,
}

impl ActivationCount {
    fn allows(self, on: usize) -> bool {
        match self {
            ActivationCount::One => on == 1,
            ActivationCount::Two => on == 2,
            ActivationCount::Either => on == 1 || on == 2,
        }
    }
}

/// Target shares indexed by [`Label::index`]: inactivated, undetermined, activated.
pub type LabelShares = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub split: SplitKind,
    pub fold: Fold,
    pub problems_per_split: usize,
    pub target_label_shares: LabelShares,
    pub max_rejections: usize,
    pub activation_count_main: ActivationCount,
    /// Per-label acceptance weights for query multisets. `None` disables
    /// balancing in [`generate_problem`]; [`generate_split`] calibrates them.
    pub label_weights: Option<LabelShares>,
    /// Probability that an object outside the familiarization pair is a Blicket.
    pub blicket_rate: f64,
    /// Probability that a main-set object joins each main trial beyond its first.
    pub overlap_rate: f64,
    /// Pilot problems per calibration round.
    pub pilot_size: usize,
    pub pilot_rounds: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            split: SplitKind::Iid,
            fold: Fold::Train,
            problems_per_split: 10_000,
            target_label_shares: [0.3135, 0.3135, 0.373],
            max_rejections: 1_000,
            activation_count_main: ActivationCount::Either,
            label_weights: None,
            blicket_rate: 0.35,
            overlap_rate: 0.3,
            pilot_size: 2_000,
            pilot_rounds: 6,
        }
    }
}

impl GenConfig {
    pub fn for_split(split: SplitKind) -> Self {
        Self {
            split,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let sum: f64 = self.target_label_shares.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.target_label_shares.iter().any(|&s| s < 0.0) {
            return Err(GenError::Config(format!(
                "label shares must be non-negative and sum to 1, got {sum}"
            )));
        }
        if self.problems_per_split == 0 {
            return Err(GenError::Config("problems_per_split must be at least 1".into()));
        }
        if let Some(w) = self.label_weights {
            if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) || w.iter().all(|&x| x == 0.0) {
                return Err(GenError::Config(format!("label weights out of range: {w:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.blicket_rate) || !(0.0..=1.0).contains(&self.overlap_rate) {
            return Err(GenError::Config("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Activation count actually used for a problem of this split and fold.
    pub fn effective_activation(&self) -> ActivationCount {
        match (self.split, self.fold) {
            (SplitKind::Sys, Fold::Test) => ActivationCount::Two,
            (SplitKind::Sys, _) => ActivationCount::One,
            _ => self.activation_count_main,
        }
    }
}

/// Disjoint attribute pools for the compositionality split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinationPartition {
    pub train_pool: Vec<Attributes>,
    pub test_pool: Vec<Attributes>,
}

impl CombinationPartition {
    pub const TEST_POOL_SIZE: usize = 12;

    /// Shuffles the 48 triples and moves them to the test pool one by one,
    /// skipping any whose removal would leave an attribute value unseen in
    /// the train pool.
    pub fn build<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut order = attribute_space();
        order.shuffle(rng);
        let mut train_pool = order.clone();
        let mut test_pool = Vec::with_capacity(Self::TEST_POOL_SIZE);
        for triple in order {
            if test_pool.len() == Self::TEST_POOL_SIZE {
                break;
            }
            let remaining: Vec<Attributes> =
                train_pool.iter().copied().filter(|&t| t != triple).collect();
            if covers_all_values(&remaining) {
                train_pool = remaining;
                test_pool.push(triple);
            }
        }
        train_pool.sort();
        test_pool.sort();
        Self {
            train_pool,
            test_pool,
        }
    }

    /// Partition used by splits without a compositional shift.
    pub fn trivial() -> Self {
        Self {
            train_pool: attribute_space(),
            test_pool: Vec::new(),
        }
    }

    pub fn pool_for(&self, split: SplitKind, fold: Fold) -> Vec<Attributes> {
        match (split, fold) {
            (SplitKind::Comp, Fold::Test) => self.test_pool.clone(),
            (SplitKind::Comp, _) => self.train_pool.clone(),
            _ => attribute_space(),
        }
    }
}

/// Whether every shape, material and color value occurs in `pool`.
pub fn covers_all_values(pool: &[Attributes]) -> bool {
    Shape::ALL.iter().all(|s| pool.iter().any(|t| t.shape == *s))
        && Material::ALL.iter().all(|m| pool.iter().any(|t| t.material == *m))
        && Color::ALL.iter().all(|c| pool.iter().any(|t| t.color == *c))
}

/// Draws 5 to 8 distinct triples and Blicket flags with at least one Blicket
/// and one non-Blicket.
pub fn sample_objects<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &[Attributes],
    blicket_rate: f64,
) -> Result<Vec<ObjectSpec>, GenError> {
    if pool.len() < MAX_OBJECTS {
        return Err(GenError::PoolTooSmall(pool.len()));
    }
    let count = rng.gen_range(MIN_OBJECTS..=MAX_OBJECTS);
    let triples: Vec<Attributes> = pool.choose_multiple(rng, count).copied().collect();
    // The familiarization pair supplies one of each; the rest are Bernoulli.
    let pair: Vec<usize> = rand::seq::index::sample(rng, count, 2).into_vec();
    let objects = triples
        .into_iter()
        .enumerate()
        .map(|(id, attributes)| ObjectSpec {
            id,
            attributes,
            is_blicket: if id == pair[0] {
                true
            } else if id == pair[1] {
                false
            } else {
                rng.gen_bool(blicket_rate)
            },
        })
        .collect();
    Ok(objects)
}

/// Solo Blicket and solo non-Blicket in random order, then both together.
pub fn gen_familiarization<R: Rng + ?Sized>(
    rng: &mut R,
    blicket: &ObjectSpec,
    non_blicket: &ObjectSpec,
) -> Vec<ContextTrial> {
    debug_assert!(blicket.is_blicket && !non_blicket.is_blicket);
    let on = ContextTrial::new(ObjectSet::singleton(blicket.id), MachineState::On);
    let off = ContextTrial::new(ObjectSet::singleton(non_blicket.id), MachineState::Off);
    let both = ContextTrial::new(
        ObjectSet::singleton(blicket.id).with(non_blicket.id),
        MachineState::On,
    );
    if rng.gen_bool(0.5) {
        vec![on, off, both]
    } else {
        vec![off, on, both]
    }
}

const MAIN_LAYOUT_ATTEMPTS: usize = 32;

/// Splits `remaining` into three overlapping, non-empty, pairwise distinct
/// subgroups covering every object, with the machine state given by the
/// objects' flags. Fails with [`GenError::Infeasible`] when no layout with an
/// admissible number of activations turns up.
pub fn gen_main_context<R: Rng + ?Sized>(
    rng: &mut R,
    remaining: &[ObjectSpec],
    activation: ActivationCount,
    overlap_rate: f64,
) -> Result<Vec<ContextTrial>, GenError> {
    if remaining.len() < 3 || !remaining.iter().any(|o| o.is_blicket) {
        return Err(GenError::Infeasible);
    }
    let blickets: ObjectSet = remaining.iter().filter(|o| o.is_blicket).map(|o| o.id).collect();
    for _ in 0..MAIN_LAYOUT_ATTEMPTS {
        let mut order: Vec<usize> = remaining.iter().map(|o| o.id).collect();
        order.shuffle(rng);
        let mut groups = [ObjectSet::EMPTY; 3];
        for (i, &id) in order.iter().enumerate() {
            let home = if i < 3 { i } else { rng.gen_range(0..3) };
            groups[home].insert(id);
            for (g, group) in groups.iter_mut().enumerate() {
                if g != home && rng.gen_bool(overlap_rate) {
                    group.insert(id);
                }
            }
        }
        if groups[0] == groups[1] || groups[1] == groups[2] || groups[0] == groups[2] {
            continue;
        }
        let trials: Vec<ContextTrial> = groups
            .iter()
            .map(|&g| ContextTrial::new(g, oracle::machine_state(blickets, g)))
            .collect();
        if activation.allows(trials.iter().filter(|t| t.state.is_on()).count()) {
            return Ok(trials);
        }
    }
    Err(GenError::Infeasible)
}

const QUERY_SPEC_ATTEMPTS: usize = 64;

/// Two independent and two interventional queries, labeled and typed by the
/// oracle. Returns `None` if no mutually independent set turns up.
pub fn gen_queries<R: Rng + ?Sized>(
    rng: &mut R,
    context: &[ContextTrial],
    hs: &HypothesisSet,
) -> Option<Vec<Query>> {
    let tested: Vec<usize> = context
        .iter()
        .fold(ObjectSet::EMPTY, |acc, t| acc.union(t.objects))
        .iter()
        .collect();
    let off_trials: Vec<usize> = (0..context.len())
        .filter(|&i| !context[i].state.is_on())
        .collect();
    if tested.len() < 2 || off_trials.is_empty() {
        return None;
    }

    let mut specs: Vec<QuerySpec> = tested
        .choose_multiple(rng, 2)
        .map(|&o| QuerySpec {
            objects: ObjectSet::singleton(o),
            kind: QueryKind::Independent,
            base_trial: None,
        })
        .collect();

    let mut attempts = 0;
    while specs.len() < QUERY_LEN {
        attempts += 1;
        if attempts > QUERY_SPEC_ATTEMPTS {
            return None;
        }
        let base = *off_trials.choose(rng)?;
        let base_objects = context[base].objects;
        let candidates: Vec<usize> = tested
            .iter()
            .copied()
            .filter(|&o| !base_objects.contains(o))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let size = rng.gen_range(1..=3).min(candidates.len());
        let added: ObjectSet = candidates.choose_multiple(rng, size).copied().collect();
        let spec = QuerySpec {
            objects: base_objects.union(added),
            kind: QueryKind::Interventional,
            base_trial: Some(base),
        };
        if crate::model::queries_independent(context, specs.iter().chain(Some(&spec))) {
            specs.push(spec);
        }
    }

    specs
        .into_iter()
        .map(|spec| {
            let label = oracle::label_query(hs, spec.objects).ok()?;
            Some(Query {
                spec,
                label,
                query_type: oracle::classify_query_type(context, hs, &spec, label),
            })
        })
        .collect()
}

/// Query resamples per context before the whole context is redrawn.
const QUERY_RESAMPLES: usize = 16;

fn accept_labels<R: Rng + ?Sized>(rng: &mut R, weights: Option<LabelShares>, queries: &[Query]) -> bool {
    match weights {
        None => true,
        Some(w) => {
            let p: f64 = queries.iter().map(|q| w[q.label.index()]).product();
            rng.gen::<f64>() < p
        }
    }
}

/// Builds one problem. Deterministic in `(seed, config, partition)`.
pub fn generate_problem(
    seed: u64,
    config: &GenConfig,
    partition: &CombinationPartition,
) -> Result<Problem, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = partition.pool_for(config.split, config.fold);
    let activation = config.effective_activation();
    let mut rejections = 0usize;
    let mut reason = "main context infeasible";

    loop {
        if rejections > config.max_rejections {
            return Err(GenError::RejectionLimit {
                seed,
                rejections,
                reason,
            });
        }
        let objects = sample_objects(&mut rng, &pool, config.blicket_rate)?;
        let blicket = pick(&mut rng, &objects, true);
        let non_blicket = pick(&mut rng, &objects, false);
        let mut context = gen_familiarization(&mut rng, &objects[blicket], &objects[non_blicket]);
        let remaining: Vec<ObjectSpec> = objects
            .iter()
            .filter(|o| o.id != blicket && o.id != non_blicket)
            .copied()
            .collect();
        match gen_main_context(&mut rng, &remaining, activation, config.overlap_rate) {
            Ok(main) => context.extend(main),
            Err(GenError::Infeasible) => {
                rejections += 1;
                reason = "main context infeasible";
                continue;
            }
            Err(e) => return Err(e),
        }

        let hs = oracle::consistent_hypotheses(&context, objects.len())
            .expect("problem sizes stay within the enumeration limit");
        debug_assert!(hs.contains(objects.iter().filter(|o| o.is_blicket).map(|o| o.id).collect()));

        for _ in 0..QUERY_RESAMPLES {
            let Some(queries) = gen_queries(&mut rng, &context, &hs) else {
                reason = "no independent query set";
                rejections += 1;
                break;
            };
            if accept_labels(&mut rng, config.label_weights, &queries) {
                return Ok(Problem {
                    problem_id: String::new(),
                    seed,
                    split: config.split,
                    fold: config.fold,
                    objects,
                    context,
                    queries,
                });
            }
            reason = "label balancing";
            rejections += 1;
            if rejections > config.max_rejections {
                break;
            }
        }
    }
}

/// Uniformly chosen object with the requested flag. `sample_objects` guarantees one exists.
fn pick<R: Rng + ?Sized>(rng: &mut R, objects: &[ObjectSpec], is_blicket: bool) -> usize {
    let ids: Vec<usize> = objects
        .iter()
        .filter(|o| o.is_blicket == is_blicket)
        .map(|o| o.id)
        .collect();
    *ids.choose(rng).expect("sample_objects guarantees both flags")
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th problem of a split.
pub fn derive_seed(master_seed: u64, split: SplitKind, index: u64) -> u64 {
    derive_stream(master_seed, split, 0, index)
}

fn derive_stream(master_seed: u64, split: SplitKind, stream: u64, index: u64) -> u64 {
    let mut z = splitmix64(master_seed);
    z = splitmix64(z ^ (split as u64 + 1));
    z = splitmix64(z ^ stream);
    splitmix64(z ^ index)
}

const PARTITION_STREAM: u64 = 1;
const PILOT_STREAM: u64 = 2;

/// The combination partition a split uses for a master seed.
pub fn split_partition(split: SplitKind, master_seed: u64) -> CombinationPartition {
    match split {
        SplitKind::Comp => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_stream(master_seed, split, PARTITION_STREAM, 0));
            CombinationPartition::build(&mut rng)
        }
        _ => CombinationPartition::trivial(),
    }
}

fn problem_config(base: &GenConfig, split: SplitKind, index: usize) -> GenConfig {
    GenConfig {
        split,
        fold: fold_for_index(index),
        ..base.clone()
    }
}

fn generate_batch(
    split: SplitKind,
    config: &GenConfig,
    partition: &CombinationPartition,
    count: usize,
    seed_of: impl Fn(usize) -> u64 + Sync,
) -> Result<Vec<Problem>, GenError> {
    (0..count)
        .into_par_iter()
        .map(|index| {
            let cfg = problem_config(config, split, index);
            generate_problem(seed_of(index), &cfg, partition)
                .map(|mut p| {
                    p.problem_id = format!("{split}-{index:06}");
                    p
                })
                .map_err(|e| GenError::AtIndex {
                    index,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Fraction of query labels per [`Label::index`].
pub fn label_shares<'a>(problems: impl IntoIterator<Item = &'a Problem>) -> LabelShares {
    let mut counts = [0usize; 3];
    for p in problems {
        for q in &p.queries {
            counts[q.label.index()] += 1;
        }
    }
    let total = counts.iter().sum::<usize>().max(1) as f64;
    counts.map(|c| c as f64 / total)
}

/// Fits per-label acceptance weights on pilot batches so that accepted
/// problems hit `config.target_label_shares`.
pub fn calibrate_label_weights(
    split: SplitKind,
    config: &GenConfig,
    master_seed: u64,
) -> Result<LabelShares, GenError> {
    let partition = split_partition(split, master_seed);
    let target = config.target_label_shares;
    let mut weights: LabelShares = [1.0; 3];
    for round in 0..config.pilot_rounds {
        let cfg = GenConfig {
            label_weights: Some(weights),
            ..config.clone()
        };
        let pilot = generate_batch(split, &cfg, &partition, config.pilot_size, |i| {
            derive_stream(master_seed, split, PILOT_STREAM + round as u64, i as u64)
        })?;
        let observed = label_shares(&pilot);
        for (w, (t, o)) in weights.iter_mut().zip(target.iter().zip(observed)) {
            *w *= if o > 0.0 { t / o } else { 2.0 };
        }
        let max = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w = (*w / max).max(1e-3);
        }
    }
    Ok(weights)
}

/// Generates a whole split. Problem `i` is seeded by
/// [`derive_seed`]`(master_seed, kind, i)` and assigned fold [`fold_for_index`]`(i)`.
pub fn generate_split(
    kind: SplitKind,
    config: &GenConfig,
    master_seed: u64,
) -> Result<Dataset, GenError> {
    config.validate()?;
    let mut config = GenConfig {
        split: kind,
        ..config.clone()
    };
    if config.label_weights.is_none() {
        config.label_weights = Some(calibrate_label_weights(kind, &config, master_seed)?);
    }
    let partition = split_partition(kind, master_seed);
    let problems = generate_batch(kind, &config, &partition, config.problems_per_split, |i| {
        derive_seed(master_seed, kind, i as u64)
    })?;
    Ok(Dataset::new(kind, problems))
}

/// Split-level structural checks. Returns names of violated properties.
pub fn validate_split(dataset: &Dataset) -> Vec<&'static str> {
    let mut report = Vec::new();
    if dataset
        .problems
        .iter()
        .any(|p| !crate::model::validate_problem(p).is_empty())
    {
        report.push("problem-invalid");
    }
    if dataset.problems.iter().any(|p| p.split != dataset.split) {
        report.push("split-mismatch");
    }
    match dataset.split {
        SplitKind::Comp => {
            let triples = |test: bool| -> std::collections::BTreeSet<Attributes> {
                dataset
                    .problems
                    .iter()
                    .filter(|p| (p.fold == Fold::Test) == test)
                    .flat_map(|p| p.objects.iter().map(|o| o.attributes))
                    .collect()
            };
            let train = triples(false);
            let test = triples(true);
            if !train.is_disjoint(&test) {
                report.push("comp-overlap");
            }
            if !covers_all_values(&train.into_iter().collect::<Vec<_>>()) {
                report.push("comp-coverage");
            }
        }
        SplitKind::Sys => {
            let bad = dataset.problems.iter().any(|p| {
                let want = if p.fold == Fold::Test { 4 } else { 3 };
                p.on_count() != want
            });
            if bad {
                report.push("sys-activations");
            }
        }
        SplitKind::Iid => {}
    }
    report
}

/// Radius of an object's footprint in the unit-square scene layout.
pub const SCENE_OBJECT_RADIUS: f64 = 0.06;
const SCENE_STREAM: u64 = 0x5ce9_e000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Optional layout sidecar for renderers. Positions carry no meaning for any solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub problem_id: String,
    pub radius: f64,
    pub placements: Vec<Placement>,
}

/// Uniform, pairwise non-overlapping positions for every object of `problem`,
/// seeded by the problem seed.
pub fn scene_descriptor(problem: &Problem) -> SceneDescriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(problem.seed ^ SCENE_STREAM));
    let r = SCENE_OBJECT_RADIUS;
    let mut placements: Vec<Placement> = Vec::with_capacity(problem.objects.len());
    for o in &problem.objects {
        // Eight discs of this radius fill a small fraction of the square, so this terminates quickly.
        loop {
            let x = rng.gen_range(r..=1.0 - r);
            let y = rng.gen_range(r..=1.0 - r);
            if placements
                .iter()
                .all(|p| (p.x - x).hypot(p.y - y) >= 2.0 * r)
            {
                placements.push(Placement { id: o.id, x, y });
                break;
            }
        }
    }
    SceneDescriptor {
        problem_id: problem.problem_id.clone(),
        radius: r,
        placements,
    }
}
