//! Objects, trials, queries and problems.
//!
//! A [`Problem`] holds six context trials on a disjunctive Blicket machine and
//! four labeled queries. Hidden Blicket flags live on [`ObjectSpec`] and are only
//! ever serialized into the separate `solution` section of the wire format (see
//! [`crate::codec`]). Solvers consume a [`ProblemView`], which carries neither
//! flags nor labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::oracle;

/// Number of context trials in every problem.
pub const CONTEXT_LEN: usize = 6;
/// Number of familiarization trials at the head of the context.
pub const FAMILIARIZATION_LEN: usize = 3;
/// Number of queries in every problem.
pub const QUERY_LEN: usize = 4;
/// Inclusive bounds on the number of objects in a problem.
pub const MIN_OBJECTS: usize = 5;
pub const MAX_OBJECTS: usize = 8;

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} `{}`", stringify!($name).to_lowercase(), other
                    )),
                }
            }
        }
    };
}

token_enum!(Shape {
    Cube => "cube",
    Sphere => "sphere",
    Cylinder => "cylinder",
});

token_enum!(Material {
    Metal => "metal",
    Rubber => "rubber",
});

token_enum!(Color {
    Gray => "gray",
    Red => "red",
    Blue => "blue",
    Green => "green",
    Brown => "brown",
    Cyan => "cyan",
    Purple => "purple",
    Yellow => "yellow",
});

token_enum!(
    /// State of the Blicket machine, serialized as the `light` of a trial.
    MachineState {
        Off => "off",
        On => "on",
    }
);

token_enum!(QueryKind {
    Independent => "independent",
    Interventional => "interventional",
});

token_enum!(
    /// Answer to a query: the machine's state over every hypothesis consistent
    /// with the context.
    Label {
        Inactivated => "inactivated",
        Undetermined => "undetermined",
        Activated => "activated",
    }
);

token_enum!(QueryType {
    Direct => "direct",
    Indirect => "indirect",
    ScreeningOff => "screening_off",
    BackwardBlocking => "backward_blocking",
});

token_enum!(SplitKind {
    Iid => "iid",
    Comp => "comp",
    Sys => "sys",
});

token_enum!(Fold {
    Train => "train",
    Val => "val",
    Test => "test",
});

impl MachineState {
    pub fn from_bool(on: bool) -> Self {
        if on {
            MachineState::On
        } else {
            MachineState::Off
        }
    }

    pub fn is_on(self) -> bool {
        self == MachineState::On
    }
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl QueryType {
    /// Column header used in per-type tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            QueryType::Direct => "D.R.",
            QueryType::Indirect => "I.D.",
            QueryType::ScreeningOff => "S.O.",
            QueryType::BackwardBlocking => "B.B.",
        }
    }
}

/// Identity of an object: its (shape, material, color) triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attributes {
    pub shape: Shape,
    pub material: Material,
    pub color: Color,
}

impl Attributes {
    pub fn new(shape: Shape, material: Material, color: Color) -> Self {
        Self {
            shape,
            material,
            color,
        }
    }
}

impl fmt::Display for Attributes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.color, self.material, self.shape)
    }
}

/// All 48 attribute triples, shape-major, then material, then color.
pub fn attribute_space() -> Vec<Attributes> {
    let mut out = Vec::with_capacity(Shape::ALL.len() * Material::ALL.len() * Color::ALL.len());
    for &shape in Shape::ALL {
        for &material in Material::ALL {
            for &color in Color::ALL {
                out.push(Attributes::new(shape, material, color));
            }
        }
    }
    out
}

/// A set of object ids in `0..16`, stored as a bitmask.
///
/// Serializes as an ascending array of ids.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ObjectSet(u16);

impl ObjectSet {
    pub const EMPTY: ObjectSet = ObjectSet(0);
    pub const CAPACITY: usize = 16;

    pub fn from_bits(bits: u16) -> Self {
        ObjectSet(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn singleton(id: usize) -> Self {
        assert!(id < Self::CAPACITY, "object id {id} out of range");
        ObjectSet(1 << id)
    }

    /// Every id in `0..n`.
    pub fn full(n: usize) -> Self {
        assert!(n <= Self::CAPACITY);
        if n == Self::CAPACITY {
            ObjectSet(u16::MAX)
        } else {
            ObjectSet((1u16 << n) - 1)
        }
    }

    pub fn contains(self, id: usize) -> bool {
        id < Self::CAPACITY && self.0 & (1 << id) != 0
    }

    pub fn insert(&mut self, id: usize) {
        *self = self.with(id);
    }

    pub fn remove(&mut self, id: usize) {
        if id < Self::CAPACITY {
            self.0 &= !(1 << id);
        }
    }

    pub fn with(self, id: usize) -> Self {
        self.union(Self::singleton(id))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        ObjectSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        ObjectSet(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        ObjectSet(self.0 & !other.0)
    }

    pub fn intersects(self, other: Self) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    /// Ids in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..Self::CAPACITY).filter(move |&i| self.0 & (1 << i) != 0)
    }

    /// Largest id plus one, or 0 for the empty set.
    pub fn span(self) -> usize {
        Self::CAPACITY - self.0.leading_zeros() as usize
    }
}

impl FromIterator<usize> for ObjectSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter()
            .fold(ObjectSet::EMPTY, |acc, id| acc.with(id))
    }
}

impl fmt::Debug for ObjectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for ObjectSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ObjectSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(deserializer)?;
        let mut set = ObjectSet::EMPTY;
        for id in ids {
            if id >= ObjectSet::CAPACITY {
                return Err(serde::de::Error::custom(format!(
                    "object id {id} exceeds {}",
                    ObjectSet::CAPACITY - 1
                )));
            }
            if set.contains(id) {
                return Err(serde::de::Error::custom(format!("duplicate object id {id}")));
            }
            set.insert(id);
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectSpec {
    pub id: usize,
    pub attributes: Attributes,
    /// Hidden ground truth. Never shown to solvers.
    pub is_blicket: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextTrial {
    pub objects: ObjectSet,
    pub state: MachineState,
}

impl ContextTrial {
    pub fn new(objects: ObjectSet, state: MachineState) -> Self {
        Self { objects, state }
    }
}

/// The observable part of a query: what is placed on the machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuerySpec {
    pub objects: ObjectSet,
    pub kind: QueryKind,
    /// Context trial the intervention starts from; interventional queries only.
    pub base_trial: Option<usize>,
}

impl QuerySpec {
    /// Objects added to the base trial. For independent queries, all objects.
    pub fn added(&self, context: &[ContextTrial]) -> ObjectSet {
        match self.base_trial.and_then(|i| context.get(i)) {
            Some(base) => self.objects.difference(base.objects),
            None => self.objects,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub spec: QuerySpec,
    pub label: Label,
    pub query_type: QueryType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub problem_id: String,
    pub seed: u64,
    pub split: SplitKind,
    pub fold: Fold,
    pub objects: Vec<ObjectSpec>,
    pub context: Vec<ContextTrial>,
    pub queries: Vec<Query>,
}

impl Problem {
    pub fn blickets(&self) -> ObjectSet {
        self.objects
            .iter()
            .filter(|o| o.is_blicket)
            .map(|o| o.id)
            .collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.queries.iter().map(|q| q.label).collect()
    }

    /// Number of context trials with the machine on.
    pub fn on_count(&self) -> usize {
        self.context.iter().filter(|t| t.state.is_on()).count()
    }

    /// The solver-facing view: no Blicket flags, no labels, no query types.
    pub fn view(&self) -> ProblemView {
        ProblemView {
            problem_id: self.problem_id.clone(),
            n_objects: self.objects.len(),
            context: self.context.clone(),
            queries: self.queries.iter().map(|q| q.spec).collect(),
        }
    }
}

/// What a solver is allowed to see of a problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProblemView {
    pub problem_id: String,
    pub n_objects: usize,
    pub context: Vec<ContextTrial>,
    pub queries: Vec<QuerySpec>,
}

impl ProblemView {
    /// Objects that appear in at least one context trial.
    pub fn context_objects(&self) -> ObjectSet {
        self.context
            .iter()
            .fold(ObjectSet::EMPTY, |acc, t| acc.union(t.objects))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FoldCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub split: SplitKind,
    pub problems: Vec<Problem>,
    pub fold_counts: FoldCounts,
}

impl Dataset {
    pub fn new(split: SplitKind, problems: Vec<Problem>) -> Self {
        let mut fold_counts = FoldCounts::default();
        for p in &problems {
            match p.fold {
                Fold::Train => fold_counts.train += 1,
                Fold::Val => fold_counts.val += 1,
                Fold::Test => fold_counts.test += 1,
            }
        }
        Self {
            split,
            problems,
            fold_counts,
        }
    }

    pub fn fold(&self, fold: Fold) -> impl Iterator<Item = &Problem> {
        self.problems.iter().filter(move |p| p.fold == fold)
    }
}

/// Fold of the `index`-th problem of a split: indices 0-5 mod 10 train,
/// 6-7 validation, 8-9 test.
pub fn fold_for_index(index: usize) -> Fold {
    match index % 10 {
        0..=5 => Fold::Train,
        6 | 7 => Fold::Val,
        _ => Fold::Test,
    }
}

/// Checks every structural invariant of a problem and returns the names of the
/// violated ones. An empty report means the problem is valid.
pub fn validate_problem(p: &Problem) -> Vec<&'static str> {
    let mut report = Vec::new();
    let n = p.objects.len();

    if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n) {
        report.push("object-count");
    }
    if p.objects.iter().enumerate().any(|(i, o)| o.id != i) {
        report.push("object-ids");
    }
    let mut seen = std::collections::HashSet::new();
    if !p.objects.iter().all(|o| seen.insert(o.attributes)) {
        report.push("attribute-uniqueness");
    }
    if p.context.len() != CONTEXT_LEN {
        report.push("context-count");
    }
    if p.queries.len() != QUERY_LEN {
        report.push("query-count");
    }

    let universe = ObjectSet::full(n.min(ObjectSet::CAPACITY));
    let blickets = p.blickets();
    let referenced = p
        .context
        .iter()
        .map(|t| t.objects)
        .chain(p.queries.iter().map(|q| q.spec.objects));
    let mut unknown = false;
    let mut empty = false;
    for set in referenced {
        unknown |= !set.is_subset(universe);
        empty |= set.is_empty();
    }
    if unknown {
        report.push("unknown-object");
    }
    if empty {
        report.push("empty-set");
    }

    if p
        .context
        .iter()
        .any(|t| oracle::machine_state(blickets, t.objects) != t.state)
    {
        report.push("mechanism-consistency");
    }

    if p.context.len() >= FAMILIARIZATION_LEN && !is_familiarization(&p.context[..FAMILIARIZATION_LEN])
    {
        report.push("familiarization-shape");
    }

    let mut bad_independent = false;
    let mut bad_interventional = false;
    for q in &p.queries {
        match q.spec.kind {
            QueryKind::Independent => {
                bad_independent |= q.spec.objects.len() != 1 || q.spec.base_trial.is_some();
            }
            QueryKind::Interventional => {
                bad_interventional |= match q.spec.base_trial.and_then(|i| p.context.get(i)) {
                    Some(base) => {
                        base.state.is_on()
                            || !base.objects.is_subset(q.spec.objects)
                            || q.spec.objects == base.objects
                    }
                    None => true,
                };
            }
        }
    }
    if bad_independent {
        report.push("independent-query-shape");
    }
    if bad_interventional {
        report.push("interventional-query-shape");
    }
    if !queries_independent(&p.context, p.queries.iter().map(|q| &q.spec)) {
        report.push("query-independence");
    }

    if report.is_empty() {
        let hs = oracle::consistent_hypotheses(&p.context, n);
        match hs.as_ref() {
            Ok(hs) if !hs.is_empty() => {
                if p
                    .queries
                    .iter()
                    .any(|q| oracle::label_query(hs, q.spec.objects).ok() != Some(q.label))
                {
                    report.push("query-label");
                }
                if p
                    .queries
                    .iter()
                    .any(|q| oracle::classify_query_type(&p.context, hs, &q.spec, q.label) != q.query_type)
                {
                    report.push("query-type");
                }
            }
            _ => report.push("context-inconsistent"),
        }
    }
    report
}

/// Solo Blicket, solo non-Blicket (either order), then both together.
fn is_familiarization(trials: &[ContextTrial]) -> bool {
    let [first, second, pair] = trials else {
        return false;
    };
    if first.objects.len() != 1 || second.objects.len() != 1 {
        return false;
    }
    if first.objects == second.objects || pair.objects != first.objects.union(second.objects) {
        return false;
    }
    first.state != second.state && pair.state.is_on()
}

/// No two independent queries share an object and no two interventional
/// queries share a (base trial, added set) pair.
pub fn queries_independent<'a>(
    context: &[ContextTrial],
    specs: impl IntoIterator<Item = &'a QuerySpec>,
) -> bool {
    let mut solo = ObjectSet::EMPTY;
    let mut interventions: Vec<(usize, ObjectSet)> = Vec::new();
    for spec in specs {
        match spec.kind {
            QueryKind::Independent => {
                if solo.intersects(spec.objects) {
                    return false;
                }
                solo = solo.union(spec.objects);
            }
            QueryKind::Interventional => {
                let key = (spec.base_trial.unwrap_or(usize::MAX), spec.added(context));
                if interventions.contains(&key) {
                    return false;
                }
                interventions.push(key);
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_space_is_canonical() {
        let space = attribute_space();
        assert_eq!(space.len(), 48);
        assert_eq!(
            space[0],
            Attributes::new(Shape::Cube, Material::Metal, Color::Gray)
        );
        assert_eq!(
            space[47],
            Attributes::new(Shape::Cylinder, Material::Rubber, Color::Yellow)
        );
        let distinct: std::collections::HashSet<_> = space.iter().collect();
        assert_eq!(distinct.len(), 48);
    }

    #[test]
    fn object_set_basics() {
        let s: ObjectSet = [3, 0, 5].into_iter().collect();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 3, 5]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.span(), 6);
        assert!(s.contains(3) && !s.contains(4));
        assert!(ObjectSet::singleton(3).is_subset(s));
        assert_eq!(s.difference(ObjectSet::singleton(0)).len(), 2);
        assert_eq!(ObjectSet::full(4).bits(), 0b1111);
        assert_eq!(ObjectSet::EMPTY.span(), 0);
    }

    #[test]
    fn fold_assignment_is_six_two_two() {
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            counts[fold_for_index(i) as usize] += 1;
        }
        assert_eq!(counts, [6000, 2000, 2000]);
    }

    #[test]
    fn token_parsing() {
        assert_eq!("cyan".parse::<Color>(), Ok(Color::Cyan));
        assert!("pink".parse::<Color>().unwrap_err().contains("color"));
        assert_eq!(QueryType::ScreeningOff.as_str(), "screening_off");
    }
}
