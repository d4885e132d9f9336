//! Exact epistemic ground truth for the disjunctive Blicket machine.
//!
//! Every subset of the objects is a candidate Blicket assignment; the ones that
//! reproduce all observed machine states form the [`HypothesisSet`]. Labels are
//! unanimous verdicts over that set, with `undetermined` when hypotheses
//! disagree.

use thiserror::Error;

use crate::model::{ContextTrial, Label, MachineState, ObjectSet, QueryKind, QuerySpec, QueryType};

/// Enumeration is exhaustive over `2^n` subsets.
pub const MAX_ENUMERATED_OBJECTS: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("no Blicket assignment reproduces the observed context")]
    Inconsistent,
    #[error("{0} objects exceed the enumeration limit of {MAX_ENUMERATED_OBJECTS}")]
    TooManyObjects(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Blicketness {
    Blicket,
    NonBlicket,
    Undetermined,
}

impl Blicketness {
    pub fn as_label(self) -> Label {
        match self {
            Blicketness::Blicket => Label::Activated,
            Blicketness::NonBlicket => Label::Inactivated,
            Blicketness::Undetermined => Label::Undetermined,
        }
    }
}

/// All Blicket subsets consistent with a context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypothesisSet {
    pub hypotheses: Vec<ObjectSet>,
    pub universe_size: usize,
}

impl HypothesisSet {
    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn contains(&self, h: ObjectSet) -> bool {
        self.hypotheses.contains(&h)
    }

    /// Objects that are Blickets in every hypothesis.
    pub fn certain_blickets(&self) -> ObjectSet {
        self.hypotheses
            .iter()
            .fold(ObjectSet::full(self.universe_size), |acc, &h| acc.intersection(h))
    }

    /// Objects that are Blickets in at least one hypothesis.
    pub fn possible_blickets(&self) -> ObjectSet {
        self.hypotheses
            .iter()
            .fold(ObjectSet::EMPTY, |acc, &h| acc.union(h))
    }
}

pub fn machine_state(hypothesis: ObjectSet, config: ObjectSet) -> MachineState {
    MachineState::from_bool(hypothesis.intersects(config))
}

pub fn consistent_hypotheses(
    context: &[ContextTrial],
    n_objects: usize,
) -> Result<HypothesisSet, OracleError> {
    if n_objects > MAX_ENUMERATED_OBJECTS {
        return Err(OracleError::TooManyObjects(n_objects));
    }
    let hypotheses = (0u16..1 << n_objects)
        .map(ObjectSet::from_bits)
        .filter(|&h| {
            context
                .iter()
                .all(|t| machine_state(h, t.objects) == t.state)
        })
        .collect();
    Ok(HypothesisSet {
        hypotheses,
        universe_size: n_objects,
    })
}

pub fn blicketness(hs: &HypothesisSet, object: usize) -> Result<Blicketness, OracleError> {
    if hs.is_empty() {
        return Err(OracleError::Inconsistent);
    }
    let present = hs.hypotheses.iter().filter(|h| h.contains(object)).count();
    Ok(if present == hs.len() {
        Blicketness::Blicket
    } else if present == 0 {
        Blicketness::NonBlicket
    } else {
        Blicketness::Undetermined
    })
}

pub fn label_query(hs: &HypothesisSet, config: ObjectSet) -> Result<Label, OracleError> {
    if hs.is_empty() {
        return Err(OracleError::Inconsistent);
    }
    let on = hs
        .hypotheses
        .iter()
        .filter(|&&h| machine_state(h, config).is_on())
        .count();
    Ok(if on == hs.len() {
        Label::Activated
    } else if on == 0 {
        Label::Inactivated
    } else {
        Label::Undetermined
    })
}

/// How a single object's Blicketness is established by the context.
#[derive(Clone, Copy, Debug)]
struct Evidence {
    status: Blicketness,
    alone: bool,
    in_on: bool,
    in_off: bool,
}

impl Evidence {
    fn of(context: &[ContextTrial], hs: &HypothesisSet, object: usize) -> Self {
        let mut ev = Evidence {
            status: blicketness(hs, object).unwrap_or(Blicketness::Undetermined),
            alone: false,
            in_on: false,
            in_off: false,
        };
        for t in context.iter().filter(|t| t.objects.contains(object)) {
            ev.alone |= t.objects.len() == 1;
            match t.state {
                MachineState::On => ev.in_on = true,
                MachineState::Off => ev.in_off = true,
            }
        }
        ev
    }

    /// Type of the independent query on this object.
    fn query_type(&self) -> QueryType {
        match self.status {
            Blicketness::Blicket if self.alone && !self.in_off => QueryType::Direct,
            Blicketness::NonBlicket if self.alone && !self.in_on => QueryType::Direct,
            Blicketness::NonBlicket if self.in_on => QueryType::ScreeningOff,
            Blicketness::Undetermined if !self.alone && !self.in_off => QueryType::BackwardBlocking,
            _ => QueryType::Indirect,
        }
    }
}

/// Assigns one of the four reasoning types to a labeled query.
///
/// Independent queries are typed by how the context settles the object.
/// Interventional queries are typed by the evidence that decides the label:
/// a directly tested Blicket for an activated label, a backward-blocked member
/// for an undetermined one, a screened-off member for an inactivated one, and
/// indirect evidence otherwise.
pub fn classify_query_type(
    context: &[ContextTrial],
    hs: &HypothesisSet,
    query: &QuerySpec,
    label: Label,
) -> QueryType {
    let evidence: Vec<Evidence> = query
        .objects
        .iter()
        .map(|o| Evidence::of(context, hs, o))
        .collect();
    if query.kind == QueryKind::Independent && evidence.len() == 1 {
        return evidence[0].query_type();
    }
    let any = |status: Blicketness, ty: QueryType| {
        evidence
            .iter()
            .any(|e| e.status == status && e.query_type() == ty)
    };
    match label {
        Label::Activated if any(Blicketness::Blicket, QueryType::Direct) => QueryType::Direct,
        Label::Undetermined if any(Blicketness::Undetermined, QueryType::BackwardBlocking) => {
            QueryType::BackwardBlocking
        }
        Label::Inactivated if any(Blicketness::NonBlicket, QueryType::ScreeningOff) => {
            QueryType::ScreeningOff
        }
        Label::Inactivated if evidence.iter().all(|e| e.query_type() == QueryType::Direct) => {
            QueryType::Direct
        }
        _ => QueryType::Indirect,
    }
}
