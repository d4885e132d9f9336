//! JSONL problem files.
//!
//! One problem per line:
//!
//! ```text
//! {"problem_id":"iid-000000","seed":1,"split":"iid","fold":"train",
//!  "objects":[{"id":0,"shape":"cube","material":"metal","color":"gray"},...],
//!  "context":[{"objects":[0],"light":"on"},...],
//!  "queries":[{"objects":[2],"kind":"independent","label":"activated","type":"direct"},
//!             {"objects":[1,3],"kind":"interventional","base_trial":1,...},...],
//!  "solution":{"blickets":[0,3]}}
//! ```
//!
//! Blicket flags appear only under `solution`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Attributes, Color, ContextTrial, Dataset, Fold, Label, MachineState, Material, ObjectSet,
    ObjectSpec, Problem, Query, QueryKind, QuerySpec, QueryType, Shape, SplitKind,
};

#[derive(Debug, Error)]
pub enum CodecError {
    /// `field` is the JSON path of the offending value, e.g. `objects[2].color`.
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<CodecError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("encode failed: {0}")]
    Encode(#[from] serde_json::Error),
}

impl CodecError {
    /// JSON path of the offending field, if this is a parse error.
    pub fn field(&self) -> Option<&str> {
        match self {
            CodecError::Parse { field, .. } => Some(field),
            CodecError::Line { source, .. } => source.field(),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    id: usize,
    shape: Shape,
    material: Material,
    color: Color,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialRecord {
    objects: ObjectSet,
    light: MachineState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    objects: ObjectSet,
    kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_trial: Option<usize>,
    label: Label,
    #[serde(rename = "type")]
    query_type: QueryType,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionRecord {
    blickets: ObjectSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemRecord {
    problem_id: String,
    seed: u64,
    split: SplitKind,
    fold: Fold,
    objects: Vec<ObjectRecord>,
    context: Vec<TrialRecord>,
    queries: Vec<QueryRecord>,
    solution: SolutionRecord,
}

impl From<&Problem> for ProblemRecord {
    fn from(p: &Problem) -> Self {
        ProblemRecord {
            problem_id: p.problem_id.clone(),
            seed: p.seed,
            split: p.split,
            fold: p.fold,
            objects: p
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    shape: o.attributes.shape,
                    material: o.attributes.material,
                    color: o.attributes.color,
                })
                .collect(),
            context: p
                .context
                .iter()
                .map(|t| TrialRecord {
                    objects: t.objects,
                    light: t.state,
                })
                .collect(),
            queries: p
                .queries
                .iter()
                .map(|q| QueryRecord {
                    objects: q.spec.objects,
                    kind: q.spec.kind,
                    base_trial: q.spec.base_trial,
                    label: q.label,
                    query_type: q.query_type,
                })
                .collect(),
            solution: SolutionRecord {
                blickets: p.blickets(),
            },
        }
    }
}

impl TryFrom<ProblemRecord> for Problem {
    type Error = CodecError;

    fn try_from(r: ProblemRecord) -> Result<Self, Self::Error> {
        let ids: ObjectSet = r.objects.iter().map(|o| o.id).collect();
        if !r.solution.blickets.is_subset(ids) {
            return Err(CodecError::Parse {
                field: "solution.blickets".into(),
                message: "references an object not listed under `objects`".into(),
            });
        }
        Ok(Problem {
            problem_id: r.problem_id,
            seed: r.seed,
            split: r.split,
            fold: r.fold,
            objects: r
                .objects
                .into_iter()
                .map(|o| ObjectSpec {
                    id: o.id,
                    attributes: Attributes::new(o.shape, o.material, o.color),
                    is_blicket: r.solution.blickets.contains(o.id),
                })
                .collect(),
            context: r
                .context
                .into_iter()
                .map(|t| ContextTrial::new(t.objects, t.light))
                .collect(),
            queries: r
                .queries
                .into_iter()
                .map(|q| Query {
                    spec: QuerySpec {
                        objects: q.objects,
                        kind: q.kind,
                        base_trial: q.base_trial,
                    },
                    label: q.label,
                    query_type: q.query_type,
                })
                .collect(),
        })
    }
}

/// Parses a JSON value, reporting the path of the first offending field.
pub fn parse_json<'de, T: Deserialize<'de>>(line: &'de str) -> Result<T, CodecError> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CodecError::Parse {
            field: if path == "." { String::from("<root>") } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn encode_problem(p: &Problem) -> String {
    serde_json::to_string(&ProblemRecord::from(p)).expect("problem records always serialize")
}

pub fn decode_problem(line: &str) -> Result<Problem, CodecError> {
    parse_json::<ProblemRecord>(line)?.try_into()
}

/// Writes one problem per line, LF-terminated.
pub fn write_problems<'a, W: Write>(
    mut out: W,
    problems: impl IntoIterator<Item = &'a Problem>,
) -> Result<(), CodecError> {
    for p in problems {
        out.write_all(encode_problem(p).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL problem file; blank lines are skipped.
pub fn read_problems<R: BufRead>(input: R) -> Result<Vec<Problem>, CodecError> {
    let mut problems = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        problems.push(decode_problem(&line).map_err(|e| CodecError::Line {
            line: i + 1,
            source: Box::new(e),
        })?);
    }
    Ok(problems)
}

/// Reads a problem file into a dataset. The split is taken from the first problem.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset, CodecError> {
    let problems = read_problems(input)?;
    let split = problems.first().map(|p| p.split).unwrap_or(SplitKind::Iid);
    Ok(Dataset::new(split, problems))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"problem_id":"t-0","seed":7,"split":"iid","fold":"test","objects":[{"id":0,"shape":"cube","material":"metal","color":"gray"},{"id":1,"shape":"sphere","material":"rubber","color":"cyan"}],"context":[{"objects":[0],"light":"on"},{"objects":[1],"light":"off"},{"objects":[0,1],"light":"on"}],"queries":[{"objects":[0],"kind":"independent","label":"activated","type":"direct"},{"objects":[0,1],"kind":"interventional","base_trial":1,"label":"activated","type":"direct"}],"solution":{"blickets":[0]}}"#;

    #[test]
    fn decode_then_encode_is_identity_on_canonical_text() {
        let p = decode_problem(LINE).unwrap();
        assert!(p.objects[0].is_blicket && !p.objects[1].is_blicket);
        assert_eq!(p.queries[1].spec.base_trial, Some(1));
        assert_eq!(encode_problem(&p), LINE);
    }

    #[test]
    fn unknown_color_names_the_field() {
        let bad = LINE.replace("\"cyan\"", "\"pink\"");
        let err = decode_problem(&bad).unwrap_err();
        assert_eq!(err.field(), Some("objects[1].color"));
        assert!(err.to_string().contains("color"));
    }

    #[test]
    fn bad_light_and_dangling_solution_are_rejected() {
        let bad = LINE.replace("\"light\":\"off\"", "\"light\":\"dim\"");
        assert_eq!(decode_problem(&bad).unwrap_err().field(), Some("context[1].light"));
        let bad = LINE.replace("\"blickets\":[0]", "\"blickets\":[5]");
        assert_eq!(decode_problem(&bad).unwrap_err().field(), Some("solution.blickets"));
        let bad = LINE.replace("\"seed\":7", "\"seed\":-7");
        assert_eq!(decode_problem(&bad).unwrap_err().field(), Some("seed"));
        assert!(decode_problem("{").is_err());
    }

    #[test]
    fn read_reports_line_numbers() {
        let text = format!("{LINE}\n\n{}\n", LINE.replace("\"iid\"", "\"ood\""));
        let err = read_problems(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"));
        assert_eq!(err.field(), Some("split"));
    }

    use crate::generator::{generate_problem, CombinationPartition, GenConfig};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn generated_problems_round_trip(seed in any::<u64>()) {
            let config = GenConfig { label_weights: Some([1.0, 1.0, 1.0]), ..GenConfig::default() };
            let mut p = generate_problem(seed, &config, &CombinationPartition::trivial()).unwrap();
            p.problem_id = format!("p-{seed}");
            let line = encode_problem(&p);
            let back = decode_problem(&line).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(encode_problem(&back), line);
        }
    }
}
