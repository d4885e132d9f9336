//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every criterion reports even
//! when an earlier one fails. Exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use blicket_core::codec::{decode_problem, encode_problem};
use blicket_core::eval::{baseline_predict, evaluate, solve_all, Baseline, Metrics, Prediction};
use blicket_core::generator::{generate_split, validate_split, GenConfig};
use blicket_core::model::{
    ContextTrial, Dataset, Fold, Label, MachineState, ObjectSet, Problem, QueryKind, QuerySpec,
    QueryType, SplitKind,
};
use blicket_core::oracle::{classify_query_type, consistent_hypotheses, label_query};
use blicket_core::solver::opt::acyclicity::acyclicity;
use blicket_core::solver::opt::sem::{
    augmented_objective, loss_and_grad, DataMatrix, GeneralizedSem, Penalty,
};
use blicket_core::solver::opt::{OptConfig, OptSolver};
use blicket_core::solver::pc::{learn_parents, predict_pc, BinarySample, PcConfig, PcSolver};
use blicket_core::solver::rw::RwSolver;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const MASTER_SEED: u64 = 20_240_611;
const SPLIT_SIZE: usize = 10_000;

// Criterion 1
const ALWAYS_ON_QUERY: (f64, f64) = (0.373, 0.020);
const ALWAYS_ON_PROBLEM: (f64, f64) = (0.0187, 0.008);
const RANDOM_QUERY: (f64, f64) = (0.333, 0.015);
const RANDOM_PROBLEM: (f64, f64) = (0.012, 0.005);
const GENERATION_LIMIT: Duration = Duration::from_secs(120);
const BASELINE_EVAL_LIMIT: Duration = Duration::from_secs(10);

// Criterion 2
const RW_PROBLEMS: usize = 2000;
const RW_MIN_INDIRECT: f64 = 0.95;
const RW_MIN_DIRECT: f64 = 0.85;
const RW_MAX_SCREENING_OFF: f64 = 0.15;
const RW_MAX_BACKWARD_BLOCKING: f64 = 0.05;
const RW_LIMIT: Duration = Duration::from_secs(60);

// Criterion 3
const OPT_PROBLEMS: usize = 200;
const OPT_MIN_DIRECT: f64 = 0.85;
const OPT_MIN_SCREENING_OFF: f64 = 0.70;
const OPT_MAX_BACKWARD_BLOCKING: f64 = 0.40;
const OPT_MIN_OVERALL: f64 = 0.60;
const OPT_FIT_LIMIT: Duration = Duration::from_secs(10);
const OPT_TOTAL_LIMIT: Duration = Duration::from_secs(35 * 60);

// Criterion 4
const DAG_TOL: f64 = 1e-10;
const GRAD_H_REL_TOL: f64 = 1e-5;
const GRAD_LOSS_REL_TOL: f64 = 1e-4;
const GRADIENT_CASES: usize = 100;
const MIN_CONVERGED_SHARE: f64 = 0.95;
const CONVERGED_H: f64 = 1e-8;

// Criterion 7
const DUPLICATION: usize = 20;

struct Outcome {
    criterion: usize,
    pass: bool,
    detail: String,
}

fn outcome(criterion: usize, pass: bool, detail: String) -> Outcome {
    Outcome {
        criterion,
        pass,
        detail,
    }
}

fn within(x: f64, (center, tol): (f64, f64)) -> bool {
    (x - center).abs() <= tol
}

fn type_acc(m: &Metrics, t: QueryType) -> f64 {
    m.type_accuracy(t).unwrap_or(f64::NAN)
}

fn set(ids: &[usize]) -> ObjectSet {
    ids.iter().copied().collect()
}

fn ctx(trials: &[(&[usize], bool)]) -> Vec<ContextTrial> {
    trials
        .iter()
        .map(|(ids, on)| ContextTrial::new(set(ids), MachineState::from_bool(*on)))
        .collect()
}

fn test_fold(problems: &[Problem], limit: usize) -> Vec<Problem> {
    problems
        .iter()
        .filter(|p| p.fold == Fold::Test)
        .take(limit)
        .cloned()
        .collect()
}

fn criterion_1(iid: &Dataset, generation: Duration) -> Outcome {
    let start = Instant::now();
    let on = evaluate(&baseline_predict(Baseline::AlwaysOn, &iid.problems, 0), &iid.problems);
    let rnd = evaluate(
        &baseline_predict(Baseline::UniformRandom, &iid.problems, MASTER_SEED),
        &iid.problems,
    );
    let elapsed = start.elapsed();
    let (on, rnd) = match (on, rnd) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return outcome(1, false, format!("evaluation failed: {a:?} {b:?}")),
    };
    let pass = within(on.query_accuracy, ALWAYS_ON_QUERY)
        && within(on.problem_accuracy, ALWAYS_ON_PROBLEM)
        && within(rnd.query_accuracy, RANDOM_QUERY)
        && within(rnd.problem_accuracy, RANDOM_PROBLEM)
        && generation <= GENERATION_LIMIT
        && elapsed <= BASELINE_EVAL_LIMIT;
    outcome(
        1,
        pass,
        format!(
            "always_on {:.2}%/{:.2}%, random {:.2}%/{:.2}% (query/problem); generation {:.1}s, evaluation {:.2}s",
            100.0 * on.query_accuracy,
            100.0 * on.problem_accuracy,
            100.0 * rnd.query_accuracy,
            100.0 * rnd.problem_accuracy,
            generation.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(iid: &Dataset) -> Outcome {
    let problems = test_fold(&iid.problems, RW_PROBLEMS);
    let start = Instant::now();
    let predictions = solve_all(&RwSolver::default(), &problems);
    let elapsed = start.elapsed();
    let m = match evaluate(&predictions, &problems) {
        Ok(m) => m,
        Err(e) => return outcome(2, false, format!("evaluation failed: {e}")),
    };
    let (dr, id, so, bb) = (
        type_acc(&m, QueryType::Direct),
        type_acc(&m, QueryType::Indirect),
        type_acc(&m, QueryType::ScreeningOff),
        type_acc(&m, QueryType::BackwardBlocking),
    );
    let pass = problems.len() == RW_PROBLEMS
        && id >= RW_MIN_INDIRECT
        && dr >= RW_MIN_DIRECT
        && so <= RW_MAX_SCREENING_OFF
        && bb <= RW_MAX_BACKWARD_BLOCKING
        && elapsed <= RW_LIMIT;
    outcome(
        2,
        pass,
        format!(
            "rw on {} problems: D.R. {:.1}% I.D. {:.1}% S.O. {:.1}% B.B. {:.1}%; {:.2}s",
            problems.len(),
            100.0 * dr,
            100.0 * id,
            100.0 * so,
            100.0 * bb,
            elapsed.as_secs_f64()
        ),
    )
}

struct OptRun {
    metrics: Metrics,
    fits: usize,
    converged: usize,
    max_fit: Duration,
    total: Duration,
}

fn run_opt(iid: &Dataset) -> OptRun {
    let problems = test_fold(&iid.problems, OPT_PROBLEMS);
    let solver = OptSolver::new(OptConfig::default());
    let results: Vec<(Prediction, f64, Duration)> = problems
        .par_iter()
        .map(|p| {
            let start = Instant::now();
            let (labels, diag) = solver.predict_with_diagnostics(&p.view());
            let elapsed = start.elapsed();
            let pred = Prediction {
                problem_id: p.problem_id.clone(),
                labels,
            };
            (pred, diag.h, elapsed)
        })
        .collect();
    let predictions: Vec<Prediction> = results.iter().map(|r| r.0.clone()).collect();
    OptRun {
        metrics: evaluate(&predictions, &problems).expect("one prediction per problem"),
        fits: results.len(),
        converged: results.iter().filter(|r| r.1 < CONVERGED_H).count(),
        max_fit: results.iter().map(|r| r.2).max().unwrap_or_default(),
        total: results.iter().map(|r| r.2).sum(),
    }
}

fn criterion_3(run: &OptRun) -> Outcome {
    let m = &run.metrics;
    let (dr, id, so, bb) = (
        type_acc(m, QueryType::Direct),
        type_acc(m, QueryType::Indirect),
        type_acc(m, QueryType::ScreeningOff),
        type_acc(m, QueryType::BackwardBlocking),
    );
    let pass = run.fits == OPT_PROBLEMS
        && dr >= OPT_MIN_DIRECT
        && so >= OPT_MIN_SCREENING_OFF
        && bb <= OPT_MAX_BACKWARD_BLOCKING
        && m.query_accuracy >= OPT_MIN_OVERALL
        && run.max_fit <= OPT_FIT_LIMIT
        && run.total <= OPT_TOTAL_LIMIT;
    outcome(
        3,
        pass,
        format!(
            "opt on {} problems: D.R. {:.1}% I.D. {:.1}% S.O. {:.1}% B.B. {:.1}% overall {:.1}%; max fit {:.2}s, total fit time {:.0}s",
            run.fits,
            100.0 * dr,
            100.0 * id,
            100.0 * so,
            100.0 * bb,
            100.0 * m.query_accuracy,
            run.max_fit.as_secs_f64(),
            run.total.as_secs_f64()
        ),
    )
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let hi = f(&probe);
            probe[i] = x[i] - step;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

fn worst_h_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_CASES {
        let n = rng.gen_range(2..=9);
        let w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.gen_range(0.0..1.0) });
        let (_, grad) = acyclicity(&w).expect("finite input");
        let x: Vec<f64> = w.iter().copied().collect();
        let fd = central_difference(&x, 1e-6, |v| {
            acyclicity(&DMatrix::from_column_slice(n, n, v)).expect("finite input").0
        });
        // Diagonal entries are fixed at zero.
        let mask = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(idx, &g)| if idx % n == idx / n { 0.0 } else { g })
                .collect()
        };
        let analytic: Vec<f64> = grad.iter().copied().collect();
        worst = worst.max(relative_error(&mask(&analytic), &mask(&fd)));
    }
    worst
}

fn random_context(rng: &mut ChaCha8Rng, objects: usize) -> Vec<ContextTrial> {
    (0..6)
        .map(|_| {
            let mut s = ObjectSet::EMPTY;
            while s.is_empty() {
                s = (0..objects).filter(|_| rng.gen_bool(0.4)).collect();
            }
            ContextTrial::new(s, MachineState::from_bool(rng.gen_bool(0.5)))
        })
        .collect()
}

fn worst_sem_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_CASES {
        let objects = rng.gen_range(2..=5);
        let data = DataMatrix::from_context(&random_context(rng, objects));
        let mut sem = GeneralizedSem::init(data.cols(), 8, 1.0, rng);
        for p in sem.params.iter_mut().skip(2 * data.cols() * 8 * data.cols()) {
            *p = rng.gen_range(-1.0..1.0);
        }
        let layout = sem.layout;
        let mut grad = vec![0.0; layout.len()];
        loss_and_grad(&layout, &sem.params, &data, Some(&mut grad));
        let fd = central_difference(&sem.params, 1e-6, |p| loss_and_grad(&layout, p, &data, None));
        worst = worst.max(relative_error(&grad, &fd));

        let penalty = Penalty {
            l1: 0.0,
            l2: rng.gen_range(0.0..0.1),
            alpha: rng.gen_range(0.0..2.0),
            rho: rng.gen_range(0.0..10.0),
        };
        let mut scratch = vec![0.0; layout.len()];
        augmented_objective(&layout, &sem.params, &data, penalty, &mut grad).expect("finite");
        let fd = central_difference(&sem.params, 1e-6, |p| {
            augmented_objective(&layout, p, &data, penalty, &mut scratch).expect("finite").0
        });
        worst = worst.max(relative_error(&grad, &fd));
    }
    worst
}

fn criterion_4(run: &OptRun) -> Outcome {
    let (h_zero, _) = acyclicity(&DMatrix::zeros(5, 5)).expect("finite");
    let upper = DMatrix::from_fn(6, 6, |i, j| if i < j { 0.3 + 0.1 * (i + j) as f64 } else { 0.0 });
    let (h_upper, _) = acyclicity(&upper).expect("finite");
    let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let (h_swap, _) = acyclicity(&swap).expect("finite");
    let swap_expected = 2.0 * 1f64.cosh() - 2.0;

    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let h_grad = worst_h_gradient_error(&mut rng);
    let sem_grad = worst_sem_gradient_error(&mut rng);
    let share = run.converged as f64 / run.fits.max(1) as f64;

    let pass = h_zero.abs() <= DAG_TOL
        && h_upper.abs() <= DAG_TOL
        && (h_swap - swap_expected).abs() <= DAG_TOL
        && h_grad <= GRAD_H_REL_TOL
        && sem_grad <= GRAD_LOSS_REL_TOL
        && run.fits > 0
        && share >= MIN_CONVERGED_SHARE;
    outcome(
        4,
        pass,
        format!(
            "h(0)={h_zero:.1e} h(upper)={h_upper:.1e} h(swap)-expected={:.1e}; worst grad rel err h {h_grad:.1e}, sem {sem_grad:.1e}; h<{CONVERGED_H:.0e} on {}/{} fits",
            h_swap - swap_expected,
            run.converged,
            run.fits
        ),
    )
}

fn oracle_mismatches(p: &Problem) -> Option<&'static str> {
    let Ok(hs) = consistent_hypotheses(&p.context, p.objects.len()) else {
        return Some("context inconsistent");
    };
    if !hs.contains(p.blickets()) {
        return Some("ground truth not consistent");
    }
    for q in &p.queries {
        let Ok(label) = label_query(&hs, q.spec.objects) else {
            return Some("query not labelable");
        };
        if label != q.label {
            return Some("label differs from oracle");
        }
        if classify_query_type(&p.context, &hs, &q.spec, label) != q.query_type {
            return Some("query type differs from oracle");
        }
    }
    None
}

fn independent(o: usize) -> QuerySpec {
    QuerySpec {
        objects: ObjectSet::singleton(o),
        kind: QueryKind::Independent,
        base_trial: None,
    }
}

/// Each pattern: context, queried object, expected label and type.
fn canonical_patterns() -> Vec<(&'static str, Vec<ContextTrial>, usize, Label, QueryType)> {
    use Label::*;
    use QueryType::*;
    vec![
        ("direct", ctx(&[(&[0], true), (&[1], false)]), 0, Activated, Direct),
        ("indirect", ctx(&[(&[0, 1], true), (&[1], false)]), 0, Activated, Indirect),
        (
            "screening off",
            ctx(&[(&[0], true), (&[0, 1], true), (&[1], false)]),
            1,
            Inactivated,
            ScreeningOff,
        ),
        (
            "backward blocking",
            ctx(&[(&[0, 1], true), (&[0], true)]),
            1,
            Undetermined,
            BackwardBlocking,
        ),
    ]
}

fn criterion_5(iid: &Dataset) -> Outcome {
    let bad: Vec<(&str, &str)> = iid
        .problems
        .par_iter()
        .filter_map(|p| oracle_mismatches(p).map(|why| (p.problem_id.as_str(), why)))
        .collect();
    let mut pattern_failures = Vec::new();
    for (name, context, object, label, ty) in canonical_patterns() {
        let hs = consistent_hypotheses(&context, 2).expect("consistent");
        let got = label_query(&hs, ObjectSet::singleton(object)).expect("in range");
        let got_ty = classify_query_type(&context, &hs, &independent(object), got);
        if got != label || got_ty != ty {
            pattern_failures.push(format!("{name}: {got}/{got_ty}"));
        }
    }
    let pass = bad.is_empty() && pattern_failures.is_empty();
    let mut detail = format!(
        "{} problems re-checked, {} mismatches; {} canonical patterns, {} wrong",
        iid.problems.len(),
        bad.len(),
        canonical_patterns().len(),
        pattern_failures.len()
    );
    if let Some((id, why)) = bad.first() {
        detail += &format!(" (first: {id}: {why})");
    }
    if !pattern_failures.is_empty() {
        detail += &format!(" ({})", pattern_failures.join(", "));
    }
    outcome(5, pass, detail)
}

fn criterion_6(comp: &Dataset, sys: &Dataset) -> Outcome {
    let comp_report = validate_split(comp);
    let sys_report = validate_split(sys);
    let comp_test = comp.fold_counts.test;
    let pass = comp_report.is_empty()
        && sys_report.is_empty()
        && comp.problems.len() == SPLIT_SIZE
        && sys.problems.len() == SPLIT_SIZE
        && comp_test > 0;
    outcome(
        6,
        pass,
        format!(
            "comp {} problems, violations {:?}; sys {} problems, violations {:?}",
            comp.problems.len(),
            comp_report,
            sys.problems.len(),
            sys_report
        ),
    )
}

fn duplicated(context: &[ContextTrial]) -> BinarySample {
    let rows: Vec<ContextTrial> = (0..DUPLICATION).flat_map(|_| context.iter().copied()).collect();
    BinarySample::from_context(&rows)
}

fn criterion_7() -> Outcome {
    let cfg = PcConfig::default();
    let cases: Vec<(&str, Vec<ContextTrial>, ObjectSet)> = vec![
        ("direct", ctx(&[(&[0], true), (&[1], false), (&[0, 1], true)]), set(&[0])),
        (
            "indirect",
            ctx(&[(&[2], true), (&[3], false), (&[2, 3], true), (&[1], false), (&[0, 1], true)]),
            set(&[0, 2]),
        ),
        (
            "screening off",
            ctx(&[(&[0], true), (&[0, 1], true), (&[1], false), (&[2], false)]),
            set(&[0]),
        ),
    ];
    let mut failures = Vec::new();
    for (name, context, truth) in &cases {
        let got = learn_parents(&duplicated(context), cfg.epsilon, cfg.max_conditioning);
        if got != *truth {
            failures.push(format!("{name}: {got:?}"));
        }
    }

    // Both parents are seen only apart, so their joint configuration has no rows.
    let context = ctx(&[(&[0], true), (&[2], true), (&[1], false), (&[3], false), (&[4], false)]);
    let cpt = PcSolver::new(cfg.clone()).fit(&context);
    let unseen = predict_pc(&cpt, set(&[0, 2]), cfg.delta);
    if cpt.parents != vec![0, 2] || unseen != Label::Undetermined {
        failures.push(format!("unseen configuration: parents {:?}, label {unseen}", cpt.parents));
    }
    outcome(
        7,
        failures.is_empty(),
        format!(
            "{} identifiable patterns x{DUPLICATION} plus unseen-configuration check; failures: {}",
            cases.len(),
            if failures.is_empty() {
                "none".to_string()
            } else {
                failures.join(", ")
            }
        ),
    )
}

fn encode_all(d: &Dataset) -> Vec<u8> {
    d.problems
        .iter()
        .flat_map(|p| {
            let mut line = encode_problem(p).into_bytes();
            line.push(b'\n');
            line
        })
        .collect()
}

fn criterion_8(iid: &Dataset, config: &GenConfig) -> Outcome {
    let again = generate_split(SplitKind::Iid, config, MASTER_SEED).expect("generation succeeds");
    let identical = encode_all(iid) == encode_all(&again);
    let round_trip_failures = iid
        .problems
        .par_iter()
        .filter(|p| decode_problem(&encode_problem(p)).ok().as_ref() != Some(*p))
        .count();
    outcome(
        8,
        identical && round_trip_failures == 0,
        format!(
            "regeneration byte-identical: {identical}; round-trip failures {round_trip_failures}/{}",
            iid.problems.len()
        ),
    )
}

fn main() {
    let config = GenConfig {
        problems_per_split: SPLIT_SIZE,
        ..GenConfig::default()
    };
    let start = Instant::now();
    let iid = generate_split(SplitKind::Iid, &config, MASTER_SEED).expect("iid generation");
    let generation = start.elapsed();
    let comp = generate_split(SplitKind::Comp, &config, MASTER_SEED).expect("comp generation");
    let sys = generate_split(SplitKind::Sys, &config, MASTER_SEED).expect("sys generation");

    let mut outcomes = vec![criterion_1(&iid, generation), criterion_2(&iid)];
    let opt = run_opt(&iid);
    outcomes.push(criterion_3(&opt));
    outcomes.push(criterion_4(&opt));
    outcomes.push(criterion_5(&iid));
    outcomes.push(criterion_6(&comp, &sys));
    outcomes.push(criterion_7());
    outcomes.push(criterion_8(&iid, &config));

    for o in &outcomes {
        println!(
            "criterion {}: {} {}",
            o.criterion,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
