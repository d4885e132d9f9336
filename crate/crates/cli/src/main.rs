use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use blicket_core::codec::{read_problems, write_problems};
use blicket_core::eval::{
    calibrate, evaluate, read_predictions, solve_all, solve_opt_with_diagnostics,
    write_predictions, Report, ReportEntry, SolverConfig, SolverKind,
};
use blicket_core::generator::{generate_split, scene_descriptor, GenConfig};
use blicket_core::model::{Fold, Problem, SplitKind};
use blicket_core::oracle::{blicketness, consistent_hypotheses};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blicket", version, about = "Blicket-machine causal induction benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a split as a JSONL problem file.
    Generate {
        #[arg(long)]
        split: SplitKind,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Generator settings as JSON; `--count` overrides its problem count.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write object positions for renderers to this JSONL file.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Run a solver over a problem file and write predictions.
    Solve {
        #[arg(long)]
        solver: SolverKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Solver hyperparameters as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only solve problems of this fold.
        #[arg(long)]
        fold: Option<Fold>,
        /// For `opt`: per-problem fit diagnostics (h, loss, W) as JSONL.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Score predictions against a problem file.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Where to write the JSON summary.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        fold: Option<Fold>,
        /// Solver name shown in the report.
        #[arg(long, default_value = "solver")]
        name: String,
    },
    /// Pretty-print one problem with oracle annotations.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        problem: String,
    },
    /// Tune a solver's decision thresholds on the val fold.
    Calibrate {
        #[arg(long)]
        solver: SolverKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the tuned config.
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load_problems(path: &Path, fold: Option<Fold>) -> Result<Vec<Problem>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut problems =
        read_problems(BufReader::new(file)).with_context(|| format!("cannot read {}", path.display()))?;
    if let Some(fold) = fold {
        problems.retain(|p| p.fold == fold);
    }
    Ok(problems)
}

fn load_solver_config(path: Option<&Path>) -> Result<SolverConfig> {
    match path {
        None => Ok(SolverConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            SolverConfig::from_json(&text).with_context(|| format!("bad solver config {}", p.display()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            split,
            count,
            seed,
            out,
            config,
            scene,
        } => {
            let mut gen = match config {
                None => GenConfig::default(),
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
                    blicket_core::codec::parse_json(&text)
                        .with_context(|| format!("bad generator config {}", p.display()))?
                }
            };
            gen.problems_per_split = count;
            let dataset = generate_split(split, &gen, seed)?;
            write_problems(create(&out)?, &dataset.problems)?;
            if let Some(scene) = scene {
                let mut w = create(&scene)?;
                for p in &dataset.problems {
                    serde_json::to_writer(&mut w, &scene_descriptor(p))?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            let c = dataset.fold_counts;
            eprintln!(
                "wrote {} problems to {} (train {}, val {}, test {})",
                dataset.problems.len(),
                out.display(),
                c.train,
                c.val,
                c.test
            );
        }
        Command::Solve {
            solver,
            data,
            out,
            config,
            fold,
            diagnostics,
        } => {
            let problems = load_problems(&data, fold)?;
            let config = load_solver_config(config.as_deref())?;
            let predictions = match (solver, diagnostics) {
                (SolverKind::Opt, Some(path)) => {
                    let (predictions, diags) = solve_opt_with_diagnostics(&config.opt, &problems);
                    let mut w = create(&path)?;
                    for d in &diags {
                        serde_json::to_writer(&mut w, d)?;
                        w.write_all(b"\n")?;
                    }
                    w.flush()?;
                    predictions
                }
                (_, Some(_)) => bail!("--diagnostics is only available for the opt solver"),
                (kind, None) => solve_all(config.build(kind).as_ref(), &problems),
            };
            write_predictions(create(&out)?, &predictions)?;
            eprintln!("wrote {} predictions to {}", predictions.len(), out.display());
        }
        Command::Evaluate {
            data,
            pred,
            report,
            fold,
            name,
        } => {
            let problems = load_problems(&data, fold)?;
            let file = File::open(&pred).with_context(|| format!("cannot open {}", pred.display()))?;
            let predictions = read_predictions(BufReader::new(file))?;
            let metrics = evaluate(&predictions, &problems)?;
            let split = problems.first().map_or("empty".to_string(), |p| p.split.to_string());
            let summary = Report {
                entries: vec![ReportEntry {
                    solver: name,
                    split,
                    metrics,
                }],
            };
            std::fs::write(&report, summary.to_json() + "\n")
                .with_context(|| format!("cannot write {}", report.display()))?;
            print!("{}", summary.render_text());
        }
        Command::Inspect { data, problem } => {
            let problems = load_problems(&data, None)?;
            let Some(p) = problems.iter().find(|p| p.problem_id == problem) else {
                bail!("no problem `{problem}` in {}", data.display());
            };
            print!("{}", describe(p)?);
        }
        Command::Calibrate {
            solver,
            data,
            config,
            out,
        } => {
            let problems = load_problems(&data, Some(Fold::Val))?;
            if problems.is_empty() {
                bail!("{} has no val-fold problems", data.display());
            }
            let base = load_solver_config(config.as_deref())?;
            let cal = calibrate(solver, &base, &problems);
            std::fs::write(&out, serde_json::to_string_pretty(&cal.config)? + "\n")
                .with_context(|| format!("cannot write {}", out.display()))?;
            eprintln!(
                "{}: val query accuracy {:.4} over {} problems; config written to {}",
                solver.as_str(),
                cal.query_accuracy,
                cal.evaluated,
                out.display()
            );
        }
    }
    Ok(())
}

fn describe(p: &Problem) -> Result<String> {
    use std::fmt::Write as _;
    let hs = consistent_hypotheses(&p.context, p.objects.len())?;
    let mut s = String::new();
    writeln!(s, "{} ({} / {}, seed {})", p.problem_id, p.split, p.fold, p.seed)?;
    writeln!(s, "objects:")?;
    for o in &p.objects {
        let a = o.attributes;
        writeln!(
            s,
            "  {} {} {} {}  blicket={}  oracle={:?}",
            o.id,
            a.color,
            a.material,
            a.shape,
            o.is_blicket,
            blicketness(&hs, o.id)
        )?;
    }
    writeln!(s, "context ({} consistent hypotheses):", hs.len())?;
    for (i, t) in p.context.iter().enumerate() {
        writeln!(s, "  {i}: {:?} -> {}", t.objects, t.state)?;
    }
    writeln!(s, "queries:")?;
    for q in &p.queries {
        let base = q.spec.base_trial.map_or(String::new(), |b| format!(" (trial {b} +)"));
        writeln!(
            s,
            "  {} {:?}{} -> {} [{}]",
            q.spec.kind,
            q.spec.objects,
            base,
            q.label,
            q.query_type.abbrev()
        )?;
    }
    Ok(s)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
