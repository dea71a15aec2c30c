//! `sweep`: simulate, optimize and certify controlled sweeping processes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sweep_core::circuits::{
    c_case_i, c_case_ii, example83_analytic, example83_cost, example83_optimize_mode, example83_spec, Example83Case,
    Example83Solution,
};
use sweep_core::dynamics::{
    reconstruct_discrete_feasible, simulate, w12_distance, ControlSchedule, Mesh, ProblemSpec, Reference,
};
use sweep_core::io::{load_problem, load_trajectory, save_trajectory, ProblemFile};
use sweep_core::optimality::{assemble_discrete_certificate, example83_certificate_at, ConditionResidual};
use sweep_core::transcribe::{convergence_study, solve, write_study_csv, DiscreteProblem, GradientMode, SolveOptions};

const BUILTIN: &str = "builtin:example83";

#[derive(Debug, Parser)]
#[command(name = "sweep", version, about = "Optimal control of integro-differential sweeping processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the catching-up scheme and write the trajectory.
    Simulate(SimulateArgs),
    /// Solve the discrete approximation problem around a reference.
    Optimize(OptimizeArgs),
    /// Assemble or verify necessary optimality conditions.
    CheckKkt(CheckArgs),
    /// Analytic modes of the two-diode voltage-source circuit.
    Example83(Example83Args),
    /// Build a discrete feasible approximation of a reference.
    Reconstruct(ReconstructArgs),
    /// Solve on a sequence of meshes and tabulate distances to the reference.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file, or `builtin:example83`.
    #[arg(long)]
    spec: Option<String>,
    /// Number of mesh intervals.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed recorded in reports; every run is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Trajectory CSV whose controls drive the simulation.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Analytic mode supplying the controls of the built-in circuit.
    #[arg(long, default_value = "iii")]
    case: Example83Case,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    /// Reference: trajectory CSV or `builtin:example83:<case>`.
    #[arg(long)]
    reference: Option<String>,
    /// Localization radius; `inf` disables localization.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-7, value_parser = positive)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Gradient::Adjoint)]
    gradient: Gradient,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Solution: trajectory CSV or `builtin:example83:<case>`.
    #[arg(long)]
    solution: String,
    /// Reference of the discrete problem; defaults to the solution.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::Discrete)]
    mode: Mode,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-6, value_parser = positive)]
    tol: f64,
}

#[derive(Debug, Args)]
struct Example83Args {
    #[arg(long, default_value = "all")]
    case: String,
    /// Grid intervals of `analytic.csv`.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    reference: Option<String>,
    /// Comma-separated, strictly increasing mesh sizes.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    ks: Vec<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-7, value_parser = positive)]
    tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Gradient {
    Adjoint,
    Forward,
    Central,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        Ok(v) => Err(format!("{v} must be positive")),
        Err(e) => Err(e.to_string()),
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<sweep_core::Error> for Failure {
    fn from(e: sweep_core::Error) -> Self {
        match e {
            sweep_core::Error::Io(_) | sweep_core::Error::Parse(_) => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

enum Problem {
    File(ProblemFile, ProblemSpec),
    Example83,
}

impl Problem {
    fn load(spec: Option<&str>) -> Outcome<Self> {
        match spec {
            None => Err(Failure::Usage("--spec is required".into())),
            Some(BUILTIN) => Ok(Problem::Example83),
            Some(path) => {
                let file = load_problem(Path::new(path))?;
                let spec = file.build()?;
                Ok(Problem::File(file, spec))
            }
        }
    }

    fn spec(&self) -> ProblemSpec {
        match self {
            Problem::File(_, spec) => spec.clone(),
            Problem::Example83 => example83_spec(),
        }
    }
}

fn parse_case(s: &str) -> Outcome<Example83Case> {
    s.parse().map_err(|e: sweep_core::Error| Failure::Usage(e.to_string()))
}

fn analytic(case: Example83Case) -> Outcome<Example83Solution> {
    let v2 = match case {
        Example83Case::III => 1.0,
        _ => example83_optimize_mode(case)?.0,
    };
    Ok(example83_analytic(case, v2))
}

/// `builtin:example83:<case>` or a trajectory CSV.
fn load_reference(arg: &str) -> Outcome<Arc<dyn Reference>> {
    if let Some(case) = arg.strip_prefix(&format!("{BUILTIN}:")) {
        return Ok(Arc::new(analytic(parse_case(case)?)?));
    }
    Ok(Arc::new(load_trajectory(Path::new(arg))?))
}

fn default_reference(problem: &Problem, k: usize) -> Outcome<Arc<dyn Reference>> {
    match problem {
        Problem::Example83 => Ok(Arc::new(analytic(Example83Case::II)?)),
        Problem::File(file, spec) => {
            let mesh = Mesh::uniform(spec.horizon, k)?;
            let (u, a, b) = file.constant_controls(spec)?;
            Ok(Arc::new(simulate(spec, &ControlSchedule::constant(&mesh, u, a, b))?.trajectory))
        }
    }
}

fn prepare_out(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &Value) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Numerical(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn residual_json(rows: &[ConditionResidual], tol: f64) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "tag": r.tag,
                    "residual": r.residual,
                    "pass": r.passes(tol),
                    "applicable": r.residual.is_some(),
                    "note": r.note,
                })
            })
            .collect(),
    )
}

fn run_simulate(args: &SimulateArgs) -> Outcome<()> {
    let c = &args.common;
    let problem = Problem::load(c.spec.as_deref())?;
    let spec = problem.spec();
    let mesh = Mesh::uniform(spec.horizon, c.k as usize)?;
    let schedule = match (&args.controls, &problem) {
        (Some(path), _) => ControlSchedule::from_reference(&load_trajectory(path)?, &mesh),
        (None, Problem::File(file, spec)) => {
            let (u, a, b) = file.constant_controls(spec)?;
            ControlSchedule::constant(&mesh, u, a, b)
        }
        (None, Problem::Example83) => ControlSchedule::from_reference(&analytic(args.case)?, &mesh),
    };
    let sim = simulate(&spec, &schedule)?;
    prepare_out(&c.out)?;
    save_trajectory(&sim.trajectory, &c.out.join("solution.csv"))?;
    let b = &sim.bounds;
    write_json(
        &c.out.join("report.json"),
        &json!({
            "command": "simulate",
            "k": c.k,
            "seed": c.seed,
            "max_certificate_residual": sim.max_certificate_residual,
            "terminal_cost": spec.terminal_cost(&sim.trajectory.x[c.k as usize]),
            "bounds": {
                "l_tilde": b.l_tilde,
                "drift": [b.drift_lhs, b.drift_rhs],
                "velocity": [b.velocity_lhs, b.velocity_rhs],
                "memory": [b.memory_lhs, b.memory_rhs],
                "flagged": b.flagged,
            },
        }),
    )
}

fn gradient_mode(g: Gradient) -> GradientMode {
    match g {
        Gradient::Adjoint => GradientMode::Adjoint,
        Gradient::Forward => GradientMode::Forward,
        Gradient::Central => GradientMode::Central,
    }
}

fn run_optimize(args: &OptimizeArgs) -> Outcome<()> {
    let c = &args.common;
    let k = c.k as usize;
    let problem = Problem::load(c.spec.as_deref())?;
    let spec = problem.spec();
    let reference = match &args.reference {
        Some(r) => load_reference(r)?,
        None => default_reference(&problem, k)?,
    };
    let dp = DiscreteProblem::build(&spec, reference.clone(), k, args.epsilon)?;
    let options = SolveOptions { tol: args.tol, gradient: gradient_mode(args.gradient), ..SolveOptions::default() };
    let report = solve(&dp, &options)?;
    let distance = w12_distance(&report.solution, reference.as_ref())?;
    prepare_out(&c.out)?;
    save_trajectory(&report.solution, &c.out.join("solution.csv"))?;
    write_json(
        &c.out.join("report.json"),
        &json!({
            "command": "optimize",
            "k": k,
            "seed": c.seed,
            "epsilon": dp.epsilon,
            "cost": report.cost,
            "original_cost": report.original_cost,
            "iterations": report.iterations,
            "outer_iterations": report.outer_iterations,
            "gradient_norm": report.gradient_norm,
            "constraint_violation": report.constraint_violation,
            "localization_active": report.localization_active,
            "status": report.status,
            "w12_to_reference": {"sup": distance.sup_norm, "l2_derivative": distance.l2_derivative},
        }),
    )?;
    if report.status.is_converged() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("solver stopped: {:?}", report.status)))
    }
}

fn run_check(args: &CheckArgs) -> Outcome<()> {
    let c = &args.common;
    if !(args.lambda >= 0.0) {
        return Err(Failure::Usage("--lambda must be nonnegative".into()));
    }
    let (rows, extra) = match args.mode {
        Mode::Continuous => {
            let Some(case) = args.solution.strip_prefix(&format!("{BUILTIN}:")) else {
                return Err(Failure::Usage(
                    "continuous mode needs closed-form arcs: use --solution builtin:example83:<case>".into(),
                ));
            };
            let cert = example83_certificate_at(analytic(parse_case(case)?)?)?;
            let extra = json!({
                "grid": cert.grid,
                "gamma_atom": cert.gamma_atom.as_slice(),
                "eta_terminal": cert.eta_terminal.as_slice(),
                "nontriviality": cert.nontriviality,
            });
            (cert.residuals, extra)
        }
        Mode::Discrete => {
            let problem = Problem::load(c.spec.as_deref())?;
            let spec = problem.spec();
            let solution = load_trajectory(Path::new(&args.solution))?;
            let reference: Arc<dyn Reference> = match &args.reference {
                Some(r) => load_reference(r)?,
                None => Arc::new(solution.clone()),
            };
            let dp = DiscreteProblem::build(&spec, reference, solution.k(), None)?;
            let cert = assemble_discrete_certificate(&dp, &solution, args.lambda)?;
            let extra = json!({
                "k": solution.k(),
                "primal_dual_residual": cert.primal_dual_residual(),
                "fit_residual": cert.fit_residual,
                "nontriviality": cert.nontriviality,
                "ambiguity": cert.ambiguity,
            });
            (cert.residuals, extra)
        }
    };
    let passed = rows.iter().all(|r| r.passes(args.tol));
    prepare_out(&c.out)?;
    write_json(
        &c.out.join("report.json"),
        &json!({
            "command": "check-kkt",
            "mode": format!("{:?}", args.mode).to_lowercase(),
            "lambda": args.lambda,
            "tol": args.tol,
            "seed": c.seed,
            "passed": passed,
            "conditions": residual_json(&rows, args.tol),
            "details": extra,
        }),
    )?;
    if passed {
        Ok(())
    } else {
        let failing: Vec<&str> = rows.iter().filter(|r| !r.passes(args.tol)).map(|r| r.tag.as_str()).collect();
        Err(Failure::Numerical(format!("conditions {} exceed tol {:e}", failing.join(", "), args.tol)))
    }
}

fn run_example83(args: &Example83Args) -> Outcome<()> {
    let cases = if args.case == "all" { Example83Case::ALL.to_vec() } else { vec![parse_case(&args.case)?] };
    prepare_out(&args.out)?;
    let mut summary = Vec::new();
    let mut solutions = Vec::new();
    for &case in &cases {
        let sol = analytic(case)?;
        summary.push(json!({
            "case": case.name(),
            "v1": sol.v1,
            "v2": sol.v2,
            "cost": sol.cost,
        }));
        solutions.push(sol);
    }
    let best = solutions.iter().min_by(|a, b| a.cost.total_cmp(&b.cost)).map(|s| s.case.name());
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "c_case_i": c_case_i(),
            "c_case_ii": c_case_ii(),
            "cases": summary,
            "best": best,
        }),
    )?;

    let k = args.k as usize;
    let mut csv = String::from("case,t,x1,x2,a1,a2,y1,y2\n");
    for sol in &solutions {
        for j in 0..=k {
            let t = j as f64 / k as f64;
            let (x, a, y) = (sol.state(t), sol.control(t), sol.memory(t));
            csv += &format!("{},{t},{},{},{},{},{},{}\n", sol.case.name(), x[0], x[1], a[0], a[1], y[0], y[1]);
        }
    }
    fs::write(args.out.join("analytic.csv"), csv).map_err(|e| Failure::Usage(e.to_string()))?;

    let mut curve = String::from("v2");
    for case in &cases {
        curve += &format!(",J_{}", case.name());
    }
    curve.push('\n');
    for i in 0..=300 {
        let v2 = -1.0 + i as f64 * 0.01;
        curve += &v2.to_string();
        for &case in &cases {
            curve += &format!(",{}", example83_cost(case, v2));
        }
        curve.push('\n');
    }
    fs::write(args.out.join("cost-curve.csv"), curve).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(())
}

fn run_reconstruct(args: &ReconstructArgs) -> Outcome<()> {
    let c = &args.common;
    let problem = Problem::load(c.spec.as_deref())?;
    let spec = problem.spec();
    let reference = match &args.reference {
        Some(r) => load_reference(r)?,
        None => default_reference(&problem, c.k as usize)?,
    };
    let mesh = Mesh::uniform(spec.horizon, c.k as usize)?;
    let rec = reconstruct_discrete_feasible(&spec, reference.as_ref(), &mesh)?;
    prepare_out(&c.out)?;
    save_trajectory(&rec.trajectory, &c.out.join("solution.csv"))?;
    write_json(
        &c.out.join("report.json"),
        &json!({
            "command": "reconstruct",
            "k": c.k,
            "seed": c.seed,
            "w12_to_reference": {"sup": rec.distance.sup_norm, "l2_derivative": rec.distance.l2_derivative},
            "max_projection_residual": rec.max_projection_residual,
        }),
    )
}

fn run_convergence(args: &ConvergenceArgs) -> Outcome<()> {
    let c = &args.common;
    let problem = Problem::load(c.spec.as_deref().or(Some(BUILTIN)))?;
    let spec = problem.spec();
    let finest = args.ks.iter().copied().max().unwrap_or(c.k as usize);
    let reference = match &args.reference {
        Some(r) => load_reference(r)?,
        None => default_reference(&problem, finest)?,
    };
    let options = SolveOptions { tol: args.tol, ..SolveOptions::default() };
    let rows = convergence_study(&spec, reference, &args.ks, args.epsilon, &options)?;
    prepare_out(&c.out)?;
    let file = fs::File::create(c.out.join("convergence.csv")).map_err(|e| Failure::Usage(e.to_string()))?;
    write_study_csv(&rows, file)?;
    write_json(&c.out.join("summary.json"), &json!({"command": "convergence", "seed": c.seed, "rows": rows}))
}

fn run(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Optimize(a) => run_optimize(a),
        Command::CheckKkt(a) => run_check(a),
        Command::Example83(a) => run_example83(a),
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::Convergence(a) => run_convergence(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simulate() {
        let cli = Cli::try_parse_from(["sweep", "simulate", "--spec", "s.json", "--k", "100"]).unwrap();
        match cli.command {
            Command::Simulate(a) => {
                assert_eq!(a.common.k, 100);
                assert_eq!(a.common.spec.as_deref(), Some("s.json"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_example83_case() {
        let cli = Cli::try_parse_from(["sweep", "example83", "--case", "i"]).unwrap();
        assert!(matches!(cli.command, Command::Example83(ref a) if a.case == "i"));
    }

    #[test]
    fn rejects_bad_flags() {
        assert!(Cli::try_parse_from(["sweep", "simulate", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["sweep", "simulate", "--k", "0"]).is_err());
        assert!(Cli::try_parse_from(["sweep", "optimize", "--tol", "-1"]).is_err());
    }

    #[test]
    fn optimize_without_spec_is_usage_error() {
        let cli = Cli::try_parse_from(["sweep", "optimize"]).unwrap();
        assert!(matches!(run(&cli), Err(Failure::Usage(_))));
    }

    #[test]
    fn unreadable_spec_is_usage_error() {
        let cli = Cli::try_parse_from(["sweep", "simulate", "--spec", "/nonexistent/spec.json"]).unwrap();
        assert!(matches!(run(&cli), Err(Failure::Usage(_))));
    }
}
