//! Command-line front end: solve block-separable problems from built-in
//! benchmarks or manifest files, run the sensor runtime sweep, and compare
//! solvers side by side.
//!
//! Exit codes: 0 converged, 2 usage or configuration error, 3 solver
//! non-convergence (the trace file is still written).

mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distopt::benchmarks::{self, SensorScene};
use distopt::harness::{self, ExecutionMode, SweepConfig};
use distopt::problem::{IterateState, SeparableProblem};
use distopt::solvers::{
    admm_two_block, consensus_admm, dual_ascent, dual_decomposition, method_of_multipliers,
    run_aladin, AladinConfig, SolveResult, SolveStatus, SolverConfig,
};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

const ENV_WORKERS: &str = "DISTOPT_WORKERS";

#[derive(Parser)]
#[command(name = "distopt", version, about = "Block-separable distributed optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write its convergence trace as CSV
    Solve(SolveArgs),
    /// Runtime analysis sweeps
    Bench {
        #[command(subcommand)]
        target: BenchTarget,
    },
    /// Run two or more solvers on the same problem and tabulate the outcome
    Compare(CompareArgs),
    /// Inspect configuration defaults
    Config {
        #[command(subcommand)]
        what: ConfigCmd,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Print every configuration default
    Show,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sequential,
    Concurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolverName {
    DualAscent,
    DualDecomp,
    Mom,
    Admm,
    ConsensusAdmm,
    Aladin,
}

impl std::fmt::Display for SolverName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverName::DualAscent => "dual-ascent",
            SolverName::DualDecomp => "dual-decomp",
            SolverName::Mom => "mom",
            SolverName::Admm => "admm",
            SolverName::ConsensusAdmm => "consensus-admm",
            SolverName::Aladin => "aladin",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BenchmarkName {
    /// Quadratic blocks tied by consensus coupling
    ConsensusQuadratic,
    /// Consensus l2-regularized logistic regression
    Logistic,
    /// Sensor-network localization on a circle
    Sensors,
    /// Linear objectives with scalar coupling (dual methods fail here)
    LinearCoupled,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Built-in benchmark family
    #[arg(long, value_enum)]
    benchmark: Option<BenchmarkName>,
    /// Problem manifest file (TOML)
    #[arg(long, conflicts_with = "benchmark")]
    manifest: Option<PathBuf>,

    /// Blocks for consensus-quadratic / linear-coupled
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Block dimension for consensus-quadratic
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Dataset size for logistic
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Feature dimension for logistic
    #[arg(long, default_value_t = 2)]
    nx: usize,
    /// Subsystem count for logistic
    #[arg(long, default_value_t = 10)]
    nsub: usize,
    /// Regularization weight for logistic
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Dataset file for logistic (features then a +-1 label per row)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sensor count for sensors
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Measurement noise for sensors
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
}

#[derive(Args, Clone)]
struct SolverOpts {
    /// Penalty weight (augmented-Lagrangian solvers)
    #[arg(long)]
    rho: Option<f64>,
    /// Local proximal weight (ALADIN)
    #[arg(long)]
    nu: Option<f64>,
    /// Dual step size
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol_primal: Option<f64>,
    #[arg(long)]
    tol_dual: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Active-set threshold (ALADIN)
    #[arg(long)]
    eps_act: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Block execution mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Worker threads in concurrent mode (default: DISTOPT_WORKERS or all)
    #[arg(long)]
    workers: Option<usize>,
    /// Apply the reference option set rho=1e3, nu=1e4, max-iter=10
    #[arg(long)]
    reference_opts: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum)]
    solver: SolverName,
    #[command(flatten)]
    opts: SolverOpts,
    /// Trace output path
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
    /// Record measured wall-clock seconds in the trace (breaks bytewise
    /// reproducibility across runs)
    #[arg(long)]
    timings: bool,
    /// For the sensors benchmark: also export true, measured, and solved
    /// positions as CSV for plotting
    #[arg(long)]
    scene_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchTarget {
    /// Sensor-localization runtime sweep over problem sizes
    Sensors(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Use the reference 14-point sweep
    #[arg(long)]
    default_sweep: bool,
    /// Comma-separated sensor counts
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Comma-separated noise levels, one per sensor count
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    /// Timing table output path
    #[arg(long, default_value = "timing.csv")]
    out: PathBuf,
    /// Plot script output path
    #[arg(long, default_value = "runtime_plot.gnuplot")]
    plot: PathBuf,
    /// Repetitions per cell (fastest run is kept)
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    opts: SolverOpts,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated solver list (at least two)
    #[arg(long, value_delimiter = ',', value_enum)]
    solvers: Vec<SolverName>,
    #[command(flatten)]
    opts: SolverOpts,
    /// Combined trace output path
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
    #[arg(long)]
    timings: bool,
}

enum CliError {
    Usage(String),
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Solver(m) => m,
        }
    }
}

fn resolve_workers(opts: &SolverOpts) -> usize {
    opts.workers
        .or_else(|| std::env::var(ENV_WORKERS).ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn execution_mode(opts: &SolverOpts) -> ExecutionMode {
    match opts.mode {
        Some(ModeArg::Concurrent) => ExecutionMode::Concurrent { workers: resolve_workers(opts) },
        Some(ModeArg::Sequential) | None => ExecutionMode::Sequential,
    }
}

fn solver_config(opts: &SolverOpts) -> SolverConfig {
    let mut cfg = SolverConfig::default();
    if opts.reference_opts {
        cfg.rho = 1e3;
        cfg.max_iter = 10;
    }
    if let Some(v) = opts.rho {
        cfg.rho = v;
    }
    if let Some(v) = opts.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = opts.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = opts.tol_primal {
        cfg.tol_primal = v;
    }
    if let Some(v) = opts.tol_dual {
        cfg.tol_dual = v;
    }
    if let Some(v) = opts.inner_tol {
        cfg.inner_tol = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    cfg.mode = execution_mode(opts);
    cfg
}

fn aladin_config(opts: &SolverOpts) -> AladinConfig {
    let mut cfg = AladinConfig::default();
    if opts.reference_opts {
        cfg.rho = 1e3;
        cfg.nu = 1e4;
        cfg.max_iter = 10;
    }
    if let Some(v) = opts.rho {
        cfg.rho = v;
    }
    if let Some(v) = opts.nu {
        cfg.nu = v;
    }
    if let Some(v) = opts.alpha {
        cfg.alpha = v;
    } else {
        // The reference dual update is the method-of-multipliers step, whose
        // size is the penalty weight itself.
        cfg.alpha = cfg.rho;
    }
    if let Some(v) = opts.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = opts.tol_primal {
        cfg.tol_primal = v;
    }
    if let Some(v) = opts.tol_dual {
        cfg.tol_dual = v;
    }
    if let Some(v) = opts.eps_act {
        cfg.eps_act = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    cfg.mode = execution_mode(opts);
    cfg
}

/// Builds the requested problem plus an optional warm-start state and, for
/// the sensors benchmark, the generating scene.
fn build_problem(
    args: &ProblemArgs,
    seed: u64,
) -> Result<(SeparableProblem, Option<IterateState>, Option<SensorScene>), CliError> {
    if let Some(path) = &args.manifest {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let p = manifest::load_manifest(&text).map_err(CliError::Usage)?;
        return Ok((p, None, None));
    }
    let Some(bench) = args.benchmark else {
        return Err(CliError::Usage("select a problem with --benchmark or --manifest".into()));
    };
    match bench {
        BenchmarkName::ConsensusQuadratic => {
            let p = benchmarks::gen_consensus_quadratic(args.blocks, args.dim, seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((p, None, None))
        }
        BenchmarkName::LinearCoupled => {
            let p = benchmarks::gen_linear_coupled(args.blocks, seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((p, None, None))
        }
        BenchmarkName::Logistic => {
            let data = match &args.data {
                Some(path) => {
                    let file = std::fs::File::open(path).map_err(|e| {
                        CliError::Usage(format!("cannot read dataset {}: {e}", path.display()))
                    })?;
                    benchmarks::load_dataset(std::io::BufReader::new(file))
                        .map_err(|e| CliError::Usage(e.to_string()))?
                }
                None => benchmarks::gen_synthetic_dataset(args.m, args.nx, seed)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let p = benchmarks::gen_logistic_consensus(&data, args.nsub, args.gamma)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((p, None, None))
        }
        BenchmarkName::Sensors => {
            let scene = benchmarks::gen_sensor_scene(args.n, args.sigma, seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let p = benchmarks::gen_sensor_problem(&scene)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let z0 = benchmarks::sensor_start_values(&scene);
            let mut state = IterateState::zeros(&p);
            state.x = z0.clone();
            state.z = z0;
            Ok((p, Some(state), Some(scene)))
        }
    }
}

fn run_solver(
    name: SolverName,
    problem: &SeparableProblem,
    init: Option<&IterateState>,
    opts: &SolverOpts,
) -> Result<SolveResult, CliError> {
    let map_err = |e: distopt::solvers::SolveError| {
        let msg = e.to_string();
        match e {
            distopt::solvers::SolveError::InvalidConfig(_)
            | distopt::solvers::SolveError::UnsupportedLocalConstraints { .. }
            | distopt::solvers::SolveError::NotConsensusForm(_)
            | distopt::solvers::SolveError::Problem(_) => CliError::Usage(msg),
            _ => CliError::Solver(msg),
        }
    };
    match name {
        SolverName::DualAscent => {
            dual_ascent(problem, &solver_config(opts), init).map_err(map_err)
        }
        SolverName::DualDecomp => {
            dual_decomposition(problem, &solver_config(opts), init).map_err(map_err)
        }
        SolverName::Mom => {
            method_of_multipliers(problem, &solver_config(opts), init).map_err(map_err)
        }
        SolverName::ConsensusAdmm => {
            consensus_admm(problem, &solver_config(opts), init).map_err(map_err)
        }
        SolverName::Admm => {
            if problem.num_blocks() != 2 {
                return Err(CliError::Usage(
                    "the two-block admm solver needs exactly two blocks".into(),
                ));
            }
            let blocks = problem.blocks();
            if blocks.iter().any(|b| !b.is_unconstrained()) {
                return Err(CliError::Usage(
                    "the two-block admm solver supports unconstrained blocks only".into(),
                ));
            }
            admm_two_block(
                blocks[0].objective(),
                blocks[1].objective(),
                blocks[0].coupling(),
                blocks[1].coupling(),
                problem.coupling_rhs(),
                &solver_config(opts),
            )
            .map_err(map_err)
        }
        SolverName::Aladin => {
            run_aladin(problem, &aladin_config(opts), init).map_err(map_err)
        }
    }
}

fn write_trace(result: &SolveResult, path: &PathBuf, timings: bool) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    result
        .trace
        .write_csv(&mut file, timings)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<u8, CliError> {
    let seed = args.opts.seed.unwrap_or(SolverConfig::default().seed);
    let (problem, init, scene) = build_problem(&args.problem, seed)?;
    let result = run_solver(args.solver, &problem, init.as_ref(), &args.opts)?;
    write_trace(&result, &args.out, args.timings)?;
    if let Some(path) = &args.scene_out {
        let Some(scene) = &scene else {
            return Err(CliError::Usage(
                "--scene-out applies to the sensors benchmark only".into(),
            ));
        };
        let positions: Vec<_> =
            result.state.x.iter().map(|xi| xi.rows(0, 2).into_owned()).collect();
        let mut file = std::fs::File::create(path)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        benchmarks::write_scene_csv(scene, Some(&positions), &mut file)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let last = result.trace.last().expect("trace is never empty");
    println!(
        "status={} iters={} primal_res={:e}",
        result.status,
        result.trace.iterations(),
        last.primal_res
    );
    Ok(if result.status == SolveStatus::Converged { 0 } else { 3 })
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, CliError> {
    let (ns, sigmas): (Vec<usize>, Vec<f64>) = if args.default_sweep {
        (harness::DEFAULT_SWEEP_N.to_vec(), harness::DEFAULT_SWEEP_SIGMA.to_vec())
    } else {
        if args.n.is_empty() {
            return Err(CliError::Usage(
                "provide --default-sweep or --n and --sigma lists".into(),
            ));
        }
        (args.n.clone(), args.sigma.clone())
    };
    if ns.len() != sigmas.len() {
        return Err(CliError::Usage(format!(
            "sweep lists differ in length: {} sizes, {} sigmas",
            ns.len(),
            sigmas.len()
        )));
    }
    let mut cfg = SweepConfig {
        aladin: aladin_config(&args.opts),
        seed: args.opts.seed.unwrap_or(1),
        workers: Some(resolve_workers(&args.opts)),
        repeats: args.repeats,
    };
    if args.opts.max_iter.is_none() {
        cfg.aladin.max_iter = SweepConfig::default().aladin.max_iter;
    }
    if args.opts.tol_primal.is_none() {
        cfg.aladin.tol_primal = SweepConfig::default().aladin.tol_primal;
    }
    if args.opts.tol_dual.is_none() {
        cfg.aladin.tol_dual = SweepConfig::default().aladin.tol_dual;
    }
    let table = harness::runtime_sweep(&ns, &sigmas, &cfg)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut file = std::fs::File::create(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;
    table
        .write_csv(&mut file)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;
    write_plot_script(&args.plot, &args.out)?;

    println!("{}", harness::TIMING_CSV_HEADER);
    for row in &table.rows {
        println!(
            "{},{},{:.6},{:.6},{},{}",
            row.n, row.sigma, row.seconds_concurrent, row.seconds_sequential, row.iterations,
            row.status
        );
    }
    if let Some(last) = table.rows.last() {
        if last.seconds_concurrent > 0.0 {
            println!(
                "speedup at N={}: {:.2}x (sequential / concurrent)",
                last.n,
                last.seconds_sequential / last.seconds_concurrent
            );
        }
    }
    println!("table: {}", args.out.display());
    println!("plot:  {} (render with: gnuplot {})", args.plot.display(), args.plot.display());
    Ok(0)
}

fn write_plot_script(plot: &std::path::Path, table: &std::path::Path) -> Result<(), CliError> {
    let mut f = std::fs::File::create(plot)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", plot.display())))?;
    let data = table.display();
    writeln!(
        f,
        "set title 'runtime analysis'\n\
         set xlabel 'number of sensors N'\n\
         set ylabel 'wall time [s]'\n\
         set key top left\n\
         set datafile separator ','\n\
         plot '{data}' every ::1 using 1:3 with linespoints title 'decentral optimization', \\\n\
         \x20    '{data}' every ::1 using 1:4 with linespoints title 'central optimization'"
    )
    .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", plot.display())))?;
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<u8, CliError> {
    if args.solvers.len() < 2 {
        return Err(CliError::Usage("compare needs at least two solvers".into()));
    }
    let seed = args.opts.seed.unwrap_or(SolverConfig::default().seed);
    let (problem, init, _scene) = build_problem(&args.problem, seed)?;

    let mut file = std::fs::File::create(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;
    writeln!(file, "solver,{}", distopt::problem::TRACE_CSV_HEADER)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    println!("{:<16} {:>12} {:>8} {:>14} {:>14}", "solver", "status", "iters", "primal_res", "objective");
    for name in &args.solvers {
        match run_solver(*name, &problem, init.as_ref(), &args.opts) {
            Ok(result) => {
                for r in result.trace.records() {
                    let secs = if args.timings { r.seconds } else { 0.0 };
                    writeln!(
                        file,
                        "{},{},{},{},{},{},{}",
                        name, r.iter, r.objective, r.primal_res, r.dual_res, r.step_norm, secs
                    )
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                }
                let last = result.trace.last().expect("nonempty");
                println!(
                    "{:<16} {:>12} {:>8} {:>14.6e} {:>14.6e}",
                    name.to_string(),
                    result.status.to_string(),
                    result.trace.iterations(),
                    last.primal_res,
                    last.objective
                );
            }
            Err(e) => {
                println!(
                    "{:<16} {:>12} {:>8} {:>14} {:>14}",
                    name.to_string(),
                    "failed",
                    "-",
                    "-",
                    "-"
                );
                eprintln!("{name}: {}", e.message());
            }
        }
    }
    println!("combined trace: {}", args.out.display());
    Ok(0)
}

fn cmd_config_show() -> u8 {
    let s = SolverConfig::default();
    let a = AladinConfig::default();
    println!("first-order solver defaults:");
    println!("  rho        = {}", s.rho);
    println!("  alpha      = {}", s.alpha);
    println!("  max_iter   = {}", s.max_iter);
    println!("  tol_primal = {:e}", s.tol_primal);
    println!("  tol_dual   = {:e}", s.tol_dual);
    println!("  inner_tol  = {:e}", s.inner_tol);
    println!("  seed       = {}", s.seed);
    println!("  mode       = {}", s.mode);
    println!("aladin defaults:");
    println!("  rho          = {}", a.rho);
    println!("  nu           = {}", a.nu);
    println!("  alpha        = {} (CLI uses rho when --alpha is absent)", a.alpha);
    println!("  max_iter     = {}", a.max_iter);
    println!("  tol_primal   = {:e}", a.tol_primal);
    println!("  tol_dual     = {:e}", a.tol_dual);
    println!("  eps_act      = {:e}", a.eps_act);
    println!("  hessian_mode = {:?}", a.hessian_mode);
    println!("reference option set (--reference-opts): rho = 1e3, nu = 1e4, max_iter = 10");
    println!("worker override: --workers or the {ENV_WORKERS} environment variable");
    0
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Bench { target: BenchTarget::Sensors(args) } => cmd_bench(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Config { what: ConfigCmd::Show } => Ok(cmd_config_show()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
