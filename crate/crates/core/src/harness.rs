//! Sequential or concurrent execution of independent per-block computations,
//! with results delivered in task order regardless of completion order.
//!
//! [`map_blocks`] is the single concurrency boundary of the whole crate:
//! solvers hand it a batch of independent closures and observe a synchronous,
//! ordered interface. Each task writes to a pre-assigned slot and reductions
//! over the returned vector happen in block order, so concurrent and
//! sequential execution produce bit-identical results.

use crate::benchmarks;
use crate::solvers::aladin::{run_aladin, AladinConfig};
use crate::solvers::SolveStatus;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

/// How a batch of block tasks is executed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum ExecutionMode {
    #[default]
    Sequential,
    /// Worker threads pull tasks from a shared queue; `workers >= 1`.
    Concurrent { workers: usize },
}

impl ExecutionMode {
    /// Concurrent mode with one worker per available hardware thread.
    pub fn concurrent_default() -> Self {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        ExecutionMode::Concurrent { workers }
    }

    pub fn is_concurrent(&self) -> bool {
        matches!(self, ExecutionMode::Concurrent { .. })
    }
}

impl std::fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecutionMode::Sequential => write!(f, "sequential"),
            ExecutionMode::Concurrent { workers } => write!(f, "concurrent({workers})"),
        }
    }
}

/// All failing task indices of one batch, in task order.
#[derive(Debug)]
pub struct TaskFailures<E> {
    pub failures: Vec<(usize, E)>,
}

impl<E: std::fmt::Display> std::fmt::Display for TaskFailures<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let idx: Vec<String> = self.failures.iter().map(|(i, _)| i.to_string()).collect();
        write!(f, "{} task(s) failed (indices {})", self.failures.len(), idx.join(", "))?;
        if let Some((i, e)) = self.failures.first() {
            write!(f, "; first failure at {i}: {e}")?;
        }
        Ok(())
    }
}

/// Runs every task and returns the results in task order plus the elapsed
/// wall-clock seconds around the whole batch.
///
/// Tasks must be side-effect-free given their inputs. If any task fails, all
/// failing indices are aggregated into one error.
pub fn map_blocks<T, E, F>(
    tasks: Vec<F>,
    mode: &ExecutionMode,
) -> (Result<Vec<T>, TaskFailures<E>>, f64)
where
    F: FnOnce() -> Result<T, E> + Send,
    T: Send,
    E: Send,
{
    let n = tasks.len();
    let start = Instant::now();
    let outcomes: Vec<Result<T, E>> = match mode {
        ExecutionMode::Sequential => tasks.into_iter().map(|t| t()).collect(),
        ExecutionMode::Concurrent { workers } => {
            let worker_count = (*workers).clamp(1, n.max(1));
            let queue: Vec<Mutex<Option<F>>> =
                tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
            let slots: Vec<Mutex<Option<Result<T, E>>>> =
                (0..n).map(|_| Mutex::new(None)).collect();
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..worker_count {
                    scope.spawn(|| loop {
                        let idx = next.fetch_add(1, Ordering::Relaxed);
                        if idx >= n {
                            break;
                        }
                        let task = queue[idx].lock().unwrap().take().expect("task taken twice");
                        let result = task();
                        *slots[idx].lock().unwrap() = Some(result);
                    });
                }
            });
            slots
                .into_iter()
                .map(|s| s.into_inner().unwrap().expect("task slot left empty"))
                .collect()
        }
    };
    let elapsed = start.elapsed().as_secs_f64();

    let mut values = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(v) => values.push(v),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        (Ok(values), elapsed)
    } else {
        (Err(TaskFailures { failures }), elapsed)
    }
}

/// One row of a runtime sweep.
#[derive(Debug, Clone)]
pub struct TimingRow {
    pub n: usize,
    pub sigma: f64,
    pub seconds_concurrent: f64,
    pub seconds_sequential: f64,
    pub iterations: usize,
    pub status: String,
}

/// Wall-time measurements of the sensor-localization sweep, one row per
/// problem size.
#[derive(Debug, Clone, Default)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

pub const TIMING_CSV_HEADER: &str = "N,sigma,t_concurrent,t_sequential,iters,status";

impl TimingTable {
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{TIMING_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.n, r.sigma, r.seconds_concurrent, r.seconds_sequential, r.iterations, r.status
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep vectors have different lengths ({n_len} sizes vs {sigma_len} sigmas)")]
    LengthMismatch { n_len: usize, sigma_len: usize },

    #[error("sweep vectors must be nonempty")]
    Empty,
}

/// Sweep parameters. Each cell is run once per execution mode unless
/// `repeats` is raised, in which case the fastest repetition is kept.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub aladin: AladinConfig,
    pub seed: u64,
    pub workers: Option<usize>,
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mut aladin = AladinConfig::default();
        aladin.alpha = aladin.rho;
        aladin.max_iter = 30;
        aladin.tol_primal = 1e-4;
        aladin.tol_dual = 1e-6;
        Self { aladin, seed: 1, workers: None, repeats: 1 }
    }
}

/// The sensor counts of the reference sweep.
pub const DEFAULT_SWEEP_N: [usize; 14] = [5, 10, 15, 20, 25, 30, 35, 40, 50, 60, 70, 80, 90, 100];

/// The per-size measurement noise of the reference sweep.
pub const DEFAULT_SWEEP_SIGMA: [f64; 14] =
    [0.5, 1.0, 1.5, 2.0, 2.5, 2.5, 2.5, 2.5, 2.5, 2.5, 2.5, 2.5, 2.5, 2.5];

/// For each `(N, sigma)` pair: builds the sensor-localization problem and
/// times one ALADIN solve per execution mode. Per-cell solver failures are
/// recorded in the row status and the sweep continues.
pub fn runtime_sweep(
    ns: &[usize],
    sigmas: &[f64],
    cfg: &SweepConfig,
) -> Result<TimingTable, SweepError> {
    if ns.len() != sigmas.len() {
        return Err(SweepError::LengthMismatch { n_len: ns.len(), sigma_len: sigmas.len() });
    }
    if ns.is_empty() {
        return Err(SweepError::Empty);
    }
    let repeats = cfg.repeats.max(1);
    let mut table = TimingTable::default();
    for (&n, &sigma) in ns.iter().zip(sigmas) {
        let workers = cfg
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |w| w.get()))
            .clamp(1, n);
        let mut row = TimingRow {
            n,
            sigma,
            seconds_concurrent: f64::INFINITY,
            seconds_sequential: f64::INFINITY,
            iterations: 0,
            status: String::new(),
        };
        for rep in 0..repeats {
            for concurrent in [true, false] {
                let mut acfg = cfg.aladin.clone();
                acfg.mode = if concurrent {
                    ExecutionMode::Concurrent { workers }
                } else {
                    ExecutionMode::Sequential
                };
                let outcome = run_sweep_cell(n, sigma, cfg.seed, &acfg);
                let slot = if concurrent {
                    &mut row.seconds_concurrent
                } else {
                    &mut row.seconds_sequential
                };
                match outcome {
                    Ok((secs, iters, status)) => {
                        *slot = slot.min(secs);
                        if rep == 0 {
                            row.iterations = iters;
                            row.status = status;
                        }
                    }
                    Err((secs, message)) => {
                        *slot = slot.min(secs);
                        if rep == 0 {
                            row.status = message;
                        }
                    }
                }
            }
        }
        table.rows.push(row);
    }
    Ok(table)
}

fn run_sweep_cell(
    n: usize,
    sigma: f64,
    seed: u64,
    cfg: &AladinConfig,
) -> Result<(f64, usize, String), (f64, String)> {
    let scene = benchmarks::gen_sensor_scene(n, sigma, seed)
        .map_err(|e| (0.0, format!("error: {e}")))?;
    let problem =
        benchmarks::gen_sensor_problem(&scene).map_err(|e| (0.0, format!("error: {e}")))?;
    let z0 = benchmarks::sensor_start_values(&scene);
    let mut state = crate::problem::IterateState::zeros(&problem);
    state.z = z0.clone();
    state.x = z0;
    let start = Instant::now();
    match run_aladin(&problem, cfg, Some(&state)) {
        Ok(result) => {
            let status = match result.status {
                SolveStatus::Converged => "converged",
                SolveStatus::MaxIter => "max-iter",
                SolveStatus::Diverged => "diverged",
                SolveStatus::Oscillating => "oscillating",
            };
            Ok((start.elapsed().as_secs_f64(), result.trace.iterations(), status.to_string()))
        }
        Err(e) => Err((start.elapsed().as_secs_f64(), format!("error: {e}"))),
    }
}
