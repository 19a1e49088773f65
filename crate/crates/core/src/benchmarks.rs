//! Benchmark problem generators: consensus l2-regularized logistic
//! regression, sensor-network localization on a circle, and small synthetic
//! families used by the CLI and the test suites.
//!
//! Generators are pure functions of their parameters and seed; identical
//! inputs produce bit-identical problems on every platform.

use crate::calculus::{ScalarField, VectorField};
use crate::problem::{LocalBlock, SeparableProblem};
use crate::rng::Rng64;
use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("dataset of {m} points does not divide into {n_sub} subsystems")]
    Partition { m: usize, n_sub: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Labeled classification data: one row per point, labels in {-1, +1}.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    points: DMatrix<f64>,
    labels: DVector<f64>,
    seed: u64,
}

impl LabeledDataset {
    pub fn new(points: DMatrix<f64>, labels: DVector<f64>, seed: u64) -> Result<Self, BenchmarkError> {
        if points.nrows() != labels.len() {
            return Err(BenchmarkError::InvalidParam(format!(
                "{} points but {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(BenchmarkError::InvalidParam("labels must be +1 or -1".into()));
        }
        Ok(Self { points, labels, seed })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Numerically stable `log(1 + exp(t))`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn logistic_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Two Gaussian clouds centered at `+-(1/sqrt(n_x)) * ones` with alternating
/// labels, linearly separable in expectation.
pub fn gen_synthetic_dataset(m: usize, n_x: usize, seed: u64) -> Result<LabeledDataset, BenchmarkError> {
    if m == 0 || n_x == 0 {
        return Err(BenchmarkError::InvalidParam("M and n_x must be at least 1".into()));
    }
    let mut rng = Rng64::new(seed);
    let center = 1.0 / (n_x as f64).sqrt();
    let cloud_std = 0.5;
    let mut points = DMatrix::zeros(m, n_x);
    let mut labels = DVector::zeros(m);
    for j in 0..m {
        let label = if j % 2 == 0 { 1.0 } else { -1.0 };
        labels[j] = label;
        for k in 0..n_x {
            points[(j, k)] = label * center + rng.normal_scaled(cloud_std);
        }
    }
    LabeledDataset::new(points, labels, seed)
}

/// The centralized l2-regularized logistic loss
/// `(1/M) sum_j log(1 + exp(-y_j x_j^T w)) + (gamma/2) ||w||^2`.
pub fn centralized_logistic_loss(data: &LabeledDataset, gamma: f64, w: &DVector<f64>) -> f64 {
    let m = data.len() as f64;
    let mut loss = 0.0;
    for j in 0..data.len() {
        let xw: f64 = data.points.row(j).transpose().dot(w);
        loss += softplus(-data.labels[j] * xw) / m;
    }
    loss + 0.5 * gamma * w.norm_squared()
}

/// How a dataset that does not divide evenly into subsystems is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Reject with an error (the reference setup assumes exact division).
    Strict,
    /// Allow the final subsystem to hold fewer points; inter-block consensus
    /// then couples only the first parameter copy of each block.
    AllowSmallerLast,
}

/// Splits the dataset into `n_sub` consensus subsystems (strict division).
///
/// Each block stacks one parameter copy per local data point (dimension
/// `cap * n_x`), ties the copies together with intra-block equality rows,
/// and couples to block 0 through stacked-identity consensus matrices with
/// `sum_i A_i x_i = 0`.
pub fn gen_logistic_consensus(
    data: &LabeledDataset,
    n_sub: usize,
    gamma: f64,
) -> Result<SeparableProblem, BenchmarkError> {
    gen_logistic_consensus_with(data, n_sub, gamma, PartitionMode::Strict)
}

pub fn gen_logistic_consensus_with(
    data: &LabeledDataset,
    n_sub: usize,
    gamma: f64,
    mode: PartitionMode,
) -> Result<SeparableProblem, BenchmarkError> {
    if n_sub == 0 {
        return Err(BenchmarkError::InvalidParam("n_sub must be at least 1".into()));
    }
    if gamma < 0.0 {
        return Err(BenchmarkError::InvalidParam("gamma must be nonnegative".into()));
    }
    let m_total = data.len();
    if n_sub > m_total {
        return Err(BenchmarkError::InvalidParam(format!(
            "n_sub = {n_sub} exceeds the dataset size {m_total}"
        )));
    }
    let n_x = data.feature_dim();
    let strict_ok = m_total.is_multiple_of(n_sub);
    if !strict_ok && mode == PartitionMode::Strict {
        return Err(BenchmarkError::Partition { m: m_total, n_sub });
    }
    let cap = m_total.div_ceil(n_sub);
    // Points per block; under AllowSmallerLast the final block may be short.
    let counts: Vec<usize> = (0..n_sub)
        .map(|i| {
            let start = i * cap;
            cap.min(m_total.saturating_sub(start))
        })
        .collect();
    if counts.contains(&0) {
        return Err(BenchmarkError::Partition { m: m_total, n_sub });
    }
    let uniform = counts.iter().all(|&c| c == cap);

    // Consensus rows: full block vectors when every block has the same shape
    // (the stacked-identity pattern), first parameter copy otherwise.
    let consensus_width = if uniform { cap * n_x } else { n_x };
    let m_c = if n_sub > 1 { (n_sub - 1) * consensus_width } else { 0 };

    let mut blocks = Vec::with_capacity(n_sub);
    for (i, &count) in counts.iter().enumerate() {
        let dim = count * n_x;
        let start = i * cap;
        let pts = data.points.rows(start, count).into_owned();
        let labs = data.labels.rows(start, count).into_owned();
        let m_f = m_total as f64;

        let objective = {
            let pts = pts.clone();
            let labs = labs.clone();
            ScalarField::new(dim, move |w| {
                let mut val = 0.0;
                for j in 0..count {
                    let wj = w.rows(j * n_x, n_x);
                    let xw: f64 = pts.row(j).transpose().dot(&wj.into_owned());
                    val += softplus(-labs[j] * xw) / m_f;
                    val += 0.5 * gamma / m_f * w.rows(j * n_x, n_x).norm_squared();
                }
                val
            })
        };
        let gradient = {
            let pts = pts.clone();
            let labs = labs.clone();
            move |w: &DVector<f64>| {
                let mut g = DVector::zeros(dim);
                for j in 0..count {
                    let wj = w.rows(j * n_x, n_x).into_owned();
                    let xj = pts.row(j).transpose();
                    let t = -labs[j] * xj.dot(&wj);
                    let coeff = logistic_sigmoid(t) * (-labs[j]) / m_f;
                    let mut gj = g.rows_mut(j * n_x, n_x);
                    gj += &xj * coeff + &wj * (gamma / m_f);
                }
                g
            }
        };

        let mut block = LocalBlock::new(objective).with_gradient(gradient);

        // Intra-block copy-tying rows: w^(0) - w^(j) = 0 for j >= 1.
        if count > 1 {
            let eq_rows = (count - 1) * n_x;
            let tie = VectorField::new(dim, eq_rows, move |w| {
                let mut out = DVector::zeros(eq_rows);
                for j in 1..count {
                    for t in 0..n_x {
                        out[(j - 1) * n_x + t] = w[t] - w[j * n_x + t];
                    }
                }
                out
            })
            .with_jacobian(move |_| {
                let mut jac = DMatrix::zeros(eq_rows, dim);
                for j in 1..count {
                    for t in 0..n_x {
                        jac[((j - 1) * n_x + t, t)] = 1.0;
                        jac[((j - 1) * n_x + t, j * n_x + t)] = -1.0;
                    }
                }
                jac
            });
            block = block.with_equalities(tie);
        }

        // Inter-block consensus coupling.
        let mut a = DMatrix::zeros(m_c, dim);
        if n_sub > 1 {
            if i == 0 {
                for rb in 0..(n_sub - 1) {
                    for t in 0..consensus_width {
                        a[(rb * consensus_width + t, t)] = 1.0;
                    }
                }
            } else {
                let rb = i - 1;
                for t in 0..consensus_width {
                    a[(rb * consensus_width + t, t)] = -1.0;
                }
            }
        }
        block = block.with_coupling(a);
        blocks.push(block);
    }

    SeparableProblem::new(blocks, DVector::zeros(m_c))
        .map_err(|e| BenchmarkError::InvalidParam(e.to_string()))
}

/// A sensor-network scene: noisy position estimates `eta` (with the
/// wraparound column so `eta[:, N]` equals `eta[:, 0]`) and measured
/// neighbor distances `eta_bar`, for `N` sensors equidistant on a circle of
/// radius `N`.
#[derive(Debug, Clone)]
pub struct SensorScene {
    pub n: usize,
    pub sigma: f64,
    /// 2 x (N+1) estimated positions, last column repeating the first.
    pub eta: DMatrix<f64>,
    /// Length-N measured distances between cyclic neighbors.
    pub eta_bar: DVector<f64>,
    pub seed: u64,
}

impl SensorScene {
    /// Noise-free position of sensor `i` (0-based): the circle point at
    /// angle `2 (i+1) pi / N`.
    pub fn true_position(&self, i: usize) -> DVector<f64> {
        let n = self.n as f64;
        let angle = 2.0 * (i as f64 + 1.0) * std::f64::consts::PI / n;
        DVector::from_vec(vec![n * angle.cos(), n * angle.sin()])
    }

    /// Exact chord length between adjacent sensors.
    pub fn true_chord(&self) -> f64 {
        2.0 * self.n as f64 * (std::f64::consts::PI / self.n as f64).sin()
    }
}

/// Generates a sensor scene with Gaussian measurement noise of standard
/// deviation `sigma`.
pub fn gen_sensor_scene(n: usize, sigma: f64, seed: u64) -> Result<SensorScene, BenchmarkError> {
    if n < 3 {
        return Err(BenchmarkError::InvalidParam(format!("need at least 3 sensors, got {n}")));
    }
    if sigma < 0.0 {
        return Err(BenchmarkError::InvalidParam("sigma must be nonnegative".into()));
    }
    let mut rng = Rng64::new(seed);
    let nf = n as f64;
    let chord = 2.0 * nf * (std::f64::consts::PI / nf).sin();
    let mut eta = DMatrix::zeros(2, n + 1);
    let mut eta_bar = DVector::zeros(n);
    for i in 0..n {
        let angle = 2.0 * (i as f64 + 1.0) * std::f64::consts::PI / nf;
        eta[(0, i)] = nf * angle.cos() + rng.normal_scaled(sigma);
        eta[(1, i)] = nf * angle.sin() + rng.normal_scaled(sigma);
        eta_bar[i] = chord + rng.normal_scaled(sigma);
    }
    let first = eta.column(0).into_owned();
    eta.set_column(n, &first);
    Ok(SensorScene { n, sigma, eta, eta_bar, seed })
}

/// Default inequality slack `2 sigma^2`, keeping the ground truth feasible
/// with high probability.
pub fn default_sensor_slack(sigma: f64) -> f64 {
    2.0 * sigma * sigma
}

/// Builds the localization problem of a scene with the default slack.
pub fn gen_sensor_problem(scene: &SensorScene) -> Result<SeparableProblem, BenchmarkError> {
    gen_sensor_problem_with_slack(scene, default_sensor_slack(scene.sigma))
}

/// Sensor-network localization: block `i` owns `x_i = (X_i, zeta_i)` (its
/// own position and its estimate of sensor `i+1`), with
///
/// ```text
/// f_i = 1/(4 s^2) ||X_i - eta_i||^2 + 1/(4 s^2) ||zeta_i - eta_{i+1}||^2
///     + 1/(2 s^2) (||X_i - zeta_i|| - eta_bar_i)^2
/// h_i = (||X_i - zeta_i|| - eta_bar_i)^2 - slack
/// ```
///
/// and cyclic coupling rows enforcing `zeta_i = X_{i+1}` through
/// `sum_i A_i x_i = 0` with `2N x 4` matrices carrying one `+I` and one `-I`
/// block each.
pub fn gen_sensor_problem_with_slack(
    scene: &SensorScene,
    slack: f64,
) -> Result<SeparableProblem, BenchmarkError> {
    if slack < 0.0 {
        return Err(BenchmarkError::InvalidParam("slack must be nonnegative".into()));
    }
    let n = scene.n;
    // Zero-noise scenes keep finite weights; every residual vanishes at the
    // ground truth regardless of the weight value.
    let s = scene.sigma.max(1e-6);
    let c_pos = 1.0 / (4.0 * s * s);
    let c_dist = 1.0 / (2.0 * s * s);

    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let eta_i = scene.eta.column(i).into_owned();
        let eta_next = scene.eta.column(i + 1).into_owned();
        let bar = scene.eta_bar[i];

        let objective = {
            let eta_i = eta_i.clone();
            let eta_next = eta_next.clone();
            ScalarField::new(4, move |x| {
                let xs = x.rows(0, 2);
                let zs = x.rows(2, 2);
                let d_pos = (xs - eta_i.rows(0, 2)).norm_squared();
                let d_next = (zs - eta_next.rows(0, 2)).norm_squared();
                let t = (xs - zs).norm();
                c_pos * d_pos + c_pos * d_next + c_dist * (t - bar) * (t - bar)
            })
        };
        let gradient = {
            let eta_i = eta_i.clone();
            let eta_next = eta_next.clone();
            move |x: &DVector<f64>| {
                let xs = x.rows(0, 2).into_owned();
                let zs = x.rows(2, 2).into_owned();
                let u = &xs - &zs;
                let t = u.norm();
                let mut g = DVector::zeros(4);
                {
                    let mut gx = g.rows_mut(0, 2);
                    gx += (&xs - &eta_i) * (2.0 * c_pos);
                }
                {
                    let mut gz = g.rows_mut(2, 2);
                    gz += (&zs - &eta_next) * (2.0 * c_pos);
                }
                // The distance term is nondifferentiable at X = zeta; its
                // contribution is omitted exactly there.
                if t > 0.0 {
                    let dir = &u / t;
                    let w = 2.0 * c_dist * (t - bar);
                    let mut gx = g.rows_mut(0, 2);
                    gx += &dir * w;
                    let mut gz = g.rows_mut(2, 2);
                    gz -= &dir * w;
                }
                g
            }
        };
        let inequality = VectorField::new(4, 1, move |x| {
            let t = (x.rows(0, 2) - x.rows(2, 2)).norm();
            DVector::from_vec(vec![(t - bar) * (t - bar) - slack])
        })
        .with_jacobian(move |x| {
            let u = (x.rows(0, 2) - x.rows(2, 2)).into_owned();
            let t = u.norm();
            let mut jac = DMatrix::zeros(1, 4);
            if t > 0.0 {
                let w = 2.0 * (t - bar) / t;
                jac[(0, 0)] = w * u[0];
                jac[(0, 1)] = w * u[1];
                jac[(0, 2)] = -w * u[0];
                jac[(0, 3)] = -w * u[1];
            }
            jac
        });

        let mut a = DMatrix::zeros(2 * n, 4);
        let eye = DMatrix::identity(2, 2);
        if i == 0 {
            a.view_mut((0, 2), (2, 2)).copy_from(&eye);
            a.view_mut((2 * n - 2, 0), (2, 2)).copy_from(&(-&eye));
        } else {
            a.view_mut((2 * (i - 1), 0), (2, 2)).copy_from(&(-&eye));
            a.view_mut((2 * i, 2), (2, 2)).copy_from(&eye);
        }

        blocks.push(
            LocalBlock::new(objective)
                .with_gradient(gradient)
                .with_inequalities(inequality)
                .with_coupling(a),
        );
    }
    SeparableProblem::new(blocks, DVector::zeros(2 * n))
        .map_err(|e| BenchmarkError::InvalidParam(e.to_string()))
}

/// Per-block start vectors `(p_i, p_{i+1})` from independently perturbed
/// circle positions, with wraparound for the last block.
pub fn sensor_start_values(scene: &SensorScene) -> Vec<DVector<f64>> {
    let mut rng = Rng64::new(scene.seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1));
    let n = scene.n;
    let nf = n as f64;
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let angle = 2.0 * (i as f64 + 1.0) * std::f64::consts::PI / nf;
        positions.push(DVector::from_vec(vec![
            nf * angle.cos() + rng.normal_scaled(scene.sigma),
            nf * angle.sin() + rng.normal_scaled(scene.sigma),
        ]));
    }
    (0..n)
        .map(|i| {
            let mut z = DVector::zeros(4);
            z.rows_mut(0, 2).copy_from(&positions[i]);
            z.rows_mut(2, 2).copy_from(&positions[(i + 1) % n]);
            z
        })
        .collect()
}

/// Consensus quadratic benchmark: `n_blocks` blocks `||x - c_i||^2` of the
/// given dimension with random centers, tied by stacked-identity consensus
/// coupling. The optimum is the mean of the centers in every coordinate.
pub fn gen_consensus_quadratic(n_blocks: usize, dim: usize, seed: u64) -> Result<SeparableProblem, BenchmarkError> {
    if n_blocks == 0 || dim == 0 {
        return Err(BenchmarkError::InvalidParam("need at least one block and one dimension".into()));
    }
    let mut rng = Rng64::new(seed);
    let centers: Vec<DVector<f64>> = (0..n_blocks)
        .map(|_| DVector::from_fn(dim, |_, _| rng.uniform_in(-3.0, 3.0)))
        .collect();
    gen_consensus_quadratic_from_centers(&centers)
}

pub fn gen_consensus_quadratic_from_centers(
    centers: &[DVector<f64>],
) -> Result<SeparableProblem, BenchmarkError> {
    if centers.is_empty() {
        return Err(BenchmarkError::InvalidParam("need at least one center".into()));
    }
    let dim = centers[0].len();
    if centers.iter().any(|c| c.len() != dim) {
        return Err(BenchmarkError::InvalidParam("centers must share one dimension".into()));
    }
    let n_blocks = centers.len();
    let m_c = if n_blocks > 1 { (n_blocks - 1) * dim } else { 0 };
    let blocks: Vec<LocalBlock> = centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c1 = c.clone();
            let c2 = c.clone();
            let f = ScalarField::new(dim, move |x| (x - &c1).norm_squared());
            let mut a = DMatrix::zeros(m_c, dim);
            if n_blocks > 1 {
                if i == 0 {
                    for rb in 0..(n_blocks - 1) {
                        for t in 0..dim {
                            a[(rb * dim + t, t)] = 1.0;
                        }
                    }
                } else {
                    for t in 0..dim {
                        a[((i - 1) * dim + t, t)] = -1.0;
                    }
                }
            }
            LocalBlock::new(f).with_gradient(move |x| (x - &c2) * 2.0).with_coupling(a)
        })
        .collect();
    SeparableProblem::new(blocks, DVector::zeros(m_c))
        .map_err(|e| BenchmarkError::InvalidParam(e.to_string()))
}

/// Linear objectives with scalar coupling: the instance where plain dual
/// methods oscillate or diverge while the augmented-Lagrangian path
/// converges. All blocks share one coefficient so the coupled problem stays
/// bounded (every feasible point is optimal).
pub fn gen_linear_coupled(n_blocks: usize, seed: u64) -> Result<SeparableProblem, BenchmarkError> {
    if n_blocks == 0 {
        return Err(BenchmarkError::InvalidParam("need at least one block".into()));
    }
    let mut rng = Rng64::new(seed);
    let c = rng.uniform_in(0.5, 1.5);
    let blocks: Vec<LocalBlock> = (0..n_blocks)
        .map(|_| {
            let f = ScalarField::new(1, move |x| c * x[0]);
            LocalBlock::new(f)
                .with_gradient(move |_| DVector::from_vec(vec![c]))
                .with_coupling(DMatrix::from_element(1, 1, 1.0))
        })
        .collect();
    SeparableProblem::new(blocks, DVector::from_element(1, 1.0))
        .map_err(|e| BenchmarkError::InvalidParam(e.to_string()))
}

/// Reads a delimited text dataset: `n_x` feature columns then a `+-1` label
/// column, comma or whitespace separated, optional header line.
pub fn load_dataset<R: BufRead>(reader: R) -> Result<LabeledDataset, BenchmarkError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(first) = rows.first() {
                    if vals.len() != first.len() {
                        return Err(BenchmarkError::Parse {
                            line: idx + 1,
                            detail: format!(
                                "expected {} columns, found {}",
                                first.len(),
                                vals.len()
                            ),
                        });
                    }
                }
                if vals.len() < 2 {
                    return Err(BenchmarkError::Parse {
                        line: idx + 1,
                        detail: "need at least one feature column and a label".into(),
                    });
                }
                rows.push(vals);
            }
            Err(_) if rows.is_empty() => continue, // header line
            Err(e) => {
                return Err(BenchmarkError::Parse { line: idx + 1, detail: e.to_string() })
            }
        }
    }
    if rows.is_empty() {
        return Err(BenchmarkError::InvalidParam("dataset is empty".into()));
    }
    let n_x = rows[0].len() - 1;
    let m = rows.len();
    let mut points = DMatrix::zeros(m, n_x);
    let mut labels = DVector::zeros(m);
    for (j, row) in rows.iter().enumerate() {
        for k in 0..n_x {
            points[(j, k)] = row[k];
        }
        labels[j] = row[n_x];
    }
    LabeledDataset::new(points, labels, 0)
}

/// Writes true positions, measured estimates, and (optionally) solved
/// positions of a scene as CSV for plotting.
pub fn write_scene_csv<W: Write>(
    scene: &SensorScene,
    solution: Option<&[DVector<f64>]>,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "i,true_x,true_y,eta_x,eta_y,est_x,est_y")?;
    for i in 0..scene.n {
        let truth = scene.true_position(i);
        let (ex, ey) = match solution {
            Some(sol) => (sol[i][0].to_string(), sol[i][1].to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            i + 1,
            truth[0],
            truth[1],
            scene.eta[(0, i)],
            scene.eta[(1, i)],
            ex,
            ey
        )?;
    }
    Ok(())
}
