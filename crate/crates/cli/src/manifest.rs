//! Problem manifest files: a TOML description of a block-separable problem
//! with named built-in objectives.
//!
//! ```toml
//! # Two quadratic blocks coupled through x0 + x1 = 2.
//! b = [2.0]
//!
//! [[block]]
//! dim = 1
//! a = [[1.0]]
//! objective = { kind = "quadratic", q = [[1.0]], linear = [0.0] }
//!
//! [[block]]
//! dim = 1
//! a = [[1.0]]
//! objective = { kind = "quadratic", q = [[1.0]], linear = [0.0] }
//! ```
//!
//! Supported objective kinds: `quadratic` (`0.5 x^T Q x + linear^T x +
//! constant`), `logistic` (regularized logistic loss over inline data
//! points), and `sensor` (one sensor-localization block). Bounds are
//! optional; TOML `inf`/`-inf` floats express unbounded coordinates.

use distopt::calculus::ScalarField;
use distopt::problem::{LocalBlock, SeparableProblem};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Coupling right-hand side; its length fixes the coupling row count.
    pub b: Vec<f64>,
    #[serde(rename = "block")]
    pub blocks: Vec<BlockSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub dim: usize,
    /// Dense coupling rows, `m_c` rows of `dim` entries each.
    pub a: Vec<Vec<f64>>,
    pub objective: ObjectiveSpec,
    pub lb: Option<Vec<f64>>,
    pub ub: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        q: Vec<Vec<f64>>,
        linear: Option<Vec<f64>>,
        constant: Option<f64>,
    },
    Logistic {
        points: Vec<Vec<f64>>,
        labels: Vec<f64>,
        gamma: f64,
        /// Total dataset size used for the `1/M` normalization; defaults to
        /// the local point count.
        total: Option<usize>,
    },
    Sensor {
        eta_self: [f64; 2],
        eta_next: [f64; 2],
        eta_bar: f64,
        sigma: f64,
    },
}

fn dense_matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>, String> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(format!("{what}: row {i} has {} entries, expected {cols}", r.len()));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn build_block(spec: &BlockSpec, m_c: usize, index: usize) -> Result<LocalBlock, String> {
    let dim = spec.dim;
    if spec.a.len() != m_c {
        return Err(format!(
            "block {index}: coupling has {} rows, manifest b has length {m_c}",
            spec.a.len()
        ));
    }
    let a = dense_matrix(&spec.a, dim, &format!("block {index} coupling"))?;

    let mut block = match &spec.objective {
        ObjectiveSpec::Quadratic { q, linear, constant } => {
            let qm = dense_matrix(q, dim, &format!("block {index} quadratic q"))?;
            if qm.nrows() != dim {
                return Err(format!("block {index}: q must be {dim}x{dim}"));
            }
            let lin = match linear {
                Some(v) if v.len() != dim => {
                    return Err(format!("block {index}: linear term length mismatch"))
                }
                Some(v) => DVector::from_vec(v.clone()),
                None => DVector::zeros(dim),
            };
            let c0 = constant.unwrap_or(0.0);
            let f = {
                let qm = qm.clone();
                let lin = lin.clone();
                ScalarField::new(dim, move |x| {
                    (0.5 * x.transpose() * &qm * x)[(0, 0)] + lin.dot(x) + c0
                })
            };
            let qs = (&qm + qm.transpose()) * 0.5;
            LocalBlock::new(f).with_gradient(move |x| &qs * x + &lin)
        }
        ObjectiveSpec::Logistic { points, labels, gamma, total } => {
            if points.len() != labels.len() {
                return Err(format!("block {index}: {} points, {} labels", points.len(), labels.len()));
            }
            if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
                return Err(format!("block {index}: labels must be +1 or -1"));
            }
            let pts = dense_matrix(points, dim, &format!("block {index} points"))?;
            let labs = DVector::from_vec(labels.clone());
            let count = pts.nrows();
            let m_total = total.unwrap_or(count).max(1) as f64;
            let gamma = *gamma;
            let f = {
                let pts = pts.clone();
                let labs = labs.clone();
                ScalarField::new(dim, move |w| {
                    let mut val = 0.0;
                    for j in 0..count {
                        let xw: f64 = pts.row(j).transpose().dot(w);
                        val += softplus(-labs[j] * xw) / m_total;
                    }
                    val + 0.5 * gamma * count as f64 / m_total * w.norm_squared()
                })
            };
            LocalBlock::new(f).with_gradient(move |w| {
                let mut g = w * (gamma * count as f64 / m_total);
                for j in 0..count {
                    let xj = pts.row(j).transpose();
                    let t = -labs[j] * xj.dot(w);
                    g += xj * (sigmoid(t) * (-labs[j]) / m_total);
                }
                g
            })
        }
        ObjectiveSpec::Sensor { eta_self, eta_next, eta_bar, sigma } => {
            if dim != 4 {
                return Err(format!("block {index}: sensor blocks have dimension 4"));
            }
            let s = sigma.max(1e-6);
            let c_pos = 1.0 / (4.0 * s * s);
            let c_dist = 1.0 / (2.0 * s * s);
            let e_self = DVector::from_vec(eta_self.to_vec());
            let e_next = DVector::from_vec(eta_next.to_vec());
            let bar = *eta_bar;
            let f = {
                let e_self = e_self.clone();
                let e_next = e_next.clone();
                ScalarField::new(4, move |x| {
                    let xs = x.rows(0, 2);
                    let zs = x.rows(2, 2);
                    let t = (xs - zs).norm();
                    c_pos * (xs - &e_self).norm_squared()
                        + c_pos * (zs - &e_next).norm_squared()
                        + c_dist * (t - bar) * (t - bar)
                })
            };
            LocalBlock::new(f).with_gradient(move |x| {
                let xs = x.rows(0, 2).into_owned();
                let zs = x.rows(2, 2).into_owned();
                let u = &xs - &zs;
                let t = u.norm();
                let mut g = DVector::zeros(4);
                {
                    let mut gx = g.rows_mut(0, 2);
                    gx += (&xs - &e_self) * (2.0 * c_pos);
                }
                {
                    let mut gz = g.rows_mut(2, 2);
                    gz += (&zs - &e_next) * (2.0 * c_pos);
                }
                if t > 0.0 {
                    let dir = &u / t;
                    let w = 2.0 * c_dist * (t - bar);
                    let mut gx = g.rows_mut(0, 2);
                    gx += &dir * w;
                    let mut gz = g.rows_mut(2, 2);
                    gz -= &dir * w;
                }
                g
            })
        }
    };

    block = block.with_coupling(a);
    if spec.lb.is_some() || spec.ub.is_some() {
        let lb = match &spec.lb {
            Some(v) if v.len() != dim => {
                return Err(format!("block {index}: lb length mismatch"))
            }
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::from_element(dim, f64::NEG_INFINITY),
        };
        let ub = match &spec.ub {
            Some(v) if v.len() != dim => {
                return Err(format!("block {index}: ub length mismatch"))
            }
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::from_element(dim, f64::INFINITY),
        };
        block = block.with_bounds(lb, ub);
    }
    Ok(block)
}

/// Parses a manifest file into a validated problem.
pub fn load_manifest(text: &str) -> Result<SeparableProblem, String> {
    let manifest: Manifest = toml::from_str(text).map_err(|e| format!("manifest parse error: {e}"))?;
    if manifest.blocks.is_empty() {
        return Err("manifest contains no blocks".into());
    }
    let m_c = manifest.b.len();
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for (i, spec) in manifest.blocks.iter().enumerate() {
        blocks.push(build_block(spec, m_c, i)?);
    }
    SeparableProblem::new(blocks, DVector::from_vec(manifest.b.clone()))
        .map_err(|e| e.to_string())
}
