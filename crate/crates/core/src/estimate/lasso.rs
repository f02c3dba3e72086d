use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::gram::GramSystem;

#[derive(Clone, Copy, Debug)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    pub step_tol: f64,
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_sweeps: 100_000,
            step_tol: 1e-10,
            kkt_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LassoSolution {
    pub coefficients: DVector<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
    pub kkt: Vec<f64>,
    pub kkt_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn objective(g: &DMatrix<f64>, b: &DVector<f64>, pen: &[f64], a: &DVector<f64>) -> f64 {
    let l1: f64 = a.iter().zip(pen).map(|(x, w)| w * x.abs()).sum();
    -2.0 * a.dot(b) + a.dot(&(g * a)) + l1
}

/// Per-coordinate violation of the optimality conditions of
/// `min -2a'b + a'Ga + gamma d'|a|`.
pub fn kkt_residuals(g: &DMatrix<f64>, b: &DVector<f64>, d: &DVector<f64>, gamma: f64, a: &DVector<f64>) -> Vec<f64> {
    let grad = 2.0 * (g * a - b);
    (0..a.len())
        .map(|j| {
            let pen = gamma * d[j];
            if a[j] != 0.0 {
                (grad[j] + pen * a[j].signum()).abs()
            } else {
                (grad[j].abs() - pen).max(0.0)
            }
        })
        .collect()
}

/// Weighted LASSO by cyclic coordinate descent with exact soft-threshold
/// updates.
pub fn solve_lasso(system: &GramSystem) -> Result<LassoSolution> {
    solve_lasso_with(&system.g, &system.b, &system.d, system.gamma, LassoOptions::default())
}

pub fn solve_lasso_with(
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    d: &DVector<f64>,
    gamma: f64,
    opts: LassoOptions,
) -> Result<LassoSolution> {
    let n = b.len();
    if g.nrows() != n || g.ncols() != n || d.len() != n {
        return Err(Error::Mismatch(format!("system shape {}x{} does not match {n} elements", g.nrows(), g.ncols())));
    }
    if !(gamma >= 0.0) || d.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("gamma and weights must be nonnegative".into()));
    }
    let pen: Vec<f64> = d.iter().map(|w| gamma * w).collect();
    let mut a = DVector::zeros(n);
    let mut ga: DVector<f64> = DVector::zeros(n);
    let mut obj = objective(g, b, &pen, &a);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..n {
            let gjj = g[(j, j)];
            let r = b[j] - (ga[j] - gjj * a[j]);
            let new = if gjj > 0.0 {
                soft_threshold(r, 0.5 * pen[j]) / gjj
            } else if r.abs() <= 0.5 * pen[j] {
                0.0
            } else {
                return Err(Error::InvalidArgument(format!(
                    "objective unbounded below along coordinate {j}"
                )));
            };
            let delta = new - a[j];
            if delta != 0.0 {
                ga.axpy(delta, &g.column(j), 1.0);
                a[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        let next = objective(g, b, &pen, &a);
        if next > obj + 1e-12 * obj.abs().max(1.0) {
            return Err(Error::Mismatch(format!(
                "coordinate descent objective increased from {obj} to {next}"
            )));
        }
        obj = next;
        if max_change < opts.step_tol {
            ga = g * &a;
            let kkt = kkt_residuals(g, b, d, gamma, &a);
            if kkt.iter().all(|r| *r < opts.kkt_tol) {
                converged = true;
                break;
            }
        }
    }
    let kkt = kkt_residuals(g, b, d, gamma, &a);
    let kkt_max = kkt.iter().cloned().fold(0.0, f64::max);
    Ok(LassoSolution {
        support: (0..n).filter(|j| a[*j] != 0.0).collect(),
        objective: obj,
        coefficients: a,
        kkt,
        kkt_max,
        iterations: sweeps,
        converged,
    })
}
