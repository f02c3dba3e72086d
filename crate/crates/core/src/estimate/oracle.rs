use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulate::HarPath;

use super::dictionary::{Dictionary, Group};
use super::gram::{assemble_gram, GramSystem};
use super::lasso::LassoSolution;
use super::re::{check_re, ReVerdict};

/// Weights for the LASSO penalty, with the data-driven variance terms kept
/// for comparison.
#[derive(Clone, Debug, Serialize)]
pub struct Weights {
    pub d: Vec<f64>,
    pub groups: Vec<&'static str>,
    /// `(B^2 x + sum Psi^2 dS) / (3 - e)` for node elements, else 0.
    pub variance_node: Vec<f64>,
    /// `sum Psi^2 sigma^2` over chain points for chain elements, else 0.
    pub variance_chain: Vec<f64>,
    /// Bernstein bound built from the variance terms.
    pub variance_weights: Vec<f64>,
}

fn check_calibration_args(horizon: f64, q: f64, c_star: f64) -> Result<()> {
    if !(horizon >= 2.0) {
        return Err(Error::InvalidArgument(format!("weights need T >= 2, got T = {horizon}")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("q must be positive, got {q}")));
    }
    if !(c_star > 0.0 && c_star.is_finite()) {
        return Err(Error::InvalidArgument(format!("C* must be positive, got {c_star}")));
    }
    Ok(())
}

/// Deterministic weights by element group:
/// `C*(q+1) log T`, `C*(q+1)^2 log^2 T`, `C* sqrt((q+1) log T)` and
/// `C*(q+1)^{3/2} log^{3/2} T`, each times `sqrt T`.
pub fn theorem_weights(dict: &Dictionary, horizon: f64, q: f64, c_star: f64) -> Result<Vec<f64>> {
    check_calibration_args(horizon, q, c_star)?;
    let x = (q + 1.0) * horizon.ln();
    let root = horizon.sqrt();
    Ok((0..dict.len())
        .map(|i| {
            c_star
                * root
                * match dict.group(i) {
                    Group::NodeBase => x,
                    Group::NodeInteraction => x * x,
                    Group::ChainBase => x.sqrt(),
                    Group::ChainInteraction => x.powf(1.5),
                }
        })
        .collect())
}

pub fn weights_for(system: &GramSystem, q: f64, c_star: f64) -> Result<Weights> {
    let dict = &system.dictionary;
    let d = theorem_weights(dict, system.horizon, q, c_star)?;
    let x = (q + 1.0) * system.horizon.ln();
    let sigma_max = dict.sigmas().iter().cloned().fold(0.0, f64::max);
    let n = dict.len();
    let (mut vn, mut vc, mut vw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let group = dict.group(i);
        let bound = match group {
            Group::NodeBase | Group::ChainBase => dict.elements()[i].value.abs(),
            _ => system.psi_max[i],
        };
        match group {
            Group::NodeBase | Group::NodeInteraction => {
                vn[i] = (bound * bound * x + system.psi_sq_events[i]) / (3.0 - std::f64::consts::E);
                vw[i] = (3.0 * x * vn[i]).sqrt() + bound * x / 3.0;
            }
            Group::ChainBase | Group::ChainInteraction => {
                vc[i] = system.psi_sq_chain[i];
                vw[i] = (3.0 * x * (vc[i] + bound * bound * sigma_max * sigma_max)).sqrt();
            }
        }
    }
    Ok(Weights {
        d,
        groups: (0..n).map(|i| dict.group(i).name()).collect(),
        variance_node: vn,
        variance_chain: vc,
        variance_weights: vw,
    })
}

/// Weights for the system assembled from `path` over `[0, T)`.
pub fn compute_weights(path: &HarPath, dict: &Dictionary, q: f64, c_star: f64) -> Result<Weights> {
    check_calibration_args(path.window.end, q, c_star)?;
    weights_for(&assemble_gram(path, dict)?, q, c_star)
}

/// `b~ = G a*`, available when the truth lies in the span of the dictionary.
pub fn b_tilde(system: &GramSystem, truth: &[f64]) -> DVector<f64> {
    &system.g * DVector::from_column_slice(truth)
}

/// Smallest `C*` for which `|b - b~| <= C* u` holds entrywise, `u` being the
/// weights at `C* = 1`.
pub fn fluctuation_ratio(system: &GramSystem, b_tilde: &DVector<f64>, unit_weights: &[f64]) -> f64 {
    (0..system.len())
        .map(|i| {
            let dev = (system.b[i] - b_tilde[i]).abs();
            if dev == 0.0 {
                0.0
            } else {
                dev / unit_weights[i]
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest `C*` whose coverage of condition (i) over the pilot ratios is at
/// least `coverage`.
pub fn calibrate_c_star(ratios: &[f64], coverage: f64) -> Result<f64> {
    if ratios.is_empty() || !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidArgument("calibration needs ratios and a coverage in (0, 1]".into()));
    }
    let mut r = ratios.to_vec();
    r.sort_by(f64::total_cmp);
    let k = ((coverage * r.len() as f64).ceil() as usize).clamp(1, r.len());
    Ok(r[k - 1].max(f64::MIN_POSITIVE))
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleGap {
    /// `||N_hat - N*||^2`.
    pub lhs: f64,
    /// Right-hand side instantiated at `a = a*`.
    pub rhs: f64,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub re_verdict: ReVerdict,
    pub max_fluctuation: f64,
}

impl OracleGap {
    pub fn inequality_holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-12
    }
}

pub fn re_constant(gamma: f64) -> Result<f64> {
    if !(gamma > 2.0) {
        return Err(Error::InvalidArgument(format!(
            "the oracle inequality needs gamma > 2, got {gamma}"
        )));
    }
    Ok((gamma + 2.0) / (gamma - 2.0))
}

/// Both sides of the oracle inequality and its two conditions, for synthetic
/// data with known coordinates `truth`.
pub fn oracle_gap(
    system: &GramSystem,
    truth: &[f64],
    a_hat: &DVector<f64>,
    eta: f64,
    s: usize,
    gamma: f64,
) -> Result<OracleGap> {
    let c = re_constant(gamma)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    if truth.len() != system.len() || a_hat.len() != system.len() {
        return Err(Error::Mismatch("coefficient vectors must match the dictionary".into()));
    }
    let support: Vec<usize> = (0..truth.len()).filter(|i| truth[*i] != 0.0).collect();
    if support.len() > s {
        return Err(Error::InvalidArgument(format!(
            "truth has {} nonzero coordinates, more than s = {s}",
            support.len()
        )));
    }
    let a_star = DVector::from_column_slice(truth);
    let lhs = system.distance_sq(a_hat, &a_star);
    let pen: f64 = support.iter().map(|i| system.d[*i].powi(2)).sum();
    let rhs = ((gamma + 2.0) / 2.0).powi(2) * pen / eta;
    let bt = b_tilde(system, truth);
    let fluct: Vec<f64> = (0..system.len()).map(|i| (system.b[i] - bt[i]).abs()).collect();
    let condition_i = fluct.iter().zip(system.d.iter()).all(|(f, d)| f <= d);
    let re_verdict = check_re(&system.g, eta, c, s);
    Ok(OracleGap {
        lhs,
        rhs,
        condition_i,
        condition_ii: re_verdict.holds(),
        re_verdict,
        max_fluctuation: fluct.iter().cloned().fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Conditions {
    pub i: Option<bool>,
    pub ii: Option<bool>,
}

/// Machine-readable result of one estimation run.
#[derive(Clone, Debug, Serialize)]
pub struct EstimationReport {
    pub model_hash: String,
    pub seed: u64,
    pub horizon: f64,
    pub labels: Vec<String>,
    pub support: Vec<String>,
    pub coefficients: Vec<f64>,
    pub kkt_max: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gamma: f64,
    pub weights_used: Vec<f64>,
    pub re_verdict: Option<ReVerdict>,
    pub conditions: Conditions,
}

impl EstimationReport {
    pub fn new(system: &GramSystem, solution: &LassoSolution, path: &HarPath) -> Self {
        let dict = &system.dictionary;
        EstimationReport {
            model_hash: path.model_hash.clone(),
            seed: path.seed,
            horizon: system.horizon,
            labels: (0..dict.len()).map(|i| dict.element_label(i)).collect(),
            support: solution.support.iter().map(|i| dict.element_label(*i)).collect(),
            coefficients: solution.coefficients.iter().copied().collect(),
            kkt_max: solution.kkt_max,
            objective: solution.objective,
            converged: solution.converged,
            iterations: solution.iterations,
            gamma: system.gamma,
            weights_used: system.d.iter().copied().collect(),
            re_verdict: None,
            conditions: Conditions { i: None, ii: None },
        }
    }

    pub fn with_oracle(mut self, gap: &OracleGap) -> Self {
        self.re_verdict = Some(gap.re_verdict.clone());
        self.conditions = Conditions { i: Some(gap.condition_i), ii: Some(gap.condition_ii) };
        self
    }
}
