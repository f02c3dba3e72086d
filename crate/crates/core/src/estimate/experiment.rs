use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::simulate::{derive_seed, simulate_stationary, Window};

use super::dictionary::Dictionary;
use super::gram::{assemble_gram, q_measure_gram_expectation};
use super::lasso::solve_lasso;
use super::oracle::{b_tilde, fluctuation_ratio, oracle_gap, re_constant, theorem_weights};
use super::re::{check_re, ReVerdict};

/// Synthetic sparse-recovery study: simulate the true linear model, fit the
/// weighted LASSO over the dictionary, and score the fit.
#[derive(Clone, Debug)]
pub struct SparseRecovery {
    pub model: ModelParams,
    pub dict: Dictionary,
    pub truth: Vec<f64>,
    pub q: f64,
    pub gamma: f64,
    pub burn_in: f64,
    /// Sparsity level for the restricted-eigenvalue check.
    pub s: usize,
    /// Per-unit-time restricted eigenvalue; `eta = eta0 * T`.
    pub eta0: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicationRow {
    pub horizon: f64,
    pub rep: usize,
    pub seed: u64,
    pub support_recovered: bool,
    pub support_size: usize,
    pub error_l2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub inequality_holds: bool,
    pub kkt_max: f64,
    pub converged: bool,
    pub events: usize,
}

const PILOT_STREAM: u64 = 1;
const FIT_STREAM: u64 = 2;

impl SparseRecovery {
    /// Uses half the smallest restricted ratio of the reference-measure Gram
    /// matrix as `eta0`, and the true support size as `s`.
    pub fn new(model: ModelParams, dict: Dictionary, q: f64, gamma: f64, burn_in: f64, seed: u64) -> Result<Self> {
        model.require_linear()?;
        let truth = dict.coefficients_of(&model)?;
        let s = truth.iter().filter(|x| **x != 0.0).count();
        let c = re_constant(gamma)?;
        let eq = q_measure_gram_expectation(&dict, dict.sigmas())?;
        let eta0 = match check_re(&eq, 0.0, c, s) {
            ReVerdict::NoViolationFound { min_ratio, .. } => 0.5 * min_ratio,
            ReVerdict::Violation(_) => 0.0,
        };
        if !(eta0 > 0.0) {
            return Err(Error::InvalidArgument(
                "reference Gram matrix has no positive restricted eigenvalue for this dictionary".into(),
            ));
        }
        Ok(SparseRecovery { model, dict, truth, q, gamma, burn_in, s, eta0, seed })
    }

    fn path(&self, stream: u64, horizon: f64, rep: usize) -> Result<(crate::simulate::HarPath, u64)> {
        let seed = derive_seed(self.seed, stream, (horizon.to_bits()) ^ ((rep as u64) << 1));
        let window = Window::new(-self.dict.support(), horizon)?;
        Ok((simulate_stationary(&self.model, window, self.burn_in, seed)?, seed))
    }

    /// `max |b - b~| / d(C* = 1)` on one pilot replication.
    pub fn pilot_ratio(&self, horizon: f64, rep: usize) -> Result<f64> {
        let (path, _) = self.path(PILOT_STREAM, horizon, rep)?;
        let sys = assemble_gram(&path, &self.dict)?;
        let unit = theorem_weights(&self.dict, horizon, self.q, 1.0)?;
        Ok(fluctuation_ratio(&sys, &b_tilde(&sys, &self.truth), &unit))
    }

    pub fn replicate(&self, c_star: f64, horizon: f64, rep: usize) -> Result<ReplicationRow> {
        let (path, seed) = self.path(FIT_STREAM, horizon, rep)?;
        let d = theorem_weights(&self.dict, horizon, self.q, c_star)?;
        let sys = assemble_gram(&path, &self.dict)?.with_weights(d, self.gamma)?;
        let sol = solve_lasso(&sys)?;
        let gap = oracle_gap(&sys, &self.truth, &sol.coefficients, self.eta0 * horizon, self.s, self.gamma)?;
        let truth = DVector::from_column_slice(&self.truth);
        Ok(ReplicationRow {
            horizon,
            rep,
            seed,
            support_recovered: self
                .truth
                .iter()
                .zip(sol.coefficients.iter())
                .all(|(t, a)| *t == 0.0 || *a != 0.0),
            support_size: sol.support.len(),
            error_l2: (&sol.coefficients - truth).norm(),
            lhs: gap.lhs,
            rhs: gap.rhs,
            condition_i: gap.condition_i,
            condition_ii: gap.condition_ii,
            inequality_holds: gap.inequality_holds(),
            kkt_max: sol.kkt_max,
            converged: sol.converged,
            events: path.count_all(0.0, horizon),
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
