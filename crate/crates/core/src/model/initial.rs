use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::ModelParams;

/// History before the start time `t0`: node events and chain values, where a
/// chain entry is either a real value or empty (`None`). Chain values are
/// keyed by lattice index; absent keys are empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InitialCondition {
    pub start: f64,
    pub events: Vec<Vec<f64>>,
    pub chain_values: Vec<BTreeMap<i64, Option<f64>>>,
}

impl InitialCondition {
    /// The empty condition: no events and every chain entry empty.
    pub fn empty(model: &ModelParams, start: f64) -> Self {
        InitialCondition {
            start,
            events: vec![Vec::new(); model.nodes()],
            chain_values: vec![BTreeMap::new(); model.num_chains()],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.iter().all(Vec::is_empty)
            && self.chain_values.iter().all(|c| c.values().all(Option::is_none))
    }

    pub fn with_events(mut self, node: usize, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        self.events[node] = times;
        self
    }

    pub fn with_chain_value(mut self, p: usize, index: i64, value: Option<f64>) -> Self {
        self.chain_values[p].insert(index, value);
        self
    }

    /// Value of chain `p` at lattice index `j` (empty if absent).
    pub fn chain_value(&self, p: usize, j: i64) -> Option<f64> {
        self.chain_values
            .get(p)
            .and_then(|c| c.get(&j).copied())
            .flatten()
    }

    /// Checks shape against the model and that all history lies before `start`.
    pub fn check(&self, model: &ModelParams) -> Result<()> {
        if self.events.len() != model.nodes() || self.chain_values.len() != model.num_chains() {
            return Err(Error::InvalidArgument(format!(
                "initial condition has {} nodes / {} chains, model has {} / {}",
                self.events.len(),
                self.chain_values.len(),
                model.nodes(),
                model.num_chains()
            )));
        }
        for (m, ev) in self.events.iter().enumerate() {
            if ev.iter().any(|t| !t.is_finite() || *t >= self.start) {
                return Err(Error::InvalidArgument(format!(
                    "initial events of m{m} must be finite and < t0={}",
                    self.start
                )));
            }
            if ev.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "initial events of m{m} must be strictly increasing"
                )));
            }
        }
        for (p, values) in self.chain_values.iter().enumerate() {
            let lat = model.lattice(p);
            for (j, v) in values {
                if lat.time_f64(*j) >= self.start {
                    return Err(Error::InvalidArgument(format!(
                        "initial value of p{p} at index {j} is not before t0={}",
                        self.start
                    )));
                }
                if matches!(v, Some(x) if !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "initial value of p{p} at index {j} is not finite"
                    )));
                }
            }
        }
        Ok(())
    }
}
