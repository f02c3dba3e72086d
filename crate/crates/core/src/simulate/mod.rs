//! Trajectory generators and path diagnostics.
//!
//! Two generators are provided: exact envelope thinning for any validated
//! model, and the branching (cluster) sampler for linear models. Node events
//! of the thinning generator are read off a canonical Poisson measure on
//! `time x mark` that depends only on the seed, and chain drifts are drawn
//! from one stream per `(chain, lattice index)`. Two runs with the same seed
//! therefore share all of their randomness, whatever the model or initial
//! condition.

mod cluster;
mod diagnostics;
mod path;
pub(crate) mod streams;
mod thinning;

pub use cluster::{simulate_cluster, simulate_cluster_with, Cluster, ClusterOptions, ClusterRun, Individual};
pub use diagnostics::{
    compensator, deviation_metrics, empirical_moment_probe, evaluate_intensity, pilot_burn_in, BurnIn,
    Deviation, MomentProbe,
};
pub use path::{read_jsonl, write_jsonl, Generator, HarPath, Window};
pub use streams::{derive_seed, drift_value, drifts_on};
pub use thinning::{
    simulate_coupling, simulate_stationary, simulate_thinning, simulate_thinning_with, ThinningOptions,
};

pub const DEFAULT_INTENSITY_CAP: f64 = 1e9;
pub const DEFAULT_CLUSTER_CAP: usize = 1_000_000;
