//! Weighted LASSO estimation of linear HAR parameters over an elementary
//! dictionary: Gram assembly, calibrated weights, coordinate descent,
//! restricted-eigenvalue search and oracle-inequality diagnostics.

mod dictionary;
mod experiment;
mod gram;
mod lasso;
mod oracle;
mod re;

pub use dictionary::{Dictionary, Element, ElementKind, Group};
pub use experiment::{median, ReplicationRow, SparseRecovery};
pub use gram::{
    assemble_gram, q_measure_gram_expectation, simulate_q_measure, Features, GramSystem, DEFAULT_GAMMA,
};
pub use lasso::{kkt_residuals, solve_lasso, solve_lasso_with, LassoOptions, LassoSolution};
pub use oracle::{
    b_tilde, calibrate_c_star, compute_weights, fluctuation_ratio, oracle_gap, re_constant, theorem_weights,
    weights_for, Conditions, EstimationReport, OracleGap, Weights,
};
pub use re::{check_re, check_re_with, ReOptions, ReVerdict, ReWitness};
