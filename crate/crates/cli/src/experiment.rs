//! Declarative sparse-recovery experiments.
//!
//! ```json
//! {
//!   "model": "model.json",
//!   "dictionary": {"A": 2.0, "bins": 1},
//!   "seed": 11, "q": 0.1, "gamma": 4.0, "burn_in": 50.0,
//!   "horizons": [500, 2000], "reps": 50,
//!   "pilot": {"horizon": 500, "reps": 100, "coverage": 0.95}
//! }
//! ```
//!
//! `model` and `dictionary` are file paths relative to the config or inline
//! objects. A fixed `c_star` skips the pilot calibration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use har_core::estimate::{calibrate_c_star, median, Dictionary, ReplicationRow, SparseRecovery, DEFAULT_GAMMA};
use har_core::model;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{pretty_json, read_json, Failure};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    model: Value,
    dictionary: Value,
    seed: u64,
    #[serde(default = "default_q")]
    q: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_burn_in")]
    burn_in: f64,
    horizons: Vec<f64>,
    reps: usize,
    #[serde(default)]
    pilot: Option<Pilot>,
    #[serde(default)]
    c_star: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Pilot {
    horizon: Option<f64>,
    #[serde(default = "default_pilot_reps")]
    reps: usize,
    #[serde(default = "default_coverage")]
    coverage: f64,
}

fn default_q() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_burn_in() -> f64 {
    50.0
}
fn default_pilot_reps() -> usize {
    100
}
fn default_coverage() -> f64 {
    0.95
}

pub struct Overrides {
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub cstar: Option<f64>,
    pub q: Option<f64>,
}

fn resolve(v: &Value, base: &Path) -> Result<Value, Failure> {
    match v {
        Value::String(p) => read_json(&base.join(p)),
        Value::Object(_) => Ok(v.clone()),
        _ => Err(Failure::validation("schema", "expected a file path or an inline object")),
    }
}

const COLUMNS: &str = "model_hash,horizon,rep,seed,support_recovered,support_size,error_l2,lhs,rhs,condition_i,condition_ii,inequality_holds,kkt_max,converged,events";

fn csv_row(hash: &str, r: &ReplicationRow) -> String {
    format!(
        "{hash},{},{},{},{},{},{:e},{:e},{:e},{},{},{},{:e},{},{}\n",
        r.horizon,
        r.rep,
        r.seed,
        r.support_recovered,
        r.support_size,
        r.error_l2,
        r.lhs,
        r.rhs,
        r.condition_i,
        r.condition_ii,
        r.inequality_holds,
        r.kkt_max,
        r.converged,
        r.events
    )
}

pub fn run(config: &Path, o: Overrides, jobs: Option<usize>, out: &Path) -> Result<u8, Failure> {
    let mut cfg: Config = serde_json::from_value(read_json(config)?)?;
    let base = config.parent().unwrap_or(Path::new("."));
    cfg.reps = o.reps.unwrap_or(cfg.reps);
    cfg.seed = o.seed.unwrap_or(cfg.seed);
    cfg.gamma = o.gamma.unwrap_or(cfg.gamma);
    cfg.q = o.q.unwrap_or(cfg.q);
    cfg.c_star = o.cstar.or(cfg.c_star);
    if cfg.horizons.is_empty() || cfg.reps == 0 {
        return Err(Failure::validation("schema", "need at least one horizon and one replication"));
    }

    let (model, _) = model::io::from_json(&resolve(&cfg.model, base)?)?;
    let dict = Dictionary::from_json(&resolve(&cfg.dictionary, base)?, &model)?;
    let hash = model.hash();
    let exp = SparseRecovery::new(model, dict, cfg.q, cfg.gamma, cfg.burn_in, cfg.seed)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::runtime("threads", e.to_string()))?;

    let (c_star, pilot) = match cfg.c_star {
        Some(c) => (c, Value::Null),
        None => {
            let p = cfg.pilot.unwrap_or(Pilot { horizon: None, reps: default_pilot_reps(), coverage: default_coverage() });
            let horizon = p.horizon.unwrap_or(cfg.horizons[0]);
            let ratios = pool.install(|| {
                (0..p.reps)
                    .into_par_iter()
                    .map(|r| exp.pilot_ratio(horizon, r))
                    .collect::<Result<Vec<f64>, _>>()
            })?;
            let c = calibrate_c_star(&ratios, p.coverage)?;
            (c, json!({"horizon": horizon, "reps": p.reps, "coverage": p.coverage, "ratios": ratios}))
        }
    };

    let mut csv = String::from(COLUMNS);
    csv.push('\n');
    let mut per_horizon = Vec::new();
    for &horizon in &cfg.horizons {
        let rows = pool.install(|| {
            (0..cfg.reps)
                .into_par_iter()
                .map(|r| exp.replicate(c_star, horizon, r))
                .collect::<Result<Vec<ReplicationRow>, _>>()
        })?;
        for r in &rows {
            csv.push_str(&csv_row(&hash, r));
        }
        let errors: Vec<f64> = rows.iter().map(|r| r.error_l2).collect();
        let verified: Vec<&ReplicationRow> = rows.iter().filter(|r| r.condition_i && r.condition_ii).collect();
        per_horizon.push(json!({
            "horizon": horizon,
            "reps": rows.len(),
            "support_recovered": rows.iter().filter(|r| r.support_recovered).count(),
            "median_error_l2": median(&errors),
            "conditions_verified": verified.len(),
            "inequality_holds": verified.iter().filter(|r| r.inequality_holds).count(),
            "max_kkt": rows.iter().map(|r| r.kkt_max).fold(0.0, f64::max),
        }));
    }

    let summary = json!({
        "model_hash": hash,
        "seed": cfg.seed,
        "q": cfg.q,
        "gamma": cfg.gamma,
        "burn_in": cfg.burn_in,
        "c_star": c_star,
        "eta0": exp.eta0,
        "s": exp.s,
        "truth": exp.truth,
        "labels": (0..exp.dict.len()).map(|i| exp.dict.element_label(i)).collect::<Vec<_>>(),
        "pilot": pilot,
        "horizons": per_horizon,
    });
    fs::create_dir_all(out)?;
    fs::write(out.join("replications.csv"), csv)?;
    fs::write(out.join("summary.json"), pretty_json(&summary)?)?;
    let mut line = String::new();
    for h in &per_horizon {
        let _ = writeln!(
            line,
            "T={} recovered {}/{} median error {:.4}",
            h["horizon"], h["support_recovered"], h["reps"], h["median_error_l2"].as_f64().unwrap_or(f64::NAN)
        );
    }
    eprint!("{line}");
    Ok(0)
}
