mod experiment;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use har_core::estimate::{
    assemble_gram, b_tilde, check_re, fluctuation_ratio, oracle_gap, q_measure_gram_expectation, re_constant,
    solve_lasso, theorem_weights, weights_for, Dictionary, EstimationReport, SparseRecovery, DEFAULT_GAMMA,
};
use har_core::lincore::{compute_coefficients, compute_coefficients_default};
use har_core::model::{self, InitialCondition, ModelParams};
use har_core::simulate::{read_jsonl, simulate_cluster, simulate_stationary, simulate_thinning, write_jsonl, Window};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "har", version, about = "Simulate and estimate Hawkes-autoregressive processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Thinning,
    Cluster,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions of a model.
    Validate {
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one path and write it as JSON lines.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
        window: Window,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "thinning")]
        generator: GeneratorArg,
        /// Start the thinning run this long before the window (stationary surrogate).
        #[arg(long, default_value_t = 0.0)]
        burn_in: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the chain coefficients of a linear model as CSV.
    Coeffs {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        max_lag: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the weighted LASSO on a simulated or recorded path.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// Recorded path; without it a path is simulated from the model.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long, value_parser = parse_window, allow_hyphen_values = true, required_unless_present = "path")]
        window: Option<Window>,
        #[arg(long, required_unless_present = "path")]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50.0)]
        burn_in: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        cstar: f64,
        #[arg(long, default_value_t = 0.1)]
        q: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-replication sparse-recovery experiment from a JSON config.
    Experiment {
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        cstar: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
    },
}

pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn validation(kind: &'static str, message: impl Into<String>) -> Self {
        Failure { code: 1, kind, message: message.into() }
    }

    pub fn runtime(kind: &'static str, message: impl Into<String>) -> Self {
        Failure { code: 2, kind, message: message.into() }
    }
}

impl From<har_core::Error> for Failure {
    fn from(e: har_core::Error) -> Self {
        use har_core::Error as E;
        let code = match e {
            E::InvalidModel(_) | E::Schema { .. } | E::NotLinear(_) | E::InvalidArgument(_) => 1,
            _ => 2,
        };
        Failure { code, kind: e.kind(), message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::runtime("io", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::validation("json", e.to_string())
    }
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s.split_once(':').ok_or("expected t0:T")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad t0: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad T: {e}"))?;
    Window::new(a, b).map_err(|e| e.to_string())
}

pub fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::validation("io", format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Vec<String>), Failure> {
    Ok(model::io::from_json(&read_json(path)?)?)
}

pub fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

pub fn pretty_json(v: &impl serde::Serialize) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn validate(path: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let (model, warnings) = load_model(path)?;
    let report = model::validate(&model)?;
    let ok = report.ok();
    let mut doc = serde_json::to_value(&report)?;
    doc["ok"] = json!(ok);
    if let Some(w) = doc["warnings"].as_array_mut() {
        w.extend(warnings.into_iter().map(Value::from));
    }
    write_output(out, &pretty_json(&doc)?)?;
    Ok(if ok { 0 } else { 1 })
}

fn simulate(
    model: &Path,
    window: Window,
    seed: u64,
    generator: GeneratorArg,
    burn_in: f64,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let (model, _) = load_model(model)?;
    let path = match generator {
        GeneratorArg::Thinning if burn_in > 0.0 => simulate_stationary(&model, window, burn_in, seed)?,
        GeneratorArg::Thinning => {
            simulate_thinning(&model, &InitialCondition::empty(&model, window.start), window.end, seed)?
        }
        GeneratorArg::Cluster => simulate_cluster(&model, window, seed)?,
    };
    let mut buf = Vec::new();
    write_jsonl(&path, &mut buf)?;
    write_output(out, &buf)?;
    Ok(0)
}

fn coeffs(model: &Path, max_lag: Option<f64>, out: Option<&Path>) -> Result<u8, Failure> {
    let (model, _) = load_model(model)?;
    let table = match max_lag {
        Some(l) => compute_coefficients(&model, l)?,
        None => compute_coefficients_default(&model)?,
    };
    let mut buf = format!("# model_hash={} max_lag={}\n", model.hash(), table.max_lag()).into_bytes();
    table.write_csv(&mut buf)?;
    write_output(out, &buf)?;
    Ok(0)
}

struct EstimateArgs<'a> {
    model: &'a Path,
    dict: &'a Path,
    path: Option<&'a Path>,
    window: Option<Window>,
    seed: Option<u64>,
    burn_in: f64,
    gamma: f64,
    cstar: f64,
    q: f64,
}

fn estimate(args: EstimateArgs, out: Option<&Path>) -> Result<u8, Failure> {
    let (model, _) = load_model(args.model)?;
    let dict = Dictionary::from_json(&read_json(args.dict)?, &model)?;
    let (path, synthetic) = match args.path {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| Failure::validation("io", format!("{}: {e}", p.display())))?;
            (read_jsonl(io::BufReader::new(file))?, false)
        }
        None => {
            let window = args.window.expect("clap requires window without --path");
            let seed = args.seed.expect("clap requires seed without --path");
            (simulate_stationary(&model, window, args.burn_in, seed)?, true)
        }
    };
    let horizon = path.window.end;
    let base = assemble_gram(&path, &dict)?;
    let weights = weights_for(&base, args.q, args.cstar)?;
    let sys = base.with_weights(weights.d.clone(), args.gamma)?;
    let sol = solve_lasso(&sys)?;
    let mut report = serde_json::to_value(EstimationReport::new(&sys, &sol, &path))?;
    report["weights"] = serde_json::to_value(&weights)?;
    report["mode"] = json!(if synthetic { "synthetic" } else { "production" });
    if synthetic {
        match SparseRecovery::new(model.clone(), dict.clone(), args.q, args.gamma, args.burn_in, 0) {
            Ok(exp) => {
                let gap = oracle_gap(&sys, &exp.truth, &sol.coefficients, exp.eta0 * horizon, exp.s, args.gamma)?;
                let unit = theorem_weights(&dict, horizon, args.q, 1.0)?;
                let ratio = fluctuation_ratio(&sys, &b_tilde(&sys, &exp.truth), &unit);
                let reference = q_measure_gram_expectation(&dict, dict.sigmas())?;
                let c = re_constant(args.gamma)?;
                report["re_verdict"] = serde_json::to_value(&gap.re_verdict)?;
                report["re_verdict_reference"] = serde_json::to_value(check_re(&reference, exp.eta0, c, exp.s))?;
                report["conditions"] = json!({"i": gap.condition_i, "ii": gap.condition_ii});
                report["oracle"] = json!({
                    "truth": exp.truth,
                    "eta": exp.eta0 * horizon,
                    "s": exp.s,
                    "lhs": gap.lhs,
                    "rhs": gap.rhs,
                    "inequality_holds": gap.inequality_holds(),
                    "fluctuation_ratio": ratio,
                });
            }
            Err(e) => report["oracle_unavailable"] = json!(e.to_string()),
        }
    }
    write_output(out, &pretty_json(&report)?)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Validate { model, out } => validate(&model, out.as_deref()),
        Command::Simulate { model, window, seed, generator, burn_in, out } => {
            simulate(&model, window, seed, generator, burn_in, out.as_deref())
        }
        Command::Coeffs { model, max_lag, out } => coeffs(&model, max_lag, out.as_deref()),
        Command::Estimate { model, dict, path, window, seed, burn_in, gamma, cstar, q, out } => estimate(
            EstimateArgs {
                model: &model,
                dict: &dict,
                path: path.as_deref(),
                window,
                seed,
                burn_in,
                gamma,
                cstar,
                q,
            },
            out.as_deref(),
        ),
        Command::Experiment { config, reps, jobs, out, seed, gamma, cstar, q } => {
            let overrides = experiment::Overrides { reps, seed, gamma, cstar, q };
            experiment::run(&config, overrides, jobs, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message, "exit": f.code}));
            ExitCode::from(f.code)
        }
    }
}
