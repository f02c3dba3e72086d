mod common;

use std::time::{Duration, Instant};

use har_core::estimate::{
    assemble_gram, calibrate_c_star, kkt_residuals, median, q_measure_gram_expectation, simulate_q_measure,
    solve_lasso_with, Dictionary, LassoOptions, ReplicationRow, SparseRecovery,
};
use har_core::lattice::{LatticePoint, Rational};
use har_core::lincore::{coefficient_sum_bound_check, compute_coefficients, path_sums_from};
use har_core::model::{ChainSpec, DriftLaw, InitialCondition, Mask, ModelParams};
use har_core::simulate::{
    deviation_metrics, empirical_moment_probe, simulate_cluster, simulate_stationary, simulate_thinning, Window,
};
use har_core::spectral::build_m_plus;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
    limit: Option<Duration>,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, limit: None }
}

const PATH_CAP: usize = 50_000_000;
const MODELS: u64 = 50;

fn c1_oracle_equivalence() -> Outcome {
    let mut max_err = 0.0f64;
    let mut pairs = 0usize;
    for seed in 0..MODELS {
        let model = common::random_linear_model(seed);
        let table = compute_coefficients(&model, 4.0).unwrap();
        let lattices = model.lattices();
        for (p_src, src) in lattices.iter().enumerate() {
            for j_src in 0..src.frequency as i64 {
                let from = LatticePoint { chain: p_src, index: j_src };
                let k0 = src.time(j_src);
                let sums = path_sums_from(&model, from, 4.0, PATH_CAP).unwrap();
                for (p, lat) in lattices.iter().enumerate() {
                    let t0 = k0.to_f64();
                    for j in lat.indices_in(t0 - 1e-9, t0 + 4.0 + 1e-9) {
                        let lag = lat.time(j).sub(k0);
                        if lag < Rational::zero() || lag > Rational::integer(4) {
                            continue;
                        }
                        let oracle = if lag == Rational::zero() {
                            if p == p_src { 1.0 } else { 0.0 }
                        } else {
                            sums.get(&LatticePoint { chain: p, index: j }).copied().unwrap_or(0.0)
                        };
                        max_err = max_err.max((table.get(p, j, p_src, j_src) - oracle).abs());
                        pairs += 1;
                    }
                }
            }
        }
    }
    Outcome {
        pass: max_err <= 1e-12,
        detail: format!("{MODELS} models, {pairs} pairs, max abs error {max_err:.2e} (tol 1e-12)"),
        limit: Some(Duration::from_secs(10)),
    }
}

fn c2_sum_bound() -> Outcome {
    let mut min_slack = f64::INFINITY;
    let mut failures = 0;
    for seed in 0..MODELS {
        let model = common::random_linear_model(seed);
        let table = compute_coefficients(&model, 40.0).unwrap();
        let report = coefficient_sum_bound_check(&table, 1e-9).unwrap();
        min_slack = min_slack.min(report.min_slack);
        if !report.holds {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("{MODELS} models, {failures} violations, min slack {min_slack:.3e} (tol 1e-9)"),
        limit: Some(Duration::from_secs(5)),
    }
}

fn c3_hawkes_rate() -> Outcome {
    let model = common::hawkes_model();
    let window = Window::new(0.0, 2000.0).unwrap();
    let events: usize = (0..10)
        .map(|r| simulate_stationary(&model, window, 200.0, 300 + r).unwrap().count_all(0.0, 2000.0))
        .sum();
    let rate = events as f64 / (10.0 * 2000.0);
    let rel = (rate - 2.0).abs() / 2.0;
    Outcome {
        pass: rel <= 0.05,
        detail: format!("pooled rate {rate:.5} vs 2.0, relative error {:.2}% (tol 5%)", 100.0 * rel),
        limit: Some(Duration::from_secs(60)),
    }
}

fn mean_var(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|a| (a - m).powi(4)).sum::<f64>() / n;
    (m, v, ((m4 - v * v) / n).max(0.0))
}

fn c4_thinning_vs_cluster() -> Outcome {
    let model = common::node_chain_model();
    let reps = 500;
    let len = 50.0;
    let init = InitialCondition::empty(&model, 0.0);
    let window = Window::new(0.0, len).unwrap();
    let thin: Vec<f64> = (0..reps)
        .map(|r| simulate_thinning(&model, &init, len, 1000 + r).unwrap().count_all(0.0, len) as f64 / len)
        .collect();
    let clus: Vec<f64> = (0..reps)
        .map(|r| simulate_cluster(&model, window, 5000 + r).unwrap().count_all(0.0, len) as f64 / len)
        .collect();
    let (m1, v1, vv1) = mean_var(&thin);
    let (m2, v2, vv2) = mean_var(&clus);
    let n = reps as f64;
    let z_mean = (m1 - m2).abs() / (v1 / n + v2 / n).sqrt();
    let z_var = (v1 - v2).abs() / (vv1 + vv2).sqrt();
    Outcome {
        pass: z_mean <= 3.0 && z_var <= 3.0,
        detail: format!(
            "mean {m1:.4}/{m2:.4} ({z_mean:.2} SE), variance {v1:.4}/{v2:.4} ({z_var:.2} SE), tol 3 SE"
        ),
        limit: Some(Duration::from_secs(600)),
    }
}

fn c5_domination() -> Outcome {
    let mut violations = 0usize;
    let mut events = 0usize;
    let mut chain_points = 0usize;
    for seed in 0..20u64 {
        let model = common::random_nonlinear_model(100 + seed);
        let plus = build_m_plus(&model).unwrap();
        for rep in 0..10u64 {
            let s = seed * 1000 + rep;
            let a = simulate_thinning(&model, &InitialCondition::empty(&model, 0.0), 30.0, s).unwrap();
            let b = simulate_thinning(&plus, &InitialCondition::empty(&plus, 0.0), 30.0, s).unwrap();
            for (ea, eb) in a.events.iter().zip(&b.events) {
                events += ea.len();
                violations += ea.iter().filter(|t| eb.binary_search_by(|x| x.total_cmp(t)).is_err()).count();
            }
            for p in 0..model.num_chains() {
                for (j, _, w) in a.chain_points(p) {
                    let wp = b.chain_value(p, j).unwrap_or(0.0);
                    chain_points += 1;
                    if w.abs() > wp + 1e-9 * (1.0 + wp.abs()) {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("20 models x 10 paths, {events} events, {chain_points} chain values, {violations} violations"),
    )
}

fn c6_coupling_decay() -> Outcome {
    let model = common::node_chain_model();
    let empty = InitialCondition::empty(&model, 0.0);
    let seeded = InitialCondition::empty(&model, 0.0).with_events(0, vec![-0.5, -0.4, -0.3, -0.2, -0.1]);
    let times = [1.0, 2.0, 4.0, 8.0, 16.0];
    let reps = 300;
    let mut hits = [0usize; 5];
    for r in 0..reps {
        let a = simulate_thinning(&model, &empty, 20.0, 7000 + r).unwrap();
        let b = simulate_thinning(&model, &seeded, 20.0, 7000 + r).unwrap();
        for (h, t) in hits.iter_mut().zip(times) {
            if deviation_metrics(&a, &b, t).unwrap().total() > 0 {
                *h += 1;
            }
        }
    }
    let probs: Vec<f64> = hits.iter().map(|h| *h as f64 / reps as f64).collect();
    let monotone = probs.windows(2).all(|w| w[1] <= w[0]);
    let floor = 0.5 / reps as f64;
    let ys: Vec<f64> = probs.iter().map(|p| p.max(floor).ln()).collect();
    let tm = times.iter().sum::<f64>() / 5.0;
    let ym = ys.iter().sum::<f64>() / 5.0;
    let slope = times.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum::<f64>()
        / times.iter().map(|t| (t - tm).powi(2)).sum::<f64>();
    outcome(
        monotone && slope < 0.0,
        format!("P(diff after t) on {times:?} = {probs:?}, log-slope {slope:.4}"),
    )
}

fn c7_lasso() -> Outcome {
    let mut r = common::rng(77);
    let mut max_diff = 0.0f64;
    let mut max_kkt = 0.0f64;
    let mut unconverged = 0;
    for _ in 0..20 {
        let n = r.gen_range(2..=30);
        let x = DMatrix::from_fn(2 * n, n, |_, _| r.sample::<f64, _>(StandardNormal));
        let g = x.transpose() * &x;
        let b = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal) * 3.0);
        let ones = DVector::from_element(n, 1.0);
        let sol = solve_lasso_with(&g, &b, &ones, 0.0, LassoOptions::default()).unwrap();
        let exact = g.clone().cholesky().unwrap().solve(&b);
        max_diff = max_diff.max((&sol.coefficients - exact).amax());
        let d = DVector::from_fn(n, |_, _| r.gen_range(0.5..1.5));
        let gamma = r.gen_range(0.5..4.0);
        let pen = solve_lasso_with(&g, &b, &d, gamma, LassoOptions::default()).unwrap();
        for s in [&sol, &pen] {
            let (dd, gg) = if std::ptr::eq(s, &sol) { (&ones, 0.0) } else { (&d, gamma) };
            let k = kkt_residuals(&g, &b, dd, gg, &s.coefficients);
            max_kkt = max_kkt.max(k.iter().cloned().fold(0.0, f64::max));
            if !s.converged {
                unconverged += 1;
            }
        }
    }
    outcome(
        max_diff <= 1e-6 && max_kkt < 1e-8 && unconverged == 0,
        format!("20 systems: max |a - G^-1 b| {max_diff:.2e} (tol 1e-6), max KKT {max_kkt:.2e} (tol 1e-8)"),
    )
}

struct Recovery {
    c_star: f64,
    short: Vec<ReplicationRow>,
    long: Vec<ReplicationRow>,
}

fn run_recovery() -> Recovery {
    let model = common::sparse_model();
    let dict = Dictionary::full(&model, 2.0, 1).unwrap();
    let exp = SparseRecovery::new(model, dict, 0.1, 4.0, 50.0, 11).unwrap();
    let ratios: Vec<f64> = (0..100).map(|r| exp.pilot_ratio(500.0, r).unwrap()).collect();
    let c_star = calibrate_c_star(&ratios, 0.95).unwrap();
    let short = (0..50).map(|r| exp.replicate(c_star, 500.0, r).unwrap()).collect();
    let long = (0..50).map(|r| exp.replicate(c_star, 2000.0, r).unwrap()).collect();
    Recovery { c_star, short, long }
}

fn c8_sparse_recovery(rec: &Recovery) -> Outcome {
    let recovered = rec.long.iter().filter(|r| r.support_recovered).count();
    let med = |rows: &[ReplicationRow]| median(&rows.iter().map(|r| r.error_l2).collect::<Vec<_>>());
    let (m_short, m_long) = (med(&rec.short), med(&rec.long));
    outcome(
        recovered >= 45 && m_long < m_short,
        format!(
            "C* {:.4}; T=2000 support recovered {recovered}/50 (need 45); median error {m_short:.4} (T=500) vs {m_long:.4} (T=2000)",
            rec.c_star
        ),
    )
}

fn c9_oracle_inequality(rec: &Recovery) -> Outcome {
    let rows: Vec<&ReplicationRow> = rec.short.iter().chain(&rec.long).filter(|r| r.condition_i && r.condition_ii).collect();
    let holds = rows.iter().filter(|r| r.inequality_holds).count();
    outcome(
        !rows.is_empty() && holds == rows.len(),
        format!("lhs <= rhs in {holds}/{} replications with (i) and (ii) verified, out of 100", rows.len()),
    )
}

fn c10_q_gram() -> Outcome {
    let model = ModelParams::builder(
        1,
        vec![
            ChainSpec::unit(DriftLaw::Gaussian { mean: 0.0, std: 0.5 }),
            ChainSpec::new(2, Rational::new(1, 4), DriftLaw::Gaussian { mean: 0.0, std: 0.3 }),
        ],
    )
    .mask(0, 1, Mask::Abs)
    .mask(1, 1, Mask::Relu)
    .build()
    .unwrap();
    let dict = Dictionary::full(&model, 1.5, 1).unwrap();
    let n = dict.len();
    let expected = q_measure_gram_expectation(&dict, dict.sigmas()).unwrap();
    let reps = 10_000;
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut sum_sq = DMatrix::<f64>::zeros(n, n);
    let mut base_exact = true;
    for r in 0..reps {
        let path = simulate_q_measure(&dict, dict.sigmas(), 1.0, 40_000 + r).unwrap();
        let g = assemble_gram(&path, &dict).unwrap().g;
        for i in 0..dict.dim() {
            let unit = if i < dict.nodes() { 1.0 } else { dict.lattices()[i - dict.nodes()].frequency as f64 };
            base_exact &= g[(i, i)] == unit;
        }
        sum += &g;
        sum_sq += g.component_mul(&g);
    }
    let k = reps as f64;
    let mut worst = 0.0f64;
    let mut outside = 0;
    for i in 0..n {
        for j in i..n {
            let mean = sum[(i, j)] / k;
            let var = (sum_sq[(i, j)] / k - mean * mean).max(0.0) * k / (k - 1.0);
            let se = (var / k).sqrt();
            let diff = (mean - expected[(i, j)]).abs();
            let z = if se > 1e-12 { diff / se } else if diff <= 1e-9 { 0.0 } else { f64::INFINITY };
            worst = worst.max(z);
            if z > 3.0 {
                outside += 1;
            }
        }
    }
    for i in 0..dict.dim() {
        let unit = if i < dict.nodes() { 1.0 } else { dict.lattices()[i - dict.nodes()].frequency as f64 };
        base_exact &= expected[(i, i)] == unit;
    }
    outcome(
        outside == 0 && base_exact,
        format!(
            "{n} elements, {reps} reps: {outside} entries beyond 3 SE (worst {worst:.2} SE); base diagonal exact: {base_exact}"
        ),
    )
}

fn c11_moment_probe() -> Outcome {
    let model = common::hawkes_model();
    let window = Window::new(0.0, 1.0).unwrap();
    let paths: Vec<_> = (0..4000).map(|r| simulate_stationary(&model, window, 30.0, 90_000 + r).unwrap()).collect();
    let mut theta = 1.0;
    let mut probe = empirical_moment_probe(&paths, theta, 0.0, 1.0, 5).unwrap();
    while probe.mean > 10.0 {
        theta *= 0.5;
        probe = empirical_moment_probe(&paths, theta, 0.0, 1.0, 5).unwrap();
    }
    let dev = (probe.half_ratio - 1.0).abs();
    outcome(
        dev <= 0.25,
        format!(
            "theta {theta}: mean {:.4}, half-sample mean {:.4}, ratio {:.4} (tol 25%)",
            probe.mean, probe.half_mean, probe.half_ratio
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let in_time = o.limit.map_or(true, |l| elapsed <= l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = o.limit.map(|l| format!(", limit {:.0} s", l.as_secs_f64())).unwrap_or_default();
        println!(
            "{} {name}: {} [{:.2} s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    };
    report("C1 coefficient oracle equivalence", &mut c1_oracle_equivalence);
    report("C2 coefficient sum bound", &mut c2_sum_bound);
    report("C3 Hawkes mean rate", &mut c3_hawkes_rate);
    report("C4 thinning vs cluster", &mut c4_thinning_vs_cluster);
    report("C5 linear domination", &mut c5_domination);
    report("C6 coupling decay", &mut c6_coupling_decay);
    report("C7 LASSO correctness", &mut c7_lasso);
    let start = Instant::now();
    let rec = run_recovery();
    println!("     sparse-recovery study ran in {:.2} s", start.elapsed().as_secs_f64());
    report("C8 sparse recovery", &mut || c8_sparse_recovery(&rec));
    report("C9 oracle inequality", &mut || c9_oracle_inequality(&rec));
    report("C10 reference-measure Gram expectation", &mut c10_q_gram);
    report("C11 exponential-moment probe", &mut c11_moment_probe);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
