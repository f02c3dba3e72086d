mod common;

use har_core::model::InitialCondition;
use har_core::simulate::{compensator, read_jsonl, simulate_cluster, simulate_thinning, write_jsonl, Window};
use har_core::spectral::build_m_plus;

#[test]
fn jsonl_round_trip_is_lossless() {
    let model = common::node_chain_model();
    let path = simulate_thinning(&model, &InitialCondition::empty(&model, 0.0), 40.0, 3).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&path, &mut buf).unwrap();
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, path);
    let mut again = Vec::new();
    write_jsonl(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn generators_are_deterministic_in_the_seed() {
    let model = common::node_chain_model();
    let init = InitialCondition::empty(&model, 0.0);
    let a = simulate_thinning(&model, &init, 30.0, 9).unwrap();
    assert_eq!(a, simulate_thinning(&model, &init, 30.0, 9).unwrap());
    assert_ne!(a.events, simulate_thinning(&model, &init, 30.0, 10).unwrap().events);
    let w = Window::new(0.0, 30.0).unwrap();
    assert_eq!(simulate_cluster(&model, w, 4).unwrap(), simulate_cluster(&model, w, 4).unwrap());
}

#[test]
fn compensator_matches_counts_on_average() {
    let model = common::node_chain_model();
    let init = InitialCondition::empty(&model, 0.0);
    let reps = 300;
    let diffs: Vec<f64> = (0..reps)
        .map(|r| {
            let path = simulate_thinning(&model, &init, 20.0, 500 + r).unwrap();
            path.count(0, 0.0, 20.0) as f64 - compensator(&model, &path, Some(&init), 0, 0.0, 20.0)
        })
        .collect();
    let n = reps as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 4.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn nonlinear_paths_are_dominated() {
    for seed in 0..5 {
        let model = common::random_nonlinear_model(900 + seed);
        let plus = build_m_plus(&model).unwrap();
        let a = simulate_thinning(&model, &InitialCondition::empty(&model, 0.0), 15.0, seed).unwrap();
        let b = simulate_thinning(&plus, &InitialCondition::empty(&plus, 0.0), 15.0, seed).unwrap();
        for (ea, eb) in a.events.iter().zip(&b.events) {
            assert!(ea.iter().all(|t| eb.contains(t)));
        }
        for p in 0..model.num_chains() {
            for (j, _, w) in a.chain_points(p) {
                assert!(w.abs() <= b.chain_value(p, j).unwrap() + 1e-9);
            }
        }
    }
}
