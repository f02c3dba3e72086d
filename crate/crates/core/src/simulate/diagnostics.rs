use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{InitialCondition, Link, ModelParams};

use super::path::HarPath;
use super::streams::{stream, KIND_BOOTSTRAP};
use super::thinning::simulate_thinning;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Deviation {
    /// `card(S1 sym-diff S2 in [t, inf))` per node.
    pub sym_diff: Vec<usize>,
    /// `sum_p sum_{k >= t} |W1 - W2|`.
    pub chain_l1: f64,
}

impl Deviation {
    pub fn total(&self) -> usize {
        self.sym_diff.iter().sum()
    }
}

fn sym_diff_count(a: &[f64], b: &[f64]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            n += 1;
            i += 1;
        } else {
            n += 1;
            j += 1;
        }
    }
    n + (a.len() - i) + (b.len() - j)
}

/// Deviation between two paths after absolute time `t`.
pub fn deviation_metrics(a: &HarPath, b: &HarPath, t: f64) -> Result<Deviation> {
    if a.window != b.window || a.lattices != b.lattices || a.nodes() != b.nodes() {
        return Err(Error::Mismatch(
            "paths differ in window, node count or chain lattices".into(),
        ));
    }
    let sym_diff = a
        .events
        .iter()
        .zip(&b.events)
        .map(|(x, y)| {
            let x = &x[x.partition_point(|s| *s < t)..];
            let y = &y[y.partition_point(|s| *s < t)..];
            sym_diff_count(x, y)
        })
        .collect();
    let mut chain_l1 = 0.0;
    for p in 0..a.num_chains() {
        for (j, k, v) in a.chain_points(p) {
            if k >= t {
                chain_l1 += (v - b.chain_value(p, j).unwrap_or(0.0)).abs();
            }
        }
    }
    Ok(Deviation { sym_diff, chain_l1 })
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentProbe {
    pub samples: usize,
    pub theta: f64,
    /// Mean of `exp(theta * count)`.
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean over the first half of the sample.
    pub half_mean: f64,
    /// `half_mean / mean`.
    pub half_ratio: f64,
    /// `(n, mean over the first n)` for sample sizes doubling up to the total.
    pub doubling: Vec<(usize, f64)>,
}

/// Empirical `E[exp(theta * S([from, from + len)))]` over the paths, with a
/// percentile bootstrap interval.
pub fn empirical_moment_probe(paths: &[HarPath], theta: f64, from: f64, len: f64, seed: u64) -> Result<MomentProbe> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be >= 0, got {theta}")));
    }
    let vals: Vec<f64> = paths
        .iter()
        .map(|p| (theta * p.count_all(from, from + len) as f64).exp())
        .collect();
    let mean_of = |v: &[f64]| {
        if v.is_empty() {
            1.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mean = mean_of(&vals);
    let half_mean = mean_of(&vals[..vals.len() / 2]);
    let mut doubling = Vec::new();
    let mut n = 1;
    while n < vals.len() {
        doubling.push((n, mean_of(&vals[..n])));
        n *= 2;
    }
    doubling.push((vals.len(), mean));
    let (ci_low, ci_high) = if vals.is_empty() {
        (1.0, 1.0)
    } else {
        let mut rng = stream(seed, KIND_BOOTSTRAP, 0, 0, 0);
        let mut boots: Vec<f64> = (0..1000)
            .map(|_| {
                let s: f64 = (0..vals.len()).map(|_| vals[rng.gen_range(0..vals.len())]).sum();
                s / vals.len() as f64
            })
            .collect();
        boots.sort_by(f64::total_cmp);
        (boots[25], boots[974])
    };
    Ok(MomentProbe {
        samples: vals.len(),
        theta,
        mean,
        ci_low,
        ci_high,
        half_mean,
        half_ratio: half_mean / mean,
        doubling,
    })
}

fn pre_intensity(model: &ModelParams, path: &HarPath, init: Option<&InitialCondition>, target: usize, t: f64) -> f64 {
    let mut l = if model.is_node(target) {
        model.base_rate(target)
    } else {
        0.0
    };
    let mut add_events = |ev: &[f64], m: usize| {
        let k = model.kernel(target, m);
        for s in ev.iter().take_while(|s| **s < t) {
            l += k.eval(t - s);
        }
    };
    for m in 0..model.nodes() {
        if let Some(ic) = init {
            add_events(&ic.events[m], m);
        }
        add_events(&path.events[m], m);
    }
    for p in 0..model.num_chains() {
        let k = model.kernel(target, model.chain(p));
        let mask = model.mask(target, p);
        if let Some(ic) = init {
            for (j, v) in &ic.chain_values[p] {
                let kt = path.lattices[p].time_f64(*j);
                if kt < t {
                    l += k.eval(t - kt) * mask.apply_opt(*v);
                }
            }
        }
        for (_, kt, v) in path.chain_points(p) {
            if kt < t {
                l += k.eval(t - kt) * mask.apply(v);
            }
        }
    }
    l
}

/// `lambda^node_t` recomputed from the full history of the path.
pub fn evaluate_intensity(
    model: &ModelParams,
    path: &HarPath,
    init: Option<&InitialCondition>,
    node: usize,
    t: f64,
) -> f64 {
    model.link(node).apply(pre_intensity(model, path, init, node, t))
}

/// `int_a^b lambda^node_t dt`: exact for identity links, midpoint rule with
/// step `1e-3` otherwise.
pub fn compensator(
    model: &ModelParams,
    path: &HarPath,
    init: Option<&InitialCondition>,
    node: usize,
    a: f64,
    b: f64,
) -> f64 {
    if !matches!(model.link(node), Link::Identity) {
        let n = ((b - a) / 1e-3).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        return (0..n)
            .map(|i| evaluate_intensity(model, path, init, node, a + (i as f64 + 0.5) * h))
            .sum::<f64>()
            * h;
    }
    let prim = |k: &crate::model::Kernel, s: f64| k.integral_to(b - s) - k.integral_to(a - s);
    let mut total = model.base_rate(node) * (b - a);
    for m in 0..model.nodes() {
        let k = model.kernel(node, m);
        let init_ev = init.map(|ic| ic.events[m].as_slice()).unwrap_or(&[]);
        for s in init_ev.iter().chain(path.events[m].iter()) {
            if *s < b {
                total += prim(k, *s);
            }
        }
    }
    for p in 0..model.num_chains() {
        let k = model.kernel(node, model.chain(p));
        let mask = model.mask(node, p);
        if let Some(ic) = init {
            for (j, v) in &ic.chain_values[p] {
                total += prim(k, path.lattices[p].time_f64(*j)) * mask.apply_opt(*v);
            }
        }
        for (_, kt, v) in path.chain_points(p) {
            if kt < b {
                total += prim(k, kt) * mask.apply(v);
            }
        }
    }
    total
}

#[derive(Clone, Debug, Serialize)]
pub struct BurnIn {
    /// Fitted `K` and `c` of `P(deviation after t) ~ K exp(-c t)`.
    pub k: f64,
    pub c: f64,
    pub burn_in: f64,
    /// `(t, empirical probability)` pairs used in the fit.
    pub profile: Vec<(f64, f64)>,
}

/// Burn-in `B` with `K exp(-c B) < 1e-3`, where `K` and `c` are fitted to the
/// decay of the deviation between runs from the empty condition and from a
/// burst of one event per node and unit time on `[-5, 0)`.
pub fn pilot_burn_in(model: &ModelParams, reps: usize, horizon: f64, seed: u64) -> Result<BurnIn> {
    let empty = InitialCondition::empty(model, 0.0);
    let mut seeded = empty.clone();
    for m in 0..model.nodes() {
        seeded = seeded.with_events(m, (0..5).map(|i| -5.0 + i as f64 + 0.5).collect());
    }
    let grid: Vec<f64> = (0..)
        .map(|i| 2f64.powi(i))
        .take_while(|t| *t <= horizon)
        .collect();
    let mut hits = vec![0usize; grid.len()];
    for r in 0..reps {
        let s = seed.wrapping_add(r as u64);
        let a = simulate_thinning(model, &empty, horizon, s)?;
        let b = simulate_thinning(model, &seeded, horizon, s)?;
        for (i, t) in grid.iter().enumerate() {
            let d = deviation_metrics(&a, &b, *t)?;
            if d.total() > 0 || d.chain_l1 > 0.0 {
                hits[i] += 1;
            }
        }
    }
    let profile: Vec<(f64, f64)> = grid
        .iter()
        .zip(&hits)
        .map(|(t, h)| (*t, *h as f64 / reps.max(1) as f64))
        .collect();
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(t, p)| (*t, p.ln()))
        .collect();
    let (k, c) = if pts.len() < 2 {
        match pts.first() {
            Some(&(t, lp)) => (lp.exp(), 1.0 / t),
            None => (1e-3, 1.0),
        }
    } else {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        ((my - slope * mx).exp(), -slope)
    };
    let burn_in = if c > 0.0 {
        ((k / 1e-3).ln() / c).max(0.0)
    } else {
        horizon
    };
    Ok(BurnIn {
        k,
        c,
        burn_in,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kernel;
    use crate::simulate::{Generator, Window};

    fn one_node() -> ModelParams {
        ModelParams::builder(1, vec![])
            .base_rate(0, 1.0)
            .kernel(0, 0, Kernel::exponential(0.5, 1.0))
            .build()
            .unwrap()
    }

    #[test]
    fn self_deviation_is_zero() {
        let model = one_node();
        let init = InitialCondition::empty(&model, 0.0);
        let p = simulate_thinning(&model, &init, 30.0, 1).unwrap();
        let d = deviation_metrics(&p, &p, 0.0).unwrap();
        assert_eq!(d.total(), 0);
        assert_eq!(d.chain_l1, 0.0);
    }

    #[test]
    fn disjoint_sets_count_fully() {
        let model = one_node();
        let w = Window::new(0.0, 10.0).unwrap();
        let mut a = HarPath::empty(&model, w, 0, Generator::Thinning);
        let mut b = a.clone();
        a.events[0] = vec![1.0, 2.0, 3.0];
        b.events[0] = vec![1.5, 2.5];
        assert_eq!(deviation_metrics(&a, &b, 0.0).unwrap().total(), 5);
        let other = HarPath::empty(&model, Window::new(0.0, 11.0).unwrap(), 0, Generator::Thinning);
        assert!(deviation_metrics(&a, &other, 0.0).is_err());
    }

    #[test]
    fn theta_zero_and_empty_give_one() {
        let model = one_node();
        let init = InitialCondition::empty(&model, 0.0);
        let paths: Vec<_> = (0..4)
            .map(|s| simulate_thinning(&model, &init, 5.0, s).unwrap())
            .collect();
        assert_eq!(empirical_moment_probe(&paths, 0.0, 0.0, 1.0, 1).unwrap().mean, 1.0);
        assert_eq!(empirical_moment_probe(&[], 0.7, 0.0, 1.0, 1).unwrap().mean, 1.0);
    }

    #[test]
    fn compensator_matches_quadrature() {
        let model = one_node();
        let init = InitialCondition::empty(&model, 0.0).with_events(0, vec![-0.5]);
        let p = simulate_thinning(&model, &init, 10.0, 4).unwrap();
        let exact = compensator(&model, &p, Some(&init), 0, 0.0, 10.0);
        let n = 200_000;
        let h = 10.0 / n as f64;
        let quad: f64 = (0..n)
            .map(|i| evaluate_intensity(&model, &p, Some(&init), 0, (i as f64 + 0.5) * h))
            .sum::<f64>()
            * h;
        assert!((exact - quad).abs() < 1e-3 * exact, "{exact} vs {quad}");
    }
}
