use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::lincore::{
    compute_coefficients, default_max_lag, event_chain_impact, ChainBaseline, ChainSeries, ClusterMixture,
    CoefficientTable,
};
use crate::model::ModelParams;
use crate::spectral::{spec2_surrogate_matrix, spectral_radius};

use super::path::{Generator, HarPath, Window};
use super::streams::{drifts_on, stream, KIND_CLUSTER};
use super::DEFAULT_CLUSTER_CAP;

#[derive(Clone, Debug)]
pub struct ClusterOptions {
    /// Largest number of individuals in one cluster.
    pub cap: usize,
    /// Coefficient truncation lag; the default lag when `None`.
    pub max_lag: Option<f64>,
    /// Longest interval over which one immigrant-rate envelope is used.
    pub step: f64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            cap: DEFAULT_CLUSTER_CAP,
            max_lag: None,
            step: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    /// Ulam-Harris label: child ranks from the root.
    pub label: Vec<u32>,
    pub kind: usize,
    pub birth: f64,
    /// Realized offspring count per type.
    pub offspring: Vec<u32>,
}

/// One cluster, individuals in breadth-first order; the root comes first.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub individuals: Vec<Individual>,
}

#[derive(Clone, Debug)]
pub struct ClusterRun {
    pub path: HarPath,
    pub clusters: Vec<Cluster>,
    pub warnings: Vec<String>,
}

/// Sample of a linear model on `window` from the empty initial condition via
/// its cluster representation.
pub fn simulate_cluster(model: &ModelParams, window: Window, seed: u64) -> Result<HarPath> {
    Ok(simulate_cluster_with(model, window, seed, &ClusterOptions::default())?.path)
}

pub fn simulate_cluster_with(
    model: &ModelParams,
    window: Window,
    seed: u64,
    opts: &ClusterOptions,
) -> Result<ClusterRun> {
    model.require_linear()?;
    for (p, c) in model.chains().iter().enumerate() {
        if !c.drift.is_nonnegative() {
            return Err(Error::InvalidArgument(format!(
                "cluster sampling needs nonnegative drifts; p{p} has a {} law",
                c.drift.name()
            )));
        }
    }
    let mut warnings = Vec::new();
    match spec2_surrogate_matrix(model)? {
        Some(h) => {
            let r = spectral_radius(&h)?;
            if r >= 1.0 {
                warnings.push(format!("cluster matrix bound has radius {r:.4} >= 1: clusters may not terminate"));
            }
        }
        None => warnings.push("spr(H^W_W) >= 1: clusters may not terminate".into()),
    }
    let lag = match opts.max_lag {
        Some(l) => l,
        None => default_max_lag(model)?,
    };
    let table = compute_coefficients(model, lag)?;
    warnings.extend(table.warnings().iter().cloned());
    let lattices = model.lattices();
    let laws: Vec<_> = model.chains().iter().map(|c| c.drift.clone()).collect();
    let drifts = drifts_on(seed, &lattices, &laws, window.start, window.end);
    let baseline = ChainBaseline::new(&table, window.start, window.end, &drifts, None)?;
    let mut rng = stream(seed, KIND_CLUSTER, 0, 0, 0);

    let mut clusters = Vec::new();
    for m in 0..model.nodes() {
        for x in immigrants(&table, &baseline, m, window, opts.step, &mut rng)? {
            clusters.push(grow(&table, m, x, window, opts.cap, &mut rng)?);
        }
    }
    clusters.sort_by(|a, b| a.individuals[0].birth.total_cmp(&b.individuals[0].birth));

    let mut path = HarPath::empty(model, window, seed, Generator::Cluster);
    for c in &clusters {
        for ind in &c.individuals {
            path.events[ind.kind].push(ind.birth);
        }
    }
    for ev in &mut path.events {
        ev.sort_by(f64::total_cmp);
    }

    // chains: intercept and drift parts plus event drive unrolled by the coefficients
    let mut z = ChainSeries::zeros(&lattices, window.start, window.end);
    for p in 0..model.num_chains() {
        let cp = model.chain(p);
        for j in z.indices(p) {
            let k = lattices[p].time_f64(j);
            let mut v = 0.0;
            for (m, ev) in path.events.iter().enumerate() {
                let ker = model.kernel(cp, m);
                if ker.is_zero() {
                    continue;
                }
                let lo = ev.partition_point(|s| *s < k - ker.support_end());
                let hi = ev.partition_point(|s| *s < k);
                v += ev[lo..hi].iter().map(|s| ker.eval(k - s)).sum::<f64>();
            }
            z.values[p][(j - z.start[p]) as usize] = v;
        }
    }
    let events_part = z.propagate(&table);
    for p in 0..model.num_chains() {
        for j in path.chain_indices(p) {
            let idx = (j - path.chain_start[p]) as usize;
            path.chain_values[p][idx] =
                baseline.hb.get(p, j) + baseline.hxi.get(p, j) + events_part.get(p, j);
            path.drifts[p][idx] = drifts.get(p, j)?;
        }
    }
    Ok(ClusterRun {
        path,
        clusters,
        warnings,
    })
}

/// Inhomogeneous Poisson sample with rate `I^m(t0, .)` by thinning against a
/// piecewise-constant envelope.
fn immigrants<R: Rng>(
    table: &CoefficientTable,
    baseline: &ChainBaseline,
    m: usize,
    window: Window,
    step: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let model = table.model();
    let lattices = table.lattices();
    let mu = model.base_rate(m);
    let mut out = Vec::new();
    let mut a = window.start;
    while a < window.end {
        let next_k = lattices
            .iter()
            .map(|l| l.time_f64(l.first_after_f64(a)))
            .fold(f64::INFINITY, f64::min);
        let b = next_k.min(a + step).min(window.end);
        let mut bound = mu;
        for (p, lat) in lattices.iter().enumerate() {
            let ker = model.kernel(m, model.chain(p));
            if ker.is_zero() {
                continue;
            }
            let am = model.mask_lipschitz(m, p);
            let bm = model.mask_intercept(m, p);
            let lo = lat.first_at_or_after_f64((a - ker.support_end()).max(window.start));
            let hi = lat.first_after_f64(a);
            for j in lo..hi {
                let k = lat.time_f64(j);
                let w = am * (baseline.hb.get(p, j) + baseline.hxi.get(p, j)) + bm;
                bound += w * ker.range_on(a - k, b - k).1;
            }
        }
        let bound = bound * (1.0 + 1e-9) + 1e-12;
        if bound > 0.0 {
            let n = Poisson::new(bound * (b - a)).map(|d| d.sample(rng) as usize).unwrap_or(0);
            let mut cand: Vec<(f64, f64)> = (0..n)
                .map(|_| (a + (b - a) * rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            cand.sort_by(|x, y| x.0.total_cmp(&y.0));
            for (s, u) in cand {
                if s <= a {
                    continue;
                }
                let rate = baseline.immigrant_rate(table, m, s)?;
                if rate < -1e-9 {
                    return Err(Error::NegativeIntensity {
                        node: m,
                        time: s,
                        value: rate,
                    });
                }
                if u * bound <= rate {
                    out.push(s);
                }
            }
        }
        a = b;
    }
    Ok(out)
}

fn grow<R: Rng>(
    table: &CoefficientTable,
    root_kind: usize,
    root_birth: f64,
    window: Window,
    cap: usize,
    rng: &mut R,
) -> Result<Cluster> {
    let model = table.model();
    let nodes = model.nodes();
    let mut inds = vec![Individual {
        label: Vec::new(),
        kind: root_kind,
        birth: root_birth,
        offspring: vec![0; nodes],
    }];
    let mut q = 0;
    while q < inds.len() {
        let (m0, s) = (inds[q].kind, inds[q].birth);
        let horizon = window.end - s;
        if horizon <= 0.0 {
            q += 1;
            continue;
        }
        let impact = event_chain_impact(table, m0, s, horizon);
        let mut rank = 0u32;
        for m in 0..nodes {
            let mix = ClusterMixture::from_impact(table, &impact, m, m0, s);
            let direct = model.kernel(m, m0);
            let mut masses = Vec::with_capacity(mix.terms.len() + 1);
            masses.push(direct.integral_to(horizon).max(0.0));
            for &(p, k, w) in &mix.terms {
                masses.push((w * model.kernel(m, model.chain(p)).integral_to(window.end - k)).max(0.0));
            }
            let total: f64 = masses.iter().sum();
            if !(total > 0.0) {
                continue;
            }
            let n = Poisson::new(total).map(|d| d.sample(rng) as u32).unwrap_or(0);
            inds[q].offspring[m] = n;
            for _ in 0..n {
                let target = rng.gen::<f64>() * total;
                let mut idx = 0;
                let mut acc = masses[0];
                while acc < target && idx + 1 < masses.len() {
                    idx += 1;
                    acc += masses[idx];
                }
                let u = rng.gen::<f64>();
                let birth = if idx == 0 {
                    s + direct.sample_truncated(u, horizon)
                } else {
                    let (p, k, _) = mix.terms[idx - 1];
                    k + model.kernel(m, model.chain(p)).sample_truncated(u, window.end - k)
                };
                rank += 1;
                let mut label = inds[q].label.clone();
                label.push(rank);
                if birth < window.end {
                    inds.push(Individual {
                        label,
                        kind: m,
                        birth,
                        offspring: vec![0; nodes],
                    });
                }
                if inds.len() > cap {
                    return Err(Error::ClusterCap(cap));
                }
            }
        }
        q += 1;
    }
    Ok(Cluster { individuals: inds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Rational;
    use crate::model::{ChainSpec, DriftLaw, Kernel, Mask};

    #[test]
    fn no_immigrants_without_sources() {
        let model = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::HalfGaussian { std: 0.0 })])
            .kernel(0, 0, Kernel::exponential(0.5, 1.0))
            .kernel(0, 1, Kernel::constant(1.0, 1.0))
            .build()
            .unwrap();
        let path = simulate_cluster(&model, Window::new(0.0, 30.0).unwrap(), 1).unwrap();
        assert_eq!(path.total_events(), 0);
        assert!(path.chain_values[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn offspring_births_follow_parents() {
        let model = ModelParams::builder(
            1,
            vec![
                ChainSpec::new(3, Rational::new(1, 6), DriftLaw::HalfGaussian { std: 0.5 }),
                ChainSpec::new(2, Rational::new(1, 4), DriftLaw::HalfGaussian { std: 0.2 }),
            ],
        )
        .kernel(2, 0, Kernel::constant(0.4, 1.0))
        .kernel(0, 2, Kernel::constant(0.2, 0.5))
        .kernel(1, 2, Kernel::constant(0.3, 1.0))
            .base_rate(0, 0.5)
            .kernel(0, 0, Kernel::exponential(0.3, 1.0))
            .kernel(0, 1, Kernel::constant(0.3, 1.0))
            .kernel(1, 0, Kernel::constant(0.5, 0.5))
            .kernel(1, 1, Kernel::piecewise(1.0 / 3.0, vec![0.2]))
            .mask(0, 0, Mask::Affine { slope: 1.0, intercept: 0.1 })
            .build()
            .unwrap();
        let run = simulate_cluster_with(&model, Window::new(0.0, 40.0).unwrap(), 3, &ClusterOptions::default()).unwrap();
        assert!(!run.clusters.is_empty());
        for c in &run.clusters {
            for ind in &c.individuals[1..] {
                let parent_label = &ind.label[..ind.label.len() - 1];
                let parent = c.individuals.iter().find(|x| x.label == parent_label).unwrap();
                assert!(ind.birth > parent.birth);
            }
        }
        let n: usize = run.clusters.iter().map(|c| c.individuals.len()).sum();
        assert_eq!(n, run.path.total_events());
    }

    #[test]
    fn negative_drift_law_rejected() {
        let model = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::default())])
            .build()
            .unwrap();
        assert!(simulate_cluster(&model, Window::new(0.0, 1.0).unwrap(), 1).is_err());
    }
}
