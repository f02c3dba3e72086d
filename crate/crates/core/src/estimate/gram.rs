use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::simulate::streams::{stream, KIND_REFERENCE};
use crate::simulate::{Generator, HarPath, Window};

use super::dictionary::{Dictionary, ElementKind};

const BIN_TOL: f64 = 1e-9;
pub const DEFAULT_GAMMA: f64 = 4.0;

/// Lower end of the lagged window `[t - (bin+1) delta, t - bin delta)`, shifted
/// by the same snap tolerance the kernels use at bin edges.
fn lag_window(t: f64, bin: usize, delta: f64) -> (f64, f64) {
    let tol = BIN_TOL * ((bin + 1) as f64 * delta).max(1.0);
    (t - (bin + 1) as f64 * delta - tol, t - bin as f64 * delta - tol)
}

fn count_in(times: &[f64], lo: f64, hi: f64) -> (usize, usize) {
    (times.partition_point(|s| *s < lo), times.partition_point(|s| *s < hi))
}

/// Evaluates `Psi(phi, t)` for every dictionary element on one path.
pub struct Features<'a> {
    dict: &'a Dictionary,
    horizon: f64,
    events: &'a [Vec<f64>],
    chain_times: Vec<Vec<f64>>,
    chain_values: Vec<Vec<f64>>,
    /// Prefix sums of `kappa^target_p(W)` along chain `p`, indexed `[target][p]`.
    kappa_prefix: Vec<Vec<Vec<f64>>>,
    by_target: Vec<Vec<usize>>,
}

impl<'a> Features<'a> {
    pub fn new(path: &'a HarPath, dict: &'a Dictionary) -> Result<Self> {
        if path.nodes() != dict.nodes() || path.lattices != dict.lattices() {
            return Err(Error::Mismatch("path layout differs from the dictionary".into()));
        }
        if path.window.start > -dict.support() + 1e-12 || path.window.end <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "path window [{}, {}) must cover [-A, T) with A = {} and T > 0",
                path.window.start,
                path.window.end,
                dict.support()
            )));
        }
        let chains = dict.num_chains();
        let mut chain_times = Vec::with_capacity(chains);
        let mut chain_values = Vec::with_capacity(chains);
        for p in 0..chains {
            let (t, v): (Vec<f64>, Vec<f64>) = path.chain_points(p).map(|(_, t, v)| (t, v)).unzip();
            chain_times.push(t);
            chain_values.push(v);
        }
        let kappa_prefix = (0..dict.dim())
            .map(|a| {
                (0..chains)
                    .map(|p| {
                        let mask = dict.mask(a, p);
                        let mut acc = vec![0.0];
                        for w in &chain_values[p] {
                            acc.push(acc.last().unwrap() + mask.apply(*w));
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut by_target = vec![Vec::new(); dict.dim()];
        for (i, e) in dict.elements().iter().enumerate() {
            by_target[e.target].push(i);
        }
        Ok(Features {
            dict,
            horizon: path.window.end,
            events: &path.events,
            chain_times,
            chain_values,
            kappa_prefix,
            by_target,
        })
    }

    /// End `T` of the observation window `[0, T)`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Elements whose nonzero coordinate is `target`.
    pub fn elements_for(&self, target: usize) -> &[usize] {
        &self.by_target[target]
    }

    /// `Psi^target(phi_i, t)`; zero when `target` is not the element's coordinate.
    pub fn psi(&self, i: usize, target: usize, t: f64) -> f64 {
        let e = &self.dict.elements()[i];
        if e.target != target {
            return 0.0;
        }
        match e.kind {
            ElementKind::BaseRate => e.value,
            ElementKind::Interaction { source, bin } => {
                let (lo, hi) = lag_window(t, bin, self.dict.bin_width());
                if self.dict.is_node(source) {
                    let (a, b) = count_in(&self.events[source], lo, hi);
                    e.value * (b - a) as f64
                } else {
                    let p = source - self.dict.nodes();
                    let (a, b) = count_in(&self.chain_times[p], lo, hi);
                    let pre = &self.kappa_prefix[target][p];
                    e.value * (pre[b] - pre[a])
                }
            }
        }
    }

    /// Sorted times in `[0, T]` between which every `Psi^m` of node `m` is
    /// constant.
    pub fn breakpoints(&self, m: usize) -> Vec<f64> {
        let delta = self.dict.bin_width();
        let mut out = vec![0.0, self.horizon];
        for &i in &self.by_target[m] {
            if let ElementKind::Interaction { source, bin } = self.dict.elements()[i].kind {
                let times = if self.dict.is_node(source) {
                    &self.events[source]
                } else {
                    &self.chain_times[source - self.dict.nodes()]
                };
                for s in times {
                    for shift in [bin as f64 * delta, (bin + 1) as f64 * delta] {
                        let x = s + shift;
                        if x > 0.0 && x < self.horizon {
                            out.push(x);
                        }
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Quadratic contrast `-2 a'b + a'Ga` over the dictionary, with weights and
/// tuning for the weighted LASSO penalty `gamma d'|a|`.
#[derive(Clone, Debug)]
pub struct GramSystem {
    pub dictionary: Dictionary,
    pub horizon: f64,
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: DVector<f64>,
    pub gamma: f64,
    /// `sum over node events of Psi^2`, per element.
    pub psi_sq_events: Vec<f64>,
    /// `sum over chain points in [0, T) of Psi^2`, per element, scaled by the
    /// chain drift variance.
    pub psi_sq_chain: Vec<f64>,
    /// Largest `|Psi|` seen on `[0, T)`, per element.
    pub psi_max: Vec<f64>,
}

impl GramSystem {
    /// Bare system from matrices, with zero weights and default `gamma`.
    pub fn from_parts(dictionary: Dictionary, horizon: f64, g: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = dictionary.len();
        if g.nrows() != n || g.ncols() != n || b.len() != n {
            return Err(Error::Mismatch(format!("system shape {}x{} does not match {n} elements", g.nrows(), g.ncols())));
        }
        Ok(GramSystem {
            dictionary,
            horizon,
            g,
            b,
            d: DVector::zeros(n),
            gamma: DEFAULT_GAMMA,
            psi_sq_events: vec![0.0; n],
            psi_sq_chain: vec![0.0; n],
            psi_max: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn with_weights(mut self, d: Vec<f64>, gamma: f64) -> Result<Self> {
        if d.len() != self.len() || d.iter().any(|x| !(*x >= 0.0)) || !(gamma >= 0.0) {
            return Err(Error::InvalidArgument("weights must be nonnegative, one per element".into()));
        }
        self.d = DVector::from_vec(d);
        self.gamma = gamma;
        Ok(self)
    }

    /// Least-squares contrast plus penalty at `a`.
    pub fn objective(&self, a: &DVector<f64>) -> f64 {
        let pen: f64 = a.iter().zip(self.d.iter()).map(|(x, w)| w * x.abs()).sum();
        -2.0 * a.dot(&self.b) + a.dot(&(&self.g * a)) + self.gamma * pen
    }

    /// `||N_a - N_a'||^2` in the Gram geometry.
    pub fn distance_sq(&self, a: &DVector<f64>, other: &DVector<f64>) -> f64 {
        let diff = a - other;
        diff.dot(&(&self.g * &diff))
    }
}

/// Assembles `G` and `b` on `[0, T)`, `T` being the end of the path window.
///
/// Node integrals are exact sums over the breakpoint intervals of the
/// piecewise-constant features.
pub fn assemble_gram(path: &HarPath, dict: &Dictionary) -> Result<GramSystem> {
    let f = Features::new(path, dict)?;
    let n = dict.len();
    let horizon = f.horizon();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let mut psi_sq_events = vec![0.0; n];
    let mut psi_sq_chain = vec![0.0; n];
    let mut psi_max = vec![0.0f64; n];
    let mut vals = Vec::new();
    let eval = |f: &Features, target: usize, t: f64, vals: &mut Vec<f64>, psi_max: &mut [f64]| {
        vals.clear();
        for &i in f.elements_for(target) {
            let v = f.psi(i, target, t);
            psi_max[i] = psi_max[i].max(v.abs());
            vals.push(v);
        }
    };
    for m in 0..dict.nodes() {
        let idx = f.elements_for(m);
        if idx.is_empty() {
            continue;
        }
        let bp = f.breakpoints(m);
        for w in bp.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            eval(&f, m, 0.5 * (w[0] + w[1]), &mut vals, &mut psi_max);
            for (x, &i) in idx.iter().enumerate() {
                for (y, &j) in idx.iter().enumerate() {
                    g[(i, j)] += len * vals[x] * vals[y];
                }
            }
        }
        for &t in &path.events[m] {
            if !(0.0..horizon).contains(&t) {
                continue;
            }
            eval(&f, m, t, &mut vals, &mut psi_max);
            for (x, &i) in idx.iter().enumerate() {
                b[i] += vals[x];
                psi_sq_events[i] += vals[x] * vals[x];
            }
        }
    }
    for p in 0..dict.num_chains() {
        let target = dict.nodes() + p;
        let idx = f.elements_for(target);
        if idx.is_empty() {
            continue;
        }
        let var = dict.sigmas()[p].powi(2);
        for (k, w) in f.chain_times[p].iter().zip(&f.chain_values[p]) {
            if !(0.0..horizon).contains(k) {
                continue;
            }
            eval(&f, target, *k, &mut vals, &mut psi_max);
            for (x, &i) in idx.iter().enumerate() {
                b[i] += vals[x] * w;
                psi_sq_chain[i] += vals[x] * vals[x] * var;
                for (y, &j) in idx.iter().enumerate() {
                    g[(i, j)] += vals[x] * vals[y];
                }
            }
        }
    }
    Ok(GramSystem {
        dictionary: dict.clone(),
        horizon,
        g,
        b,
        d: DVector::zeros(n),
        gamma: DEFAULT_GAMMA,
        psi_sq_events,
        psi_sq_chain,
        psi_max,
    })
}

/// Sample path under the reference measure on `[-A, horizon)`: independent
/// unit-rate Poisson nodes and i.i.d. `N(0, sigma_p^2)` chain values.
pub fn simulate_q_measure(dict: &Dictionary, sigmas: &[f64], horizon: f64, seed: u64) -> Result<HarPath> {
    if sigmas.len() != dict.num_chains() {
        return Err(Error::InvalidArgument("one sigma per chain is required".into()));
    }
    let window = Window::new(-dict.support(), horizon)?;
    let mut events = Vec::with_capacity(dict.nodes());
    for m in 0..dict.nodes() {
        let mut rng = stream(seed, KIND_REFERENCE, m as u64, 0, 0);
        let n = Poisson::new(window.len()).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
        let mut ev: Vec<f64> = (0..n).map(|_| window.start + window.len() * rng.gen::<f64>()).collect();
        ev.sort_by(f64::total_cmp);
        events.push(ev);
    }
    let lattices = dict.lattices().to_vec();
    let mut chain_start = Vec::new();
    let mut chain_values = Vec::new();
    for (p, lat) in lattices.iter().enumerate() {
        let r = lat.indices_in(window.start, window.end);
        let mut rng = stream(seed, KIND_REFERENCE, (dict.nodes() + p) as u64, 1, 0);
        chain_start.push(r.start);
        chain_values.push(
            r.map(|_| sigmas[p] * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<_>>(),
        );
    }
    Ok(HarPath {
        window,
        seed,
        generator: Generator::QMeasure,
        model_hash: String::new(),
        drifts: chain_values.clone(),
        lattices,
        events,
        chain_start,
        chain_values,
        intensity: None,
    })
}

/// Closed-form `E_Q[G_0^1]`: the Gram matrix over `[0, 1)` under the
/// reference measure.
pub fn q_measure_gram_expectation(dict: &Dictionary, sigmas: &[f64]) -> Result<DMatrix<f64>> {
    if sigmas.len() != dict.num_chains() {
        return Err(Error::InvalidArgument("one sigma per chain is required".into()));
    }
    let n = dict.len();
    let delta = dict.bin_width();
    let nodes = dict.nodes();
    let mut moments = vec![(0.0, 0.0); dict.dim() * dict.num_chains()];
    for a in 0..dict.dim() {
        for p in 0..dict.num_chains() {
            moments[a * dict.num_chains() + p] = dict.mask(a, p).gaussian_moments(sigmas[p]);
        }
    }
    let moment = |a: usize, p: usize| moments[a * dict.num_chains() + p];
    let lattice_count = |p: usize, bin: usize, t: f64| {
        let (lo, hi) = lag_window(t, bin, delta);
        let r = dict.lattices()[p].indices_in(lo, hi);
        (r.end - r.start) as f64
    };
    let pair = |i: usize, j: usize, t: f64| -> f64 {
        let (ei, ej) = (&dict.elements()[i], &dict.elements()[j]);
        if ei.target != ej.target {
            return 0.0;
        }
        let a = ei.target;
        let scale = ei.value * ej.value;
        // First moment of a single feature, and the cross moment of two.
        let mean = |kind: ElementKind| match kind {
            ElementKind::BaseRate => 1.0,
            ElementKind::Interaction { source, .. } if source < nodes => delta,
            ElementKind::Interaction { source, bin } => {
                let p = source - nodes;
                lattice_count(p, bin, t) * moment(a, p).0
            }
        };
        let cross = match (ei.kind, ej.kind) {
            (ElementKind::BaseRate, k) | (k, ElementKind::BaseRate) => mean(k),
            (
                ElementKind::Interaction { source: s1, bin: b1 },
                ElementKind::Interaction { source: s2, bin: b2 },
            ) => {
                let indep = mean(ei.kind) * mean(ej.kind);
                if s1 != s2 || b1 != b2 {
                    indep
                } else if s1 < nodes {
                    indep + delta
                } else {
                    let p = s1 - nodes;
                    let (m1, m2) = moment(a, p);
                    let c = lattice_count(p, b1, t);
                    c * m2 + c * (c - 1.0) * m1 * m1
                }
            }
        };
        scale * cross
    };
    let mut g = DMatrix::zeros(n, n);
    for a in 0..dict.dim() {
        let idx: Vec<usize> = (0..n).filter(|i| dict.elements()[*i].target == a).collect();
        if dict.is_node(a) {
            let mut bp = vec![0.0, 1.0];
            for &i in &idx {
                if let ElementKind::Interaction { source, bin } = dict.elements()[i].kind {
                    if source >= nodes {
                        let lat = dict.lattices()[source - nodes];
                        let lo = -(bin as f64 + 1.0) * delta - 1.0;
                        for jj in lat.indices_in(lo, 1.0) {
                            for shift in [bin as f64 * delta, (bin + 1) as f64 * delta] {
                                let x = lat.time_f64(jj) + shift;
                                if x > 0.0 && x < 1.0 {
                                    bp.push(x);
                                }
                            }
                        }
                    }
                }
            }
            bp.sort_by(f64::total_cmp);
            bp.dedup();
            for w in bp.windows(2) {
                let len = w[1] - w[0];
                if len <= 0.0 {
                    continue;
                }
                let mid = 0.5 * (w[0] + w[1]);
                for &i in &idx {
                    for &j in &idx {
                        g[(i, j)] += len * pair(i, j, mid);
                    }
                }
            }
        } else {
            let lat = dict.lattices()[a - nodes];
            for jj in lat.indices_in(0.0, 1.0) {
                let k = lat.time_f64(jj);
                for &i in &idx {
                    for &j in &idx {
                        g[(i, j)] += pair(i, j, k);
                    }
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::dictionary::Element;
    use crate::model::{ChainSpec, DriftLaw, ModelParams};

    fn node_model() -> ModelParams {
        ModelParams::builder(2, vec![]).base_rate(0, 1.0).build().unwrap()
    }

    fn path_with(model: &ModelParams, window: Window, events: Vec<Vec<f64>>) -> HarPath {
        let mut p = HarPath::empty(model, window, 0, Generator::Thinning);
        p.events = events;
        p
    }

    #[test]
    fn base_rate_gram_is_horizon_and_count() {
        let m = node_model();
        let dict = Dictionary::new(
            &m,
            1.0,
            1,
            vec![
                Element { target: 0, kind: ElementKind::BaseRate, value: 1.0 },
                Element { target: 1, kind: ElementKind::BaseRate, value: 1.0 },
            ],
        )
        .unwrap();
        let path = path_with(&m, Window::new(-1.0, 10.0).unwrap(), vec![vec![-0.5, 0.5, 3.0, 9.9], vec![]]);
        let sys = assemble_gram(&path, &dict).unwrap();
        assert_eq!(sys.g[(0, 0)], 10.0);
        assert_eq!(sys.g[(0, 1)], 0.0);
        assert_eq!(sys.b[0], 3.0);
        assert_eq!(sys.b[1], 0.0);
    }

    #[test]
    fn counting_features_and_exact_integrals() {
        let m = node_model();
        let dict = Dictionary::full(&m, 2.0, 2).unwrap();
        let path = path_with(&m, Window::new(-2.0, 5.0).unwrap(), vec![vec![-1.5, 0.25, 1.0, 2.5], vec![0.6]]);
        let f = Features::new(&path, &dict).unwrap();
        // h[m0<-m0] bin 0 covers lags (0, 1]: events in [t-1, t).
        let i = dict
            .elements()
            .iter()
            .position(|e| e.target == 0 && e.kind == ElementKind::Interaction { source: 0, bin: 0 })
            .unwrap();
        assert_eq!(f.psi(i, 0, 1.0), 1.0);
        assert_eq!(f.psi(i, 0, 1.25), 2.0);
        assert_eq!(f.psi(i, 0, 2.0), 1.0);
        assert_eq!(f.psi(i, 1, 2.0), 0.0);
        let sys = assemble_gram(&path, &dict).unwrap();
        // Brute-force midpoint integral on a fine grid.
        let steps = 500_000;
        let h = 5.0 / steps as f64;
        let brute: f64 = (0..steps)
            .map(|s| {
                let t = (s as f64 + 0.5) * h;
                f.psi(i, 0, t).powi(2) * h
            })
            .sum();
        assert!((sys.g[(i, i)] - brute).abs() < 1e-4, "{} vs {brute}", sys.g[(i, i)]);
        let g = &sys.g;
        assert!((g - g.transpose()).amax() < 1e-12);
    }

    #[test]
    fn empty_path_keeps_only_base_rate_block() {
        let m = node_model();
        let dict = Dictionary::full(&m, 1.0, 1).unwrap();
        let path = path_with(&m, Window::new(-1.0, 4.0).unwrap(), vec![vec![], vec![]]);
        let sys = assemble_gram(&path, &dict).unwrap();
        assert!(sys.b.iter().all(|x| *x == 0.0));
        for i in 0..dict.len() {
            for j in 0..dict.len() {
                let base = dict.elements()[i].kind == ElementKind::BaseRate
                    && dict.elements()[j].kind == ElementKind::BaseRate;
                if !base {
                    assert_eq!(sys.g[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let m = node_model();
        let dict = Dictionary::full(&m, 2.0, 1).unwrap();
        let path = path_with(&m, Window::new(-1.0, 4.0).unwrap(), vec![vec![], vec![]]);
        assert!(assemble_gram(&path, &dict).is_err());
    }

    #[test]
    fn q_expectation_examples() {
        let m = node_model();
        let c = 0.5;
        let a_len = 1.5;
        let dict = Dictionary::new(
            &m,
            a_len,
            1,
            vec![
                Element { target: 0, kind: ElementKind::BaseRate, value: 1.0 },
                Element { target: 1, kind: ElementKind::BaseRate, value: 1.0 },
                Element { target: 0, kind: ElementKind::Interaction { source: 1, bin: 0 }, value: c },
                Element { target: 1, kind: ElementKind::Interaction { source: 1, bin: 0 }, value: 1.0 },
            ],
        )
        .unwrap();
        let g = q_measure_gram_expectation(&dict, &[]).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert!((g[(0, 2)] - c * a_len).abs() < 1e-12);
        assert!((g[(3, 3)] - (a_len + a_len * a_len)).abs() < 1e-12);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn q_expectation_with_chain_sources() {
        let m = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::Gaussian { mean: 0.0, std: 1.0 })])
            .base_rate(0, 1.0)
            .build()
            .unwrap();
        let dict = Dictionary::full(&m, 2.0, 1).unwrap();
        let sigma = 0.7;
        let g = q_measure_gram_expectation(&dict, &[sigma]).unwrap();
        // h[m0<-p0]: two lattice points in any length-2 window, identity mask.
        let i = dict
            .elements()
            .iter()
            .position(|e| e.target == 0 && e.kind == ElementKind::Interaction { source: 1, bin: 0 })
            .unwrap();
        assert!((g[(i, i)] - 2.0 * sigma * sigma).abs() < 1e-12);
        assert!(g[(0, i)].abs() < 1e-12);
    }

    #[test]
    fn q_path_has_unit_rate() {
        let m = node_model();
        let dict = Dictionary::full(&m, 1.0, 1).unwrap();
        let p = simulate_q_measure(&dict, &[], 4000.0, 3).unwrap();
        let rate = p.events[0].len() as f64 / 4001.0;
        assert!((rate - 1.0).abs() < 0.06);
    }
}
