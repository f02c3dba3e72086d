use crate::error::{Error, Result};
use crate::lattice::merged_points;
use crate::model::{InitialCondition, Kernel, Link, ModelParams};

use super::path::{Generator, HarPath, Window};
use super::streams::{drift_value, CanonicalMeasure};
use super::DEFAULT_INTENSITY_CAP;

#[derive(Clone, Debug)]
pub struct ThinningOptions {
    /// Record `lambda^m` at every accepted event.
    pub record_intensity: bool,
    pub intensity_cap: f64,
    /// Longest interval over which one envelope is used.
    pub step: f64,
}

impl Default for ThinningOptions {
    fn default() -> Self {
        ThinningOptions {
            record_intensity: false,
            intensity_cap: DEFAULT_INTENSITY_CAP,
            step: 0.5,
        }
    }
}

/// Impulses of one source component: event times (value unused) or chain
/// values (`None` is the empty entry).
#[derive(Default)]
struct Source {
    times: Vec<f64>,
    values: Vec<Option<f64>>,
}

enum Term {
    Off,
    Exp {
        amp: f64,
        rate: f64,
        acc: f64,
        t_ref: f64,
        next: usize,
    },
    Window {
        support: f64,
        first: usize,
    },
}

/// Incremental evaluation of the pre-intensities `l^alpha` from the history.
struct Engine<'a> {
    model: &'a ModelParams,
    sources: Vec<Source>,
    terms: Vec<Vec<Term>>,
}

impl<'a> Engine<'a> {
    fn new(model: &'a ModelParams) -> Self {
        let d = model.dim();
        let terms = (0..d)
            .map(|t| {
                (0..d)
                    .map(|s| match model.kernel(t, s) {
                        k if k.is_zero() => Term::Off,
                        Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                            Term::Exp {
                                amp: *amplitude,
                                rate: *rate,
                                acc: 0.0,
                                t_ref: f64::NEG_INFINITY,
                                next: 0,
                            }
                        }
                        k => Term::Window {
                            support: k.support_end(),
                            first: 0,
                        },
                    })
                    .collect()
            })
            .collect();
        Engine {
            model,
            sources: (0..d).map(|_| Source::default()).collect(),
            terms,
        }
    }

    fn push(&mut self, source: usize, t: f64, value: Option<f64>) {
        self.sources[source].times.push(t);
        self.sources[source].values.push(value);
    }

    fn coef(model: &ModelParams, target: usize, source: usize, value: Option<f64>) -> f64 {
        if model.is_node(source) {
            1.0
        } else {
            model.mask(target, source - model.nodes()).apply_opt(value)
        }
    }

    fn absorb(model: &ModelParams, src: &Source, term: &mut Term, target: usize, source: usize, limit: f64, inclusive: bool) {
        if let Term::Exp {
            rate,
            acc,
            t_ref,
            next,
            ..
        } = term
        {
            while *next < src.times.len() {
                let ti = src.times[*next];
                if ti > limit || (!inclusive && ti == limit) {
                    break;
                }
                let c = Self::coef(model, target, source, src.values[*next]);
                *acc = if *acc == 0.0 { c } else { *acc * (-*rate * (ti - *t_ref)).exp() + c };
                *t_ref = ti;
                *next += 1;
            }
        }
    }

    /// `sum_beta int_{<s} h^target_beta(s - u) dX^beta_u`, without the base rate.
    fn eval(&mut self, target: usize, s: f64) -> f64 {
        let model = self.model;
        let mut total = 0.0;
        for source in 0..self.sources.len() {
            let src = &self.sources[source];
            let term = &mut self.terms[target][source];
            match term {
                Term::Off => {}
                Term::Exp { .. } => {
                    Self::absorb(model, src, term, target, source, s, false);
                    if let Term::Exp {
                        amp, rate, acc, t_ref, ..
                    } = term
                    {
                        if *acc != 0.0 {
                            total += *amp * *acc * (-*rate * (s - *t_ref)).exp();
                        }
                    }
                }
                Term::Window { support, first } => {
                    let reach = *support * (1.0 + 1e-9) + 1e-12;
                    while *first < src.times.len() && s - src.times[*first] > reach {
                        *first += 1;
                    }
                    let ker = model.kernel(target, source);
                    for i in *first..src.times.len() {
                        let ti = src.times[i];
                        if ti >= s {
                            break;
                        }
                        let c = Self::coef(model, target, source, src.values[i]);
                        if c != 0.0 {
                            total += c * ker.eval(s - ti);
                        }
                    }
                }
            }
        }
        total
    }

    /// Upper bound of [`Engine::eval`] over `s` in `(a, b]`, assuming no new
    /// impulses in that interval.
    fn upper(&mut self, target: usize, a: f64, b: f64) -> f64 {
        let model = self.model;
        let mut total = 0.0;
        for source in 0..self.sources.len() {
            let src = &self.sources[source];
            let term = &mut self.terms[target][source];
            match term {
                Term::Off => {}
                Term::Exp { .. } => {
                    Self::absorb(model, src, term, target, source, a, true);
                    if let Term::Exp {
                        amp, rate, acc, t_ref, ..
                    } = term
                    {
                        if *acc != 0.0 {
                            let v = *amp * *acc * (-*rate * (a - *t_ref)).exp();
                            total += if v >= 0.0 { v } else { v * (-*rate * (b - a)).exp() };
                        }
                    }
                }
                Term::Window { support, first } => {
                    let reach = *support * (1.0 + 1e-9) + 1e-12;
                    while *first < src.times.len() && a - src.times[*first] > reach {
                        *first += 1;
                    }
                    let ker = model.kernel(target, source);
                    for i in *first..src.times.len() {
                        let ti = src.times[i];
                        if ti > a {
                            break;
                        }
                        let c = Self::coef(model, target, source, src.values[i]);
                        if c == 0.0 {
                            continue;
                        }
                        let (lo, hi) = ker.range_on(a - ti, b - ti);
                        total += if c > 0.0 { c * hi } else { c * lo };
                    }
                }
            }
        }
        total
    }
}

/// Exact sample of the process started at `init.start` with initial condition
/// `init`, observed on `[init.start, end)`.
pub fn simulate_thinning(model: &ModelParams, init: &InitialCondition, end: f64, seed: u64) -> Result<HarPath> {
    simulate_thinning_with(model, init, end, seed, &ThinningOptions::default())
}

pub fn simulate_thinning_with(
    model: &ModelParams,
    init: &InitialCondition,
    end: f64,
    seed: u64,
    opts: &ThinningOptions,
) -> Result<HarPath> {
    init.check(model)?;
    let window = Window::new(init.start, end)?;
    let nodes = model.nodes();
    let lattices = model.lattices();
    let mut engine = Engine::new(model);
    for (m, ev) in init.events.iter().enumerate() {
        for t in ev {
            engine.push(m, *t, Some(1.0));
        }
    }
    for (p, vals) in init.chain_values.iter().enumerate() {
        for (j, v) in vals {
            engine.push(model.chain(p), lattices[p].time_f64(*j), *v);
        }
    }
    let mut path = HarPath::empty(model, window, seed, Generator::Thinning);
    let mut lambdas: Vec<Vec<f64>> = vec![Vec::new(); nodes];
    let mut measure = CanonicalMeasure::new(seed, nodes);
    let points = merged_points(&lattices, window.start, window.end);
    let mut li = 0;
    let mut t = window.start;
    let mut cell = t.floor() as i64;
    let mut candidates = Vec::new();
    let mut bounds = vec![0.0; nodes];
    loop {
        let k_next = points.get(li).map(|(k, _)| k.to_f64()).unwrap_or(f64::INFINITY);
        if k_next <= t {
            // all chains with a point at this exact time update together
            let k = points[li].0;
            let mut group = Vec::new();
            while li < points.len() && points[li].0 == k {
                group.push(points[li].1);
                li += 1;
            }
            let kf = k.to_f64();
            let mut updates = Vec::with_capacity(group.len());
            for lp in &group {
                let c = model.chain(lp.chain);
                let x = engine.eval(c, kf);
                let xi = drift_value(seed, lp.chain, lp.index, &model.chain_spec(lp.chain).drift);
                updates.push((lp, xi + model.link(c).apply(x), xi));
            }
            for (lp, w, xi) in updates {
                engine.push(model.chain(lp.chain), kf, Some(w));
                let idx = (lp.index - path.chain_start[lp.chain]) as usize;
                path.chain_values[lp.chain][idx] = w;
                path.drifts[lp.chain][idx] = xi;
            }
            continue;
        }
        if t >= window.end {
            break;
        }
        let stop = k_next.min(window.end).min(t + opts.step);
        candidates.clear();
        for m in 0..nodes {
            let l = model.base_rate(m) + engine.upper(m, t, stop);
            let lam = model.link(m).apply(l);
            let bound = lam * (1.0 + 1e-9) + 1e-12;
            if bound > opts.intensity_cap {
                return Err(Error::IntensityCap {
                    bound,
                    cap: opts.intensity_cap,
                    time: t,
                });
            }
            bounds[m] = bound;
            measure.candidates(m, t, stop, bound, &mut candidates);
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut accepted = false;
        for &(s, m, u) in &candidates {
            let l = model.base_rate(m) + engine.eval(m, s);
            if matches!(model.link(m), Link::Identity) && l < -1e-9 {
                return Err(Error::NegativeIntensity {
                    node: m,
                    time: s,
                    value: l,
                });
            }
            let lam = model.link(m).apply(l).max(0.0);
            if u <= lam {
                engine.push(m, s, Some(1.0));
                path.events[m].push(s);
                if opts.record_intensity {
                    lambdas[m].push(lam);
                }
                t = s;
                accepted = true;
                break;
            }
        }
        if !accepted {
            t = stop;
        }
        let c = t.floor() as i64;
        if c > cell + 1 {
            measure.evict_before(c - 1);
            cell = c;
        }
    }
    if opts.record_intensity {
        path.intensity = Some(lambdas);
    }
    let _ = bounds;
    Ok(path)
}

/// Surrogate for the stationary process: thinning from the empty condition at
/// `window.start - burn_in`, restricted to the window.
pub fn simulate_stationary(model: &ModelParams, window: Window, burn_in: f64, seed: u64) -> Result<HarPath> {
    if !(burn_in >= 0.0) {
        return Err(Error::InvalidArgument(format!("burn-in must be >= 0, got {burn_in}")));
    }
    let init = InitialCondition::empty(model, window.start - burn_in);
    Ok(simulate_thinning(model, &init, window.end, seed)?.restrict(window))
}

/// Berbee-type coupling: on each block `[jn + phi, (j+1)n + phi)` the path is
/// the restriction of the process restarted empty at `jn + phi - ell`. All
/// blocks read the same seed-level randomness, so blocks `j` and `j + 2`
/// consume disjoint parts of it whenever `ell <= n`.
pub fn simulate_coupling(
    model: &ModelParams,
    n: f64,
    ell: f64,
    phi: f64,
    window: Window,
    seed: u64,
) -> Result<HarPath> {
    if !(n > 0.0 && ell > 0.0 && ell <= n && phi >= 0.0 && phi < n) {
        return Err(Error::InvalidArgument(format!(
            "coupling needs n > 0, 0 < ell <= n, 0 <= phi < n (n={n}, ell={ell}, phi={phi})"
        )));
    }
    let mut out = HarPath::empty(model, window, seed, Generator::Coupling);
    let j0 = ((window.start - phi) / n).floor() as i64;
    let j1 = ((window.end - phi) / n).ceil() as i64;
    for j in j0..j1 {
        let b0 = j as f64 * n + phi;
        let b1 = b0 + n;
        let lo = b0.max(window.start);
        let hi = b1.min(window.end);
        if lo >= hi {
            continue;
        }
        let init = InitialCondition::empty(model, b0 - ell);
        let block = simulate_thinning(model, &init, hi, seed)?.restrict(Window::new(lo, hi)?);
        for (m, ev) in block.events.iter().enumerate() {
            out.events[m].extend_from_slice(ev);
        }
        for p in 0..model.num_chains() {
            for (jj, _, v) in block.chain_points(p) {
                let idx = (jj - out.chain_start[p]) as usize;
                out.chain_values[p][idx] = v;
                out.drifts[p][idx] = block.drift(p, jj).unwrap_or(0.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChainSpec, DriftLaw};

    #[test]
    fn relu_zero_base_rate_gives_no_events() {
        let model = ModelParams::builder(1, vec![])
            .link(0, Link::Relu)
            .kernel(0, 0, Kernel::exponential(0.5, 1.0))
            .build()
            .unwrap();
        let init = InitialCondition::empty(&model, 0.0);
        let path = simulate_thinning(&model, &init, 100.0, 3).unwrap();
        assert_eq!(path.total_events(), 0);
    }

    #[test]
    fn pure_chains_are_drifts() {
        let model = ModelParams::builder(0, vec![ChainSpec::unit(DriftLaw::Gaussian { mean: 1.0, std: 2.0 })])
            .build()
            .unwrap();
        let init = InitialCondition::empty(&model, 0.0);
        let path = simulate_thinning(&model, &init, 20.0, 5).unwrap();
        assert_eq!(path.chain_values[0].len(), 20);
        for (j, _, v) in path.chain_points(0) {
            assert_eq!(v, drift_value(5, 0, j, &model.chain_spec(0).drift));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let model = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::default())])
            .base_rate(0, 1.0)
            .kernel(0, 0, Kernel::exponential(0.4, 1.0))
            .kernel(1, 0, Kernel::constant(0.3, 1.0))
            .link(0, Link::Relu)
            .build()
            .unwrap();
        let init = InitialCondition::empty(&model, 0.0);
        let a = simulate_thinning(&model, &init, 50.0, 11).unwrap();
        let b = simulate_thinning(&model, &init, 50.0, 11).unwrap();
        let c = simulate_thinning(&model, &init, 50.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn intensity_cap_triggers() {
        let model = ModelParams::builder(1, vec![])
            .base_rate(0, 1.0)
            .kernel(0, 0, Kernel::exponential(5.0, 1.0))
            .build()
            .unwrap();
        let init = InitialCondition::empty(&model, 0.0);
        let opts = ThinningOptions {
            intensity_cap: 1e3,
            ..Default::default()
        };
        let err = simulate_thinning_with(&model, &init, 1000.0, 1, &opts).unwrap_err();
        assert!(matches!(err, Error::IntensityCap { .. }));
    }

    #[test]
    fn coupling_with_full_restart_matches_blockwise_runs() {
        let model = ModelParams::builder(1, vec![])
            .base_rate(0, 1.0)
            .kernel(0, 0, Kernel::constant(0.5, 1.0))
            .build()
            .unwrap();
        let w = Window::new(0.0, 12.0).unwrap();
        let cp = simulate_coupling(&model, 4.0, 4.0, 0.0, w, 2).unwrap();
        let init = InitialCondition::empty(&model, 0.0);
        let block1 = simulate_thinning(&model, &init, 8.0, 2).unwrap();
        let expected: Vec<f64> = block1.events[0].iter().copied().filter(|t| *t >= 4.0).collect();
        assert_eq!(cp.events[0].iter().copied().filter(|t| (4.0..8.0).contains(t)).collect::<Vec<_>>(), expected);
    }
}
