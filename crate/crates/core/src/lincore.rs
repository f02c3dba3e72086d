//! Linear calculus: the chain coefficients, per-event chain impacts, cluster
//! functions and immigrant rates of linear HAR models.
//!
//! For a linear model the chain recursion unrolls into
//! `V^p_k = sum_{p', k' <= k} c^{p,k}_{p',k'} Z^{p'}_{k'}` where the
//! coefficients `c` only depend on the kernels `a^p_{p'} h^p_{p'}` and are
//! 1-periodic in `(k, k')`. The table stores, for every source chain and
//! every source residue within one unit period, the forward response on all
//! chains up to a truncation lag.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{ChainLattice, LatticePoint, Rational};
use crate::model::{InitialCondition, Kernel, ModelParams};
use crate::spectral::{build_h, spectral_radius};

/// Tail target for the default truncation lag.
const TAIL_TOL: f64 = 1e-10;
/// Upper bound on the default truncation lag.
pub const MAX_DEFAULT_LAG: f64 = 400.0;

#[derive(Clone, Debug)]
struct Block {
    start: Vec<i64>,
    values: Vec<Vec<f64>>,
}

/// Coefficients `c^{p,k}_{p',k'}` for lags `k - k'` up to `max_lag`.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    model: ModelParams,
    lattices: Vec<ChainLattice>,
    max_lag: f64,
    blocks: Vec<Vec<Block>>,
    warnings: Vec<String>,
}

/// Chain-on-chain weights `a^p_{q} h^p_{q}` of a linear model.
struct ChainWeights<'a> {
    slope: Vec<Vec<f64>>,
    kernel: Vec<Vec<&'a Kernel>>,
    reach: Vec<f64>,
}

impl<'a> ChainWeights<'a> {
    fn new(model: &'a ModelParams) -> Self {
        let pc = model.num_chains();
        let mut slope = vec![vec![0.0; pc]; pc];
        let mut kernel = Vec::with_capacity(pc);
        let mut reach = vec![0.0_f64; pc];
        for p in 0..pc {
            let mut row = Vec::with_capacity(pc);
            for q in 0..pc {
                let k = model.kernel(model.chain(p), model.chain(q));
                slope[p][q] = model.mask_lipschitz(model.chain(p), q);
                if slope[p][q] != 0.0 && !k.is_zero() {
                    reach[p] = reach[p].max(k.support_end());
                }
                row.push(k);
            }
            kernel.push(row);
        }
        ChainWeights {
            slope,
            kernel,
            reach,
        }
    }

    fn weight(&self, p: usize, q: usize, lag: f64) -> f64 {
        let a = self.slope[p][q];
        if a == 0.0 {
            0.0
        } else {
            a * self.kernel[p][q].eval(lag)
        }
    }
}

/// Default truncation lag: the number of hops `L` with `r^L / (1 - r)` below
/// the tail target, scaled by the longest compact chain-on-chain support.
pub fn default_max_lag(model: &ModelParams) -> Result<f64> {
    let pc = model.num_chains();
    if pc == 0 {
        return Ok(0.0);
    }
    let weights = ChainWeights::new(model);
    let mut hop = 0.0_f64;
    let mut any = false;
    for p in 0..pc {
        for q in 0..pc {
            let k = weights.kernel[p][q];
            if weights.slope[p][q] == 0.0 || k.is_zero() {
                continue;
            }
            any = true;
            let end = k.support_end();
            hop = hop.max(if end.is_finite() { end } else { 1.0 });
        }
    }
    if !any {
        return Ok(0.0);
    }
    let r = spectral_radius(&build_h(model)?.ww())?;
    let hops = if r >= 1.0 {
        return Ok(MAX_DEFAULT_LAG);
    } else if r <= 0.0 {
        pc as f64
    } else {
        ((TAIL_TOL * (1.0 - r)).ln() / r.ln()).ceil().max(1.0)
    };
    Ok((hops * hop.max(1.0)).min(MAX_DEFAULT_LAG))
}

/// Fills the coefficient table by the forward recursion
/// `c^{p,k}_{p',k'} = sum_{p''} sum_{k' <= k'' < k} a^p_{p''} h^p_{p''}(k - k'') c^{p'',k''}_{p',k'}`.
pub fn compute_coefficients(model: &ModelParams, max_lag: f64) -> Result<CoefficientTable> {
    model.require_linear()?;
    if !(max_lag >= 0.0) || !max_lag.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "max_lag must be finite and >= 0, got {max_lag}"
        )));
    }
    let mut warnings = Vec::new();
    if model.num_chains() > 0 {
        let r = spectral_radius(&build_h(model)?.ww())?;
        if r >= 1.0 {
            warnings.push(format!(
                "spr(H^W_W) = {r:.4} >= 1: coefficients are not summable"
            ));
        }
    }
    let lattices = model.lattices();
    let weights = ChainWeights::new(model);
    let blocks = (0..model.num_chains())
        .map(|src| {
            (0..lattices[src].frequency as i64)
                .map(|r| fill_block(&lattices, &weights, src, r, max_lag))
                .collect()
        })
        .collect();
    Ok(CoefficientTable {
        model: model.clone(),
        lattices,
        max_lag,
        blocks,
        warnings,
    })
}

/// Same as [`compute_coefficients`] with [`default_max_lag`].
pub fn compute_coefficients_default(model: &ModelParams) -> Result<CoefficientTable> {
    let lag = default_max_lag(model)?;
    compute_coefficients(model, lag)
}

fn points_after(
    lattices: &[ChainLattice],
    origin: Rational,
    max_lag: f64,
) -> Vec<(Rational, usize, i64)> {
    let mut pts = Vec::new();
    for (p, lat) in lattices.iter().enumerate() {
        let mut j = lat.first_at_or_after(origin);
        loop {
            let t = lat.time(j);
            if t.sub(origin).to_f64() > max_lag + 1e-12 {
                break;
            }
            pts.push((t, p, j));
            j += 1;
        }
    }
    pts.sort();
    pts
}

fn fill_block(
    lattices: &[ChainLattice],
    weights: &ChainWeights,
    src: usize,
    residue: i64,
    max_lag: f64,
) -> Block {
    let pc = lattices.len();
    let origin = lattices[src].time(residue);
    let pts = points_after(lattices, origin, max_lag);
    let mut vals = vec![0.0; pts.len()];
    for i in 0..pts.len() {
        let (t, q, j) = pts[i];
        if t == origin {
            vals[i] = if q == src && j == residue { 1.0 } else { 0.0 };
            continue;
        }
        let mut acc = 0.0;
        for i2 in (0..i).rev() {
            let (t2, q2, _) = pts[i2];
            if t2 == t || vals[i2] == 0.0 {
                continue;
            }
            let lag = t.sub(t2).to_f64();
            if lag > weights.reach[q] * (1.0 + 1e-9) + 1e-12 {
                break;
            }
            let w = weights.weight(q, q2, lag);
            if w != 0.0 {
                acc += w * vals[i2];
            }
        }
        vals[i] = acc;
    }
    let mut start = vec![i64::MAX; pc];
    let mut values = vec![Vec::new(); pc];
    for (i, &(_, q, j)) in pts.iter().enumerate() {
        if start[q] == i64::MAX {
            start[q] = j;
        }
        values[q].push(vals[i]);
    }
    for (q, lat) in lattices.iter().enumerate() {
        if start[q] == i64::MAX {
            start[q] = lat.first_at_or_after(origin);
        }
    }
    Block { start, values }
}

impl CoefficientTable {
    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn max_lag(&self) -> f64 {
        self.max_lag
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn lattices(&self) -> &[ChainLattice] {
        &self.lattices
    }

    /// `c^{p,k}_{p',k'}` with `k = time_p(j)` and `k' = time_{p'}(j')`; zero
    /// when `k < k'` or the lag exceeds the truncation.
    pub fn get(&self, p: usize, j: i64, p_src: usize, j_src: i64) -> f64 {
        let (r, shift) = self.lattices[p_src].split_period(j_src);
        let block = &self.blocks[p_src][r];
        let jj = j - shift * self.lattices[p].frequency as i64;
        let idx = jj - block.start[p];
        if idx < 0 {
            return 0.0;
        }
        block.values[p].get(idx as usize).copied().unwrap_or(0.0)
    }

    pub fn get_point(&self, to: LatticePoint, from: LatticePoint) -> f64 {
        self.get(to.chain, to.index, from.chain, from.index)
    }

    /// Calls `f(p, j, c^{p,j}_{p_src,j_src})` for every stored entry reachable
    /// from the source point.
    pub fn for_each_forward(&self, p_src: usize, j_src: i64, mut f: impl FnMut(usize, i64, f64)) {
        let (r, shift) = self.lattices[p_src].split_period(j_src);
        let block = &self.blocks[p_src][r];
        for (p, vals) in block.values.iter().enumerate() {
            let offset = block.start[p] + shift * self.lattices[p].frequency as i64;
            for (i, v) in vals.iter().enumerate() {
                f(p, offset + i as i64, *v);
            }
        }
    }

    /// Writes `p,p_prime,source_residue,offset_num,offset_den,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "p,p_prime,source_residue,offset_num,offset_den,value")?;
        for (src, per_res) in self.blocks.iter().enumerate() {
            for (r, block) in per_res.iter().enumerate() {
                let origin = self.lattices[src].time(r as i64);
                for (p, vals) in block.values.iter().enumerate() {
                    for (i, v) in vals.iter().enumerate() {
                        let k = self.lattices[p].time(block.start[p] + i as i64);
                        let off = k.sub(origin);
                        writeln!(out, "{p},{src},{r},{},{},{v:e}", off.num, off.den)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sum over all strictly increasing lattice paths from `from` to `to` of the
/// products `prod a^{p_{i+1}}_{p_i} h^{p_{i+1}}_{p_i}(k_{i+1} - k_i)`.
///
/// Fails once more than `cap` weighted paths have been visited.
pub fn coefficients_oracle(
    model: &ModelParams,
    from: LatticePoint,
    to: LatticePoint,
    cap: usize,
) -> Result<f64> {
    model.require_linear()?;
    let lattices = model.lattices();
    let k0 = lattices[from.chain].time(from.index);
    let k1 = lattices[to.chain].time(to.index);
    if k1 < k0 {
        return Ok(0.0);
    }
    if k1 == k0 {
        return Ok(if from.chain == to.chain { 1.0 } else { 0.0 });
    }
    let sums = enumerate_paths(model, &lattices, from, k1, Some(to), cap)?;
    Ok(sums.get(&to).copied().unwrap_or(0.0))
}

/// Path sums from `from` to every lattice point with lag in `(0, horizon]`.
pub fn path_sums_from(
    model: &ModelParams,
    from: LatticePoint,
    horizon: f64,
    cap: usize,
) -> Result<HashMap<LatticePoint, f64>> {
    model.require_linear()?;
    let lattices = model.lattices();
    let k0 = lattices[from.chain].time(from.index);
    let end = lattices
        .iter()
        .map(|lat| {
            let mut j = lat.first_at_or_after(k0);
            while lat.time(j + 1).sub(k0).to_f64() <= horizon + 1e-12 {
                j += 1;
            }
            lat.time(j)
        })
        .max()
        .unwrap_or(k0);
    enumerate_paths(model, &lattices, from, end, None, cap)
}

fn enumerate_paths(
    model: &ModelParams,
    lattices: &[ChainLattice],
    from: LatticePoint,
    end: Rational,
    target: Option<LatticePoint>,
    cap: usize,
) -> Result<HashMap<LatticePoint, f64>> {
    let k0 = lattices[from.chain].time(from.index);
    let mut pts: Vec<(Rational, LatticePoint)> = Vec::new();
    for (p, lat) in lattices.iter().enumerate() {
        let mut j = lat.first_at_or_after(k0);
        while lat.time(j) <= end {
            if lat.time(j) > k0 {
                pts.push((lat.time(j), LatticePoint { chain: p, index: j }));
            }
            j += 1;
        }
    }
    pts.sort();
    let pc = model.num_chains();
    let weight = |p: usize, q: usize, lag: f64| -> f64 {
        let a = model.mask_lipschitz(model.chain(p), q);
        a * model.kernel(model.chain(p), model.chain(q)).eval(lag)
    };
    let _ = pc;
    let mut sums: HashMap<LatticePoint, f64> = HashMap::new();
    let mut visited = 0usize;
    // explicit stack of (position in pts or usize::MAX for the root, product)
    let mut stack: Vec<(usize, f64)> = vec![(usize::MAX, 1.0)];
    while let Some((pos, prod)) = stack.pop() {
        let (t, cur) = if pos == usize::MAX {
            (k0, from)
        } else {
            pts[pos]
        };
        let first = if pos == usize::MAX { 0 } else { pos + 1 };
        for (i, &(t2, next)) in pts.iter().enumerate().skip(first) {
            if t2 == t {
                continue;
            }
            let w = weight(next.chain, cur.chain, t2.sub(t).to_f64());
            if w == 0.0 {
                continue;
            }
            visited += 1;
            if visited > cap {
                return Err(Error::PathCapExceeded(cap));
            }
            let v = prod * w;
            match target {
                Some(tg) if next == tg => *sums.entry(next).or_insert(0.0) += v,
                Some(tg) => {
                    if t2 < lattices[tg.chain].time(tg.index) {
                        stack.push((i, v));
                    }
                }
                None => {
                    *sums.entry(next).or_insert(0.0) += v;
                    stack.push((i, v));
                }
            }
        }
    }
    Ok(sums)
}

/// Ascending and descending coefficient sums against the
/// `(I - H^W_W)^{-1}` bounds.
#[derive(Clone, Debug, Serialize)]
pub struct SumBoundReport {
    /// `[(I - H^W_W)^{-1}]_{p,p'}`.
    pub bound: Vec<Vec<f64>>,
    /// `max_k sum_{k' <= k} c^{p,k}_{p',k'}` over one period of `k`.
    pub ascending: Vec<Vec<f64>>,
    /// `sum_{k0 in [0,1)} sum_{k >= k0} c^{p,k}_{p0,k0}`, bounded by `n_p` times the bound.
    pub descending: Vec<Vec<f64>>,
    pub min_slack: f64,
    pub holds: bool,
    pub violations: Vec<String>,
}

pub fn coefficient_sum_bound_check(table: &CoefficientTable, tol: f64) -> Result<SumBoundReport> {
    let model = &table.model;
    let pc = model.num_chains();
    let ww = build_h(model)?.ww();
    if pc > 0 && spectral_radius(&ww)? >= 1.0 {
        return Err(Error::InvalidArgument(
            "sum bounds need spr(H^W_W) < 1".into(),
        ));
    }
    let inv = (DMatrix::identity(pc, pc) - ww)
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("I - H^W_W is singular".into()))?;
    let lat = &table.lattices;
    let mut ascending = vec![vec![0.0; pc]; pc];
    let mut descending = vec![vec![0.0; pc]; pc];
    for src in 0..pc {
        for r in 0..lat[src].frequency as i64 {
            table.for_each_forward(src, r, |p, _, c| descending[p][src] += c);
        }
    }
    for p in 0..pc {
        for j in 0..lat[p].frequency as i64 {
            let k = lat[p].time(j);
            let mut sums = vec![0.0; pc];
            for (src, sum) in sums.iter_mut().enumerate() {
                let mut jj = lat[src].first_at_or_after(k);
                if lat[src].time(jj) > k {
                    jj -= 1;
                }
                while k.sub(lat[src].time(jj)).to_f64() <= table.max_lag + 1e-12 {
                    *sum += table.get(p, j, src, jj);
                    jj -= 1;
                }
            }
            for src in 0..pc {
                ascending[p][src] = f64::max(ascending[p][src], sums[src]);
            }
        }
    }
    let mut min_slack = f64::INFINITY;
    let mut violations = Vec::new();
    let mut bound = vec![vec![0.0; pc]; pc];
    for p in 0..pc {
        for src in 0..pc {
            bound[p][src] = inv[(p, src)];
            let n = lat[p].frequency as f64;
            let s1 = inv[(p, src)] - ascending[p][src];
            let s2 = n * inv[(p, src)] - descending[p][src];
            min_slack = min_slack.min(s1).min(s2);
            if s1 < -tol {
                violations.push(format!(
                    "ascending sum p{p} <- p{src}: {} > {}",
                    ascending[p][src], inv[(p, src)]
                ));
            }
            if s2 < -tol {
                violations.push(format!(
                    "descending sum p{p} <- p{src}: {} > {}",
                    descending[p][src],
                    n * inv[(p, src)]
                ));
            }
        }
    }
    Ok(SumBoundReport {
        bound,
        ascending,
        descending,
        min_slack,
        holds: violations.is_empty(),
        violations,
    })
}

/// Values on the chain lattices over an index window per chain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainSeries {
    pub start: Vec<i64>,
    pub values: Vec<Vec<f64>>,
}

impl ChainSeries {
    /// Zeros on all lattice points of `[lo, hi)`.
    pub fn zeros(lattices: &[ChainLattice], lo: f64, hi: f64) -> Self {
        let mut start = Vec::new();
        let mut values = Vec::new();
        for lat in lattices {
            let r = lat.indices_in(lo, hi);
            start.push(r.start);
            values.push(vec![0.0; (r.end - r.start) as usize]);
        }
        ChainSeries { start, values }
    }

    /// Zeros on all lattice points of `(lo, hi)`.
    pub fn zeros_open(lattices: &[ChainLattice], lo: f64, hi: f64) -> Self {
        let mut start = Vec::new();
        let mut values = Vec::new();
        for lat in lattices {
            let a = lat.first_after_f64(lo);
            let b = lat.first_at_or_after_f64(hi).max(a);
            start.push(a);
            values.push(vec![0.0; (b - a) as usize]);
        }
        ChainSeries { start, values }
    }

    pub fn get(&self, p: usize, j: i64) -> f64 {
        let idx = j - self.start[p];
        if idx < 0 {
            return 0.0;
        }
        self.values[p].get(idx as usize).copied().unwrap_or(0.0)
    }

    fn slot(&mut self, p: usize, j: i64) -> Option<&mut f64> {
        let idx = j - self.start[p];
        if idx < 0 {
            return None;
        }
        self.values[p].get_mut(idx as usize)
    }

    pub fn indices(&self, p: usize) -> std::ops::Range<i64> {
        self.start[p]..self.start[p] + self.values[p].len() as i64
    }

    /// `sum_{p'} sum_{k'} c^{p,k}_{p',k'} Z^{p'}_{k'}` restricted to this window.
    pub fn propagate(&self, table: &CoefficientTable) -> ChainSeries {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        for src in 0..self.values.len() {
            for j in self.indices(src) {
                let z = self.get(src, j);
                if z == 0.0 {
                    continue;
                }
                table.for_each_forward(src, j, |p, jj, c| {
                    if let Some(slot) = out.slot(p, jj) {
                        *slot += c * z;
                    }
                });
            }
        }
        out
    }
}

/// Impact of an event of `node` at time `t` on every chain at lattice points
/// in `(t, t + horizon)`: `sum_{p'} sum_{t < k' <= k} c^{p,k}_{p',k'} h^{p'}_{node}(k' - t)`.
pub fn event_chain_impact(
    table: &CoefficientTable,
    node: usize,
    t: f64,
    horizon: f64,
) -> ChainSeries {
    let model = &table.model;
    let mut z = ChainSeries::zeros_open(&table.lattices, t, t + horizon);
    for p in 0..model.num_chains() {
        let k = model.kernel(model.chain(p), node);
        if k.is_zero() {
            continue;
        }
        for j in z.indices(p) {
            let v = k.eval(table.lattices[p].time_f64(j) - t);
            if let Some(slot) = z.slot(p, j) {
                *slot = v;
            }
        }
    }
    z.propagate(table)
}

/// Mixture form of `s -> h^m_{m0}(s, .)`: the direct kernel plus chain
/// kernels `h^m_p(. - k)` weighted by `a^m_p` times the event impact.
#[derive(Clone, Debug)]
pub struct ClusterMixture {
    pub target: usize,
    pub origin: usize,
    pub birth: f64,
    /// `(chain, lattice time, weight)`.
    pub terms: Vec<(usize, f64, f64)>,
}

impl ClusterMixture {
    pub fn new(table: &CoefficientTable, m: usize, m0: usize, s: f64, horizon: f64) -> Self {
        let impact = event_chain_impact(table, m0, s, horizon);
        Self::from_impact(table, &impact, m, m0, s)
    }

    /// Builds the mixture from a precomputed [`event_chain_impact`] of `m0` at `s`.
    pub fn from_impact(table: &CoefficientTable, impact: &ChainSeries, m: usize, m0: usize, s: f64) -> Self {
        let model = &table.model;
        let mut terms = Vec::new();
        for p in 0..model.num_chains() {
            let a = model.mask_lipschitz(m, p);
            if a == 0.0 || model.kernel(m, model.chain(p)).is_zero() {
                continue;
            }
            for j in impact.indices(p) {
                let v = impact.get(p, j);
                if v != 0.0 {
                    terms.push((p, table.lattices[p].time_f64(j), a * v));
                }
            }
        }
        ClusterMixture {
            target: m,
            origin: m0,
            birth: s,
            terms,
        }
    }

    pub fn eval(&self, model: &ModelParams, t: f64) -> f64 {
        let mut v = model.kernel(self.target, self.origin).eval(t - self.birth);
        for &(p, k, w) in &self.terms {
            if k < t {
                v += w * model.kernel(self.target, model.chain(p)).eval(t - k);
            }
        }
        v
    }

    /// `int_s^{t} h^m_{m0}(s, u) du`.
    pub fn mass_to(&self, model: &ModelParams, t: f64) -> f64 {
        let mut v = model.kernel(self.target, self.origin).integral_to(t - self.birth);
        for &(p, k, w) in &self.terms {
            if k < t {
                v += w * model.kernel(self.target, model.chain(p)).integral_to(t - k);
            }
        }
        v
    }
}

/// `h^m_{m0}(s, t)`: impact of an event of `m0` at `s` on the intensity of
/// `m` at `t`, through the direct kernel and all chain paths.
pub fn cluster_function(table: &CoefficientTable, m: usize, m0: usize, s: f64, t: f64) -> Result<f64> {
    if !(t > s) {
        return Err(Error::InvalidArgument(format!(
            "cluster function needs t > s (s={s}, t={t})"
        )));
    }
    let mix = ClusterMixture::new(table, m, m0, s, t - s);
    Ok(mix.eval(&table.model, t))
}

/// Realized drift values by chain and lattice index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Drifts {
    pub values: Vec<BTreeMap<i64, f64>>,
}

impl Drifts {
    pub fn new(chains: usize) -> Self {
        Drifts {
            values: vec![BTreeMap::new(); chains],
        }
    }

    /// Constant `value` on every lattice point of `[lo, hi)`.
    pub fn constant(lattices: &[ChainLattice], lo: f64, hi: f64, value: f64) -> Self {
        let mut d = Drifts::new(lattices.len());
        for (p, lat) in lattices.iter().enumerate() {
            for j in lat.indices_in(lo, hi) {
                d.values[p].insert(j, value);
            }
        }
        d
    }

    pub fn insert(&mut self, p: usize, j: i64, value: f64) {
        self.values[p].insert(j, value);
    }

    pub fn get(&self, p: usize, j: i64) -> Result<f64> {
        self.values
            .get(p)
            .and_then(|m| m.get(&j))
            .copied()
            .ok_or(Error::MissingDrift { chain: p, index: j })
    }
}

/// The drift, intercept and initial-condition parts of the chains on
/// `[t0, end)`, each unrolled through the coefficients.
#[derive(Clone, Debug)]
pub struct ChainBaseline {
    pub start: f64,
    pub end: f64,
    /// Intercept part.
    pub hb: ChainSeries,
    /// Drift part.
    pub hxi: ChainSeries,
    /// Initial-condition part.
    pub hc: ChainSeries,
    initial: Option<InitialCondition>,
}

impl ChainBaseline {
    pub fn new(
        table: &CoefficientTable,
        t0: f64,
        end: f64,
        drifts: &Drifts,
        initial: Option<&InitialCondition>,
    ) -> Result<Self> {
        let model = &table.model;
        let lat = &table.lattices;
        if let Some(ic) = initial {
            ic.check(model)?;
            if ic.start != t0 {
                return Err(Error::InvalidArgument(format!(
                    "initial condition starts at {} but t0 = {t0}",
                    ic.start
                )));
            }
        }
        let mut zb = ChainSeries::zeros(lat, t0, end);
        let mut zxi = zb.clone();
        let mut zc = zb.clone();
        for p in 0..model.num_chains() {
            let cp = model.chain(p);
            for j in zb.indices(p) {
                let k = lat[p].time_f64(j);
                let idx = (j - zb.start[p]) as usize;
                zxi.values[p][idx] = drifts.get(p, j)?;
                let mut b = 0.0;
                for q in 0..model.num_chains() {
                    let bq = model.mask_intercept(cp, q);
                    let ker = model.kernel(cp, model.chain(q));
                    if bq == 0.0 || ker.is_zero() {
                        continue;
                    }
                    let lo = (k - ker.support_end()).max(t0);
                    for jj in lat[q].indices_in(lo, k) {
                        b += bq * ker.eval(k - lat[q].time_f64(jj));
                    }
                }
                zb.values[p][idx] = b;
                if let Some(ic) = initial {
                    zc.values[p][idx] = initial_chain_term(model, ic, p, k);
                }
            }
        }
        Ok(ChainBaseline {
            start: t0,
            end,
            hb: zb.propagate(table),
            hxi: zxi.propagate(table),
            hc: zc.propagate(table),
            initial: initial.cloned(),
        })
    }

    /// `mu_m + J^m_t + sum_p sum_{t0 <= k < t} h^m_p(t - k)(a (Hb + Hxi + Hc) + b)`.
    pub fn immigrant_rate(&self, table: &CoefficientTable, m: usize, t: f64) -> Result<f64> {
        if t < self.start || t > self.end {
            return Err(Error::InvalidArgument(format!(
                "t={t} outside [{}, {}]",
                self.start, self.end
            )));
        }
        let model = &table.model;
        let mut rate = model.base_rate(m);
        if let Some(ic) = &self.initial {
            rate += initial_node_term(model, ic, m, t);
        }
        for p in 0..model.num_chains() {
            let ker = model.kernel(m, model.chain(p));
            if ker.is_zero() {
                continue;
            }
            let a = model.mask_lipschitz(m, p);
            let b = model.mask_intercept(m, p);
            let lat = &table.lattices[p];
            let lo = (t - ker.support_end()).max(self.start);
            for j in lat.indices_in(lo, t) {
                let w = self.hb.get(p, j) + self.hxi.get(p, j) + self.hc.get(p, j);
                rate += ker.eval(t - lat.time_f64(j)) * (a * w + b);
            }
        }
        Ok(rate)
    }
}

fn initial_chain_term(model: &ModelParams, ic: &InitialCondition, p: usize, k: f64) -> f64 {
    let cp = model.chain(p);
    let mut v = 0.0;
    for (m, events) in ic.events.iter().enumerate() {
        let ker = model.kernel(cp, m);
        v += events.iter().map(|s| ker.eval(k - s)).sum::<f64>();
    }
    for (q, values) in ic.chain_values.iter().enumerate() {
        let ker = model.kernel(cp, model.chain(q));
        let mask = model.mask(cp, q);
        let lat = model.lattice(q);
        for (j, x) in values {
            v += ker.eval(k - lat.time_f64(*j)) * mask.apply_opt(*x);
        }
    }
    v
}

fn initial_node_term(model: &ModelParams, ic: &InitialCondition, m: usize, t: f64) -> f64 {
    let mut v = 0.0;
    for (m2, events) in ic.events.iter().enumerate() {
        let ker = model.kernel(m, m2);
        v += events.iter().map(|s| ker.eval(t - s)).sum::<f64>();
    }
    for (q, values) in ic.chain_values.iter().enumerate() {
        let ker = model.kernel(m, model.chain(q));
        let mask = model.mask(m, q);
        let lat = model.lattice(q);
        for (j, x) in values {
            v += ker.eval(t - lat.time_f64(*j)) * mask.apply_opt(*x);
        }
    }
    v
}

/// `I^m(t0, t)` for the empty initial condition.
pub fn immigrant_rate(
    table: &CoefficientTable,
    m: usize,
    t0: f64,
    t: f64,
    drifts: &Drifts,
) -> Result<f64> {
    if t < t0 {
        return Err(Error::InvalidArgument(format!("t={t} < t0={t0}")));
    }
    ChainBaseline::new(table, t0, t, drifts, None)?.immigrant_rate(table, m, t)
}

/// `I^m(t0, t)` including the contribution of an initial condition.
pub fn immigrant_rate_with_initial(
    table: &CoefficientTable,
    m: usize,
    t: f64,
    drifts: &Drifts,
    initial: &InitialCondition,
) -> Result<f64> {
    let t0 = initial.start;
    if t < t0 {
        return Err(Error::InvalidArgument(format!("t={t} < t0={t0}")));
    }
    ChainBaseline::new(table, t0, t, drifts, Some(initial))?.immigrant_rate(table, m, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChainSpec, DriftLaw, Mask};

    fn one_chain(values: Vec<f64>) -> ModelParams {
        ModelParams::builder(0, vec![ChainSpec::unit(DriftLaw::default())])
            .kernel(0, 0, Kernel::piecewise(1.0, values))
            .build()
            .unwrap()
    }

    #[test]
    fn single_path_weight() {
        let model = one_chain(vec![0.5]);
        let t = compute_coefficients(&model, 10.0).unwrap();
        assert!((t.get(0, 3, 0, 0) - 0.125).abs() < 1e-15);
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
        assert_eq!(t.get(0, 7, 0, 4), t.get(0, 3, 0, 0));
        assert_eq!(t.get(0, 11, 0, 0), 0.0);
    }

    #[test]
    fn two_paths() {
        let model = one_chain(vec![0.5, 0.25]);
        let t = compute_coefficients(&model, 5.0).unwrap();
        assert!((t.get(0, 2, 0, 0) - 0.5).abs() < 1e-15);
        let o = coefficients_oracle(
            &model,
            LatticePoint { chain: 0, index: 0 },
            LatticePoint { chain: 0, index: 2 },
            1000,
        )
        .unwrap();
        assert!((o - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_chain_path() {
        let model = ModelParams::builder(
            0,
            vec![ChainSpec::unit(DriftLaw::default()), ChainSpec::unit(DriftLaw::default())],
        )
        .kernel(0, 1, Kernel::piecewise(1.0, vec![0.2]))
        .kernel(1, 0, Kernel::piecewise(1.0, vec![0.2]))
        .build()
        .unwrap();
        let from = LatticePoint { chain: 0, index: 0 };
        let to = LatticePoint { chain: 0, index: 2 };
        let o = coefficients_oracle(&model, from, to, 100).unwrap();
        assert!((o - 0.04).abs() < 1e-15);
        let t = compute_coefficients(&model, 4.0).unwrap();
        assert!((t.get_point(to, from) - 0.04).abs() < 1e-15);
        assert_eq!(t.get(1, 0, 0, 0), 0.0);
    }

    #[test]
    fn zero_kernels_give_identity() {
        let model = one_chain(vec![0.0]);
        let t = compute_coefficients(&model, 3.0).unwrap();
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
        assert_eq!(t.get(0, 2, 0, 0), 0.0);
        let o = coefficients_oracle(
            &model,
            LatticePoint { chain: 0, index: 0 },
            LatticePoint { chain: 0, index: 2 },
            10,
        )
        .unwrap();
        assert_eq!(o, 0.0);
        let rep = coefficient_sum_bound_check(&t, 1e-9).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.ascending[0][0], 1.0);
    }

    #[test]
    fn geometric_sum_is_tight() {
        let model = one_chain(vec![0.5]);
        let t = compute_coefficients_default(&model).unwrap();
        let rep = coefficient_sum_bound_check(&t, 1e-9).unwrap();
        assert!(rep.holds);
        assert!((rep.ascending[0][0] - 2.0).abs() < 1e-9);
        assert!(rep.min_slack < 1e-9);
    }

    #[test]
    fn cluster_function_examples() {
        let model = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::default())])
            .kernel(0, 1, Kernel::constant(1.0, 1.0))
            .kernel(1, 0, Kernel::constant(1.0, 1.0))
            .build()
            .unwrap();
        let t = compute_coefficients(&model, 5.0).unwrap();
        assert!((cluster_function(&t, 0, 0, 0.0, 1.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(cluster_function(&t, 0, 0, 1.0, 1.0).is_err());

        let hawkes = ModelParams::builder(1, vec![])
            .kernel(0, 0, Kernel::exponential(0.5, 2.0))
            .base_rate(0, 1.0)
            .build()
            .unwrap();
        let t = compute_coefficients(&hawkes, 1.0).unwrap();
        let v = cluster_function(&t, 0, 0, 0.3, 1.1).unwrap();
        assert!((v - 0.5 * (-1.6f64).exp()).abs() < 1e-15);
        let drifts = Drifts::new(0);
        assert_eq!(immigrant_rate(&t, 0, 0.0, 3.0, &drifts).unwrap(), 1.0);
    }

    #[test]
    fn immigrant_rate_without_chain_feedback() {
        let model = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::default())])
            .base_rate(0, 0.7)
            .kernel(0, 1, Kernel::constant(1.0, 1.0))
            .mask(0, 0, Mask::Affine { slope: 0.5, intercept: 0.1 })
            .build()
            .unwrap();
        let t = compute_coefficients(&model, 3.0).unwrap();
        let lat = model.lattices();
        let mut drifts = Drifts::constant(&lat, 0.0, 2.0, 0.0);
        let r0 = immigrant_rate(&t, 0, 0.0, 2.0, &drifts).unwrap();
        // only k = 1 lies in [t - 1, t)
        assert!((r0 - 0.8).abs() < 1e-15);
        drifts.insert(0, 1, 3.0);
        let r1 = immigrant_rate(&t, 0, 0.0, 2.0, &drifts).unwrap();
        assert!((r1 - r0 - 0.5 * 3.0).abs() < 1e-15);
        let err = immigrant_rate(&t, 0, 0.0, 2.5, &drifts).unwrap_err();
        assert!(matches!(err, Error::MissingDrift { .. }));
    }

    #[test]
    fn empty_initial_condition_contributes_nothing() {
        let model = ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::default())])
            .base_rate(0, 0.5)
            .kernel(0, 0, Kernel::exponential(0.3, 1.0))
            .kernel(0, 1, Kernel::constant(0.4, 2.0))
            .kernel(1, 0, Kernel::constant(0.5, 1.0))
            .kernel(1, 1, Kernel::piecewise(1.0, vec![0.3, 0.2]))
            .mask_all(0, Mask::Affine { slope: 1.0, intercept: 0.2 })
            .build()
            .unwrap();
        let t = compute_coefficients_default(&model).unwrap();
        let lat = model.lattices();
        let drifts = Drifts::constant(&lat, 0.0, 6.0, 0.5);
        let ic = InitialCondition::empty(&model, 0.0);
        let base = ChainBaseline::new(&t, 0.0, 6.0, &drifts, Some(&ic)).unwrap();
        assert!(base.hc.values.iter().flatten().all(|v| *v == 0.0));
        let a = immigrant_rate(&t, 0, 0.0, 5.5, &drifts).unwrap();
        let b = immigrant_rate_with_initial(&t, 0, 5.5, &drifts, &ic).unwrap();
        assert_eq!(a, b);

        let ic = ic.with_events(0, vec![-0.5]).with_chain_value(0, -1, Some(2.0));
        let c = immigrant_rate_with_initial(&t, 0, 1.5, &drifts, &ic).unwrap();
        let d = immigrant_rate(&t, 0, 0.0, 1.5, &drifts).unwrap();
        assert!(c > d);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let model = one_chain(vec![0.5]);
        let t = compute_coefficients(&model, 2.0).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "p,p_prime,source_residue,offset_num,offset_den,value");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn nonlinear_rejected() {
        let model = ModelParams::builder(0, vec![ChainSpec::unit(DriftLaw::default())])
            .mask(0, 0, Mask::Abs)
            .build()
            .unwrap();
        assert!(matches!(compute_coefficients(&model, 1.0), Err(Error::NotLinear(_))));
    }
}
