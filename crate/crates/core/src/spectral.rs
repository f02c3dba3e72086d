//! Interaction-norm matrices, spectral radii, linear domination and the
//! stability assumptions built on them.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{lattice_l1_norm, Kernel, Link, Mask, ModelParams};

const POWER_MAX_ITERS: usize = 100_000;
const POWER_TOL: f64 = 1e-13;

/// Nonnegative matrix over nodes followed by chains, with its four blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub nodes: usize,
    pub chains: usize,
    pub matrix: DMatrix<f64>,
}

impl InteractionMatrix {
    pub fn dim(&self) -> usize {
        self.nodes + self.chains
    }

    pub fn ss(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.nodes, self.nodes)).into_owned()
    }

    pub fn sw(&self) -> DMatrix<f64> {
        self.matrix
            .view((0, self.nodes), (self.nodes, self.chains))
            .into_owned()
    }

    pub fn ws(&self) -> DMatrix<f64> {
        self.matrix
            .view((self.nodes, 0), (self.chains, self.nodes))
            .into_owned()
    }

    pub fn ww(&self) -> DMatrix<f64> {
        self.matrix
            .view((self.nodes, self.nodes), (self.chains, self.chains))
            .into_owned()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.matrix).expect("interaction matrices are square")
    }
}

fn finite(v: f64, model: &ModelParams, target: usize, source: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InfiniteNorm {
            target: model.label(target),
            origin: model.label(source),
        })
    }
}

fn build(model: &ModelParams, tilde: bool) -> Result<InteractionMatrix> {
    let d = model.dim();
    let m_count = model.nodes();
    let mut h = DMatrix::zeros(d, d);
    for t in 0..d {
        let l = model.link_lipschitz(t);
        for s in 0..d {
            let k = model.kernel(t, s);
            if k.is_zero() {
                continue;
            }
            let value = if s < m_count {
                if t >= m_count && tilde {
                    l * lattice_l1_norm(k, 1.0)?
                } else {
                    l * k.l1_norm()
                }
            } else {
                let p = s - m_count;
                let n = model.chain_spec(p).frequency as f64;
                l * model.mask_lipschitz(t, p) * lattice_l1_norm(k, n)?
            };
            h[(t, s)] = finite(value, model, t, s)?;
        }
    }
    Ok(InteractionMatrix {
        nodes: m_count,
        chains: model.num_chains(),
        matrix: h,
    })
}

/// The interaction-norm matrix `H`.
pub fn build_h(model: &ModelParams) -> Result<InteractionMatrix> {
    build(model, false)
}

/// `H` with the chain-from-node block measured in the unit lattice norm.
pub fn build_h_tilde(model: &ModelParams) -> Result<InteractionMatrix> {
    build(model, true)
}

fn radius_irreducible(b: &DMatrix<f64>) -> f64 {
    let n = b.nrows();
    if n == 1 {
        return b[(0, 0)];
    }
    // shift by the identity so the block is primitive
    let shifted = b + DMatrix::identity(n, n);
    let mut x = nalgebra::DVector::from_element(n, 1.0 / n as f64);
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let y = &shifted * &x;
        lo = f64::INFINITY;
        hi = 0.0_f64;
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let s = y.sum();
        x = y / s;
        if hi - lo <= POWER_TOL * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi) - 1.0
}

/// Spectral radius of a square nonnegative matrix.
///
/// The matrix is split into strongly connected blocks; each irreducible block
/// is handled by power iteration on the shifted block with Collatz-Wielandt
/// bounds as the stopping rule.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if m.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "spectral radius needs a nonnegative matrix".into(),
        ));
    }
    if m.iter().any(|v| v.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    let mut g = DiGraph::<(), ()>::new();
    let idx: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] > 0.0 {
                g.add_edge(idx[i], idx[j], ());
            }
        }
    }
    let mut best = 0.0_f64;
    for comp in tarjan_scc(&g) {
        let ids: Vec<usize> = comp.iter().map(|v| v.index()).collect();
        let k = ids.len();
        let block = DMatrix::from_fn(k, k, |a, b| m[(ids[a], ids[b])]);
        best = best.max(radius_irreducible(&block));
    }
    Ok(best.max(0.0))
}

/// The dominating linear parameter set: base rates pushed through the
/// links, kernels `L|h|`, identity links, masks `a x + |k(0)|` and drifts
/// replaced by their absolute values.
pub fn build_m_plus(model: &ModelParams) -> Result<ModelParams> {
    let d = model.dim();
    let mut b = model.to_builder();
    for m in 0..model.nodes() {
        b = b.base_rate(m, model.link(m).apply(model.base_rate(m)));
    }
    for t in 0..d {
        let l = model.link_lipschitz(t);
        for s in 0..d {
            let k: &Kernel = model.kernel(t, s);
            b = b.kernel(t, s, k.abs_scaled(l));
        }
        for p in 0..model.num_chains() {
            let mask = model.mask(t, p);
            b = b.mask(
                t,
                p,
                Mask::Affine {
                    slope: mask.lipschitz(),
                    intercept: mask.at_zero().abs(),
                },
            );
        }
        b = b.link(t, Link::Identity);
    }
    for p in 0..model.num_chains() {
        b = b.drift(p, model.chain_spec(p).drift.folded());
    }
    b.build()
}

/// Cluster-size bound matrix: `H^S_S + Hs (I - H^W_W)^{-1} Hw` with
/// `Hs = (n_p L_m a ||h^m_p||_1)` and `Hw = (L_p ||h^p_m||_{1,1})`. `None`
/// when the chain block is not summable.
pub fn spec2_surrogate_matrix(model: &ModelParams) -> Result<Option<DMatrix<f64>>> {
    let h = build_h(model)?;
    let (mc, pc) = (model.nodes(), model.num_chains());
    let ww = h.ww();
    if spectral_radius(&ww)? >= 1.0 {
        return Ok(None);
    }
    let inv = (DMatrix::identity(pc, pc) - ww)
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("I - H^W_W is singular".into()))?;
    let mut hs = DMatrix::zeros(mc, pc);
    for m in 0..mc {
        for p in 0..pc {
            let k = model.kernel(m, model.chain(p));
            let n = model.chain_spec(p).frequency as f64;
            hs[(m, p)] = n * model.link_lipschitz(m) * model.mask_lipschitz(m, p) * k.l1_norm();
        }
    }
    let mut hw = DMatrix::zeros(pc, mc);
    for p in 0..pc {
        for m in 0..mc {
            let k = model.kernel(model.chain(p), m);
            hw[(p, m)] = model.link_lipschitz(model.chain(p)) * lattice_l1_norm(k, 1.0)?;
        }
    }
    Ok(Some(h.ss() + hs * inv * hw))
}

/// One row of an [`AssumptionReport`].
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AssumptionStatus {
    pub holds: bool,
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AssumptionStatus {
    fn flag(holds: bool) -> Self {
        AssumptionStatus { holds, radius: None, note: None }
    }

    fn radius(r: f64) -> Self {
        AssumptionStatus {
            holds: r < 1.0,
            radius: Some(r),
            note: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AssumptionReport {
    #[serde(rename = "NoExpl")]
    pub no_expl: AssumptionStatus,
    #[serde(rename = "Spec1")]
    pub spec1: AssumptionStatus,
    #[serde(rename = "Spec1.1")]
    pub spec1_1: AssumptionStatus,
    #[serde(rename = "Spec2_surrogate")]
    pub spec2_surrogate: AssumptionStatus,
    #[serde(rename = "HtildeCond")]
    pub htilde_cond: AssumptionStatus,
    #[serde(rename = "ExpTail")]
    pub exp_tail: AssumptionStatus,
    #[serde(rename = "Dict")]
    pub dict_compat: AssumptionStatus,
}

pub fn check_assumptions(model: &ModelParams) -> Result<AssumptionReport> {
    let d = model.dim();
    let mut l1_ok = true;
    for t in 0..d {
        for s in 0..d {
            if !model.kernel(t, s).l1_norm().is_finite() {
                l1_ok = false;
            }
        }
    }
    let lip_ok = (0..model.nodes()).all(|m| model.link_lipschitz(m).is_finite());
    let h = build_h(model)?;
    let ht = build_h_tilde(model)?;
    let spec1 = AssumptionStatus::radius(h.spectral_radius());
    let spec1_1 = AssumptionStatus::radius(spectral_radius(&h.ww())?);
    let spec2 = match spec2_surrogate_matrix(model)? {
        Some(m) => {
            let mut s = AssumptionStatus::radius(spectral_radius(&m)?);
            s.note = Some("unit lattice norms of chain-from-node kernels are finite".into());
            s
        }
        None => AssumptionStatus {
            holds: false,
            radius: None,
            note: Some("chain block not summable".into()),
        },
    };
    let htilde = AssumptionStatus::radius(ht.spectral_radius());
    let mut exp_tail = AssumptionStatus::flag(true);
    exp_tail.note = Some("all kernels are exponential or compactly supported".into());
    let compact = (0..d).all(|t| (0..d).all(|s| model.kernel(t, s).has_compact_support()));
    let identity = (0..d).all(|c| model.link(c).is_identity());
    let mut dict = AssumptionStatus::flag(compact && identity);
    if !dict.holds {
        dict.note = Some(
            match (compact, identity) {
                (false, _) => "some kernel has unbounded support",
                _ => "some link is not the identity",
            }
            .into(),
        );
    }
    Ok(AssumptionReport {
        no_expl: AssumptionStatus::flag(l1_ok && lip_ok),
        spec1,
        spec1_1,
        spec2_surrogate: spec2,
        htilde_cond: htilde,
        exp_tail,
        dict_compat: dict,
    })
}
