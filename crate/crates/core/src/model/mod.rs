//! HAR parameter sets, initial conditions and kernel representations.
//!
//! Components are addressed by a single index: nodes occupy `0..M` and
//! chains occupy `M..M+P`. Use [`ModelParams::chain`] to convert a chain
//! number into its component index.

mod functions;
mod initial;
pub mod io;
mod kernel;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use functions::{DriftLaw, Link, Mask};
pub use initial::InitialCondition;
pub use kernel::{lattice_l1_norm, Kernel};

use crate::error::{Error, Result};
use crate::lattice::{gcd_u64, ChainLattice, Rational};
use crate::spectral::{self, AssumptionReport};

/// Time embedding and drift law of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    pub frequency: u32,
    pub phase: Rational,
    pub drift: DriftLaw,
}

impl ChainSpec {
    pub fn new(frequency: u32, phase: Rational, drift: DriftLaw) -> Self {
        ChainSpec { frequency, phase, drift }
    }

    /// Unit-frequency chain with zero phase.
    pub fn unit(drift: DriftLaw) -> Self {
        ChainSpec::new(1, Rational::zero(), drift)
    }

    pub fn lattice(&self) -> ChainLattice {
        ChainLattice::new(self.frequency, self.phase)
    }
}

/// A validated, immutable parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    nodes: usize,
    chains: Vec<ChainSpec>,
    base_rates: Vec<f64>,
    kernels: Vec<Kernel>,
    masks: Vec<Mask>,
    links: Vec<Link>,
}

impl ModelParams {
    pub fn builder(nodes: usize, chains: Vec<ChainSpec>) -> ModelBuilder {
        ModelBuilder::new(nodes, chains)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    /// Total number of components `M + P`.
    pub fn dim(&self) -> usize {
        self.nodes + self.chains.len()
    }

    /// Component index of chain `p`.
    pub fn chain(&self, p: usize) -> usize {
        self.nodes + p
    }

    pub fn is_node(&self, component: usize) -> bool {
        component < self.nodes
    }

    pub fn chain_spec(&self, p: usize) -> &ChainSpec {
        &self.chains[p]
    }

    pub fn chains(&self) -> &[ChainSpec] {
        &self.chains
    }

    pub fn lattice(&self, p: usize) -> ChainLattice {
        self.chains[p].lattice()
    }

    pub fn lattices(&self) -> Vec<ChainLattice> {
        self.chains.iter().map(ChainSpec::lattice).collect()
    }

    pub fn base_rate(&self, m: usize) -> f64 {
        self.base_rates[m]
    }

    pub fn base_rates(&self) -> &[f64] {
        &self.base_rates
    }

    /// Interaction function of `source` on `target` (component indices).
    pub fn kernel(&self, target: usize, source: usize) -> &Kernel {
        &self.kernels[target * self.dim() + source]
    }

    /// Mask of chain `p` on component `target`.
    pub fn mask(&self, target: usize, p: usize) -> &Mask {
        &self.masks[target * self.chains.len() + p]
    }

    pub fn link(&self, component: usize) -> &Link {
        &self.links[component]
    }

    /// Lipschitz constant `L` of the link of a component.
    pub fn link_lipschitz(&self, component: usize) -> f64 {
        self.links[component].lipschitz()
    }

    /// Lipschitz constant `a` of the mask of chain `p` on `target`.
    pub fn mask_lipschitz(&self, target: usize, p: usize) -> f64 {
        self.mask(target, p).lipschitz()
    }

    /// Intercept `b` of an affine mask (0 for other masks).
    pub fn mask_intercept(&self, target: usize, p: usize) -> f64 {
        self.mask(target, p).intercept().unwrap_or(0.0)
    }

    /// Human label of a component: `m<i>` or `p<i>`.
    pub fn label(&self, component: usize) -> String {
        if component < self.nodes {
            format!("m{component}")
        } else {
            format!("p{}", component - self.nodes)
        }
    }

    /// Linear class membership: identity links, nonnegative affine masks,
    /// nonnegative kernels and base rates.
    pub fn is_linear(&self) -> bool {
        self.links.iter().all(Link::is_identity)
            && self.masks.iter().all(Mask::is_nonnegative_affine)
            && self.kernels.iter().all(Kernel::is_nonnegative)
            && self.base_rates.iter().all(|m| *m >= 0.0)
    }

    /// Reason the model is outside the linear class, if any.
    pub fn linearity_violation(&self) -> Option<String> {
        if let Some(c) = self.links.iter().position(|l| !l.is_identity()) {
            return Some(format!("link of {} is not the identity", self.label(c)));
        }
        if let Some(i) = self.masks.iter().position(|m| !m.is_nonnegative_affine()) {
            let p = self.chains.len();
            return Some(format!(
                "mask (target {}, chain p{}) is not affine with nonnegative coefficients",
                self.label(i / p),
                i % p
            ));
        }
        if let Some(i) = self.kernels.iter().position(|k| !k.is_nonnegative()) {
            let d = self.dim();
            return Some(format!(
                "kernel (target {}, source {}) takes negative values",
                self.label(i / d),
                self.label(i % d)
            ));
        }
        if let Some(m) = self.base_rates.iter().position(|m| *m < 0.0) {
            return Some(format!("base rate of m{m} is negative"));
        }
        None
    }

    pub fn require_linear(&self) -> Result<()> {
        match self.linearity_violation() {
            Some(reason) => Err(Error::NotLinear(reason)),
            None => Ok(()),
        }
    }

    /// Largest support end over all kernels (`inf` if any kernel is exponential).
    pub fn max_support(&self) -> f64 {
        self.kernels.iter().fold(0.0_f64, |acc, k| acc.max(k.support_end()))
    }

    /// Short hex digest of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&io::to_json(self)).expect("model serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Rebuilds a builder holding this model's parameters.
    pub fn to_builder(&self) -> ModelBuilder {
        ModelBuilder {
            nodes: self.nodes,
            chains: self.chains.clone(),
            base_rates: self.base_rates.clone(),
            kernels: self.kernels.clone(),
            masks: self.masks.clone(),
            links: self.links.clone(),
        }
    }
}

/// Mutable staging area for a [`ModelParams`]. Unset kernels are zero,
/// unset masks are the identity, unset links are the identity and unset
/// base rates are 0.
#[derive(Clone, Debug)]
pub struct ModelBuilder {
    nodes: usize,
    chains: Vec<ChainSpec>,
    base_rates: Vec<f64>,
    kernels: Vec<Kernel>,
    masks: Vec<Mask>,
    links: Vec<Link>,
}

impl ModelBuilder {
    pub fn new(nodes: usize, chains: Vec<ChainSpec>) -> Self {
        let d = nodes + chains.len();
        let p = chains.len();
        ModelBuilder {
            nodes,
            chains,
            base_rates: vec![0.0; nodes],
            kernels: vec![Kernel::Zero; d * d],
            masks: vec![Mask::identity(); d * p],
            links: vec![Link::Identity; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes + self.chains.len()
    }

    /// Component index of chain `p`.
    pub fn chain(&self, p: usize) -> usize {
        self.nodes + p
    }

    pub fn base_rate(mut self, m: usize, value: f64) -> Self {
        self.base_rates[m] = value;
        self
    }

    pub fn kernel(mut self, target: usize, source: usize, kernel: Kernel) -> Self {
        let d = self.dim();
        self.kernels[target * d + source] = kernel;
        self
    }

    pub fn mask(mut self, target: usize, p: usize, mask: Mask) -> Self {
        let np = self.chains.len();
        self.masks[target * np + p] = mask;
        self
    }

    /// Same mask for chain `p` on every target.
    pub fn mask_all(mut self, p: usize, mask: Mask) -> Self {
        let np = self.chains.len();
        for target in 0..self.dim() {
            self.masks[target * np + p] = mask.clone();
        }
        self
    }

    pub fn link(mut self, component: usize, link: Link) -> Self {
        self.links[component] = link;
        self
    }

    pub fn drift(mut self, p: usize, drift: DriftLaw) -> Self {
        self.chains[p].drift = drift;
        self
    }

    pub fn build(self) -> Result<ModelParams> {
        for (p, c) in self.chains.iter().enumerate() {
            if c.frequency == 0 {
                return Err(Error::InvalidModel(format!("chain p{p}: frequency must be >= 1")));
            }
            let bound = Rational::new(1, c.frequency as i64);
            if c.phase < Rational::zero() || c.phase >= bound {
                return Err(Error::InvalidModel(format!(
                    "chain p{p}: phase {} outside [0, 1/{})",
                    c.phase, c.frequency
                )));
            }
            c.drift
                .check()
                .map_err(|e| Error::InvalidModel(format!("chain p{p}: {e}")))?;
        }
        if !self.chains.is_empty() {
            let g = self
                .chains
                .iter()
                .fold(0_u64, |g, c| gcd_u64(g, c.frequency as u64));
            if g != 1 {
                return Err(Error::InvalidModel(format!("gcd(n_p)={g} != 1")));
            }
        }
        for (m, mu) in self.base_rates.iter().enumerate() {
            if !mu.is_finite() {
                return Err(Error::InvalidModel(format!("base rate of m{m} is not finite")));
            }
        }
        let d = self.dim();
        let np = self.chains.len();
        let label = |c: usize| {
            if c < self.nodes {
                format!("m{c}")
            } else {
                format!("p{}", c - self.nodes)
            }
        };
        for (i, k) in self.kernels.iter().enumerate() {
            k.check().map_err(|e| {
                Error::InvalidModel(format!("kernel (target {}, source {}): {e}", label(i / d), label(i % d)))
            })?;
        }
        for (i, m) in self.masks.iter().enumerate() {
            m.check().map_err(|e| {
                Error::InvalidModel(format!("mask (target {}, chain p{}): {e}", label(i / np), i % np))
            })?;
        }
        for (c, l) in self.links.iter().enumerate() {
            l.check()
                .map_err(|e| Error::InvalidModel(format!("link of {}: {e}", label(c))))?;
            if c >= self.nodes && l.apply(0.0) != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "link of {} must vanish at 0",
                    label(c)
                )));
            }
        }
        Ok(ModelParams {
            nodes: self.nodes,
            chains: self.chains,
            base_rates: self.base_rates,
            kernels: self.kernels,
            masks: self.masks,
            links: self.links,
        })
    }
}

/// One `(target, source)` interaction norm entry.
#[derive(Clone, Debug, Serialize)]
pub struct NormEntry {
    pub target: String,
    pub source: String,
    pub l1: f64,
    /// Lattice norm at the source chain's frequency (chain sources) or at
    /// frequency 1 (node sources acting on chains).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<f64>,
}

/// Result of [`validate`].
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub model_hash: String,
    pub nodes: usize,
    pub chains: usize,
    pub linear: bool,
    pub assumptions: AssumptionReport,
    pub norms: Vec<NormEntry>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// True when the model admits a stationary version.
    pub fn ok(&self) -> bool {
        self.assumptions.no_expl.holds && self.assumptions.spec1.holds
    }
}

/// Evaluates the standing assumptions of a model and collects its norms.
pub fn validate(model: &ModelParams) -> Result<ValidationReport> {
    let assumptions = spectral::check_assumptions(model)?;
    let d = model.dim();
    let mut norms = Vec::new();
    for target in 0..d {
        for source in 0..d {
            let k = model.kernel(target, source);
            if k.is_zero() {
                continue;
            }
            let lattice = if !model.is_node(source) {
                let n = model.chain_spec(source - model.nodes()).frequency as f64;
                Some(lattice_l1_norm(k, n)?)
            } else if !model.is_node(target) {
                Some(lattice_l1_norm(k, 1.0)?)
            } else {
                None
            };
            norms.push(NormEntry {
                target: model.label(target),
                source: model.label(source),
                l1: k.l1_norm(),
                lattice,
            });
        }
    }
    let mut warnings = Vec::new();
    for m in 0..model.nodes() {
        if model.link(m).is_identity() && !model.is_linear() {
            warnings.push(format!(
                "node m{m} has an identity link in a nonlinear model; negative pre-intensities abort simulation"
            ));
        }
    }
    if !assumptions.spec1_1.holds {
        warnings.push("chain interactions are not summable (Spec1.1 fails)".into());
    }
    Ok(ValidationReport {
        model_hash: model.hash(),
        nodes: model.nodes(),
        chains: model.num_chains(),
        linear: model.is_linear(),
        assumptions,
        norms,
        warnings,
    })
}
