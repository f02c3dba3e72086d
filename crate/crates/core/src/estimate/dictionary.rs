use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::ChainLattice;
use crate::model::io::parse_component;
use crate::model::{Kernel, Link, Mask, ModelParams};

const BIN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    BaseRate,
    /// Indicator of bin `bin` of the shared grid, for interactions from `source`.
    Interaction { source: usize, bin: usize },
}

/// One dictionary element: `value` times a base rate or a bin indicator, on
/// a single coordinate `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    pub target: usize,
    pub kind: ElementKind,
    pub value: f64,
}

/// Which of the four weight regimes an element falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    NodeBase,
    NodeInteraction,
    ChainBase,
    ChainInteraction,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::NodeBase => "node_base",
            Group::NodeInteraction => "node_interaction",
            Group::ChainBase => "chain_base",
            Group::ChainInteraction => "chain_interaction",
        }
    }
}

/// Elementary dictionary on a shared grid of `bins` bins over `(0, support]`.
///
/// Component layout, chain lattices, masks and drift scales are copied from
/// the model the dictionary was built against.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    support: f64,
    bins: usize,
    nodes: usize,
    lattices: Vec<ChainLattice>,
    masks: Vec<Mask>,
    sigmas: Vec<f64>,
    elements: Vec<Element>,
}

impl Dictionary {
    pub fn new(model: &ModelParams, support: f64, bins: usize, elements: Vec<Element>) -> Result<Self> {
        if !(support.is_finite() && support > 0.0) {
            return Err(Error::InvalidArgument(format!("support A must be positive, got {support}")));
        }
        if bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        let dim = model.dim();
        let chains = model.num_chains();
        let mut masks = Vec::with_capacity(dim * chains);
        for a in 0..dim {
            for p in 0..chains {
                masks.push(model.mask(a, p).clone());
            }
        }
        let dict = Dictionary {
            support,
            bins,
            nodes: model.nodes(),
            lattices: model.lattices(),
            masks,
            sigmas: model.chains().iter().map(|c| c.drift.variance().sqrt()).collect(),
            elements,
        };
        dict.check()?;
        Ok(dict)
    }

    /// Every base rate plus every bin of every interaction.
    pub fn full(model: &ModelParams, support: f64, bins: usize) -> Result<Self> {
        let dim = model.dim();
        let mut elements = Vec::new();
        for target in 0..dim {
            elements.push(Element { target, kind: ElementKind::BaseRate, value: 1.0 });
        }
        for target in 0..dim {
            for source in 0..dim {
                for bin in 0..bins {
                    elements.push(Element {
                        target,
                        kind: ElementKind::Interaction { source, bin },
                        value: 1.0,
                    });
                }
            }
        }
        Dictionary::new(model, support, bins, elements)
    }

    fn check(&self) -> Result<()> {
        let dim = self.dim();
        let mut base_seen = vec![0usize; dim];
        for (i, e) in self.elements.iter().enumerate() {
            let at = format!("$.elements[{i}]");
            if e.target >= dim {
                return Err(Error::schema(at, "target out of range"));
            }
            if !(e.value.is_finite() && e.value != 0.0 && e.value.abs() <= 1.0) {
                return Err(Error::schema(at, format!("value must satisfy 0 < |v| <= 1, got {}", e.value)));
            }
            match e.kind {
                ElementKind::BaseRate => base_seen[e.target] += 1,
                ElementKind::Interaction { source, bin } => {
                    if source >= dim {
                        return Err(Error::schema(at, "source out of range"));
                    }
                    if bin >= self.bins {
                        return Err(Error::schema(at, format!("bin {bin} outside the {}-bin grid", self.bins)));
                    }
                }
            }
        }
        for (a, n) in base_seen.iter().enumerate() {
            if *n != 1 {
                return Err(Error::schema(
                    "$.elements",
                    format!("component {a} needs exactly one base-rate element, found {n}"),
                ));
            }
        }
        let mut keys: Vec<_> = self
            .elements
            .iter()
            .filter_map(|e| match e.kind {
                ElementKind::Interaction { source, bin } => Some((e.target, source, bin)),
                ElementKind::BaseRate => None,
            })
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::schema("$.elements", "duplicate interaction element"));
        }
        Ok(())
    }

    /// Parses `{A, bins, elements: [{kind, target, source?, bin?, value?}]}`.
    /// Without `elements` the full dictionary on the grid is used.
    pub fn from_json(doc: &Value, model: &ModelParams) -> Result<Self> {
        let support = doc
            .get("A")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::schema("$.A", "expected a number"))?;
        let bins = doc
            .get("bins")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::schema("$.bins", "expected a positive integer"))? as usize;
        let list = match doc.get("elements") {
            None => return Dictionary::full(model, support, bins),
            Some(v) => v
                .as_array()
                .ok_or_else(|| Error::schema("$.elements", "expected an array"))?,
        };
        let (nodes, chains) = (model.nodes(), model.num_chains());
        let mut elements = Vec::with_capacity(list.len());
        for (i, e) in list.iter().enumerate() {
            let at = format!("$.elements[{i}]");
            let text = |name: &str| {
                e.get(name)
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::schema(format!("{at}.{name}"), "expected a string"))
            };
            let target = parse_component(text("target")?, nodes, chains, &format!("{at}.target"))?;
            let value = match e.get("value") {
                None => 1.0,
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::schema(format!("{at}.value"), "expected a number"))?,
            };
            let kind = match text("kind")? {
                "base_rate" => ElementKind::BaseRate,
                "interaction" => ElementKind::Interaction {
                    source: parse_component(text("source")?, nodes, chains, &format!("{at}.source"))?,
                    bin: match e.get("bin") {
                        None => 0,
                        Some(b) => b
                            .as_u64()
                            .ok_or_else(|| Error::schema(format!("{at}.bin"), "expected an integer"))?
                            as usize,
                    },
                },
                other => {
                    return Err(Error::schema(
                        format!("{at}.kind"),
                        format!("expected base_rate or interaction, got {other:?}"),
                    ))
                }
            };
            elements.push(Element { target, kind, value });
        }
        Dictionary::new(model, support, bins, elements)
    }

    pub fn to_json(&self) -> Value {
        let elements: Vec<Value> = self
            .elements
            .iter()
            .map(|e| match e.kind {
                ElementKind::BaseRate => json!({
                    "kind": "base_rate", "target": self.label(e.target), "value": e.value,
                }),
                ElementKind::Interaction { source, bin } => json!({
                    "kind": "interaction", "target": self.label(e.target),
                    "source": self.label(source), "bin": bin, "value": e.value,
                }),
            })
            .collect();
        json!({"A": self.support, "bins": self.bins, "elements": elements})
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_width(&self) -> f64 {
        self.support / self.bins as f64
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn num_chains(&self) -> usize {
        self.lattices.len()
    }

    pub fn dim(&self) -> usize {
        self.nodes + self.lattices.len()
    }

    pub fn is_node(&self, component: usize) -> bool {
        component < self.nodes
    }

    pub fn lattices(&self) -> &[ChainLattice] {
        &self.lattices
    }

    pub fn mask(&self, target: usize, p: usize) -> &Mask {
        &self.masks[target * self.num_chains() + p]
    }

    /// Drift standard deviation of each chain in the source model.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn label(&self, component: usize) -> String {
        if component < self.nodes {
            format!("m{component}")
        } else {
            format!("p{}", component - self.nodes)
        }
    }

    pub fn element_label(&self, i: usize) -> String {
        let e = &self.elements[i];
        match e.kind {
            ElementKind::BaseRate => format!("mu[{}]", self.label(e.target)),
            ElementKind::Interaction { source, bin } => {
                format!("h[{}<-{}][{bin}]", self.label(e.target), self.label(source))
            }
        }
    }

    pub fn group(&self, i: usize) -> Group {
        let e = &self.elements[i];
        match (self.is_node(e.target), e.kind) {
            (true, ElementKind::BaseRate) => Group::NodeBase,
            (true, ElementKind::Interaction { .. }) => Group::NodeInteraction,
            (false, ElementKind::BaseRate) => Group::ChainBase,
            (false, ElementKind::Interaction { .. }) => Group::ChainInteraction,
        }
    }

    /// Coordinates `a*` of `model` in this dictionary.
    ///
    /// Fails unless the model is linear with identity links, every kernel is
    /// constant on each grid bin, vanishes beyond `A`, and has an element for
    /// every nonzero bin. Chain base rates are the drift means.
    pub fn coefficients_of(&self, model: &ModelParams) -> Result<Vec<f64>> {
        if model.dim() != self.dim() || model.lattices() != self.lattices {
            return Err(Error::Mismatch("model layout differs from the dictionary".into()));
        }
        for a in 0..self.dim() {
            if *model.link(a) != Link::Identity {
                return Err(Error::NotLinear(format!("link of {} is not the identity", self.label(a))));
            }
        }
        let delta = self.bin_width();
        let mut coef = vec![0.0; self.len()];
        let mut covered = vec![false; self.dim() * self.dim() * self.bins];
        for (i, e) in self.elements.iter().enumerate() {
            coef[i] = match e.kind {
                ElementKind::BaseRate if self.is_node(e.target) => model.base_rate(e.target),
                ElementKind::BaseRate => model.chain_spec(e.target - self.nodes).drift.mean(),
                ElementKind::Interaction { source, bin } => {
                    covered[(e.target * self.dim() + source) * self.bins + bin] = true;
                    bin_value(model.kernel(e.target, source), bin, delta)?
                }
            } / e.value;
        }
        for t in 0..self.dim() {
            for s in 0..self.dim() {
                let k = model.kernel(t, s);
                if k.is_zero() {
                    continue;
                }
                if k.support_end() > self.support * (1.0 + BIN_TOL) {
                    return Err(Error::Mismatch(format!(
                        "kernel {}<-{} extends beyond A = {}",
                        self.label(t),
                        self.label(s),
                        self.support
                    )));
                }
                for bin in 0..self.bins {
                    if !covered[(t * self.dim() + s) * self.bins + bin] && bin_value(k, bin, delta)? != 0.0 {
                        return Err(Error::Mismatch(format!(
                            "kernel {}<-{} is nonzero on bin {bin} but the dictionary has no element there",
                            self.label(t),
                            self.label(s)
                        )));
                    }
                }
            }
        }
        Ok(coef)
    }
}

/// Value of a kernel on bin `(bin*delta, (bin+1)*delta]`, which must be constant.
fn bin_value(k: &Kernel, bin: usize, delta: f64) -> Result<f64> {
    let lo = bin as f64 * delta;
    let probes: Vec<f64> = (1..=16).map(|j| k.eval(lo + delta * j as f64 / 16.0)).collect();
    let v = probes[0];
    if probes.iter().any(|x| (x - v).abs() > 1e-12 * v.abs().max(1.0)) {
        return Err(Error::Mismatch(format!("kernel is not constant on bin {bin}")));
    }
    Ok(v)
}
