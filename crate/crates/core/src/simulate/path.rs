use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::{ChainLattice, Rational};
use crate::model::ModelParams;

/// Half-open observation window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidArgument(format!(
                "window must satisfy start < end, got [{start}, {end})"
            )));
        }
        Ok(Window { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Thinning,
    Cluster,
    Coupling,
    /// Reference measure: unit-rate Poisson nodes and i.i.d. Gaussian chains.
    QMeasure,
}

impl Generator {
    fn name(self) -> &'static str {
        match self {
            Generator::Thinning => "thinning",
            Generator::Cluster => "cluster",
            Generator::Coupling => "coupling",
            Generator::QMeasure => "q_measure",
        }
    }
}

/// One realized trajectory on a window: node events, chain values and the
/// drifts that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct HarPath {
    pub window: Window,
    pub seed: u64,
    pub generator: Generator,
    pub model_hash: String,
    pub lattices: Vec<ChainLattice>,
    pub events: Vec<Vec<f64>>,
    pub chain_start: Vec<i64>,
    pub chain_values: Vec<Vec<f64>>,
    pub drifts: Vec<Vec<f64>>,
    /// Intensity at each event, when recorded.
    pub intensity: Option<Vec<Vec<f64>>>,
}

impl HarPath {
    /// Path with no events and zero chains on the window lattice.
    pub fn empty(model: &ModelParams, window: Window, seed: u64, generator: Generator) -> Self {
        let lattices = model.lattices();
        let mut chain_start = Vec::new();
        let mut chain_values = Vec::new();
        for lat in &lattices {
            let r = lat.indices_in(window.start, window.end);
            chain_start.push(r.start);
            chain_values.push(vec![0.0; (r.end - r.start) as usize]);
        }
        HarPath {
            window,
            seed,
            generator,
            model_hash: model.hash(),
            drifts: chain_values.clone(),
            lattices,
            events: vec![Vec::new(); model.nodes()],
            chain_start,
            chain_values,
            intensity: None,
        }
    }

    pub fn nodes(&self) -> usize {
        self.events.len()
    }

    pub fn num_chains(&self) -> usize {
        self.lattices.len()
    }

    pub fn total_events(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    /// Number of events of `node` in `[a, b)`.
    pub fn count(&self, node: usize, a: f64, b: f64) -> usize {
        let ev = &self.events[node];
        ev.partition_point(|t| *t < b) - ev.partition_point(|t| *t < a)
    }

    /// Events of all nodes in `[a, b)`.
    pub fn count_all(&self, a: f64, b: f64) -> usize {
        (0..self.nodes()).map(|m| self.count(m, a, b)).sum()
    }

    pub fn chain_indices(&self, p: usize) -> std::ops::Range<i64> {
        self.chain_start[p]..self.chain_start[p] + self.chain_values[p].len() as i64
    }

    pub fn chain_value(&self, p: usize, j: i64) -> Option<f64> {
        let idx = j - self.chain_start[p];
        if idx < 0 {
            return None;
        }
        self.chain_values[p].get(idx as usize).copied()
    }

    pub fn drift(&self, p: usize, j: i64) -> Option<f64> {
        let idx = j - self.chain_start[p];
        if idx < 0 {
            return None;
        }
        self.drifts[p].get(idx as usize).copied()
    }

    /// `(j, time, value)` for every lattice point of chain `p` in the window.
    pub fn chain_points(&self, p: usize) -> impl Iterator<Item = (i64, f64, f64)> + '_ {
        let lat = self.lattices[p];
        self.chain_indices(p)
            .zip(self.chain_values[p].iter())
            .map(move |(j, v)| (j, lat.time_f64(j), *v))
    }

    /// Restriction to a sub-window.
    pub fn restrict(&self, window: Window) -> HarPath {
        let mut out = self.clone();
        out.window = window;
        out.events = self
            .events
            .iter()
            .map(|ev| ev.iter().copied().filter(|t| window.contains(*t)).collect())
            .collect();
        if let Some(lam) = &self.intensity {
            out.intensity = Some(
                self.events
                    .iter()
                    .zip(lam)
                    .map(|(ev, l)| {
                        ev.iter()
                            .zip(l)
                            .filter(|(t, _)| window.contains(**t))
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect(),
            );
        }
        for p in 0..self.num_chains() {
            let r = self.lattices[p].indices_in(window.start, window.end);
            out.chain_start[p] = r.start;
            out.chain_values[p] = r.clone().map(|j| self.chain_value(p, j).unwrap_or(0.0)).collect();
            out.drifts[p] = r.map(|j| self.drift(p, j).unwrap_or(0.0)).collect();
        }
        out
    }
}

/// Writes a path as JSON lines: one header record, then events, then chain
/// values.
pub fn write_jsonl<W: Write>(path: &HarPath, mut out: W) -> Result<()> {
    let chains: Vec<Value> = path
        .lattices
        .iter()
        .map(|l| json!({"frequency": l.frequency, "phase_num": l.phase.num, "phase_den": l.phase.den}))
        .collect();
    let header = json!({
        "kind": "header",
        "model_hash": path.model_hash,
        "seed": path.seed,
        "window": [path.window.start, path.window.end],
        "generator": path.generator.name(),
        "nodes": path.nodes(),
        "chains": chains,
    });
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for (m, ev) in path.events.iter().enumerate() {
        for (i, t) in ev.iter().enumerate() {
            let mut rec = json!({"kind": "event", "node": m, "t": t});
            if let Some(lam) = &path.intensity {
                rec["lambda"] = json!(lam[m][i]);
            }
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    for p in 0..path.num_chains() {
        for (j, _, v) in path.chain_points(p) {
            let k = path.lattices[p].time(j);
            let rec = json!({
                "kind": "chain", "p": p, "k_num": k.num, "k_den": k.den,
                "value": v, "drift": path.drift(p, j).unwrap_or(0.0),
            });
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    Ok(())
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name)
        .ok_or_else(|| Error::schema(format!("$.{name}"), "missing field"))
}

fn as_f64(v: &Value, name: &str) -> Result<f64> {
    field(v, name)?
        .as_f64()
        .ok_or_else(|| Error::schema(format!("$.{name}"), "expected a number"))
}

fn as_i64(v: &Value, name: &str) -> Result<i64> {
    field(v, name)?
        .as_i64()
        .ok_or_else(|| Error::schema(format!("$.{name}"), "expected an integer"))
}

/// Reads a path written by [`write_jsonl`].
pub fn read_jsonl<R: BufRead>(input: R) -> Result<HarPath> {
    let mut lines = input.lines();
    let header: Value = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(Error::schema("$", "empty path file")),
    };
    if header.get("kind").and_then(Value::as_str) != Some("header") {
        return Err(Error::schema("$.kind", "first record must be the header"));
    }
    let w = field(&header, "window")?
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::schema("$.window", "expected [start, end]"))?;
    let window = Window::new(
        w[0].as_f64().unwrap_or(f64::NAN),
        w[1].as_f64().unwrap_or(f64::NAN),
    )?;
    let generator = match field(&header, "generator")?.as_str() {
        Some("thinning") => Generator::Thinning,
        Some("cluster") => Generator::Cluster,
        Some("coupling") => Generator::Coupling,
        Some("q_measure") => Generator::QMeasure,
        _ => return Err(Error::schema("$.generator", "unknown generator")),
    };
    let nodes = as_i64(&header, "nodes")? as usize;
    let mut lattices = Vec::new();
    for c in field(&header, "chains")?
        .as_array()
        .ok_or_else(|| Error::schema("$.chains", "expected an array"))?
    {
        let n = as_i64(c, "frequency")?;
        if n < 1 {
            return Err(Error::schema("$.chains[].frequency", "frequency must be ≥ 1"));
        }
        lattices.push(ChainLattice::new(
            n as u32,
            Rational::new(as_i64(c, "phase_num")?, as_i64(c, "phase_den")?),
        ));
    }
    let mut path = HarPath {
        window,
        seed: field(&header, "seed")?
            .as_u64()
            .ok_or_else(|| Error::schema("$.seed", "expected an unsigned integer"))?,
        generator,
        model_hash: field(&header, "model_hash")?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        events: vec![Vec::new(); nodes],
        chain_start: Vec::new(),
        chain_values: Vec::new(),
        drifts: Vec::new(),
        intensity: None,
        lattices: lattices.clone(),
    };
    for lat in &lattices {
        let r = lat.indices_in(window.start, window.end);
        path.chain_start.push(r.start);
        path.chain_values.push(vec![f64::NAN; (r.end - r.start) as usize]);
        path.drifts.push(vec![0.0; (r.end - r.start) as usize]);
    }
    let mut lambdas: Vec<Vec<f64>> = vec![Vec::new(); nodes];
    let mut any_lambda = false;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value = serde_json::from_str(&line)?;
        match rec.get("kind").and_then(Value::as_str) {
            Some("event") => {
                let m = as_i64(&rec, "node")? as usize;
                if m >= nodes {
                    return Err(Error::schema("$.node", format!("node {m} out of range")));
                }
                path.events[m].push(as_f64(&rec, "t")?);
                if let Some(l) = rec.get("lambda").and_then(Value::as_f64) {
                    lambdas[m].push(l);
                    any_lambda = true;
                }
            }
            Some("chain") => {
                let p = as_i64(&rec, "p")? as usize;
                if p >= lattices.len() {
                    return Err(Error::schema("$.p", format!("chain {p} out of range")));
                }
                let k = Rational::new(as_i64(&rec, "k_num")?, as_i64(&rec, "k_den")?);
                let j = lattices[p].first_at_or_after(k);
                if lattices[p].time(j) != k {
                    return Err(Error::schema("$.k_num", "time is not on the chain lattice"));
                }
                let idx = j - path.chain_start[p];
                if idx < 0 || idx as usize >= path.chain_values[p].len() {
                    return Err(Error::schema("$.k_num", "chain time outside the window"));
                }
                path.chain_values[p][idx as usize] = as_f64(&rec, "value")?;
                path.drifts[p][idx as usize] = rec.get("drift").and_then(Value::as_f64).unwrap_or(0.0);
            }
            _ => return Err(Error::schema("$.kind", "expected event or chain")),
        }
    }
    if path.chain_values.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::schema("$", "chain series incomplete"));
    }
    for ev in &mut path.events {
        ev.sort_by(f64::total_cmp);
    }
    if any_lambda {
        path.intensity = Some(lambdas);
    }
    Ok(path)
}
