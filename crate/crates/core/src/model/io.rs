//! JSON model files.
//!
//! ```json
//! {
//!   "nodes": 1,
//!   "chains": [{"frequency": 1, "phase_num": 0, "phase_den": 1,
//!               "drift": {"kind": "gaussian", "mean": 0.0, "std": 1.0}}],
//!   "base_rates": [1.0],
//!   "kernels": [{"target": "m0", "source": "p0", "kind": "exponential",
//!                "params": {"amplitude": 0.5, "rate": 2.0}}],
//!   "masks": [{"target": "m0", "chain": "p0", "kind": "abs", "params": {}}],
//!   "links": [{"target": "m0", "kind": "relu", "params": {}}]
//! }
//! ```
//!
//! Components are labelled `m<i>` (nodes) and `p<i>` (chains), zero based.
//! Omitted kernels are zero and omitted masks are the identity; both produce
//! a warning. Omitted links are the identity.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::lattice::Rational;

use super::{ChainSpec, DriftLaw, Kernel, Link, Mask, ModelBuilder, ModelParams};

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::schema(format!("{path}.{name}"), "missing field"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::schema(path, "expected a number"))
}

fn get_f64(obj: &Map<String, Value>, name: &str, path: &str) -> Result<f64> {
    as_f64(field(obj, name, path)?, &format!("{path}.{name}"))
}

fn get_i64(obj: &Map<String, Value>, name: &str, path: &str) -> Result<i64> {
    field(obj, name, path)?
        .as_i64()
        .ok_or_else(|| Error::schema(format!("{path}.{name}"), "expected an integer"))
}

fn get_str<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a str> {
    field(obj, name, path)?
        .as_str()
        .ok_or_else(|| Error::schema(format!("{path}.{name}"), "expected a string"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::schema(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::schema(path, "expected an array"))
}

fn params_of<'a>(obj: &'a Map<String, Value>, path: &str) -> Result<Map<String, Value>> {
    match obj.get("params") {
        None | Some(Value::Null) => Ok(Map::new()),
        Some(v) => Ok(as_object(v, &format!("{path}.params"))?.clone()),
    }
}

pub(crate) fn parse_component(label: &str, nodes: usize, chains: usize, path: &str) -> Result<usize> {
    let bad = || Error::schema(path, format!("expected a component label like m0 or p0, got {label:?}"));
    let (kind, idx) = label.split_at(1.min(label.len()));
    let i: usize = idx.parse().map_err(|_| bad())?;
    match kind {
        "m" if i < nodes => Ok(i),
        "p" if i < chains => Ok(nodes + i),
        "m" | "p" => Err(Error::schema(path, format!("component {label} out of range"))),
        _ => Err(bad()),
    }
}

fn parse_chain_ref(v: &Value, chains: usize, path: &str) -> Result<usize> {
    let p = match v {
        Value::String(s) => s
            .strip_prefix('p')
            .and_then(|i| i.parse::<usize>().ok())
            .ok_or_else(|| Error::schema(path, format!("expected a chain label like p0, got {s:?}")))?,
        Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| Error::schema(path, "expected a chain index"))? as usize,
        _ => return Err(Error::schema(path, "expected a chain label")),
    };
    if p >= chains {
        return Err(Error::schema(path, format!("chain p{p} out of range")));
    }
    Ok(p)
}

fn parse_drift(v: &Value, path: &str) -> Result<DriftLaw> {
    let obj = as_object(v, path)?;
    let kind = get_str(obj, "kind", path)?;
    let std = get_f64(obj, "std", path)?;
    let mean = || get_f64(obj, "mean", path);
    let law = match kind {
        "gaussian" => DriftLaw::Gaussian { mean: mean()?, std },
        "half_gaussian" => DriftLaw::HalfGaussian { std },
        "truncated_gaussian" => DriftLaw::TruncatedGaussian { mean: mean()?, std },
        "folded" => DriftLaw::Folded { mean: mean()?, std },
        other => {
            return Err(Error::schema(
                format!("{path}.kind"),
                format!("unknown drift kind {other:?}"),
            ))
        }
    };
    law.check()
        .map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(law)
}

fn parse_kernel(kind: &str, params: &Map<String, Value>, path: &str) -> Result<Kernel> {
    let p = format!("{path}.params");
    let kernel = match kind {
        "zero" => Kernel::Zero,
        "piecewise_constant" => {
            let width = get_f64(params, "width", &p)?;
            let values = as_array(field(params, "values", &p)?, &format!("{p}.values"))?
                .iter()
                .enumerate()
                .map(|(i, v)| as_f64(v, &format!("{p}.values[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            Kernel::PiecewiseConstant { width, values }
        }
        "exponential" => Kernel::Exponential {
            amplitude: get_f64(params, "amplitude", &p)?,
            rate: get_f64(params, "rate", &p)?,
        },
        "exponential_signed" => Kernel::ExponentialSigned {
            amplitude: get_f64(params, "amplitude", &p)?,
            rate: get_f64(params, "rate", &p)?,
        },
        other => {
            return Err(Error::schema(
                format!("{path}.kind"),
                format!("unknown kernel kind {other:?}"),
            ))
        }
    };
    kernel
        .check()
        .map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(kernel)
}

fn parse_mask(kind: &str, params: &Map<String, Value>, path: &str) -> Result<Mask> {
    let p = format!("{path}.params");
    let mask = match kind {
        "affine" => Mask::Affine {
            slope: get_f64(params, "slope", &p)?,
            intercept: get_f64(params, "intercept", &p)?,
        },
        "affine_general" => Mask::AffineGeneral {
            slope: get_f64(params, "slope", &p)?,
            intercept: get_f64(params, "intercept", &p)?,
        },
        "abs" => Mask::Abs,
        "relu" => Mask::Relu,
        other => {
            return Err(Error::schema(
                format!("{path}.kind"),
                format!("unknown mask kind {other:?}"),
            ))
        }
    };
    mask.check()
        .map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(mask)
}

fn parse_link(kind: &str, params: &Map<String, Value>, path: &str) -> Result<Link> {
    match kind {
        "identity" => Ok(Link::Identity),
        "relu" => Ok(Link::Relu),
        "shifted_relu" => Ok(Link::ShiftedRelu {
            offset: get_f64(params, "offset", &format!("{path}.params"))?,
        }),
        other => Err(Error::schema(
            format!("{path}.kind"),
            format!("unknown link kind {other:?}"),
        )),
    }
}

/// Parses a model document, returning the model and any warnings.
pub fn from_json(doc: &Value) -> Result<(ModelParams, Vec<String>)> {
    let root = as_object(doc, "$")?;
    let nodes_v = field(root, "nodes", "$")?;
    let nodes = nodes_v
        .as_u64()
        .ok_or_else(|| Error::schema("$.nodes", "expected a nonnegative integer"))? as usize;

    let mut chains = Vec::new();
    if let Some(v) = root.get("chains") {
        for (i, c) in as_array(v, "$.chains")?.iter().enumerate() {
            let path = format!("$.chains[{i}]");
            let obj = as_object(c, &path)?;
            let freq = get_i64(obj, "frequency", &path)?;
            if freq < 1 {
                return Err(Error::schema(format!("{path}.frequency"), "frequency must be ≥ 1"));
            }
            let freq = u32::try_from(freq)
                .map_err(|_| Error::schema(format!("{path}.frequency"), "frequency too large"))?;
            let num = match obj.get("phase_num") {
                Some(_) => get_i64(obj, "phase_num", &path)?,
                None => 0,
            };
            let den = match obj.get("phase_den") {
                Some(_) => get_i64(obj, "phase_den", &path)?,
                None => 1,
            };
            if den == 0 {
                return Err(Error::schema(format!("{path}.phase_den"), "denominator must be nonzero"));
            }
            let phase = Rational::new(num, den);
            if phase < Rational::zero() || phase >= Rational::new(1, freq as i64) {
                return Err(Error::schema(
                    format!("{path}.phase_num"),
                    format!("phase {phase} must lie in [0, 1/{freq})"),
                ));
            }
            let drift = match obj.get("drift") {
                Some(d) => parse_drift(d, &format!("{path}.drift"))?,
                None => return Err(Error::schema(format!("{path}.drift"), "missing field")),
            };
            chains.push(ChainSpec::new(freq, phase, drift));
        }
    }
    let np = chains.len();
    let mut builder = ModelBuilder::new(nodes, chains);
    let d = builder.dim();
    let mut warnings = Vec::new();

    let rates = match root.get("base_rates") {
        Some(v) => as_array(v, "$.base_rates")?.clone(),
        None => Vec::new(),
    };
    if rates.len() != nodes {
        return Err(Error::schema(
            "$.base_rates",
            format!("expected {nodes} entries, got {}", rates.len()),
        ));
    }
    for (m, r) in rates.iter().enumerate() {
        builder = builder.base_rate(m, as_f64(r, &format!("$.base_rates[{m}]"))?);
    }

    let mut seen = vec![false; d * d];
    if let Some(v) = root.get("kernels") {
        for (i, k) in as_array(v, "$.kernels")?.iter().enumerate() {
            let path = format!("$.kernels[{i}]");
            let obj = as_object(k, &path)?;
            let target = parse_component(get_str(obj, "target", &path)?, nodes, np, &format!("{path}.target"))?;
            let source = parse_component(get_str(obj, "source", &path)?, nodes, np, &format!("{path}.source"))?;
            if seen[target * d + source] {
                return Err(Error::schema(path, "duplicate kernel entry"));
            }
            seen[target * d + source] = true;
            let kernel = parse_kernel(get_str(obj, "kind", &path)?, &params_of(obj, &path)?, &path)?;
            builder = builder.kernel(target, source, kernel);
        }
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            warnings.push(format!(
                "kernel (target {}, source {}) not given; using zero",
                label(i / d, nodes),
                label(i % d, nodes)
            ));
        }
    }

    let mut seen = vec![false; d * np];
    if let Some(v) = root.get("masks") {
        for (i, k) in as_array(v, "$.masks")?.iter().enumerate() {
            let path = format!("$.masks[{i}]");
            let obj = as_object(k, &path)?;
            let target = parse_component(get_str(obj, "target", &path)?, nodes, np, &format!("{path}.target"))?;
            let p = parse_chain_ref(field(obj, "chain", &path)?, np, &format!("{path}.chain"))?;
            if seen[target * np + p] {
                return Err(Error::schema(path, "duplicate mask entry"));
            }
            seen[target * np + p] = true;
            let mask = parse_mask(get_str(obj, "kind", &path)?, &params_of(obj, &path)?, &path)?;
            builder = builder.mask(target, p, mask);
        }
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            warnings.push(format!(
                "mask (target {}, chain p{}) not given; using identity",
                label(i / np, nodes),
                i % np
            ));
        }
    }

    if let Some(v) = root.get("links") {
        for (i, k) in as_array(v, "$.links")?.iter().enumerate() {
            let path = format!("$.links[{i}]");
            let obj = as_object(k, &path)?;
            let target = parse_component(get_str(obj, "target", &path)?, nodes, np, &format!("{path}.target"))?;
            let link = parse_link(get_str(obj, "kind", &path)?, &params_of(obj, &path)?, &path)?;
            builder = builder.link(target, link);
        }
    }
    Ok((builder.build()?, warnings))
}

fn label(c: usize, nodes: usize) -> String {
    if c < nodes {
        format!("m{c}")
    } else {
        format!("p{}", c - nodes)
    }
}

fn kernel_json(k: &Kernel) -> (&'static str, Value) {
    match k {
        Kernel::Zero => ("zero", json!({})),
        Kernel::PiecewiseConstant { width, values } => {
            ("piecewise_constant", json!({"width": width, "values": values}))
        }
        Kernel::Exponential { amplitude, rate } => {
            ("exponential", json!({"amplitude": amplitude, "rate": rate}))
        }
        Kernel::ExponentialSigned { amplitude, rate } => {
            ("exponential_signed", json!({"amplitude": amplitude, "rate": rate}))
        }
    }
}

fn mask_json(m: &Mask) -> Value {
    match m {
        Mask::Affine { slope, intercept } | Mask::AffineGeneral { slope, intercept } => {
            json!({"slope": slope, "intercept": intercept})
        }
        Mask::Abs | Mask::Relu => json!({}),
    }
}

fn drift_json(d: &DriftLaw) -> Value {
    match d {
        DriftLaw::HalfGaussian { std } => json!({"kind": d.name(), "std": std}),
        DriftLaw::Gaussian { mean, std }
        | DriftLaw::TruncatedGaussian { mean, std }
        | DriftLaw::Folded { mean, std } => json!({"kind": d.name(), "mean": mean, "std": std}),
    }
}

/// Serializes every entry of the model, including zero kernels.
pub fn to_json(model: &ModelParams) -> Value {
    let d = model.dim();
    let chains: Vec<Value> = model
        .chains()
        .iter()
        .map(|c| {
            json!({
                "frequency": c.frequency,
                "phase_num": c.phase.num,
                "phase_den": c.phase.den,
                "drift": drift_json(&c.drift),
            })
        })
        .collect();
    let mut kernels = Vec::new();
    for t in 0..d {
        for s in 0..d {
            let (kind, params) = kernel_json(model.kernel(t, s));
            kernels.push(json!({
                "target": model.label(t),
                "source": model.label(s),
                "kind": kind,
                "params": params,
            }));
        }
    }
    let mut masks = Vec::new();
    for t in 0..d {
        for p in 0..model.num_chains() {
            let m = model.mask(t, p);
            masks.push(json!({
                "target": model.label(t),
                "chain": format!("p{p}"),
                "kind": m.name(),
                "params": mask_json(m),
            }));
        }
    }
    let links: Vec<Value> = (0..d)
        .map(|c| {
            let l = model.link(c);
            let params = match l {
                Link::ShiftedRelu { offset } => json!({"offset": offset}),
                _ => json!({}),
            };
            json!({"target": model.label(c), "kind": l.name(), "params": params})
        })
        .collect();
    json!({
        "nodes": model.nodes(),
        "chains": chains,
        "base_rates": model.base_rates(),
        "kernels": kernels,
        "masks": masks,
        "links": links,
    })
}

pub fn from_str(text: &str) -> Result<(ModelParams, Vec<String>)> {
    let doc: Value = serde_json::from_str(text)?;
    from_json(&doc)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<(ModelParams, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    from_str(&text)
}

pub fn write_model(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&to_json(model))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams {
        let chains = vec![
            ChainSpec::new(2, Rational::new(1, 4), DriftLaw::Gaussian { mean: 0.1, std: 0.5 }),
            ChainSpec::new(3, Rational::zero(), DriftLaw::HalfGaussian { std: 1.0 }),
        ];
        ModelParams::builder(2, chains)
            .base_rate(0, 0.5)
            .base_rate(1, -0.2)
            .kernel(0, 1, Kernel::exponential(0.4, 1.5))
            .kernel(1, 2, Kernel::piecewise(0.25, vec![0.1, -0.2, 0.3]))
            .kernel(3, 0, Kernel::ExponentialSigned { amplitude: -0.3, rate: 2.0 })
            .mask(0, 1, Mask::Abs)
            .mask(2, 0, Mask::AffineGeneral { slope: -0.5, intercept: 0.1 })
            .link(1, Link::ShiftedRelu { offset: 0.3 })
            .link(0, Link::Relu)
            .build()
            .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let (back, warnings) = from_json(&to_json(&m)).unwrap();
        assert_eq!(back, m);
        assert!(warnings.is_empty());
    }

    #[test]
    fn round_trip_through_file() {
        let m = sample();
        let dir = std::env::temp_dir().join(format!("har-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        write_model(&m, &path).unwrap();
        let (back, _) = read_model(&path).unwrap();
        assert_eq!(back, m);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn negative_frequency_rejected() {
        let doc = json!({
            "nodes": 0,
            "chains": [{"frequency": -2, "phase_num": 0, "phase_den": 1,
                        "drift": {"kind": "gaussian", "mean": 0.0, "std": 1.0}}],
            "base_rates": []
        });
        let err = from_json(&doc).unwrap_err();
        assert!(err.to_string().contains("frequency must be ≥ 1"), "{err}");
        assert!(err.to_string().contains("$.chains[0].frequency"), "{err}");
    }

    #[test]
    fn missing_kernel_defaults_to_zero_with_warning() {
        let doc = json!({
            "nodes": 1,
            "base_rates": [1.0],
            "kernels": []
        });
        let (m, warnings) = from_json(&doc).unwrap();
        assert_eq!(*m.kernel(0, 0), Kernel::Zero);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("target m0, source m0"));
    }

    #[test]
    fn schema_errors_name_fields() {
        let doc = json!({
            "nodes": 1,
            "base_rates": [1.0],
            "kernels": [{"target": "m0", "source": "m0", "kind": "exponential",
                         "params": {"amplitude": 1.0}}]
        });
        let err = from_json(&doc).unwrap_err();
        assert!(err.to_string().contains("$.kernels[0].params.rate"), "{err}");
        let doc = json!({"nodes": 1, "base_rates": [1.0],
            "kernels": [{"target": "m3", "source": "m0", "kind": "zero"}]});
        let err = from_json(&doc).unwrap_err();
        assert!(err.to_string().contains("$.kernels[0].target"), "{err}");
    }
}
