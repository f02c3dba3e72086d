#![allow(dead_code)]

use har_core::lattice::Rational;
use har_core::model::{ChainSpec, DriftLaw, Kernel, Link, Mask, ModelBuilder, ModelParams};
use har_core::spectral::{build_h, build_m_plus, spectral_radius};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Frequencies with gcd 1 drawn from `{1, 2, 3}`.
fn frequencies<R: Rng>(rng: &mut R, chains: usize) -> Vec<u32> {
    loop {
        let f: Vec<u32> = (0..chains).map(|_| rng.gen_range(1..=3)).collect();
        if f.iter().fold(0u32, |g, &n| gcd(g, n)) == 1 {
            return f;
        }
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn chain_specs<R: Rng>(rng: &mut R, chains: usize, drift: DriftLaw) -> Vec<ChainSpec> {
    frequencies(rng, chains)
        .into_iter()
        .map(|n| {
            let phase = Rational::new(rng.gen_range(0..12 / n as i64), 12);
            ChainSpec::new(n, phase, drift.clone())
        })
        .collect()
}

fn nonneg_kernel<R: Rng>(rng: &mut R) -> Kernel {
    match rng.gen_range(0..5) {
        0 => Kernel::Zero,
        1 | 2 => {
            let width = [1.0 / 6.0, 0.25, 1.0 / 3.0, 0.5, 1.0][rng.gen_range(0..5)];
            let bins = rng.gen_range(1..=4);
            Kernel::piecewise(width, (0..bins).map(|_| rng.gen_range(0.0..1.0)).collect())
        }
        _ => Kernel::exponential(rng.gen_range(0.1..1.0), rng.gen_range(1.0..4.0)),
    }
}

fn signed_kernel<R: Rng>(rng: &mut R, scale: f64) -> Kernel {
    match rng.gen_range(0..4) {
        0 => Kernel::Zero,
        1 => {
            let width = [0.25, 0.5, 1.0][rng.gen_range(0..3)];
            let bins = rng.gen_range(1..=3);
            Kernel::piecewise(width, (0..bins).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())
        }
        2 => Kernel::ExponentialSigned { amplitude: scale * rng.gen_range(-1.0..1.0), rate: rng.gen_range(1.0..3.0) },
        _ => Kernel::exponential(scale * rng.gen_range(0.0..1.0), rng.gen_range(1.0..3.0)),
    }
}

/// Linear model with one node and `P in {1, 2}` chains whose chain-chain block
/// has spectral radius at most 0.8.
pub fn random_linear_model(seed: u64) -> ModelParams {
    let mut r = rng(seed);
    let chains = r.gen_range(1..=2);
    let specs = chain_specs(&mut r, chains, DriftLaw::Gaussian { mean: 0.1, std: 0.5 });
    let target_spr = r.gen_range(0.2..0.8);
    let mut kernels = Vec::new();
    for t in 0..chains {
        for s in 0..chains {
            kernels.push((t, s, nonneg_kernel(&mut r)));
        }
    }
    let node_chain = Kernel::exponential(r.gen_range(0.1..0.5), 2.0);
    let chain_node = Kernel::piecewise(0.5, vec![r.gen_range(0.0..0.3)]);
    let assemble = |kernels: &[(usize, usize, Kernel)]| {
        let mut b = ModelBuilder::new(1, specs.clone())
            .base_rate(0, 0.5)
            .kernel(0, 1, node_chain.clone())
            .kernel(1, 0, chain_node.clone());
        for (t, s, k) in kernels {
            b = b.kernel(1 + t, 1 + s, k.clone());
        }
        b.build().expect("random linear model")
    };
    let model = assemble(&kernels);
    let spr = spectral_radius(&build_h(&model).unwrap().ww()).unwrap();
    if spr <= target_spr {
        return model;
    }
    let f = target_spr / spr;
    let scaled: Vec<_> = kernels.iter().map(|(t, s, k)| (*t, *s, k.abs_scaled(f))).collect();
    assemble(&scaled)
}

/// Nonlinear model with ReLU links, signed kernels and non-affine masks whose
/// dominating linear model is subcritical.
pub fn random_nonlinear_model(seed: u64) -> ModelParams {
    let mut r = rng(seed);
    let nodes = r.gen_range(1..=2);
    let chains = r.gen_range(1..=2);
    let drift = if r.gen_bool(0.5) {
        DriftLaw::Gaussian { mean: r.gen_range(-0.3..0.3), std: 0.4 }
    } else {
        DriftLaw::TruncatedGaussian { mean: 0.2, std: 0.3 }
    };
    let specs = chain_specs(&mut r, chains, drift);
    let d = nodes + chains;
    let mut scale = 0.6;
    let draws: Vec<u64> = (0..4).map(|_| r.gen()).collect();
    loop {
        let mut kr = rng(draws[0]);
        let mut b = ModelBuilder::new(nodes, specs.clone());
        for m in 0..nodes {
            b = b.base_rate(m, kr.gen_range(-0.5..1.5));
            b = b.link(m, if kr.gen_bool(0.5) { Link::Relu } else { Link::ShiftedRelu { offset: 0.3 } });
        }
        for p in 0..chains {
            b = b.link(nodes + p, if kr.gen_bool(0.5) { Link::Relu } else { Link::Identity });
        }
        for t in 0..d {
            for s in 0..d {
                b = b.kernel(t, s, signed_kernel(&mut kr, scale));
            }
            for p in 0..chains {
                let mask = match kr.gen_range(0..3) {
                    0 => Mask::Abs,
                    1 => Mask::Relu,
                    _ => Mask::AffineGeneral { slope: kr.gen_range(-1.0..1.0), intercept: kr.gen_range(-0.2..0.2) },
                };
                b = b.mask(t, p, mask);
            }
        }
        let model = b.build().expect("random nonlinear model");
        let plus = build_m_plus(&model).unwrap();
        if build_h(&plus).unwrap().spectral_radius() < 0.8 {
            return model;
        }
        scale *= 0.7;
    }
}

/// One node driven by one chain and by itself, with a nonnegative drift.
pub fn node_chain_model() -> ModelParams {
    ModelParams::builder(1, vec![ChainSpec::unit(DriftLaw::HalfGaussian { std: 0.5 })])
        .base_rate(0, 0.5)
        .kernel(0, 0, Kernel::exponential(0.3, 1.5))
        .kernel(0, 1, Kernel::constant(0.3, 1.0))
        .mask(0, 0, Mask::Affine { slope: 1.0, intercept: 0.1 })
        .kernel(1, 0, Kernel::constant(0.4, 1.0))
        .kernel(1, 1, Kernel::piecewise(1.0, vec![0.3]))
        .build()
        .unwrap()
}

/// Linear Hawkes process with `mu = 1` and `||h||_1 = 0.5`.
pub fn hawkes_model() -> ModelParams {
    ModelParams::builder(1, vec![])
        .base_rate(0, 1.0)
        .kernel(0, 0, Kernel::exponential(1.0, 2.0))
        .build()
        .unwrap()
}

/// Two nodes and one chain; only `mu[m0]` and `h[m1<-m0]` are nonzero.
pub fn sparse_model() -> ModelParams {
    ModelParams::builder(2, vec![ChainSpec::unit(DriftLaw::Gaussian { mean: 0.0, std: 0.2 })])
        .base_rate(0, 1.5)
        .kernel(1, 0, Kernel::constant(0.6, 2.0))
        .build()
        .unwrap()
}
