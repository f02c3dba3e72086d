use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::lattice::ChainLattice;
use crate::lincore::Drifts;
use crate::model::DriftLaw;

pub(crate) const KIND_MEASURE: u64 = 1;
pub(crate) const KIND_DRIFT: u64 = 2;
pub(crate) const KIND_CLUSTER: u64 = 3;
pub(crate) const KIND_BOOTSTRAP: u64 = 4;
pub(crate) const KIND_REFERENCE: u64 = 5;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator keyed by `(seed, kind, a, b, c)`.
pub(crate) fn stream(seed: u64, kind: u64, a: u64, b: i64, c: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [kind, a, b as u64, c] {
        h = splitmix(h ^ v);
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed for replication `(a, b)` of an experiment seeded with `seed`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

/// Drift `xi^p_j` of the stream shared by every run with this seed.
pub fn drift_value(seed: u64, p: usize, j: i64, law: &DriftLaw) -> f64 {
    let mut rng = stream(seed, KIND_DRIFT, p as u64, j, 0);
    law.sample(&mut rng)
}

/// Drifts on every lattice point of `[lo, hi)`.
pub fn drifts_on(seed: u64, lattices: &[ChainLattice], laws: &[DriftLaw], lo: f64, hi: f64) -> Drifts {
    let mut d = Drifts::new(lattices.len());
    for (p, lat) in lattices.iter().enumerate() {
        for j in lat.indices_in(lo, hi) {
            d.insert(p, j, drift_value(seed, p, j, &laws[p]));
        }
    }
    d
}

/// Mark layer `i`: `[0, 1)` for `i = 0`, else `[2^(i-1), 2^i)`.
fn layer(i: u32) -> (f64, f64) {
    if i == 0 {
        (0.0, 1.0)
    } else {
        let lo = 2f64.powi(i as i32 - 1);
        (lo, 2.0 * lo)
    }
}

/// Lazily generated unit-rate Poisson measure on `R x [0, inf)` for each node,
/// cut into unit time cells and dyadic mark layers.
pub(crate) struct CanonicalMeasure {
    seed: u64,
    cells: Vec<HashMap<(i64, u32), Vec<(f64, f64)>>>,
}

impl CanonicalMeasure {
    pub(crate) fn new(seed: u64, nodes: usize) -> Self {
        CanonicalMeasure {
            seed,
            cells: vec![HashMap::new(); nodes],
        }
    }

    fn cell(&mut self, m: usize, c: i64, i: u32) -> &Vec<(f64, f64)> {
        let seed = self.seed;
        self.cells[m].entry((c, i)).or_insert_with(|| {
            let (lo, hi) = layer(i);
            let mut rng = stream(seed, KIND_MEASURE, m as u64, c, i as u64);
            let n = Poisson::new(hi - lo).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
            let mut pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let t = c as f64 + rng.gen::<f64>();
                    let u = lo + (hi - lo) * rng.gen::<f64>();
                    (t, u)
                })
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts
        })
    }

    /// Points of node `m` with time in `(a, b]` and mark `<= bound`.
    pub(crate) fn candidates(&mut self, m: usize, a: f64, b: f64, bound: f64, out: &mut Vec<(f64, usize, f64)>) {
        if !(bound > 0.0) {
            return;
        }
        for c in a.floor() as i64..=b.floor() as i64 {
            let mut i = 0u32;
            while layer(i).0 < bound {
                for &(t, u) in self.cell(m, c, i) {
                    if t > a && t <= b && u <= bound {
                        out.push((t, m, u));
                    }
                }
                i += 1;
            }
        }
    }

    pub(crate) fn evict_before(&mut self, c: i64) {
        for cells in &mut self.cells {
            cells.retain(|k, _| k.0 >= c);
        }
    }
}
