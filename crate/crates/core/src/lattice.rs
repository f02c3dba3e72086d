//! Exact rational arithmetic for chain lattices `theta + Z/n`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

fn gcd_i128(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

pub(crate) fn gcd_u64(a: u64, b: u64) -> u64 {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// A reduced fraction with positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Self::from_i128(num as i128, den as i128)
    }

    fn from_i128(num: i128, den: i128) -> Self {
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd_i128(num, den).max(1);
        Rational {
            num: (sign * num / g) as i64,
            den: (sign * den / g) as i64,
        }
    }

    pub fn integer(v: i64) -> Self {
        Rational { num: v, den: 1 }
    }

    pub fn zero() -> Self {
        Rational { num: 0, den: 1 }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn add(self, other: Rational) -> Rational {
        Rational::from_i128(
            self.num as i128 * other.den as i128 + other.num as i128 * self.den as i128,
            self.den as i128 * other.den as i128,
        )
    }

    pub fn sub(self, other: Rational) -> Rational {
        self.add(Rational {
            num: -other.num,
            den: other.den,
        })
    }

    /// Largest integer `<= self`.
    pub fn floor(self) -> i64 {
        self.num.div_euclid(self.den)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as i128 * other.den as i128).cmp(&(other.num as i128 * self.den as i128))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// The time lattice of one chain: `phase + j / frequency` for integer `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChainLattice {
    pub frequency: u32,
    pub phase: Rational,
}

impl ChainLattice {
    pub fn new(frequency: u32, phase: Rational) -> Self {
        ChainLattice { frequency, phase }
    }

    /// Exact time of lattice index `j`.
    pub fn time(&self, j: i64) -> Rational {
        self.phase.add(Rational::new(j, self.frequency as i64))
    }

    pub fn time_f64(&self, j: i64) -> f64 {
        self.time(j).to_f64()
    }

    /// Smallest `j` with `time(j) >= t`, for rational `t`.
    pub fn first_at_or_after(&self, t: Rational) -> i64 {
        // j >= (t - phase) * n
        let x = t.sub(self.phase);
        let scaled = Rational::new(x.num * self.frequency as i64, x.den);
        let f = scaled.floor();
        if Rational::integer(f) == scaled {
            f
        } else {
            f + 1
        }
    }

    /// Smallest `j` with `time(j) > t` for a real `t`.
    pub fn first_after_f64(&self, t: f64) -> i64 {
        let n = self.frequency as f64;
        let mut j = ((t - self.phase.to_f64()) * n).floor() as i64;
        while self.time_f64(j) <= t {
            j += 1;
        }
        while j > i64::MIN + 1 && self.time_f64(j - 1) > t {
            j -= 1;
        }
        j
    }

    /// Smallest `j` with `time(j) >= t` for a real `t`.
    pub fn first_at_or_after_f64(&self, t: f64) -> i64 {
        let n = self.frequency as f64;
        let mut j = ((t - self.phase.to_f64()) * n).floor() as i64 - 1;
        while self.time_f64(j) < t {
            j += 1;
        }
        while self.time_f64(j - 1) >= t {
            j -= 1;
        }
        j
    }

    /// Indices `j` whose time lies in `[lo, hi)`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> std::ops::Range<i64> {
        let a = self.first_at_or_after_f64(lo);
        let b = self.first_at_or_after_f64(hi);
        a..b.max(a)
    }

    /// Residue of `j` within one unit period and the number of whole periods.
    pub fn split_period(&self, j: i64) -> (usize, i64) {
        let n = self.frequency as i64;
        (j.rem_euclid(n) as usize, j.div_euclid(n))
    }
}

/// A point of the joint lattice: chain index and lattice index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint {
    pub chain: usize,
    pub index: i64,
}

/// All lattice points of the given chains in `[lo, hi)`, sorted by exact time.
pub fn merged_points(lattices: &[ChainLattice], lo: f64, hi: f64) -> Vec<(Rational, LatticePoint)> {
    let mut out = Vec::new();
    for (p, lat) in lattices.iter().enumerate() {
        for j in lat.indices_in(lo, hi) {
            out.push((lat.time(j), LatticePoint { chain: p, index: j }));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}
