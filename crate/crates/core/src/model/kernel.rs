//! Interaction functions with closed-form norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to snap arguments onto bin edges.
const EDGE_SNAP: f64 = 1e-9;

/// An interaction function supported on `(0, inf)`.
///
/// Piecewise-constant kernels use right-closed bins: bin `i` covers
/// `(i * width, (i + 1) * width]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    PiecewiseConstant { width: f64, values: Vec<f64> },
    Exponential { amplitude: f64, rate: f64 },
    ExponentialSigned { amplitude: f64, rate: f64 },
}

fn bin_index(x: f64, width: f64) -> Option<usize> {
    if x <= 0.0 {
        return None;
    }
    let q = x / width;
    let r = q.round();
    let idx = if (q - r).abs() <= EDGE_SNAP * q.abs().max(1.0) {
        if r < 1.0 {
            return None;
        }
        r as usize - 1
    } else {
        q.floor() as usize
    };
    Some(idx)
}

impl Kernel {
    pub fn piecewise(width: f64, values: Vec<f64>) -> Self {
        Kernel::PiecewiseConstant { width, values }
    }

    pub fn exponential(amplitude: f64, rate: f64) -> Self {
        Kernel::Exponential { amplitude, rate }
    }

    /// Indicator-style kernel equal to `value` on `(0, support]`.
    pub fn constant(value: f64, support: f64) -> Self {
        Kernel::PiecewiseConstant {
            width: support,
            values: vec![value],
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Kernel::Zero => Ok(()),
            Kernel::PiecewiseConstant { width, values } => {
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "piecewise-constant kernel width must be positive, got {width}"
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(
                        "piecewise-constant kernel has a non-finite value".into(),
                    ));
                }
                Ok(())
            }
            Kernel::Exponential { amplitude, rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "exponential kernel rate must be positive, got {rate}"
                    )));
                }
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "exponential kernel amplitude must be >= 0, got {amplitude}"
                    )));
                }
                Ok(())
            }
            Kernel::ExponentialSigned { amplitude, rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "exponential kernel rate must be positive, got {rate}"
                    )));
                }
                if !amplitude.is_finite() {
                    return Err(Error::InvalidModel(
                        "exponential kernel amplitude must be finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Kernel::Zero => true,
            Kernel::PiecewiseConstant { values, .. } => values.iter().all(|v| *v == 0.0),
            Kernel::Exponential { amplitude, .. } | Kernel::ExponentialSigned { amplitude, .. } => {
                *amplitude == 0.0
            }
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            Kernel::Zero => true,
            Kernel::PiecewiseConstant { values, .. } => values.iter().all(|v| *v >= 0.0),
            Kernel::Exponential { amplitude, .. } | Kernel::ExponentialSigned { amplitude, .. } => {
                *amplitude >= 0.0
            }
        }
    }

    /// Right end of the support, `inf` for exponential kernels.
    pub fn support_end(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::PiecewiseConstant { width, values } => {
                match values.iter().rposition(|v| *v != 0.0) {
                    Some(i) => width * (i + 1) as f64,
                    None => 0.0,
                }
            }
            Kernel::Exponential { amplitude, .. } | Kernel::ExponentialSigned { amplitude, .. } => {
                if *amplitude == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn has_compact_support(&self) -> bool {
        self.support_end().is_finite()
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Kernel::Zero => 0.0,
            Kernel::PiecewiseConstant { width, values } => match bin_index(x, *width) {
                Some(i) if i < values.len() => values[i],
                _ => 0.0,
            },
            Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                amplitude * (-rate * x).exp()
            }
        }
    }

    /// `int_0^inf |h(x)| dx`.
    pub fn l1_norm(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::PiecewiseConstant { width, values } => {
                width * values.iter().map(|v| v.abs()).sum::<f64>()
            }
            Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                amplitude.abs() / rate
            }
        }
    }

    /// `sup_x |h(x)|`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::PiecewiseConstant { values, .. } => {
                values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
            }
            Kernel::Exponential { amplitude, .. } | Kernel::ExponentialSigned { amplitude, .. } => {
                amplitude.abs()
            }
        }
    }

    /// Upper bound on `|h(x)|` for `x` in `(lo, hi]`.
    pub fn sup_abs_on(&self, lo: f64, hi: f64) -> f64 {
        if hi <= 0.0 || hi < lo {
            return 0.0;
        }
        match self {
            Kernel::Zero => 0.0,
            Kernel::PiecewiseConstant { width, values } => {
                let lo = lo.max(0.0);
                let first = ((lo / width).floor() as i64 - 1).max(0) as usize;
                let last = ((hi / width).ceil() as i64 + 1).max(0) as usize;
                values
                    .iter()
                    .enumerate()
                    .skip(first)
                    .take_while(|(i, _)| *i <= last)
                    .fold(0.0_f64, |acc, (_, v)| acc.max(v.abs()))
            }
            Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                amplitude.abs() * (-rate * lo.max(0.0)).exp()
            }
        }
    }

    /// Bounds `(lo_h, hi_h)` with `lo_h <= h(x) <= hi_h` for all `x` in
    /// `(lo, hi]`; outside the support `h = 0` is included.
    pub fn range_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        if hi <= 0.0 || hi < lo {
            return (0.0, 0.0);
        }
        match self {
            Kernel::Zero => (0.0, 0.0),
            Kernel::PiecewiseConstant { width, values } => {
                let mut mn = 0.0_f64;
                let mut mx = 0.0_f64;
                let first = ((lo.max(0.0) / width).floor() as i64 - 1).max(0) as usize;
                let last = (hi / width).ceil() as i64 + 1;
                for (i, v) in values.iter().enumerate().skip(first) {
                    if i as i64 > last {
                        break;
                    }
                    mn = mn.min(*v);
                    mx = mx.max(*v);
                }
                (mn, mx)
            }
            Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                let near = amplitude * (-rate * lo.max(0.0)).exp();
                let far = amplitude * (-rate * hi).exp();
                let (mn, mx) = (near.min(far), near.max(far));
                if lo < 0.0 {
                    (mn.min(0.0), mx.max(0.0))
                } else {
                    (mn, mx)
                }
            }
        }
    }

    /// Signed primitive `int_0^x h(u) du` for `x >= 0`.
    pub fn integral_to(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Kernel::Zero => 0.0,
            Kernel::PiecewiseConstant { width, values } => {
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let a = width * i as f64;
                    if a >= x {
                        break;
                    }
                    let b = (width * (i + 1) as f64).min(x);
                    acc += v * (b - a);
                }
                acc
            }
            Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                amplitude / rate * (1.0 - (-rate * x).exp())
            }
        }
    }

    /// Draws `x` in `(0, upper]` with density proportional to `h`, given a
    /// uniform `u` in `[0, 1)`. Only meaningful for nonnegative kernels with
    /// positive mass on `(0, upper]`.
    pub fn sample_truncated(&self, u: f64, upper: f64) -> f64 {
        match self {
            Kernel::Zero => upper,
            Kernel::PiecewiseConstant { width, values } => {
                let total = self.integral_to(upper);
                let target = u * total;
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let a = width * i as f64;
                    if a >= upper {
                        break;
                    }
                    let b = (width * (i + 1) as f64).min(upper);
                    let mass = v * (b - a);
                    if mass > 0.0 && acc + mass >= target {
                        let x = a + (target - acc) / v;
                        return x.clamp(a, b).max(f64::MIN_POSITIVE);
                    }
                    acc += mass;
                }
                upper
            }
            Kernel::Exponential { rate, .. } | Kernel::ExponentialSigned { rate, .. } => {
                let tail = if upper.is_finite() {
                    1.0 - (-rate * upper).exp()
                } else {
                    1.0
                };
                let x = -(1.0 - u * tail).ln() / rate;
                x.clamp(f64::MIN_POSITIVE, upper)
            }
        }
    }

    /// `|h|` scaled by `factor >= 0`.
    pub fn abs_scaled(&self, factor: f64) -> Kernel {
        match self {
            Kernel::Zero => Kernel::Zero,
            Kernel::PiecewiseConstant { width, values } => Kernel::PiecewiseConstant {
                width: *width,
                values: values.iter().map(|v| factor * v.abs()).collect(),
            },
            Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
                Kernel::Exponential {
                    amplitude: factor * amplitude.abs(),
                    rate: *rate,
                }
            }
        }
    }
}

/// `sup_x sum_{k in Z} |h(x + k / frequency)|`: the lattice norm of `h` at the
/// given frequency.
pub fn lattice_l1_norm(kernel: &Kernel, frequency: f64) -> Result<f64> {
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lattice frequency must be positive, got {frequency}"
        )));
    }
    let period = 1.0 / frequency;
    match kernel {
        Kernel::Zero => Ok(0.0),
        Kernel::Exponential { amplitude, rate } | Kernel::ExponentialSigned { amplitude, rate } => {
            // sup attained as x -> 0+
            Ok(amplitude.abs() / (1.0 - (-rate * period).exp()))
        }
        Kernel::PiecewiseConstant { width, values } => {
            if values.is_empty() {
                return Ok(0.0);
            }
            let support = width * values.len() as f64;
            // residues of all bin edges within one period
            let mut residues: Vec<f64> = (0..=values.len())
                .map(|i| {
                    let r = (width * i as f64).rem_euclid(period);
                    if period - r <= EDGE_SNAP * period {
                        0.0
                    } else {
                        r
                    }
                })
                .collect();
            residues.sort_by(f64::total_cmp);
            residues.dedup_by(|a, b| (*a - *b).abs() <= EDGE_SNAP * period);
            let steps = (support / period).ceil() as i64 + 1;
            let lattice_sum = |x: f64| -> f64 {
                (0..=steps)
                    .map(|k| kernel.eval(x + k as f64 * period).abs())
                    .sum()
            };
            let mut best = 0.0_f64;
            for (i, &r) in residues.iter().enumerate() {
                let next = if i + 1 < residues.len() {
                    residues[i + 1]
                } else {
                    residues[0] + period
                };
                let mid = 0.5 * (r + next);
                let x = if mid <= 0.0 { mid + period } else { mid };
                best = best.max(lattice_sum(x));
            }
            Ok(best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_respects_support_and_bins() {
        let k = Kernel::piecewise(0.5, vec![1.0, 2.0]);
        assert_eq!(k.eval(0.0), 0.0);
        assert_eq!(k.eval(-1.0), 0.0);
        assert_eq!(k.eval(0.25), 1.0);
        assert_eq!(k.eval(0.5), 1.0);
        assert_eq!(k.eval(0.5000001), 2.0);
        assert_eq!(k.eval(1.0), 2.0);
        assert_eq!(k.eval(1.01), 0.0);
        assert_eq!(k.support_end(), 1.0);
    }

    #[test]
    fn l1_norms() {
        assert_eq!(Kernel::Zero.l1_norm(), 0.0);
        assert!((Kernel::exponential(1.0, 2.0).l1_norm() - 0.5).abs() < 1e-15);
        assert!((Kernel::piecewise(0.5, vec![1.0, -2.0]).l1_norm() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn lattice_norm_examples() {
        let k = Kernel::constant(1.0, 2.0);
        assert!((lattice_l1_norm(&k, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(lattice_l1_norm(&Kernel::Zero, 1.0).unwrap(), 0.0);
        let e = Kernel::exponential(1.0, std::f64::consts::LN_2);
        assert!((lattice_l1_norm(&e, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(lattice_l1_norm(&k, 0.0).is_err());
        assert!(lattice_l1_norm(&k, -1.0).is_err());
    }

    #[test]
    fn lattice_norm_offsets() {
        // bins of width 0.3 with varying mass at frequency 2
        let k = Kernel::piecewise(0.3, vec![1.0, 0.0, 3.0, 0.5]);
        let norm = lattice_l1_norm(&k, 2.0).unwrap();
        // brute force over fine offsets
        let mut best = 0.0_f64;
        for i in 1..=5000 {
            let x = 0.5 * i as f64 / 5000.0 - 1e-7;
            let s: f64 = (0..10).map(|j| k.eval(x + 0.5 * j as f64).abs()).sum();
            best = best.max(s);
        }
        assert!((norm - best).abs() < 1e-12, "{norm} vs {best}");
    }

    #[test]
    fn integral_and_sampling_agree() {
        let k = Kernel::piecewise(0.5, vec![1.0, 3.0]);
        assert!((k.integral_to(0.75) - (0.5 + 0.75)).abs() < 1e-14);
        let x = k.sample_truncated(0.5, 1.0);
        assert!((k.integral_to(x) / k.integral_to(1.0) - 0.5).abs() < 1e-12);
        let e = Kernel::exponential(2.0, 1.5);
        let x = e.sample_truncated(0.3, 2.0);
        assert!((e.integral_to(x) / e.integral_to(2.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn sup_abs_on_bounds_values() {
        let k = Kernel::piecewise(0.5, vec![1.0, -3.0, 0.5]);
        assert!(k.sup_abs_on(0.6, 0.9) >= 3.0);
        assert!(k.sup_abs_on(1.2, 1.4) >= 0.5);
        assert_eq!(k.sup_abs_on(-2.0, -1.0), 0.0);
        let e = Kernel::exponential(2.0, 1.0);
        assert!((e.sup_abs_on(1.0, 3.0) - 2.0 * (-1.0_f64).exp()).abs() < 1e-15);
    }
}
