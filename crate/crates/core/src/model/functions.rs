//! Masks, link functions and drift laws.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Transformation applied to chain values before they enter an interaction.
/// The empty value maps to 0 for every mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mask {
    /// `slope * x + intercept` with nonnegative coefficients.
    Affine { slope: f64, intercept: f64 },
    Abs,
    Relu,
    AffineGeneral { slope: f64, intercept: f64 },
}

impl Default for Mask {
    fn default() -> Self {
        Mask::Affine {
            slope: 1.0,
            intercept: 0.0,
        }
    }
}

impl Mask {
    pub fn identity() -> Self {
        Mask::default()
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Mask::Affine { slope, intercept } => {
                if !(slope.is_finite() && intercept.is_finite()) {
                    return Err(Error::InvalidModel("affine mask has non-finite coefficients".into()));
                }
                if *slope < 0.0 || *intercept < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "affine mask needs slope, intercept >= 0 (got {slope}, {intercept}); use affine_general"
                    )));
                }
                Ok(())
            }
            Mask::AffineGeneral { slope, intercept } => {
                if !(slope.is_finite() && intercept.is_finite()) {
                    return Err(Error::InvalidModel("affine mask has non-finite coefficients".into()));
                }
                Ok(())
            }
            Mask::Abs | Mask::Relu => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Mask::Affine { slope, intercept } | Mask::AffineGeneral { slope, intercept } => {
                slope * x + intercept
            }
            Mask::Abs => x.abs(),
            Mask::Relu => x.max(0.0),
        }
    }

    /// Mask of a possibly empty chain value.
    pub fn apply_opt(&self, x: Option<f64>) -> f64 {
        x.map_or(0.0, |v| self.apply(v))
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Mask::Affine { slope, .. } | Mask::AffineGeneral { slope, .. } => slope.abs(),
            Mask::Abs | Mask::Relu => 1.0,
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.apply(0.0)
    }

    /// Intercept of an affine mask, `None` otherwise.
    pub fn intercept(&self) -> Option<f64> {
        match self {
            Mask::Affine { intercept, .. } | Mask::AffineGeneral { intercept, .. } => Some(*intercept),
            _ => None,
        }
    }

    pub fn is_nonnegative_affine(&self) -> bool {
        matches!(self, Mask::Affine { .. })
    }

    /// `E[k(W)]` and `E[k(W)^2]` for `W ~ N(0, sigma^2)`.
    pub fn gaussian_moments(&self, sigma: f64) -> (f64, f64) {
        let two_pi = 2.0 * std::f64::consts::PI;
        match self {
            Mask::Affine { slope, intercept } | Mask::AffineGeneral { slope, intercept } => {
                (*intercept, slope * slope * sigma * sigma + intercept * intercept)
            }
            Mask::Abs => (sigma * (2.0 / std::f64::consts::PI).sqrt(), sigma * sigma),
            Mask::Relu => (sigma / two_pi.sqrt(), sigma * sigma / 2.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mask::Affine { .. } => "affine",
            Mask::Abs => "abs",
            Mask::Relu => "relu",
            Mask::AffineGeneral { .. } => "affine_general",
        }
    }
}

/// Link function applied to a pre-intensity or chain recursion. All
/// supported links are 1-Lipschitz.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Relu,
    /// `max(0, x + offset)`.
    ShiftedRelu { offset: f64 },
}

impl Link {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Relu => x.max(0.0),
            Link::ShiftedRelu { offset } => (x + offset).max(0.0),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Link::Identity)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Relu => "relu",
            Link::ShiftedRelu { .. } => "shifted_relu",
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Link::ShiftedRelu { offset } if !offset.is_finite() => {
                Err(Error::InvalidModel("shifted relu offset must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Law of the random drifts of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftLaw {
    Gaussian { mean: f64, std: f64 },
    /// `|N(0, std^2)|`.
    HalfGaussian { std: f64 },
    /// `N(mean, std^2)` conditioned on being nonnegative.
    TruncatedGaussian { mean: f64, std: f64 },
    /// `|N(mean, std^2)|`.
    Folded { mean: f64, std: f64 },
}

impl Default for DriftLaw {
    fn default() -> Self {
        DriftLaw::Gaussian { mean: 0.0, std: 1.0 }
    }
}

impl DriftLaw {
    pub fn check(&self) -> Result<()> {
        let (mean, std) = self.params();
        if !(mean.is_finite() && std.is_finite() && std >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "drift law needs finite mean and std >= 0, got mean={mean}, std={std}"
            )));
        }
        if let DriftLaw::TruncatedGaussian { mean, std } = self {
            if *std == 0.0 && *mean < 0.0 {
                return Err(Error::InvalidModel(
                    "truncated gaussian drift with std 0 needs mean >= 0".into(),
                ));
            }
            if *std > 0.0 && *mean / *std < -6.0 {
                return Err(Error::InvalidModel(
                    "truncated gaussian drift has almost no mass on [0, inf)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> (f64, f64) {
        match *self {
            DriftLaw::Gaussian { mean, std }
            | DriftLaw::TruncatedGaussian { mean, std }
            | DriftLaw::Folded { mean, std } => (mean, std),
            DriftLaw::HalfGaussian { std } => (0.0, std),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftLaw::Gaussian { .. } => "gaussian",
            DriftLaw::HalfGaussian { .. } => "half_gaussian",
            DriftLaw::TruncatedGaussian { .. } => "truncated_gaussian",
            DriftLaw::Folded { .. } => "folded",
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match *self {
            DriftLaw::Gaussian { mean, std } => std == 0.0 && mean >= 0.0,
            _ => true,
        }
    }

    /// Law of `|xi|`.
    pub fn folded(&self) -> DriftLaw {
        match *self {
            DriftLaw::Gaussian { mean, std } => DriftLaw::Folded { mean, std },
            ref other => other.clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match *self {
            DriftLaw::Gaussian { mean, std } => mean + std * z,
            DriftLaw::HalfGaussian { std } => (std * z).abs(),
            DriftLaw::Folded { mean, std } => (mean + std * z).abs(),
            DriftLaw::TruncatedGaussian { mean, std } => {
                let mut x = mean + std * z;
                while x < 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    x = mean + std * z;
                }
                x
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DriftLaw::Gaussian { mean, .. } => mean,
            DriftLaw::HalfGaussian { std } => std * (2.0 / std::f64::consts::PI).sqrt(),
            DriftLaw::TruncatedGaussian { mean, std } => {
                if std == 0.0 {
                    return mean;
                }
                let n = Normal::standard();
                let a = -mean / std;
                mean + std * n.pdf(a) / n.sf(a)
            }
            DriftLaw::Folded { mean, std } => {
                if std == 0.0 {
                    return mean.abs();
                }
                let n = Normal::standard();
                std * (2.0 / std::f64::consts::PI).sqrt() * (-mean * mean / (2.0 * std * std)).exp()
                    + mean * (1.0 - 2.0 * n.cdf(-mean / std))
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DriftLaw::Gaussian { std, .. } => std * std,
            DriftLaw::HalfGaussian { std } => std * std * (1.0 - 2.0 / std::f64::consts::PI),
            DriftLaw::TruncatedGaussian { mean, std } => {
                if std == 0.0 {
                    return 0.0;
                }
                let n = Normal::standard();
                let a = -mean / std;
                let l = n.pdf(a) / n.sf(a);
                std * std * (1.0 + a * l - l * l)
            }
            DriftLaw::Folded { mean, std } => {
                let m = self.mean();
                mean * mean + std * std - m * m
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_vanish_on_empty() {
        for m in [Mask::identity(), Mask::Abs, Mask::Relu, Mask::AffineGeneral { slope: -2.0, intercept: 3.0 }] {
            assert_eq!(m.apply_opt(None), 0.0);
        }
        assert_eq!(Mask::Affine { slope: 2.0, intercept: 1.0 }.apply_opt(Some(1.5)), 4.0);
    }

    #[test]
    fn masks_are_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let masks = [
            Mask::Affine { slope: 0.7, intercept: 1.0 },
            Mask::Abs,
            Mask::Relu,
            Mask::AffineGeneral { slope: -1.3, intercept: -0.2 },
        ];
        for m in masks {
            for _ in 0..1000 {
                let x: f64 = rng.gen_range(-10.0..10.0);
                let y: f64 = rng.gen_range(-10.0..10.0);
                assert!((m.apply(x) - m.apply(y)).abs() <= m.lipschitz() * (x - y).abs() + 1e-12);
            }
        }
    }

    #[test]
    fn affine_mask_sign_checked() {
        assert!(Mask::Affine { slope: -1.0, intercept: 0.0 }.check().is_err());
        assert!(Mask::AffineGeneral { slope: -1.0, intercept: 0.0 }.check().is_ok());
    }

    #[test]
    fn links_monotone_nonnegative() {
        for l in [Link::Relu, Link::ShiftedRelu { offset: 0.5 }] {
            let mut prev = f64::NEG_INFINITY;
            for i in -100..100 {
                let v = l.apply(i as f64 * 0.1);
                assert!(v >= 0.0 && v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn drift_moments_match_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let laws = [
            DriftLaw::Gaussian { mean: 0.5, std: 2.0 },
            DriftLaw::HalfGaussian { std: 1.5 },
            DriftLaw::TruncatedGaussian { mean: -0.5, std: 1.0 },
            DriftLaw::Folded { mean: 0.3, std: 1.0 },
        ];
        let n = 200_000;
        for law in laws {
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            let se = (law.variance() / n as f64).sqrt();
            assert!((m - law.mean()).abs() < 5.0 * se, "{law:?}: {m} vs {}", law.mean());
            assert!((v - law.variance()).abs() < 0.03 * law.variance(), "{law:?}");
            if law.is_nonnegative() {
                assert!(xs.iter().all(|x| *x >= 0.0));
            }
        }
    }

    #[test]
    fn gaussian_mask_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 1.7;
        let n = 200_000;
        for mask in [Mask::Abs, Mask::Relu, Mask::Affine { slope: 0.5, intercept: 0.2 }] {
            let (e1, e2) = mask.gaussian_moments(sigma);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                let v = mask.apply(sigma * z);
                s1 += v;
                s2 += v * v;
            }
            assert!((s1 / n as f64 - e1).abs() < 0.02, "{mask:?}");
            assert!((s2 / n as f64 - e2).abs() < 0.05, "{mask:?}");
        }
    }
}
