//! Parametric jump-size laws for the environment.
//!
//! Every law must expose exact `e^{θz}`-moments on a stated θ-interval and
//! be closed under exponential reweighting by `e^{θz}` (the Esscher tilt).
//! Three families satisfy this: point masses, one-sided exponentials and
//! bounded-support exponentially-slanted densities (uniform when the slant
//! is zero). Mixtures are expressed as several jump components.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{CbleError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum JumpLaw {
    /// Degenerate law at `z != 0`.
    PointMass { z: f64 },
    /// Exponential on `(0, ∞)` with density `rate·e^{-rate·z}`.
    ExponentialPos { rate: f64 },
    /// Mirrored exponential on `(-∞, 0)` with density `rate·e^{rate·z}`.
    ExponentialNeg { rate: f64 },
    /// Density proportional to `e^{slope·z}` on `[lo, hi]`; `slope = 0`
    /// is the uniform law. Closed under tilting (the slope shifts).
    SlantedUniform { lo: f64, hi: f64, slope: f64 },
}

impl JumpLaw {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        JumpLaw::SlantedUniform { lo, hi, slope: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            JumpLaw::PointMass { z } => {
                if z == 0.0 || !z.is_finite() {
                    return Err(CbleError::InvalidParameter(
                        "point mass must sit at a finite z != 0".into(),
                    ));
                }
            }
            JumpLaw::ExponentialPos { rate } | JumpLaw::ExponentialNeg { rate } => {
                if !(rate > 0.0) || !rate.is_finite() {
                    return Err(CbleError::InvalidParameter(
                        "exponential jump law needs rate > 0".into(),
                    ));
                }
            }
            JumpLaw::SlantedUniform { lo, hi, slope } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || !slope.is_finite() {
                    return Err(CbleError::InvalidParameter(
                        "slanted uniform needs finite lo < hi".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Open interval of θ on which `E[e^{θZ}]` is finite.
    pub fn theta_domain(&self) -> (f64, f64) {
        match *self {
            JumpLaw::PointMass { .. } | JumpLaw::SlantedUniform { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            JumpLaw::ExponentialPos { rate } => (f64::NEG_INFINITY, rate),
            JumpLaw::ExponentialNeg { rate } => (-rate, f64::INFINITY),
        }
    }

    /// `E[e^{θZ}]`.
    pub fn exp_moment(&self, theta: f64) -> f64 {
        match *self {
            JumpLaw::PointMass { z } => (theta * z).exp(),
            JumpLaw::ExponentialPos { rate } => rate / (rate - theta),
            JumpLaw::ExponentialNeg { rate } => rate / (rate + theta),
            JumpLaw::SlantedUniform { lo, hi, slope } => {
                seg0(slope + theta, lo, hi) / seg0(slope, lo, hi)
            }
        }
    }

    /// `E[Z e^{θZ}]`.
    pub fn z_exp_moment(&self, theta: f64) -> f64 {
        match *self {
            JumpLaw::PointMass { z } => z * (theta * z).exp(),
            JumpLaw::ExponentialPos { rate } => rate / ((rate - theta) * (rate - theta)),
            JumpLaw::ExponentialNeg { rate } => -rate / ((rate + theta) * (rate + theta)),
            JumpLaw::SlantedUniform { lo, hi, slope } => {
                seg1(slope + theta, lo, hi) / seg0(slope, lo, hi)
            }
        }
    }

    /// `E[Z² e^{θZ}]`.
    pub fn z2_exp_moment(&self, theta: f64) -> f64 {
        match *self {
            JumpLaw::PointMass { z } => z * z * (theta * z).exp(),
            JumpLaw::ExponentialPos { rate } => {
                2.0 * rate / (rate - theta).powi(3)
            }
            JumpLaw::ExponentialNeg { rate } => 2.0 * rate / (rate + theta).powi(3),
            JumpLaw::SlantedUniform { lo, hi, slope } => {
                seg2(slope + theta, lo, hi) / seg0(slope, lo, hi)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.z_exp_moment(0.0)
    }

    /// `E[Z·1_{|Z|<1}]`, the compensated-part mean entering the Laplace
    /// exponent of the environment.
    pub fn truncated_mean(&self) -> f64 {
        self.truncated_z_exp_moment(0.0)
    }

    /// `E[Z e^{θZ} 1_{|Z|<1}]`.
    fn truncated_z_exp_moment(&self, theta: f64) -> f64 {
        match *self {
            JumpLaw::PointMass { z } => {
                if z.abs() < 1.0 {
                    z * (theta * z).exp()
                } else {
                    0.0
                }
            }
            JumpLaw::ExponentialPos { rate } => rate * seg1(theta - rate, 0.0, 1.0),
            JumpLaw::ExponentialNeg { rate } => rate * seg1(theta + rate, -1.0, 0.0),
            JumpLaw::SlantedUniform { lo, hi, slope } => {
                let u = lo.max(-1.0);
                let v = hi.min(1.0);
                if u >= v {
                    0.0
                } else {
                    seg1(slope + theta, u, v) / seg0(slope, lo, hi)
                }
            }
        }
    }

    /// `E[Z (e^{θZ} - 1) 1_{|Z|<1}]` — the drift correction picked up by
    /// the compensated small jumps under an Esscher tilt.
    pub fn tilt_drift_correction(&self, theta: f64) -> f64 {
        self.truncated_z_exp_moment(theta) - self.truncated_z_exp_moment(0.0)
    }

    /// Reweights the law by `e^{θz}`. Returns the tilted law together with
    /// the normalisation `E[e^{θZ}]` (the factor the component rate picks
    /// up). Fails when θ leaves the moment domain.
    pub fn tilt(&self, theta: f64) -> Result<(JumpLaw, f64)> {
        let (lo, hi) = self.theta_domain();
        if !(theta > lo && theta < hi) {
            return Err(CbleError::UnsupportedTilt(format!(
                "theta = {theta} outside the moment domain ({lo}, {hi}) of {self:?}"
            )));
        }
        let factor = self.exp_moment(theta);
        let tilted = match *self {
            JumpLaw::PointMass { z } => JumpLaw::PointMass { z },
            JumpLaw::ExponentialPos { rate } => JumpLaw::ExponentialPos { rate: rate - theta },
            JumpLaw::ExponentialNeg { rate } => JumpLaw::ExponentialNeg { rate: rate + theta },
            JumpLaw::SlantedUniform { lo, hi, slope } => JumpLaw::SlantedUniform {
                lo,
                hi,
                slope: slope + theta,
            },
        };
        Ok((tilted, factor))
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            JumpLaw::PointMass { z } => z,
            JumpLaw::ExponentialPos { rate } => Exp::new(rate).unwrap().sample(rng),
            JumpLaw::ExponentialNeg { rate } => -Exp::new(rate).unwrap().sample(rng),
            JumpLaw::SlantedUniform { lo, hi, slope } => {
                let u: f64 = rng.gen();
                let x = slope * (hi - lo);
                if x.abs() < 1e-12 {
                    lo + u * (hi - lo)
                } else {
                    // Inverse CDF of the slanted density.
                    lo + (u * x.exp_m1()).ln_1p() / slope
                }
            }
        }
    }
}

use crate::numeric::{phi1, phi2, phi3};

/// `∫_u^v e^{az} dz`, stable for all `a` including `a ≈ 0`.
fn seg0(a: f64, u: f64, v: f64) -> f64 {
    let d = v - u;
    (a * u).exp() * d * phi1(a * d)
}

/// `∫_u^v z e^{az} dz`.
fn seg1(a: f64, u: f64, v: f64) -> f64 {
    let d = v - u;
    (a * u).exp() * (u * d * phi1(a * d) + d * d * phi2(a * d))
}

/// `∫_u^v z² e^{az} dz`.
fn seg2(a: f64, u: f64, v: f64) -> f64 {
    let d = v - u;
    (a * u).exp() * (u * u * d * phi1(a * d) + 2.0 * u * d * d * phi2(a * d) + d * d * d * phi3(a * d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn point_mass_moments() {
        let law = JumpLaw::PointMass { z: std::f64::consts::LN_2 };
        assert_relative_eq!(law.exp_moment(1.0), 2.0, max_relative = 1e-14);
        assert_relative_eq!(law.mean(), std::f64::consts::LN_2, max_relative = 1e-14);
        assert_relative_eq!(law.truncated_mean(), std::f64::consts::LN_2, max_relative = 1e-14);
    }

    #[test]
    fn exponential_moment_domain() {
        let law = JumpLaw::ExponentialPos { rate: 3.0 };
        assert_relative_eq!(law.exp_moment(2.0), 3.0, max_relative = 1e-14);
        let (lo, hi) = law.theta_domain();
        assert_eq!(lo, f64::NEG_INFINITY);
        assert_eq!(hi, 3.0);
        assert!(law.tilt(3.0).is_err());
    }

    #[test]
    fn slanted_uniform_reduces_to_uniform_moments() {
        let law = JumpLaw::uniform(-0.5, 1.5);
        assert_relative_eq!(law.exp_moment(0.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(law.mean(), 0.5, max_relative = 1e-13);
        // E[Z^2] of U(-0.5, 1.5): var 4/12 + mean^2 = 1/3 + 1/4.
        assert_relative_eq!(law.z2_exp_moment(0.0), 1.0 / 3.0 + 0.25, max_relative = 1e-12);
        // E[Z 1_{|Z|<1}] over [-0.5, 1): (1 - 0.25)/2 / 2.
        assert_relative_eq!(law.truncated_mean(), 0.1875, max_relative = 1e-12);
    }

    #[test]
    fn slanted_uniform_moments_match_quadrature() {
        let law = JumpLaw::SlantedUniform { lo: -1.2, hi: 0.8, slope: 0.7 };
        let norm = crate::numeric::adaptive_simpson(&|z: f64| (0.7 * z).exp(), -1.2, 0.8, 1e-13)
            .unwrap();
        for theta in [-1.0, -0.1, 0.0, 0.3, 2.0] {
            let byquad = crate::numeric::adaptive_simpson(
                &|z: f64| (theta * z).exp() * (0.7 * z).exp() / norm,
                -1.2,
                0.8,
                1e-13,
            )
            .unwrap();
            assert_relative_eq!(law.exp_moment(theta), byquad, max_relative = 1e-10);
            let byquad1 = crate::numeric::adaptive_simpson(
                &|z: f64| z * (theta * z).exp() * (0.7 * z).exp() / norm,
                -1.2,
                0.8,
                1e-13,
            )
            .unwrap();
            assert_relative_eq!(law.z_exp_moment(theta), byquad1, max_relative = 1e-9);
        }
    }

    #[test]
    fn tilting_point_mass_scales_rate_only() {
        let law = JumpLaw::PointMass { z: std::f64::consts::LN_2 };
        let (tilted, factor) = law.tilt(1.0).unwrap();
        assert_eq!(tilted, law);
        assert_relative_eq!(factor, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn tilting_exponential_shifts_rate() {
        let law = JumpLaw::ExponentialPos { rate: 3.0 };
        let (tilted, factor) = law.tilt(1.0).unwrap();
        assert_eq!(tilted, JumpLaw::ExponentialPos { rate: 2.0 });
        assert_relative_eq!(factor, 1.5, max_relative = 1e-14);
    }

    #[test]
    fn sampled_means_match_analytic() {
        let mut rng = crate::rng::rng_from(11);
        for law in [
            JumpLaw::ExponentialPos { rate: 2.5 },
            JumpLaw::ExponentialNeg { rate: 1.5 },
            JumpLaw::SlantedUniform { lo: -1.0, hi: 2.0, slope: 0.9 },
        ] {
            let n = 200_000;
            let mean: f64 =
                (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
            let sd = (law.z2_exp_moment(0.0) - law.mean() * law.mean()).sqrt();
            assert!(
                (mean - law.mean()).abs() < 5.0 * sd / (n as f64).sqrt(),
                "sampled mean {mean} vs analytic {} for {law:?}",
                law.mean()
            );
        }
    }
}
