//! The Lévy environment `ξ`: finite-activity triplet, Laplace exponent,
//! regime classification and the Esscher tilt.
//!
//! An environment is parametrised directly by the triplet of `ξ`,
//!
//! ```text
//! ξ_t = drift·t + √gaussian_var·B_t + compound-Poisson jumps,
//! ```
//!
//! with a finite total jump rate so paths can be simulated exactly. Its
//! Laplace exponent on the exponential-moment interval is
//!
//! ```text
//! Φ(θ) = drift·θ + gaussian_var·θ²/2
//!        + Σ_i rate_i · E[e^{θZ_i} − 1 − θZ_i·1_{|Z_i|<1}],
//! ```
//!
//! and `Φ'(0)`, `Φ'(1)` drive the regime classification: the population
//! process is (strongly/intermediate/weakly) subcritical, critical or
//! supercritical according to the signs of these derivatives.

mod jump_law;

pub use jump_law::JumpLaw;

use serde::Serialize;

use crate::error::{CbleError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpComponent {
    /// Poisson arrival rate per unit time, > 0.
    pub rate: f64,
    pub law: JumpLaw,
}

/// Immutable description of the environment process. All operations are
/// pure, so values can be shared freely across worker threads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvironmentSpec {
    drift: f64,
    gaussian_var: f64,
    jumps: Vec<JumpComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    Supercritical,
    Critical,
    StronglySubcritical,
    IntermediateSubcritical,
    WeaklySubcritical,
}

/// Outcome of the criticality decision. The tag is a deterministic function
/// of the two derivatives and the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regime {
    pub tag: RegimeTag,
    pub phi_prime_0: f64,
    pub phi_prime_1: f64,
    pub tolerance: f64,
}

impl EnvironmentSpec {
    pub fn new(drift: f64, gaussian_var: f64, jumps: Vec<JumpComponent>) -> Result<Self> {
        if !drift.is_finite() {
            return Err(CbleError::InvalidParameter("drift must be finite".into()));
        }
        if !(gaussian_var >= 0.0) || !gaussian_var.is_finite() {
            return Err(CbleError::InvalidParameter(
                "gaussian_var must be finite and >= 0".into(),
            ));
        }
        for c in &jumps {
            if !(c.rate > 0.0) || !c.rate.is_finite() {
                return Err(CbleError::InvalidParameter(
                    "jump component rates must be finite and > 0".into(),
                ));
            }
            c.law.validate()?;
        }
        Ok(Self { drift, gaussian_var, jumps })
    }

    /// Brownian motion with drift, no jumps.
    pub fn brownian(drift: f64, gaussian_var: f64) -> Self {
        Self::new(drift, gaussian_var, Vec::new()).expect("valid Brownian spec")
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn gaussian_var(&self) -> f64 {
        self.gaussian_var
    }

    pub fn jumps(&self) -> &[JumpComponent] {
        &self.jumps
    }

    pub fn total_jump_rate(&self) -> f64 {
        self.jumps.iter().map(|c| c.rate).sum()
    }

    /// No Gaussian part and no jumps: `ξ` is a deterministic drift and
    /// `Φ'' = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.gaussian_var == 0.0 && self.jumps.is_empty()
    }

    /// Open θ-interval on which all jump laws have finite `e^{θZ}`-moments.
    pub fn theta_domain(&self) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for c in &self.jumps {
            let (l, h) = c.law.theta_domain();
            lo = lo.max(l);
            hi = hi.min(h);
        }
        (lo, hi)
    }

    /// True iff every jump law has a finite `e^{θZ}`-moment for all
    /// `θ ∈ [0, theta_max]`.
    pub fn check_exponential_moment(&self, theta_max: f64) -> bool {
        assert!(theta_max > 0.0, "theta_max must be positive");
        theta_max < self.theta_domain().1
    }

    fn require_in_domain(&self, theta: f64) -> Result<()> {
        let (lo, hi) = self.theta_domain();
        if theta > lo && theta < hi {
            Ok(())
        } else {
            Err(CbleError::MomentDomain { theta, lo, hi })
        }
    }

    /// Laplace exponent `Φ(θ) = log E[e^{θ ξ_1}]`. `Φ(0) = 0` exactly.
    pub fn laplace_exponent(&self, theta: f64) -> Result<f64> {
        if theta == 0.0 {
            return Ok(0.0);
        }
        self.require_in_domain(theta)?;
        let mut phi = self.drift * theta + 0.5 * self.gaussian_var * theta * theta;
        for c in &self.jumps {
            let term = c.law.exp_moment(theta) - 1.0 - theta * c.law.truncated_mean();
            if !term.is_finite() {
                return Err(CbleError::Numerical(format!(
                    "non-finite jump moment at theta = {theta}"
                )));
            }
            phi += c.rate * term;
        }
        if phi.is_finite() {
            Ok(phi)
        } else {
            Err(CbleError::Numerical(format!(
                "non-finite Laplace exponent at theta = {theta}"
            )))
        }
    }

    /// First and second derivative of the Laplace exponent. The second
    /// derivative is strictly positive unless the spec is degenerate.
    pub fn laplace_exponent_derivatives(&self, theta: f64) -> Result<(f64, f64)> {
        self.require_in_domain(theta)?;
        let mut phi1 = self.drift + self.gaussian_var * theta;
        let mut phi2 = self.gaussian_var;
        for c in &self.jumps {
            phi1 += c.rate * (c.law.z_exp_moment(theta) - c.law.truncated_mean());
            phi2 += c.rate * c.law.z2_exp_moment(theta);
        }
        if phi1.is_finite() && phi2.is_finite() {
            Ok((phi1, phi2))
        } else {
            Err(CbleError::Numerical(format!(
                "non-finite Laplace-exponent derivative at theta = {theta}"
            )))
        }
    }

    /// Criticality decision from the signs of `Φ'(0)` and `Φ'(1)`.
    /// `tolerance` resolves the exactly-critical boundary cases, which are
    /// unattainable in floating point.
    pub fn classify_regime(&self, tolerance: f64) -> Result<Regime> {
        if !(tolerance > 0.0) {
            return Err(CbleError::InvalidParameter(
                "classification tolerance must be > 0".into(),
            ));
        }
        let (phi_prime_0, _) = self.laplace_exponent_derivatives(0.0)?;
        let (phi_prime_1, _) = self.laplace_exponent_derivatives(1.0)?;
        let tag = if phi_prime_0.abs() <= tolerance {
            RegimeTag::Critical
        } else if phi_prime_0 > tolerance {
            RegimeTag::Supercritical
        } else if phi_prime_1 < -tolerance {
            RegimeTag::StronglySubcritical
        } else if phi_prime_1.abs() <= tolerance {
            RegimeTag::IntermediateSubcritical
        } else {
            RegimeTag::WeaklySubcritical
        };
        Ok(Regime { tag, phi_prime_0, phi_prime_1, tolerance })
    }

    /// Exponential change of measure by `e^{θξ_t − tΦ(θ)}`. The returned
    /// spec satisfies `Φ_tilted(u) = Φ(θ+u) − Φ(θ)` on the shifted moment
    /// interval: the Gaussian part is unchanged, the drift picks up
    /// `σ²θ` plus the compensated-jump correction, each jump law is
    /// reweighted by `e^{θz}` and its rate scaled by `E[e^{θZ}]`.
    pub fn esscher_tilt(&self, theta: f64) -> Result<EnvironmentSpec> {
        self.require_in_domain(theta)?;
        let mut drift = self.drift + self.gaussian_var * theta;
        let mut jumps = Vec::with_capacity(self.jumps.len());
        for c in &self.jumps {
            drift += c.rate * c.law.tilt_drift_correction(theta);
            let (law, factor) = c.law.tilt(theta)?;
            jumps.push(JumpComponent { rate: c.rate * factor, law });
        }
        EnvironmentSpec::new(drift, self.gaussian_var, jumps)
    }

    /// Stable 64-bit fingerprint of the parameters, recorded on sampled
    /// paths so downstream artifacts can name their generating spec.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        mix(self.drift.to_bits());
        mix(self.gaussian_var.to_bits());
        for c in &self.jumps {
            mix(c.rate.to_bits());
            match c.law {
                JumpLaw::PointMass { z } => {
                    mix(1);
                    mix(z.to_bits());
                }
                JumpLaw::ExponentialPos { rate } => {
                    mix(2);
                    mix(rate.to_bits());
                }
                JumpLaw::ExponentialNeg { rate } => {
                    mix(3);
                    mix(rate.to_bits());
                }
                JumpLaw::SlantedUniform { lo, hi, slope } => {
                    mix(4);
                    mix(lo.to_bits());
                    mix(hi.to_bits());
                    mix(slope.to_bits());
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pm(rate: f64, z: f64) -> JumpComponent {
        JumpComponent { rate, law: JumpLaw::PointMass { z } }
    }

    #[test]
    fn laplace_exponent_brownian() {
        let spec = EnvironmentSpec::brownian(-2.0, 1.0);
        assert_relative_eq!(spec.laplace_exponent(1.0).unwrap(), -1.5, max_relative = 1e-14);
        assert_eq!(spec.laplace_exponent(0.0).unwrap(), 0.0);
    }

    #[test]
    fn laplace_exponent_point_mass_jump() {
        // Single jump of size ln 2 at rate 1: Φ(1) = e^{ln 2} - 1 - ln 2.
        let spec =
            EnvironmentSpec::new(0.0, 0.0, vec![pm(1.0, std::f64::consts::LN_2)]).unwrap();
        let expected = 2.0 - 1.0 - std::f64::consts::LN_2;
        assert_relative_eq!(spec.laplace_exponent(1.0).unwrap(), expected, max_relative = 1e-13);
        assert!((expected - 0.30685).abs() < 5e-6);
    }

    #[test]
    fn derivatives_brownian() {
        let spec = EnvironmentSpec::brownian(-1.0, 1.0);
        let (p1, p2) = spec.laplace_exponent_derivatives(1.0).unwrap();
        assert_relative_eq!(p1, 0.0, epsilon = 1e-14);
        assert_relative_eq!(p2, 1.0, max_relative = 1e-14);
        let (p1, p2) = EnvironmentSpec::brownian(-2.0, 1.0)
            .laplace_exponent_derivatives(0.0)
            .unwrap();
        assert_relative_eq!(p1, -2.0, max_relative = 1e-14);
        assert_relative_eq!(p2, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let spec = EnvironmentSpec::new(
            0.3,
            0.4,
            vec![
                pm(1.0, std::f64::consts::LN_2),
                JumpComponent { rate: 0.5, law: JumpLaw::ExponentialPos { rate: 4.0 } },
                JumpComponent { rate: 0.7, law: JumpLaw::uniform(-0.8, 0.6) },
            ],
        )
        .unwrap();
        let h = 1e-5;
        for theta in [0.0, 0.5, 1.0] {
            let (p1, p2) = spec.laplace_exponent_derivatives(theta).unwrap();
            let fp = spec.laplace_exponent(theta + h).unwrap();
            let fm = spec.laplace_exponent(theta - h).unwrap();
            let f0 = spec.laplace_exponent(theta).unwrap();
            assert_relative_eq!(p1, (fp - fm) / (2.0 * h), max_relative = 1e-6);
            assert_relative_eq!(p2, (fp - 2.0 * f0 + fm) / (h * h), max_relative = 1e-4);
        }
    }

    #[test]
    fn regime_classification_brownian_family() {
        let tol = 1e-9;
        assert_eq!(
            EnvironmentSpec::brownian(-2.0, 1.0).classify_regime(tol).unwrap().tag,
            RegimeTag::StronglySubcritical
        );
        assert_eq!(
            EnvironmentSpec::brownian(-1.0, 1.0).classify_regime(tol).unwrap().tag,
            RegimeTag::IntermediateSubcritical
        );
        assert_eq!(
            EnvironmentSpec::brownian(-0.25, 1.0).classify_regime(tol).unwrap().tag,
            RegimeTag::WeaklySubcritical
        );
        assert_eq!(
            EnvironmentSpec::brownian(0.0, 1.0).classify_regime(tol).unwrap().tag,
            RegimeTag::Critical
        );
        assert_eq!(
            EnvironmentSpec::brownian(1.0, 1.0).classify_regime(tol).unwrap().tag,
            RegimeTag::Supercritical
        );
    }

    #[test]
    fn esscher_tilt_brownian_shifts_drift() {
        let spec = EnvironmentSpec::brownian(-1.0, 1.0);
        let tilted = spec.esscher_tilt(1.0).unwrap();
        assert_relative_eq!(tilted.drift(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(tilted.gaussian_var(), 1.0, max_relative = 1e-14);

        let tilted = EnvironmentSpec::brownian(-2.0, 1.0).esscher_tilt(1.0).unwrap();
        assert_relative_eq!(tilted.drift(), -1.0, max_relative = 1e-14);
    }

    #[test]
    fn esscher_tilt_point_mass_doubles_rate() {
        let spec =
            EnvironmentSpec::new(0.0, 0.0, vec![pm(1.0, std::f64::consts::LN_2)]).unwrap();
        let tilted = spec.esscher_tilt(1.0).unwrap();
        assert_relative_eq!(tilted.jumps()[0].rate, 2.0, max_relative = 1e-14);
        assert_eq!(tilted.jumps()[0].law, JumpLaw::PointMass { z: std::f64::consts::LN_2 });
    }

    #[test]
    fn tilt_laplace_exponent_identity() {
        let spec = EnvironmentSpec::new(
            -1.0,
            0.8,
            vec![
                pm(0.6, -0.4),
                JumpComponent { rate: 0.5, law: JumpLaw::ExponentialPos { rate: 5.0 } },
                JumpComponent { rate: 0.3, law: JumpLaw::uniform(-1.5, 1.0) },
            ],
        )
        .unwrap();
        let theta = 1.0;
        let tilted = spec.esscher_tilt(theta).unwrap();
        let phi_theta = spec.laplace_exponent(theta).unwrap();
        for u in [-0.75, -0.3, 0.2, 0.9, 1.7, 2.5] {
            let lhs = tilted.laplace_exponent(u).unwrap();
            let rhs = spec.laplace_exponent(theta + u).unwrap() - phi_theta;
            assert!(
                (lhs - rhs).abs() <= 1e-10,
                "tilt identity violated at u = {u}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn exponential_moment_check() {
        let brownian = EnvironmentSpec::brownian(0.0, 1.0);
        assert!(brownian.check_exponential_moment(100.0));
        let exp1 = EnvironmentSpec::new(
            0.0,
            0.0,
            vec![JumpComponent { rate: 1.0, law: JumpLaw::ExponentialPos { rate: 1.0 } }],
        )
        .unwrap();
        assert!(!exp1.check_exponential_moment(2.0));
        let exp3 = EnvironmentSpec::new(
            0.0,
            0.0,
            vec![JumpComponent { rate: 1.0, law: JumpLaw::ExponentialPos { rate: 3.0 } }],
        )
        .unwrap();
        assert!(exp3.check_exponential_moment(2.0));
    }

    #[test]
    fn laplace_exponent_outside_domain_errors() {
        let spec = EnvironmentSpec::new(
            0.0,
            0.0,
            vec![JumpComponent { rate: 1.0, law: JumpLaw::ExponentialPos { rate: 1.0 } }],
        )
        .unwrap();
        assert!(matches!(
            spec.laplace_exponent(1.5),
            Err(CbleError::MomentDomain { .. })
        ));
    }
}
