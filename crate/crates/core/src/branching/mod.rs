//! Branching mechanisms and the hypothesis checks attached to them.
//!
//! A mechanism is described by `ψ₀`, the branching mechanism with its linear
//! part removed:
//!
//! ```text
//! ψ₀(λ) = γ²λ² + ∫ (e^{-λx} - 1 + λx) μ(dx),
//! ```
//!
//! with `μ` either a finite atom list (quadrature-free), an optional
//! parametric tail, or — via the stable tag — the closed form
//! `ψ₀(λ) = C λ^{1+β}`. Its derivative
//!
//! ```text
//! ψ₀'(λ) = 2γ²λ + ∫ (1 - e^{-λx}) x μ(dx)
//! ```
//!
//! is the Laplace exponent of a subordinator and doubles as the immigration
//! mechanism of the conditioned process.

mod cumulant;

pub use cumulant::{
    cumulant_h_infinity, cumulant_h_infinity_by_doubling, quenched_survival,
    solve_cumulant, solve_cumulant_with_derivative, solve_h, stable_cumulant_closed_form,
    stable_h_profile, CumulantSolution, DerivativeCheck, DoublingResult, SolverConfig,
    SolverStats,
};

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{CbleError, Result};
use crate::numeric::adaptive_simpson;

/// One atom of the branching measure: mass at jump size `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

/// Parametric tails for the branching measure on `(cut, ∞)`. They exist to
/// exercise the moment checks with non-atomic measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TailFamily {
    /// `μ(du) = coeff · u^{-(2+beta)} du`; finite mean for `beta > 0`.
    PowerLaw { coeff: f64, beta: f64, cut: f64 },
    /// `μ(du) = coeff · u^{-2} (ln u)^{-1} du` on `(cut, ∞)`, `cut > 1`.
    /// This measure has an infinite first moment, so `ψ₀ = ∞` on `(0, ∞)`;
    /// it is a counterexample for the `x log x` check and nothing else.
    InverseSquareLog { coeff: f64, cut: f64 },
}

/// The stable closed form `ψ₀(λ) = C λ^{1+β}`, `β ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StableTag {
    pub c: f64,
    pub beta: f64,
}

/// Immutable branching mechanism. Grey's-condition diagnostics are computed
/// once and cached.
#[derive(Debug, Clone, Serialize)]
pub struct BranchingMechanism {
    psi_prime_0: f64,
    gamma_sq: f64,
    atoms: Vec<Atom>,
    tail: Option<TailFamily>,
    stable: Option<StableTag>,
    #[serde(skip)]
    grey_cache: OnceLock<(bool, GreyDiagnostics)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreyDiagnostics {
    /// `∫_1^Λ dλ/ψ₀(λ)` by adaptive quadrature.
    pub integral_to_lambda_max: f64,
    pub lambda_max: f64,
    /// Log-log slope of `ψ₀` at `Λ`; the integral converges iff this
    /// exceeds one.
    pub tail_exponent: f64,
}

impl BranchingMechanism {
    /// Mechanism with γ² diffusion part and a finite atom list.
    pub fn composite(psi_prime_0: f64, gamma_sq: f64, atoms: Vec<Atom>) -> Result<Self> {
        if !(gamma_sq >= 0.0) || !gamma_sq.is_finite() {
            return Err(CbleError::InvalidParameter("gamma_sq must be >= 0".into()));
        }
        if !psi_prime_0.is_finite() {
            return Err(CbleError::InvalidParameter("psi_prime_0 must be finite".into()));
        }
        for a in &atoms {
            if !(a.x > 0.0) || !(a.mass > 0.0) || !a.x.is_finite() || !a.mass.is_finite() {
                return Err(CbleError::InvalidParameter(
                    "atoms need x > 0 and mass > 0".into(),
                ));
            }
        }
        Ok(Self {
            psi_prime_0,
            gamma_sq,
            atoms,
            tail: None,
            stable: None,
            grey_cache: OnceLock::new(),
        })
    }

    /// Stable mechanism `ψ₀(λ) = c λ^{1+β}` with zero linear part.
    pub fn stable(c: f64, beta: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(CbleError::InvalidParameter("stable tag needs C > 0".into()));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(CbleError::InvalidParameter("stable tag needs beta in (0, 1]".into()));
        }
        Ok(Self {
            psi_prime_0: 0.0,
            gamma_sq: 0.0,
            atoms: Vec::new(),
            tail: None,
            stable: Some(StableTag { c, beta }),
            grey_cache: OnceLock::new(),
        })
    }

    pub fn with_psi_prime_0(mut self, psi_prime_0: f64) -> Self {
        self.psi_prime_0 = psi_prime_0;
        self
    }

    pub fn with_tail(mut self, tail: TailFamily) -> Result<Self> {
        match tail {
            TailFamily::PowerLaw { coeff, beta, cut } => {
                if !(coeff > 0.0 && beta > 0.0 && cut > 0.0) {
                    return Err(CbleError::InvalidParameter(
                        "power-law tail needs coeff, beta, cut > 0".into(),
                    ));
                }
            }
            TailFamily::InverseSquareLog { coeff, cut } => {
                if !(coeff > 0.0 && cut > 1.0) {
                    return Err(CbleError::InvalidParameter(
                        "inverse-square-log tail needs coeff > 0 and cut > 1".into(),
                    ));
                }
            }
        }
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn psi_prime_at_zero(&self) -> f64 {
        self.psi_prime_0
    }

    pub fn gamma_sq(&self) -> f64 {
        self.gamma_sq
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn stable_tag(&self) -> Option<StableTag> {
        self.stable
    }

    pub fn tail(&self) -> Option<TailFamily> {
        self.tail
    }

    /// `ψ₀ ≡ 0`: no diffusion, no branching measure. Survival is then
    /// identically one and every absorption-related operation is rejected.
    pub fn is_degenerate(&self) -> bool {
        self.stable.is_none() && self.gamma_sq == 0.0 && self.atoms.is_empty() && self.tail.is_none()
    }

    /// `ψ₀(λ)`. Returns `+∞` when the branching measure has an infinite
    /// first moment (the inverse-square-log tail).
    pub fn psi0(&self, lambda: f64) -> f64 {
        assert!(lambda >= 0.0, "psi0 needs lambda >= 0");
        if lambda == 0.0 {
            return 0.0;
        }
        if let Some(StableTag { c, beta }) = self.stable {
            return c * lambda.powf(1.0 + beta);
        }
        let mut v = self.gamma_sq * lambda * lambda;
        for a in &self.atoms {
            v += a.mass * ((-lambda * a.x).exp_m1() + lambda * a.x);
        }
        if let Some(tail) = self.tail {
            v += tail_psi0(tail, lambda);
        }
        v
    }

    /// `ψ₀'(λ)`, the subordinator exponent `2γ²λ + ∫(1-e^{-λx}) x μ(dx)`.
    pub fn psi0_prime(&self, lambda: f64) -> f64 {
        assert!(lambda >= 0.0, "psi0_prime needs lambda >= 0");
        if lambda == 0.0 {
            return 0.0;
        }
        if let Some(StableTag { c, beta }) = self.stable {
            return c * (1.0 + beta) * lambda.powf(beta);
        }
        let mut v = 2.0 * self.gamma_sq * lambda;
        for a in &self.atoms {
            v += a.mass * a.x * (-(-lambda * a.x).exp_m1());
        }
        if let Some(tail) = self.tail {
            v += tail_psi0_prime(tail, lambda);
        }
        v
    }

    /// `e^{x} ψ₀(v e^{-x})` — the right-hand side of the backward cumulant
    /// equation, with the stable case short-circuited for accuracy.
    pub(crate) fn flow_rate(&self, x: f64, v: f64) -> f64 {
        if let Some(StableTag { c, beta }) = self.stable {
            c * v.powf(1.0 + beta) * (-beta * x).exp()
        } else {
            x.exp() * self.psi0(v * (-x).exp())
        }
    }

    /// `∂/∂v` of [`flow_rate`](Self::flow_rate), which is `ψ₀'(v e^{-x})`.
    pub(crate) fn flow_rate_dv(&self, x: f64, v: f64) -> f64 {
        if let Some(StableTag { c, beta }) = self.stable {
            c * (1.0 + beta) * (v * (-x).exp()).powf(beta)
        } else {
            self.psi0_prime(v * (-x).exp())
        }
    }

    /// Grey's condition: does `∫_1^∞ dλ/ψ₀(λ)` converge? Decided
    /// numerically from adaptive quadrature on `[1, Λ]` plus a tail-exponent
    /// fit; mechanisms with asymptotically linear `ψ₀` are rejected.
    pub fn check_grey(&self) -> Result<(bool, GreyDiagnostics)> {
        if self.is_degenerate() {
            return Err(CbleError::DegenerateMechanism(
                "psi0 is identically zero; Grey's condition is meaningless".into(),
            ));
        }
        if let Some(cached) = self.grey_cache.get() {
            return Ok(*cached);
        }
        let lambda_max: f64 = 1e9;
        // Integrate in y = ln λ for resolution across the decades.
        let integral = adaptive_simpson(
            &|y: f64| {
                let lam = y.exp();
                let p = self.psi0(lam);
                if p.is_finite() && p > 0.0 {
                    lam / p
                } else {
                    0.0
                }
            },
            0.0,
            lambda_max.ln(),
            1e-10,
        )?;
        let p_hi = self.psi0(lambda_max);
        let p_hi2 = self.psi0(2.0 * lambda_max);
        let tail_exponent = if p_hi.is_finite() && p_hi2.is_finite() && p_hi > 0.0 {
            (p_hi2 / p_hi).ln() / std::f64::consts::LN_2
        } else {
            f64::INFINITY
        };
        let converges = tail_exponent > 1.0 + 1e-6;
        let diag = GreyDiagnostics { integral_to_lambda_max: integral, lambda_max, tail_exponent };
        let _ = self.grey_cache.set((converges, diag));
        Ok((converges, diag))
    }

    /// `x log x` moment: `∫_1^∞ u ln u μ(du) < ∞`. Finite atom lists pass
    /// trivially; parametric tails are classified analytically.
    pub fn check_xlogx(&self) -> bool {
        match self.tail {
            None => true,
            Some(TailFamily::PowerLaw { beta, .. }) => beta > 0.0,
            Some(TailFamily::InverseSquareLog { .. }) => false,
        }
    }

    /// Sampled-grid certificate for the polynomial lower bound
    /// `ψ₀(λ) ≥ C λ^{1+β}` — a prerequisite of the intermediate-regime
    /// analysis. Not a proof: only the supplied grid is checked.
    pub fn check_lower_bound(&self, c: f64, beta: f64, lambda_grid: &[f64]) -> bool {
        assert!(c > 0.0 && beta > 0.0 && beta <= 1.0, "need C > 0 and beta in (0, 1]");
        lambda_grid.iter().all(|&lam| {
            let lhs = self.psi0(lam);
            !lhs.is_nan() && lhs >= c * lam.powf(1.0 + beta)
        })
    }
}

/// `coeff · ∫_cut^∞ (e^{-λx} - 1 + λx) x^{-2-β} dx`; the linear part is
/// closed-form, the bounded part is integrated until `e^{-λx}` is dead.
fn tail_psi0(tail: TailFamily, lambda: f64) -> f64 {
    match tail {
        TailFamily::InverseSquareLog { .. } => f64::INFINITY,
        TailFamily::PowerLaw { coeff, beta, cut } => {
            let linear = lambda * cut.powf(-beta) / beta;
            let x_hi = cut + 45.0 / lambda;
            let bounded = adaptive_simpson(
                &|x: f64| ((-lambda * x).exp_m1()) * x.powf(-2.0 - beta),
                cut,
                x_hi,
                1e-12,
            )
            .unwrap_or(0.0);
            // Beyond x_hi the integrand is -x^{-2-β} up to e^{-45}.
            let remainder = -x_hi.powf(-1.0 - beta) / (1.0 + beta);
            coeff * (linear + bounded + remainder)
        }
    }
}

fn tail_psi0_prime(tail: TailFamily, lambda: f64) -> f64 {
    match tail {
        TailFamily::InverseSquareLog { .. } => f64::INFINITY,
        TailFamily::PowerLaw { coeff, beta, cut } => {
            let total = cut.powf(-beta) / beta;
            let x_hi = cut + 45.0 / lambda;
            let correction = adaptive_simpson(
                &|x: f64| (-lambda * x).exp() * x.powf(-1.0 - beta),
                cut,
                x_hi,
                1e-12,
            )
            .unwrap_or(0.0);
            coeff * (total - correction)
        }
    }
}
