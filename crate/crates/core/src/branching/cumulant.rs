//! Backward cumulant equation along a frozen environment path.
//!
//! For a mechanism `ψ₀` and environment trajectory `ξ`, the quenched
//! Laplace functional of the population is generated by the solution of
//!
//! ```text
//! ∂_s v(s) = e^{ξ_s} ψ₀(v(s) e^{-ξ_s}),    v(t) = λ,
//! ```
//!
//! integrated backward from `t` to `s`. The semigroup form
//! `h_{s,t}(λ) = e^{-ξ_s} v(s)` with terminal value `λ e^{ξ_t}` satisfies
//! the integral equation
//!
//! ```text
//! h_{s,t}(λ) = e^{ξ_t-ξ_s} λ - ∫_s^t e^{ξ_r-ξ_s} ψ₀(h_{r,t}(λ)) dr,
//! ```
//!
//! whose residual is accumulated during integration and reported in the
//! solver statistics. The integrator is an embedded Dormand–Prince 5(4)
//! pair with step control, mandatory breakpoints at the path's grid times
//! (the trajectory is only piecewise smooth), and a damped-Newton backward
//! Euler fallback for the stiff regime where `e^{-ξ}` is large.

use serde::Serialize;

use crate::branching::BranchingMechanism;
use crate::error::{CbleError, Result};
use crate::numeric::aitken;
use crate::path::EnvironmentPath;

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Relative tolerance of the embedded pair.
    pub rel_tol: f64,
    /// Absolute floor in the error norm.
    pub abs_tol: f64,
    /// Bound enforced on the integral-form residual (scaled by `max(1, h)`).
    pub res_tol: f64,
    /// Relative stabilisation required of the `λ → ∞` doubling limit.
    pub limit_tol: f64,
    /// Doubling budget starting from `λ_max = 1`.
    pub max_doublings: usize,
    /// Consecutive step rejections before switching to the implicit scheme.
    pub stiff_rejections: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            res_tol: 1e-7,
            limit_tol: 1e-8,
            max_doublings: 40,
            stiff_rejections: 16,
        }
    }
}

impl SolverConfig {
    /// Looser tolerances for Monte Carlo inner loops, where the ODE error
    /// only needs to sit an order below the statistical noise.
    pub fn fast() -> Self {
        Self { rel_tol: 1e-7, abs_tol: 1e-10, res_tol: 1e-5, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected_steps: usize,
    /// Maximum over grid points of the integral-form residual in semigroup
    /// units, divided by `max(1, h)` so huge terminal values do not inflate
    /// the report.
    pub max_residual: f64,
}

/// Backward-equation solution restricted to `[s, t]`.
#[derive(Debug, Clone)]
pub struct CumulantSolution {
    times: Vec<f64>,
    values: Vec<f64>,
    xis: Vec<f64>,
    lambda_terminal: f64,
    stats: SolverStats,
}

impl CumulantSolution {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `v` at each grid time, ascending in time; the last entry equals the
    /// terminal value.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Environment value at each grid time (post-jump at jump epochs).
    pub fn xi_values(&self) -> &[f64] {
        &self.xis
    }

    pub fn value_at_start(&self) -> f64 {
        self.values[0]
    }

    /// Semigroup values `h = e^{-ξ} v` along the grid.
    pub fn h_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.xis)
            .map(|(&v, &x)| (-x).exp() * v)
            .collect()
    }

    pub fn lambda_terminal(&self) -> f64 {
        self.lambda_terminal
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }
}

struct Seg {
    left: f64,
    right: f64,
    xi_left: f64,
    slope: f64,
}

impl Seg {
    #[inline]
    fn xi_at(&self, u: f64) -> f64 {
        self.xi_left + self.slope * (u - self.left)
    }
}

fn build_segments(
    path: &EnvironmentPath,
    s: f64,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Seg>)> {
    let horizon = path.horizon();
    if !(0.0 <= s && s <= t && t <= horizon + 1e-12) {
        return Err(CbleError::InvalidParameter(format!(
            "need 0 <= s <= t <= horizon, got s={s}, t={t}, horizon={horizon}"
        )));
    }
    let times = path.times();
    let values = path.values();

    let mut bounds = vec![s];
    let mut xis = vec![path.value_at(s)];
    for (k, &g) in times.iter().enumerate() {
        if g > s && g < t {
            bounds.push(g);
            xis.push(values[k]);
        }
    }
    if t > s {
        bounds.push(t);
        xis.push(path.value_at(t));
    }

    let mut segs = Vec::with_capacity(bounds.len().saturating_sub(1));
    for w in bounds.windows(2) {
        let (left, right) = (w[0], w[1]);
        let mid = 0.5 * (left + right);
        let k = times.partition_point(|&g| g <= mid) - 1;
        let seg_len = times[k + 1] - times[k];
        let slope = (path.left_limit(k + 1) - values[k]) / seg_len;
        let xi_left = values[k] + slope * (left - times[k]);
        segs.push(Seg { left, right, xi_left, slope });
    }
    Ok((bounds, xis, segs))
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

struct SegmentOutcome {
    v_left: f64,
    flow_integral: f64,
}

/// Integrates one smooth segment backward in time (forward in τ = right - u),
/// accumulating `∫ e^{ξ} ψ₀(v e^{-ξ}) du` with a Hermite-midpoint Simpson
/// rule per accepted step.
///
/// Local error is controlled per unit step (`≤ tol·|y|·h/span`), so the
/// accumulated error over the whole `[s, t]` solve stays at the configured
/// relative tolerance rather than `tol × step count`.
fn integrate_segment(
    mech: &BranchingMechanism,
    seg: &Seg,
    span: f64,
    v_right: f64,
    cfg: &SolverConfig,
    stats: &mut SolverStats,
    h_hint: &mut f64,
) -> Result<SegmentOutcome> {
    let len = seg.right - seg.left;
    let flow = |tau: f64, y: f64| mech.flow_rate(seg.xi_at(seg.right - tau), y);

    let mut tau = 0.0;
    let mut y = v_right;
    let mut f_cur = -flow(0.0, y);
    let mut q = 0.0;
    let mut h = h_hint.min(len).max(len * 1e-12);
    let mut rejections_in_row = 0usize;

    while tau < len {
        h = h.min(len - tau);
        let g = |tt: f64, yy: f64| -flow(tt, yy.max(0.0));

        let k1 = f_cur;
        let k2 = g(tau + C2 * h, y + h * (A21 * k1));
        let k3 = g(tau + C3 * h, y + h * (A31 * k1 + A32 * k2));
        let k4 = g(tau + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3));
        let k5 = g(tau + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
        let k6 = g(tau + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
        let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let k7 = g(tau + h, y_new);
        let err_raw = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
        let scale = (cfg.abs_tol + cfg.rel_tol * y.abs().max(y_new.abs())) * (h / span).min(1.0);
        let err = (err_raw / scale).abs();

        if err <= 1.0 && y_new >= 0.0 {
            // Simpson with a cubic-Hermite midpoint; the integrand is the
            // (positive) flow, i.e. -g.
            let ym = 0.5 * (y + y_new) + h / 8.0 * (k1 - k7);
            let qm = flow(tau + 0.5 * h, ym.max(0.0));
            q += h / 6.0 * ((-k1) + 4.0 * qm + (-k7));
            tau += h;
            y = y_new;
            f_cur = k7;
            stats.steps += 1;
            rejections_in_row = 0;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.25)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            stats.rejected_steps += 1;
            rejections_in_row += 1;
            let factor = if err.is_finite() && err > 0.0 {
                (0.9 * err.powf(-0.25)).clamp(0.1, 0.5)
            } else {
                0.1
            };
            h *= factor;
            if rejections_in_row > cfg.stiff_rejections || h < 1e-14 * len.max(1.0) {
                let (yl, ql) =
                    backward_euler_rest(mech, seg, span, seg.right - tau, y, cfg, stats)?;
                *h_hint = len.max(1e-12);
                return Ok(SegmentOutcome { v_left: yl, flow_integral: q + ql });
            }
        }
    }
    *h_hint = h.max(1e-14);
    Ok(SegmentOutcome { v_left: y, flow_integral: q })
}

/// Implicit fallback: backward Euler with damped Newton (bisection-safe)
/// and step doubling/halving, from `u_hi` down to the segment's left edge.
fn backward_euler_rest(
    mech: &BranchingMechanism,
    seg: &Seg,
    span: f64,
    u_hi: f64,
    v_hi: f64,
    cfg: &SolverConfig,
    stats: &mut SolverStats,
) -> Result<(f64, f64)> {
    let mut u = u_hi;
    let mut v = v_hi;
    let mut q = 0.0;
    let mut hstep = (u_hi - seg.left) / 8.0;
    let mut guard = 0usize;

    while u > seg.left {
        guard += 1;
        if guard > 2_000_000 {
            return Err(CbleError::SolverFailure {
                detail: "implicit fallback failed to traverse segment".into(),
                steps: stats.steps,
                rejected: stats.rejected_steps,
            });
        }
        hstep = hstep.min(u - seg.left);
        let full = implicit_step(mech, seg, u, v, hstep)?;
        let half1 = implicit_step(mech, seg, u, v, 0.5 * hstep)?;
        let half2 = implicit_step(mech, seg, u - 0.5 * hstep, half1, 0.5 * hstep)?;
        let scale = (cfg.abs_tol + cfg.rel_tol * v.abs()) * (hstep / span).min(1.0);
        let err = (full - half2).abs() / scale;
        if err <= 1.0 {
            let v_new = (2.0 * half2 - full).max(0.0);
            let u_new = u - hstep;
            q += 0.5
                * hstep
                * (mech.flow_rate(seg.xi_at(u), v) + mech.flow_rate(seg.xi_at(u_new), v_new));
            u = u_new;
            v = v_new;
            stats.steps += 1;
            if err < 0.05 {
                hstep *= 2.0;
            }
        } else {
            stats.rejected_steps += 1;
            hstep *= 0.5;
            if hstep < 1e-15 * (u_hi - seg.left).max(1.0) {
                return Err(CbleError::SolverFailure {
                    detail: "step underflow in implicit fallback".into(),
                    steps: stats.steps,
                    rejected: stats.rejected_steps,
                });
            }
        }
    }
    Ok((v, q))
}

/// One backward-Euler step: solves `y + h·flow(ξ(u-h), y) = v` for `y`.
fn implicit_step(
    mech: &BranchingMechanism,
    seg: &Seg,
    u: f64,
    v: f64,
    h: f64,
) -> Result<f64> {
    let x = seg.xi_at(u - h);
    let mut lo = 0.0;
    let mut hi = v;
    let mut y = v;
    for _ in 0..100 {
        let f = y + h * mech.flow_rate(x, y) - v;
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let fp = 1.0 + h * mech.flow_rate_dv(x, y);
        let mut y_next = y - f / fp;
        if !(y_next > lo && y_next < hi) {
            y_next = 0.5 * (lo + hi);
        }
        if (y_next - y).abs() <= 1e-14 * v.max(1e-300) {
            return Ok(y_next);
        }
        y = y_next;
    }
    Ok(y)
}

fn validate_mechanism_for_solve(mech: &BranchingMechanism) -> Result<()> {
    if !mech.psi0(1.0).is_finite() {
        return Err(CbleError::InvalidParameter(
            "branching measure has infinite mean; cumulant equation undefined".into(),
        ));
    }
    Ok(())
}

/// Solves the backward equation from terminal value `v(t) = lambda` and
/// returns `v` on the path grid restricted to `[s, t]`.
pub fn solve_cumulant(
    mech: &BranchingMechanism,
    path: &EnvironmentPath,
    s: f64,
    t: f64,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<CumulantSolution> {
    validate_mechanism_for_solve(mech)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CbleError::InvalidParameter(
            "solve_cumulant needs a finite lambda > 0".into(),
        ));
    }
    let (bounds, xis, segs) = build_segments(path, s, t)?;
    let n = bounds.len();
    let mut values = vec![0.0; n];
    values[n - 1] = lambda;
    let mut stats = SolverStats::default();
    let mut h_hint = if n >= 2 { (bounds[n - 1] - bounds[0]).max(1e-12) } else { 1.0 };
    let mut flow_total = 0.0;
    let mut max_res = 0.0f64;

    let span = if n >= 2 { (bounds[n - 1] - bounds[0]).max(1e-300) } else { 1.0 };
    for (i, seg) in segs.iter().enumerate().rev() {
        let out = integrate_segment(mech, seg, span, values[i + 1], cfg, &mut stats, &mut h_hint)?;
        if !(out.v_left > 0.0) || !out.v_left.is_finite() {
            return Err(CbleError::ContractViolation(format!(
                "v left the positive cone at u = {} (v = {})",
                seg.left, out.v_left
            )));
        }
        values[i] = out.v_left;
        flow_total += out.flow_integral;
        // Integral-form residual at this grid point, in semigroup units.
        let exp_neg_xi = (-xis[i]).exp();
        let res = (values[i] - (lambda - flow_total)).abs() * exp_neg_xi;
        let h_scale = (exp_neg_xi * values[i]).max(1.0);
        max_res = max_res.max(res / h_scale);
    }
    stats.max_residual = max_res;
    if max_res > cfg.res_tol {
        return Err(CbleError::SolverFailure {
            detail: format!("integral-form residual {max_res} exceeds {}", cfg.res_tol),
            steps: stats.steps,
            rejected: stats.rejected_steps,
        });
    }
    Ok(CumulantSolution { times: bounds, values, xis, lambda_terminal: lambda, stats })
}

/// Semigroup solution: solves with terminal value `λ e^{ξ_t}` so that
/// `h_values()` gives `h_{r,t}(λ)` along the grid.
pub fn solve_h(
    mech: &BranchingMechanism,
    path: &EnvironmentPath,
    s: f64,
    t: f64,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<CumulantSolution> {
    let xi_t = path.value_at(t);
    solve_cumulant(mech, path, s, t, lambda * xi_t.exp(), cfg)
}

/// Diagnostics of the derivative solve: `dv/dλ` propagated by the
/// linearised equation, and the same quantity via the exponential formula
/// `exp{-∫ ψ₀'(v e^{-ξ}) du}` accumulated by quadrature along the solution.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheck {
    pub dv_dlambda: f64,
    pub exp_formula: f64,
}

/// Joint solve of the backward equation and its λ-derivative
/// (`y' = ψ₀'(v e^{-ξ}) y`, `y(t) = 1`, integrated backward).
pub fn solve_cumulant_with_derivative(
    mech: &BranchingMechanism,
    path: &EnvironmentPath,
    s: f64,
    t: f64,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<(CumulantSolution, DerivativeCheck)> {
    validate_mechanism_for_solve(mech)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CbleError::InvalidParameter(
            "solve_cumulant_with_derivative needs a finite lambda > 0".into(),
        ));
    }
    let (bounds, xis, segs) = build_segments(path, s, t)?;
    let n = bounds.len();
    let mut values = vec![0.0; n];
    let mut deriv = vec![0.0; n];
    values[n - 1] = lambda;
    deriv[n - 1] = 1.0;
    let mut stats = SolverStats::default();
    let mut h_hint = if n >= 2 { (bounds[n - 1] - bounds[0]).max(1e-12) } else { 1.0 };
    let mut dflow_integral = 0.0;

    let span = if n >= 2 { (bounds[n - 1] - bounds[0]).max(1e-300) } else { 1.0 };
    for (i, seg) in segs.iter().enumerate().rev() {
        let (v_left, y_left, d_int) = integrate_segment_pair(
            mech,
            seg,
            span,
            values[i + 1],
            deriv[i + 1],
            cfg,
            &mut stats,
            &mut h_hint,
        )?;
        if !(v_left > 0.0) || !v_left.is_finite() {
            return Err(CbleError::ContractViolation(format!(
                "v left the positive cone at u = {seg_left} (v = {v_left})",
                seg_left = seg.left
            )));
        }
        values[i] = v_left;
        deriv[i] = y_left;
        dflow_integral += d_int;
    }
    let check = DerivativeCheck { dv_dlambda: deriv[0], exp_formula: (-dflow_integral).exp() };
    Ok((
        CumulantSolution { times: bounds, values, xis, lambda_terminal: lambda, stats },
        check,
    ))
}

/// Two-state Dormand–Prince for `(v, dv/dλ)`, explicit only (the derivative
/// solve is used on benign fixtures), accumulating `∫ ψ₀'(v e^{-ξ}) du`.
#[allow(clippy::too_many_arguments)]
fn integrate_segment_pair(
    mech: &BranchingMechanism,
    seg: &Seg,
    span: f64,
    v_right: f64,
    y_right: f64,
    cfg: &SolverConfig,
    stats: &mut SolverStats,
    h_hint: &mut f64,
) -> Result<(f64, f64, f64)> {
    let len = seg.right - seg.left;
    let g = |tau: f64, w: [f64; 2]| -> [f64; 2] {
        let x = seg.xi_at(seg.right - tau);
        let v = w[0].max(0.0);
        [-mech.flow_rate(x, v), -mech.flow_rate_dv(x, v) * w[1]]
    };

    let mut tau = 0.0;
    let mut w = [v_right, y_right];
    let mut f_cur = g(0.0, w);
    let mut dq = 0.0;
    let mut h = h_hint.min(len).max(len * 1e-12);

    let lc = |a: [f64; 2], c: f64, b: [f64; 2]| [a[0] + c * b[0], a[1] + c * b[1]];

    while tau < len {
        h = h.min(len - tau);
        let k1 = f_cur;
        let k2 = g(tau + C2 * h, lc(w, h * A21, k1));
        let k3 = g(tau + C3 * h, lc(lc(w, h * A31, k1), h * A32, k2));
        let k4 = g(tau + C4 * h, lc(lc(lc(w, h * A41, k1), h * A42, k2), h * A43, k3));
        let k5 = g(
            tau + C5 * h,
            lc(lc(lc(lc(w, h * A51, k1), h * A52, k2), h * A53, k3), h * A54, k4),
        );
        let k6 = g(
            tau + h,
            lc(lc(lc(lc(lc(w, h * A61, k1), h * A62, k2), h * A63, k3), h * A64, k4), h * A65, k5),
        );
        let w_new = [
            w[0] + h * (B1 * k1[0] + B3 * k3[0] + B4 * k4[0] + B5 * k5[0] + B6 * k6[0]),
            w[1] + h * (B1 * k1[1] + B3 * k3[1] + B4 * k4[1] + B5 * k5[1] + B6 * k6[1]),
        ];
        let k7 = g(tau + h, w_new);
        let mut err = 0.0f64;
        for c in 0..2 {
            let e = h * (E1 * k1[c] + E3 * k3[c] + E4 * k4[c] + E5 * k5[c] + E6 * k6[c] + E7 * k7[c]);
            let scale = (cfg.abs_tol + cfg.rel_tol * w[c].abs().max(w_new[c].abs()))
                * (h / span).min(1.0);
            err = err.max((e / scale).abs());
        }
        if err <= 1.0 && w_new[0] >= 0.0 {
            // ψ₀'(v e^{-ξ}) accumulated by Hermite-midpoint Simpson.
            let vm = 0.5 * (w[0] + w_new[0]) + h / 8.0 * (k1[0] - k7[0]);
            let x_mid = seg.xi_at(seg.right - (tau + 0.5 * h));
            let d0 = mech.flow_rate_dv(seg.xi_at(seg.right - tau), w[0].max(0.0));
            let d1 = mech.flow_rate_dv(seg.xi_at(seg.right - tau - h), w_new[0].max(0.0));
            let dm = mech.flow_rate_dv(x_mid, vm.max(0.0));
            dq += h / 6.0 * (d0 + 4.0 * dm + d1);
            tau += h;
            w = w_new;
            f_cur = k7;
            stats.steps += 1;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.25)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            stats.rejected_steps += 1;
            let factor = if err.is_finite() && err > 0.0 {
                (0.9 * err.powf(-0.25)).clamp(0.1, 0.5)
            } else {
                0.1
            };
            h *= factor;
            if h < 1e-14 * len.max(1.0) {
                return Err(CbleError::SolverFailure {
                    detail: "step underflow in derivative solve".into(),
                    steps: stats.steps,
                    rejected: stats.rejected_steps,
                });
            }
        }
    }
    *h_hint = h.max(1e-14);
    Ok((w[0], w[1], dq))
}

#[derive(Debug, Clone)]
pub struct DoublingResult {
    pub value: f64,
    pub doublings: usize,
    /// Raw semigroup values at `λ_max = 2^k`.
    pub raw: Vec<f64>,
}

/// `lim_{λ→∞} h_{0,t}(λ)` by solving at doubling terminal values with
/// Aitken extrapolation and a monotone-limit certificate.
pub fn cumulant_h_infinity_by_doubling(
    mech: &BranchingMechanism,
    path: &EnvironmentPath,
    t: f64,
    cfg: &SolverConfig,
) -> Result<DoublingResult> {
    let xi0 = path.value_at(0.0);
    let xit = path.value_at(t);
    let mut raw: Vec<f64> = Vec::new();
    let mut accelerated: Vec<f64> = Vec::new();
    for k in 0..=cfg.max_doublings {
        let lambda_max = 2f64.powi(k as i32);
        let sol = solve_cumulant(mech, path, 0.0, t, lambda_max * xit.exp(), cfg)?;
        let h = (-xi0).exp() * sol.value_at_start();
        if let Some(&prev) = raw.last() {
            if h < prev * (1.0 - 1e-9) {
                return Err(CbleError::ContractViolation(format!(
                    "h(λ_max) not monotone across doublings: {prev} -> {h}"
                )));
            }
        }
        raw.push(h);
        let n = raw.len();
        if n >= 3 {
            if let Some(a) = aitken(raw[n - 3], raw[n - 2], raw[n - 1]) {
                if let Some(&a_prev) = accelerated.last() {
                    if (a - a_prev).abs() <= cfg.limit_tol * a.abs().max(1e-300) {
                        return Ok(DoublingResult { value: a, doublings: k, raw });
                    }
                }
                accelerated.push(a);
            } else {
                // Differences vanished: the raw sequence already converged.
                return Ok(DoublingResult { value: raw[n - 1], doublings: k, raw });
            }
        }
    }
    Err(CbleError::LimitFailure {
        doublings: cfg.max_doublings,
        last: raw.last().copied().unwrap_or(f64::NAN),
    })
}

/// `h_{0,t}(∞)`, the quenched survival functional. Requires Grey's
/// condition; stable-tagged mechanisms use the exact closed form, all
/// others the doubling limit.
pub fn cumulant_h_infinity(
    mech: &BranchingMechanism,
    path: &EnvironmentPath,
    t: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let (grey, diag) = mech.check_grey()?;
    if !grey {
        return Err(CbleError::Hypothesis {
            hypothesis: "H3",
            detail: format!(
                "Grey's condition fails (fitted tail exponent {:.4})",
                diag.tail_exponent
            ),
        });
    }
    if let Some(tag) = mech.stable_tag() {
        let xi0 = path.value_at(0.0);
        let i = path.exponential_functional(-tag.beta, 0.0, t);
        return Ok((-xi0).exp() * (tag.beta * tag.c * i).powf(-1.0 / tag.beta));
    }
    cumulant_h_infinity_by_doubling(mech, path, t, cfg).map(|r| r.value)
}

/// Quenched survival probability `1 - exp(-z·h_{0,t}(∞))`.
pub fn quenched_survival(
    mech: &BranchingMechanism,
    path: &EnvironmentPath,
    z: f64,
    t: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    if !(z > 0.0) {
        return Err(CbleError::InvalidParameter("quenched survival needs z > 0".into()));
    }
    let h = cumulant_h_infinity(mech, path, t, cfg)?;
    Ok(-(-z * h).exp_m1())
}

/// Closed form of the backward equation for `ψ₀(λ) = Cλ^{1+β}`:
/// `v_t(s, λ) = (λ^{-β} + βC·I)^{-1/β}` with
/// `I = ∫_s^t e^{-βξ_u} du`; `λ = ∞` gives `(βC·I)^{-1/β}`.
pub fn stable_cumulant_closed_form(
    c: f64,
    beta: f64,
    path: &EnvironmentPath,
    s: f64,
    t: f64,
    lambda: f64,
) -> f64 {
    let i = path.exponential_functional(-beta, s, t);
    let base = if lambda.is_infinite() { 0.0 } else { lambda.powf(-beta) };
    (base + beta * c * i).powf(-1.0 / beta)
}

/// Semigroup profile `r ↦ h_{r,T}(λ)` on the full path grid for a stable
/// mechanism, computed from suffix exponential functionals in one sweep.
/// `λ` must be finite (at `r = T` the profile equals `λ`).
pub fn stable_h_profile(c: f64, beta: f64, path: &EnvironmentPath, lambda: f64) -> Vec<f64> {
    assert!(lambda.is_finite() && lambda > 0.0, "stable_h_profile needs finite lambda > 0");
    let xi_t = *path.values().last().unwrap();
    let base = lambda.powf(-beta) * (-beta * xi_t).exp();
    let suffixes = path.exp_integral_suffixes(-beta);
    path.values()
        .iter()
        .zip(&suffixes)
        .map(|(&xi, &i)| (-xi).exp() * (base + beta * c * i).powf(-1.0 / beta))
        .collect()
}
