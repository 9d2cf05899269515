//! Small numerical utilities: order-insensitive reductions, adaptive
//! quadrature, sequence acceleration and a dense least-squares solve.

use crate::error::{CbleError, Result};

/// Pairwise (cascade) summation. Used for all Monte Carlo reductions so the
/// result does not depend on how replicas were scheduled across workers.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sample mean and standard error of the mean, `n >= 2`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "need at least two replicas for a standard error");
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    if !(flm.is_finite() && frm.is_finite()) {
        return Err(CbleError::Numerical(format!(
            "non-finite integrand inside [{a}, {b}]"
        )));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 {
        return Err(CbleError::Numerical(
            "adaptive quadrature recursion limit".into(),
        ));
    }
    if delta.abs() <= 15.0 * tol {
        Ok(left + right + delta / 15.0)
    } else {
        let l = simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
        let r = simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
        Ok(l + r)
    }
}

/// One Aitken Δ² extrapolation step from three consecutive sequence values.
/// Returns `None` when the differences are too small for the formula to be
/// meaningful (the sequence has already converged).
pub fn aitken(x0: f64, x1: f64, x2: f64) -> Option<f64> {
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    let denom = d2 - d1;
    if denom.abs() <= f64::EPSILON * (x2.abs() + 1.0) {
        None
    } else {
        Some(x2 - d2 * d2 / denom)
    }
}

/// Least squares for a small dense system: finds `beta` minimising
/// `||X beta - y||`, via normal equations and Gaussian elimination with
/// partial pivoting. `X` is row-major with `k` columns.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    assert_eq!(n, y.len());
    let k = rows[0].len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut aty = vec![0.0; k];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..k {
            aty[i] += row[i] * yi;
            for j in 0..k {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve_dense(&mut ata, &mut aty)?;
    Ok(aty)
}

fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(CbleError::Numerical("singular least-squares system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for j in col..n {
                a[row][j] -= f * a[col][j];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for j in col + 1..n {
            s -= a[col][j] * b[j];
        }
        b[col] = s / a[col][col];
    }
    Ok(())
}

// φ_k(x) = ∫_0^1 s^{k-1} e^{xs} ds. The closed forms cancel catastrophically
// near 0, so a series is used for |x| < 1/2.

pub fn phi1(x: f64) -> f64 {
    if x.abs() < 0.5 {
        phi_series(x, 1)
    } else {
        x.exp_m1() / x
    }
}

pub fn phi2(x: f64) -> f64 {
    if x.abs() < 0.5 {
        phi_series(x, 2)
    } else {
        (x.exp() * (x - 1.0) + 1.0) / (x * x)
    }
}

pub fn phi3(x: f64) -> f64 {
    if x.abs() < 0.5 {
        phi_series(x, 3)
    } else {
        (x.exp() * (x * x - 2.0 * x + 2.0) - 2.0) / (x * x * x)
    }
}

/// `Σ_{j≥0} x^j / (j! (j + k))`, convergent everywhere.
fn phi_series(x: f64, k: u32) -> f64 {
    let mut term = 1.0; // x^j / j!
    let mut sum = 1.0 / k as f64;
    for j in 1..40 {
        term *= x / j as f64;
        let contrib = term / (j + k) as f64;
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Ordinary linear regression `y = a + b x`, returning `(a, b, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}
