//! Sampled environment trajectories and their path functionals.
//!
//! A path is exact in distribution at its grid times: jump epochs come from
//! the total-rate Poisson process and are placed on the grid exactly,
//! Gaussian increments fill the segments in between, and the grid is refined
//! so no gap exceeds `dt_max`. Between grid points the trajectory is treated
//! as linear; at a jump epoch the grid stores the post-jump value together
//! with the jump size, so left limits are always recoverable. Every
//! functional below (extrema, exponential functionals, time reversal)
//! honours that convention — off-by-one-jump mistakes are the main hazard
//! when modifying this module.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::env::EnvironmentSpec;
use crate::error::{CbleError, Result};
use crate::numeric::phi1;
use crate::rng::{rng_from, Rng};

/// One sampled trajectory of the environment on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPath {
    times: Vec<f64>,
    /// Value at each grid time; post-jump at jump epochs.
    values: Vec<f64>,
    /// Jump size at each grid time (0.0 at non-jump points).
    jump_sizes: Vec<f64>,
    seed: u64,
    spec_id: u64,
}

impl EnvironmentPath {
    /// Builds a path from explicit grid data. Used for deterministic
    /// fixtures; sampled paths come from [`sample_env_path`].
    pub fn from_points(times: Vec<f64>, values: Vec<f64>, jump_sizes: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() || times.len() != jump_sizes.len() {
            return Err(CbleError::InvalidParameter(
                "path needs matching times/values/jumps with >= 2 points".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(CbleError::InvalidParameter("path grid must start at 0".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(CbleError::InvalidParameter(
                "path grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values, jump_sizes, seed: 0, spec_id: 0 })
    }

    /// Deterministic drift path `ξ_t = x0 + a·t` on a uniform grid.
    pub fn deterministic_drift(a: f64, x0: f64, horizon: f64, points: usize) -> Self {
        let n = points.max(2);
        let times: Vec<f64> = (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect();
        let values = times.iter().map(|&t| x0 + a * t).collect();
        Self::from_points(times, values, vec![0.0; n]).expect("valid deterministic path")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jump_sizes(&self) -> &[f64] {
        &self.jump_sizes
    }

    pub fn jump_flags(&self) -> Vec<bool> {
        self.jump_sizes.iter().map(|&j| j != 0.0).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec_id(&self) -> u64 {
        self.spec_id
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Left limit at grid index `k`; equals the value except at jump epochs.
    /// Index 0 uses the convention `ξ_{0-} = ξ_0`.
    pub fn left_limit(&self, k: usize) -> f64 {
        if k == 0 {
            self.values[0]
        } else {
            self.values[k] - self.jump_sizes[k]
        }
    }

    /// Value of the piecewise-linear interpolation at an arbitrary time;
    /// at grid points this is the stored (post-jump) value.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        assert!(
            t >= self.times[0] - 1e-12 && t <= self.horizon() + 1e-12,
            "time {t} outside path horizon"
        );
        let idx = self.times.partition_point(|&g| g <= t);
        if idx == 0 {
            return self.values[0];
        }
        if idx == n {
            return self.values[n - 1];
        }
        let k = idx - 1;
        if self.times[k] == t {
            return self.values[k];
        }
        let (a, b) = (self.times[k], self.times[k + 1]);
        let ya = self.values[k];
        let yb = self.left_limit(k + 1);
        ya + (yb - ya) * (t - a) / (b - a)
    }

    /// Maximum and minimum over the grid, including left limits at jump
    /// epochs (the Brownian excursion between grid points is ignored; the
    /// bias is controlled by `dt_max`).
    pub fn running_extrema(&self) -> (f64, f64) {
        let mut sup = f64::NEG_INFINITY;
        let mut inf = f64::INFINITY;
        for k in 0..self.times.len() {
            let v = self.values[k];
            let l = self.left_limit(k);
            sup = sup.max(v).max(l);
            inf = inf.min(v).min(l);
        }
        (sup, inf)
    }

    /// `∫_s^t e^{c·ξ_u} du` with the path interpolated linearly between
    /// grid points; each segment integral is closed-form, so the quadrature
    /// is exact for piecewise-linear paths. The usual convention for the
    /// exponential functional `I_{s,t}(βξ) = ∫ e^{-βξ_u} du` corresponds to
    /// `c = -β`.
    pub fn exponential_functional(&self, c: f64, s: f64, t: f64) -> f64 {
        assert!(0.0 <= s && s <= t && t <= self.horizon() + 1e-12, "need 0 <= s <= t <= T");
        if s == t {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 0..self.times.len() - 1 {
            let (a, b) = (self.times[k], self.times[k + 1]);
            if b <= s {
                continue;
            }
            if a >= t {
                break;
            }
            let u = a.max(s);
            let v = b.min(t);
            if v <= u {
                continue;
            }
            let ya = self.values[k];
            let slope = (self.left_limit(k + 1) - ya) / (b - a);
            let start = ya + slope * (u - a);
            let d = v - u;
            total += (c * start).exp() * d * phi1(c * slope * d);
        }
        total
    }

    /// Suffix exponential functionals: entry `k` is `∫_{t_k}^{T} e^{c·ξ_u} du`
    /// under the same piecewise-linear convention as
    /// [`exponential_functional`](Self::exponential_functional).
    pub fn exp_integral_suffixes(&self, c: f64) -> Vec<f64> {
        let n = self.times.len();
        let mut out = vec![0.0; n];
        for k in (0..n - 1).rev() {
            let (a, b) = (self.times[k], self.times[k + 1]);
            let ya = self.values[k];
            let d = b - a;
            let slope = (self.left_limit(k + 1) - ya) / d;
            out[k] = out[k + 1] + (c * ya).exp() * d * phi1(c * slope * d);
        }
        out
    }

    /// Time-reversed, recentred path `s ↦ ξ_{(T-s)-} − ξ_T` on the
    /// reflected grid (with `ξ_{0-} = ξ_0`). Has the law of `-ξ` and is an
    /// involution up to grid reflection.
    pub fn dual(&self) -> EnvironmentPath {
        let n = self.times.len();
        let horizon = self.horizon();
        let end = self.values[n - 1];
        let mut times = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut jump_sizes = Vec::with_capacity(n);
        for j in 0..n {
            let i = n - 1 - j;
            times.push(horizon - self.times[i]);
            values.push(self.left_limit(i) - end);
            jump_sizes.push(-self.jump_sizes[i]);
        }
        // Reflection maps the far endpoint onto time 0, where the left-limit
        // convention removes any jump mark.
        jump_sizes[0] = 0.0;
        times[0] = 0.0;
        *times.last_mut().unwrap() = horizon;
        EnvironmentPath { times, values, jump_sizes, seed: self.seed, spec_id: self.spec_id }
    }

    /// Negative-time extension: treats `self` as an independent copy `ξ'`
    /// and returns the trajectory of `Ξ_s = -ξ'_{(-s)-}` for `s ∈ [-T, 0]`,
    /// shifted onto `[0, T]` (grid time `τ` represents real time `τ - T`).
    /// When `ξ'` drifts to `-∞` the returned path drifts upward toward its
    /// right endpoint `Ξ_0 = -ξ'_0`.
    pub fn to_negative_time(&self) -> EnvironmentPath {
        let n = self.times.len();
        let horizon = self.horizon();
        let mut times = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut jump_sizes = Vec::with_capacity(n);
        for j in 0..n {
            let i = n - 1 - j;
            times.push(horizon - self.times[i]);
            values.push(-self.left_limit(i));
            jump_sizes.push(self.jump_sizes[i]);
        }
        jump_sizes[0] = 0.0;
        times[0] = 0.0;
        *times.last_mut().unwrap() = horizon;
        EnvironmentPath { times, values, jump_sizes, seed: self.seed, spec_id: self.spec_id }
    }

    /// CSV export: `time,value,jump_flag`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,value,jump_flag")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{}",
                self.times[k],
                self.values[k],
                u8::from(self.jump_sizes[k] != 0.0)
            )?;
        }
        Ok(())
    }
}

/// Samples a trajectory on `[0, T]`.
///
/// Jump times, component choices and jump sizes are drawn first, then the
/// Gaussian increments in grid order; the draw order makes the jump skeleton
/// a function of `seed` alone. A grid of uniform spacing `T/ceil(T/dt_max)`
/// is merged with the jump epochs.
pub fn sample_env_path(
    spec: &EnvironmentSpec,
    horizon: f64,
    dt_max: f64,
    x0: f64,
    seed: u64,
) -> EnvironmentPath {
    assert!(horizon > 0.0 && dt_max > 0.0, "need positive horizon and dt_max");
    let mut rng = rng_from(seed);

    let jumps = draw_jumps(spec, horizon, &mut rng);

    let m = (horizon / dt_max).ceil() as usize;
    let h = horizon / m as f64;
    let mut times = Vec::with_capacity(m + 1 + jumps.len());
    let mut jump_sizes = Vec::with_capacity(m + 1 + jumps.len());
    let mut ji = 0;
    for k in 0..=m {
        let t = if k == m { horizon } else { k as f64 * h };
        while ji < jumps.len() && jumps[ji].0 < t {
            times.push(jumps[ji].0);
            jump_sizes.push(jumps[ji].1);
            ji += 1;
        }
        if ji < jumps.len() && jumps[ji].0 == t {
            times.push(t);
            jump_sizes.push(jumps[ji].1);
            ji += 1;
        } else {
            times.push(t);
            jump_sizes.push(0.0);
        }
    }

    let sigma = spec.gaussian_var().sqrt();
    let mut values = Vec::with_capacity(times.len());
    values.push(x0 + jump_sizes[0]);
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let mut inc = spec.drift() * dt;
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            inc += sigma * dt.sqrt() * z;
        }
        values.push(values[k - 1] + inc + jump_sizes[k]);
    }

    EnvironmentPath { times, values, jump_sizes, seed, spec_id: spec.fingerprint() }
}

fn draw_jumps(spec: &EnvironmentSpec, horizon: f64, rng: &mut Rng) -> Vec<(f64, f64)> {
    let total_rate = spec.total_jump_rate();
    if total_rate == 0.0 {
        return Vec::new();
    }
    let inter = Exp::new(total_rate).unwrap();
    let mut epochs = Vec::new();
    let mut t = 0.0;
    loop {
        t += inter.sample(rng);
        if t >= horizon {
            break;
        }
        epochs.push(t);
    }
    let rates: Vec<f64> = spec.jumps().iter().map(|c| c.rate).collect();
    epochs
        .into_iter()
        .map(|epoch| {
            let which = pick_component(&rates, total_rate, rng);
            let size = spec.jumps()[which].law.sample(rng);
            (epoch, size)
        })
        .collect()
}

fn pick_component(rates: &[f64], total: f64, rng: &mut Rng) -> usize {
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &r) in rates.iter().enumerate() {
        acc += r;
        if u < acc {
            return i;
        }
    }
    rates.len() - 1
}

/// Values of the environment on the exact uniform skeleton
/// `0, δ, 2δ, …, n·δ` starting from `x0`. Each increment is the exact
/// Gaussian part plus a compound-Poisson sum over the step, so the skeleton
/// is a random walk with the true time-`δ` marginals.
pub fn sample_skeleton(
    spec: &EnvironmentSpec,
    steps: usize,
    delta: f64,
    x0: f64,
    seed: u64,
) -> Vec<f64> {
    assert!(delta > 0.0);
    let mut rng = rng_from(seed);
    let sigma = spec.gaussian_var().sqrt();
    let total_rate = spec.total_jump_rate();
    let rates: Vec<f64> = spec.jumps().iter().map(|c| c.rate).collect();
    let poisson = (total_rate > 0.0).then(|| Poisson::new(total_rate * delta).unwrap());

    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..steps {
        let mut inc = spec.drift() * delta;
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            inc += sigma * delta.sqrt() * z;
        }
        if let Some(p) = &poisson {
            let k = p.sample(&mut rng) as usize;
            for _ in 0..k {
                let which = pick_component(&rates, total_rate, &mut rng);
                inc += spec.jumps()[which].law.sample(&mut rng);
            }
        }
        x += inc;
        out.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{JumpComponent, JumpLaw};
    use crate::numeric::mean_and_se;
    use approx::assert_relative_eq;

    #[test]
    fn deterministic_drift_path_is_linear() {
        let spec = EnvironmentSpec::brownian(-0.7, 0.0);
        let path = sample_env_path(&spec, 1.0, 0.1, 0.0, 5);
        for (t, v) in path.times().iter().zip(path.values()) {
            assert_relative_eq!(*v, -0.7 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn replaying_a_seed_reproduces_the_path() {
        let spec = EnvironmentSpec::new(
            0.2,
            1.3,
            vec![JumpComponent { rate: 2.0, law: JumpLaw::uniform(-1.0, 1.0) }],
        )
        .unwrap();
        let a = sample_env_path(&spec, 2.0, 0.01, 0.5, 99);
        let b = sample_env_path(&spec, 2.0, 0.01, 0.5, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn grid_respects_dt_max_and_contains_jumps() {
        let spec = EnvironmentSpec::new(
            0.0,
            1.0,
            vec![JumpComponent { rate: 5.0, law: JumpLaw::PointMass { z: 1.0 } }],
        )
        .unwrap();
        let path = sample_env_path(&spec, 3.0, 0.05, 0.0, 7);
        assert_eq!(path.times()[0], 0.0);
        assert_relative_eq!(path.horizon(), 3.0);
        for w in path.times().windows(2) {
            assert!(w[1] - w[0] <= 0.05 + 1e-12);
        }
        assert!(path.jump_flags().iter().any(|&f| f));
    }

    #[test]
    fn empirical_variance_of_brownian_endpoint() {
        let spec = EnvironmentSpec::brownian(0.0, 1.0);
        let n = 100_000;
        let finals: Vec<f64> = (0..n)
            .map(|i| {
                let p = sample_env_path(&spec, 1.0, 0.25, 0.0, crate::rng::child_seed(3, i));
                *p.values().last().unwrap()
            })
            .collect();
        let (mean, _) = mean_and_se(&finals);
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0).abs() < 0.02, "sample variance {var}");
    }

    #[test]
    fn running_extrema_on_fixtures() {
        let down = EnvironmentPath::deterministic_drift(-1.0, 0.0, 1.0, 11);
        assert_eq!(down.running_extrema(), (0.0, -1.0));
        let flat = EnvironmentPath::deterministic_drift(0.0, 0.0, 1.0, 3);
        assert_eq!(flat.running_extrema(), (0.0, 0.0));
        let jumpy = EnvironmentPath::from_points(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 2.0, 2.0],
            vec![0.0, 2.0, 0.0],
        )
        .unwrap();
        assert_eq!(jumpy.running_extrema(), (2.0, 0.0));
    }

    #[test]
    fn exponential_functional_closed_forms() {
        let flat = EnvironmentPath::deterministic_drift(0.0, 0.0, 2.0, 9);
        assert_relative_eq!(flat.exponential_functional(3.7, 0.0, 2.0), 2.0, max_relative = 1e-13);

        // ξ_u = -u, c = -1: ∫_0^1 e^{u} du = e - 1.
        let ramp = EnvironmentPath::deterministic_drift(-1.0, 0.0, 1.0, 101);
        assert_relative_eq!(
            ramp.exponential_functional(-1.0, 0.0, 1.0),
            std::f64::consts::E - 1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn exponential_functional_is_refinement_stable_on_linear_paths() {
        let coarse = EnvironmentPath::deterministic_drift(-0.8, 0.3, 2.0, 21);
        let fine = EnvironmentPath::deterministic_drift(-0.8, 0.3, 2.0, 41);
        let a = coarse.exponential_functional(1.3, 0.0, 2.0);
        let b = fine.exponential_functional(1.3, 0.0, 2.0);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn exponential_functional_additivity() {
        let spec = EnvironmentSpec::new(
            -0.5,
            1.0,
            vec![JumpComponent { rate: 1.0, law: JumpLaw::PointMass { z: 0.5 } }],
        )
        .unwrap();
        let path = sample_env_path(&spec, 2.0, 0.01, 0.0, 17);
        let mid = path.times()[path.len() / 2];
        let whole = path.exponential_functional(-0.5, 0.0, 2.0);
        let split = path.exponential_functional(-0.5, 0.0, mid)
            + path.exponential_functional(-0.5, mid, 2.0);
        assert_relative_eq!(whole, split, max_relative = 1e-12);
    }

    #[test]
    fn dual_of_drift_path() {
        // Drift +1 on [0,1]: dual is s ↦ -s.
        let path = EnvironmentPath::deterministic_drift(1.0, 0.0, 1.0, 11);
        let dual = path.dual();
        for (s, v) in dual.times().iter().zip(dual.values()) {
            assert_relative_eq!(*v, -s, epsilon = 1e-12);
        }
    }

    #[test]
    fn dual_handles_jump_epochs_with_left_limits() {
        let path = EnvironmentPath::from_points(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 2.0, 2.0],
            vec![0.0, 2.0, 0.0],
        )
        .unwrap();
        let dual = path.dual();
        assert_eq!(dual.values(), &[0.0, -2.0, -2.0]);
        assert_eq!(dual.jump_sizes(), &[0.0, -2.0, 0.0]);
    }

    #[test]
    fn dual_is_an_involution_on_grid_values() {
        let spec = EnvironmentSpec::new(
            -0.3,
            0.7,
            vec![JumpComponent { rate: 3.0, law: JumpLaw::uniform(-0.5, 0.8) }],
        )
        .unwrap();
        let path = sample_env_path(&spec, 1.5, 0.02, 0.0, 23);
        let back = path.dual().dual();
        assert_eq!(path.times().len(), back.times().len());
        for k in 0..path.len() {
            assert_relative_eq!(path.times()[k], back.times()[k], epsilon = 1e-12);
            assert_relative_eq!(path.values()[k], back.values()[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn negative_time_extension_negates_and_reverses() {
        let path = EnvironmentPath::from_points(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 2.0, 2.0],
            vec![0.0, 2.0, 0.0],
        )
        .unwrap();
        let xi = path.to_negative_time();
        assert_eq!(xi.values(), &[-2.0, 0.0, 0.0]);
        assert_eq!(xi.jump_sizes(), &[0.0, 2.0, 0.0]);
        // Right endpoint is Ξ_0 = -ξ'_0 = 0.
        assert_eq!(*xi.values().last().unwrap(), 0.0);
    }

    #[test]
    fn skeleton_matches_path_marginal_mean() {
        let spec = EnvironmentSpec::new(
            -1.0,
            1.0,
            vec![JumpComponent { rate: 2.0, law: JumpLaw::PointMass { z: 0.25 } }],
        )
        .unwrap();
        let n = 20_000;
        let finals: Vec<f64> = (0..n)
            .map(|i| *sample_skeleton(&spec, 10, 0.1, 0.0, crate::rng::child_seed(9, i)).last().unwrap())
            .collect();
        let (mean, se) = mean_and_se(&finals);
        let expected = (-1.0 + 2.0 * 0.25) * 1.0;
        assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected} (se {se})");
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let path = EnvironmentPath::deterministic_drift(1.0, 0.0, 1.0, 3);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,value,jump_flag\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
