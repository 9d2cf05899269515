//! Forward-in-time simulation of the population mass process.
//!
//! One step per grid interval, split into
//!
//! 1. the environment factor, applied multiplicatively and exactly:
//!    `mass ×= e^{Δξ}` (the factors telescope, so the quenched mean
//!    `E[Z_t e^{-ξ_t} | ξ] = z₀` is preserved exactly when the linear part
//!    of the mechanism vanishes);
//! 2. an Euler demographic step: drift `-ψ'(0+)·Z·Δ`, Gaussian noise with
//!    variance `2γ²ZΔ`, branching jumps thinned at rate `Z·|μ|` with the
//!    compensator `-Z·Δ·∫zμ(dz)`, truncating negative overshoot to zero.
//!
//! Stable-tagged mechanisms with `β < 1` have an infinite-activity
//! branching measure; jumps below a threshold `ε` are folded into the
//! diffusion coefficient (their variance is matched) and only the
//! finite-rate remainder is simulated. The threshold is refinable through
//! [`SimOptions`].

use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::function::gamma::gamma;

use crate::branching::{Atom, BranchingMechanism, StableTag};
use crate::error::{CbleError, Result};
use crate::path::EnvironmentPath;
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Absorption threshold as a fraction of the initial mass.
    pub eps_abs_factor: f64,
    /// Small-jump cutoff for infinite-activity stable mechanisms.
    pub ar_epsilon: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { eps_abs_factor: 1e-12, ar_epsilon: 0.01 }
    }
}

/// One forward trajectory of the population mass.
#[derive(Debug, Clone)]
pub struct PopulationTrajectory {
    times: Vec<f64>,
    mass: Vec<f64>,
    absorbed_at: Option<f64>,
    env_path_id: u64,
    seed: u64,
}

impl PopulationTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn absorbed_at(&self) -> Option<f64> {
        self.absorbed_at
    }

    pub fn env_path_id(&self) -> u64 {
        self.env_path_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn final_mass(&self) -> f64 {
        *self.mass.last().unwrap()
    }

    /// CSV export `time,mass` for debugging.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,mass")?;
        for (t, m) in self.times.iter().zip(&self.mass) {
            writeln!(w, "{t},{m}")?;
        }
        Ok(())
    }
}

/// True iff the mass dropped below `eps_abs` at some grid time `<= t`.
pub fn extinct_by(traj: &PopulationTrajectory, t: f64, eps_abs: f64) -> bool {
    traj.times
        .iter()
        .zip(&traj.mass)
        .take_while(|(&u, _)| u <= t + 1e-12)
        .any(|(_, &m)| m < eps_abs)
}

/// Immigration: constant inflow `b` plus finite-activity jumps `ν`.
#[derive(Debug, Clone)]
pub struct ImmigrationSpec {
    b: f64,
    nu: Vec<Atom>,
}

impl ImmigrationSpec {
    pub fn new(b: f64, nu: Vec<Atom>) -> Result<Self> {
        if !(b >= 0.0) || !b.is_finite() {
            return Err(CbleError::InvalidParameter("immigration drift must be >= 0".into()));
        }
        for a in &nu {
            if !(a.x > 0.0 && a.mass > 0.0) {
                return Err(CbleError::InvalidParameter(
                    "immigration atoms need x > 0 and mass > 0".into(),
                ));
            }
        }
        Ok(Self { b, nu })
    }

    /// Derives `(b, ν)` so the immigration mechanism equals `ψ₀'`:
    /// `b = 2γ²` and `ν(dx) = x μ(dx)`. For a stable tag this only has a
    /// finite-activity representation at `β = 1` (pure drift `2C`).
    pub fn from_psi0_prime(mech: &BranchingMechanism) -> Result<Self> {
        if let Some(StableTag { c, beta }) = mech.stable_tag() {
            if (beta - 1.0).abs() < 1e-12 {
                return Self::new(2.0 * c, Vec::new());
            }
            return Err(CbleError::InvalidParameter(
                "psi0'-immigration of a stable mechanism with beta < 1 has \
                 infinite activity and no finite-activity representation"
                    .into(),
            ));
        }
        let nu = mech
            .atoms()
            .iter()
            .map(|a| Atom { x: a.x, mass: a.x * a.mass })
            .collect();
        Self::new(2.0 * mech.gamma_sq(), nu)
    }

    pub fn drift(&self) -> f64 {
        self.b
    }

    pub fn jump_atoms(&self) -> &[Atom] {
        &self.nu
    }
}

/// Demographic coefficients in simulable (finite-activity) form.
struct DemographicModel {
    psi_prime_0: f64,
    gamma_sq: f64,
    jump_rate: f64,
    jump_mean: f64,
    sampler: JumpSampler,
}

enum JumpSampler {
    None,
    Atoms { cum: Vec<f64>, sizes: Vec<f64>, total: f64 },
    /// Pareto-type remainder of a stable measure above `eps`:
    /// density ∝ x^{-2-β} on (eps, ∞).
    StableTail { eps: f64, inv_exp: f64 },
}

impl JumpSampler {
    fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            JumpSampler::None => 0.0,
            JumpSampler::Atoms { cum, sizes, total } => {
                let u: f64 = rng.gen::<f64>() * total;
                let i = cum.partition_point(|&c| c < u).min(sizes.len() - 1);
                sizes[i]
            }
            JumpSampler::StableTail { eps, inv_exp } => {
                let u: f64 = rng.gen();
                eps * u.powf(-*inv_exp)
            }
        }
    }
}

use rand::Rng as _;

impl DemographicModel {
    fn from_mechanism(mech: &BranchingMechanism, opts: &SimOptions) -> Self {
        if let Some(StableTag { c, beta }) = mech.stable_tag() {
            if (beta - 1.0).abs() < 1e-12 {
                return Self {
                    psi_prime_0: mech.psi_prime_at_zero(),
                    gamma_sq: c,
                    jump_rate: 0.0,
                    jump_mean: 0.0,
                    sampler: JumpSampler::None,
                };
            }
            // μ(dx) = K x^{-2-β} dx reproduces ψ₀ = Cλ^{1+β}.
            let k = c * beta * (1.0 + beta) / gamma(1.0 - beta);
            let eps = opts.ar_epsilon;
            // Variance of the sub-ε jumps moves into the diffusion term.
            let small_var = k * eps.powf(1.0 - beta) / (1.0 - beta);
            let rate = k * eps.powf(-1.0 - beta) / (1.0 + beta);
            let mean = k * eps.powf(-beta) / beta;
            return Self {
                psi_prime_0: mech.psi_prime_at_zero(),
                gamma_sq: 0.5 * small_var,
                jump_rate: rate,
                jump_mean: mean,
                sampler: JumpSampler::StableTail { eps, inv_exp: 1.0 / (1.0 + beta) },
            };
        }
        let atoms = mech.atoms();
        let (sampler, rate, mean) = if atoms.is_empty() {
            (JumpSampler::None, 0.0, 0.0)
        } else {
            let mut cum = Vec::with_capacity(atoms.len());
            let mut sizes = Vec::with_capacity(atoms.len());
            let mut acc = 0.0;
            let mut mean = 0.0;
            for a in atoms {
                acc += a.mass;
                cum.push(acc);
                sizes.push(a.x);
                mean += a.mass * a.x;
            }
            (JumpSampler::Atoms { cum, sizes, total: acc }, acc, mean)
        };
        Self {
            psi_prime_0: mech.psi_prime_at_zero(),
            gamma_sq: mech.gamma_sq(),
            jump_rate: rate,
            jump_mean: mean,
            sampler,
        }
    }

    /// Euler demographic step of length `dt` from mass `z >= 0`.
    fn step(&self, z: f64, dt: f64, rng: &mut Rng) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        let mut z_new = z - self.psi_prime_0 * z * dt;
        if self.gamma_sq > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            z_new += (2.0 * self.gamma_sq * z * dt).sqrt() * n;
        }
        if self.jump_rate > 0.0 {
            let lambda = z * self.jump_rate * dt;
            let count = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(rng) as usize } else { 0 };
            for _ in 0..count {
                z_new += self.sampler.sample(rng);
            }
            z_new -= z * dt * self.jump_mean;
        }
        z_new.max(0.0)
    }
}

struct StepSchedule<'a> {
    path: &'a EnvironmentPath,
    dt: f64,
}

impl<'a> StepSchedule<'a> {
    /// Visits sub-steps `(t_next, Δξ, Δt)` covering the whole path, each of
    /// length at most `dt`, with jump increments attached to the sub-step
    /// that lands on the jump epoch.
    fn for_each(&self, mut f: impl FnMut(f64, f64, f64) -> bool) {
        let times = self.path.times();
        let values = self.path.values();
        for k in 0..times.len() - 1 {
            let (a, b) = (times[k], times[k + 1]);
            let len = b - a;
            let m = (len / self.dt).ceil().max(1.0) as usize;
            let sub = len / m as f64;
            let ya = values[k];
            let slope = (self.path.left_limit(k + 1) - ya) / len;
            for j in 0..m {
                let t_next = if j + 1 == m { b } else { a + (j + 1) as f64 * sub };
                let mut dxi = slope * sub;
                if j + 1 == m {
                    dxi = slope * (b - (a + j as f64 * sub)) + self.path.jump_sizes()[k + 1];
                }
                if !f(t_next, dxi, sub) {
                    return;
                }
            }
        }
    }
}

/// Simulates the population along a frozen environment path, storing the
/// mass at every sub-step.
pub fn simulate_cble(
    mech: &BranchingMechanism,
    env_path: &EnvironmentPath,
    z0: f64,
    dt: f64,
    seed: u64,
) -> PopulationTrajectory {
    simulate_cble_opts(mech, env_path, None, z0, dt, seed, &SimOptions::default())
}

/// Variant with immigration: adds the deterministic inflow `b·Δ` and
/// Poisson jump inflow, independent of the current mass.
pub fn simulate_cble_immigration(
    mech: &BranchingMechanism,
    imm: &ImmigrationSpec,
    env_path: &EnvironmentPath,
    x0: f64,
    dt: f64,
    seed: u64,
) -> PopulationTrajectory {
    simulate_cble_opts(mech, env_path, Some(imm), x0, dt, seed, &SimOptions::default())
}

pub fn simulate_cble_opts(
    mech: &BranchingMechanism,
    env_path: &EnvironmentPath,
    imm: Option<&ImmigrationSpec>,
    z0: f64,
    dt: f64,
    seed: u64,
    opts: &SimOptions,
) -> PopulationTrajectory {
    assert!(z0 >= 0.0 && dt > 0.0, "need z0 >= 0 and dt > 0");
    let model = DemographicModel::from_mechanism(mech, opts);
    let mut rng = rng_from(seed);
    let eps_abs = opts.eps_abs_factor * z0.max(f64::MIN_POSITIVE);
    let imm_total: f64 = imm.map_or(0.0, |i| i.nu.iter().map(|a| a.mass).sum());

    let mut times = vec![env_path.times()[0]];
    let mut mass = vec![z0];
    let mut absorbed_at = None;
    let mut z = z0;

    StepSchedule { path: env_path, dt }.for_each(|t_next, dxi, sub| {
        if absorbed_at.is_none() {
            z *= dxi.exp();
            z = model.step(z, sub, &mut rng);
            if let Some(i) = imm {
                z += i.b * sub;
                if imm_total > 0.0 {
                    let count = Poisson::new(imm_total * sub).unwrap().sample(&mut rng) as usize;
                    for _ in 0..count {
                        let u: f64 = rng.gen::<f64>() * imm_total;
                        let mut acc = 0.0;
                        let mut size = i.nu.last().map_or(0.0, |a| a.x);
                        for a in &i.nu {
                            acc += a.mass;
                            if u < acc {
                                size = a.x;
                                break;
                            }
                        }
                        z += size;
                    }
                }
            }
            // Absorption only applies without immigration: a trajectory with
            // inflow may revisit zero and regrow.
            if imm.is_none() && z < eps_abs {
                z = 0.0;
                absorbed_at = Some(t_next);
            }
        }
        times.push(t_next);
        mass.push(z);
        true
    });

    PopulationTrajectory {
        times,
        mass,
        absorbed_at,
        env_path_id: env_path.spec_id(),
        seed,
    }
}

/// Streaming variant returning only the terminal mass and the absorption
/// time; replica estimators use this to avoid storing full trajectories.
pub fn simulate_cble_final(
    mech: &BranchingMechanism,
    env_path: &EnvironmentPath,
    z0: f64,
    dt: f64,
    seed: u64,
    opts: &SimOptions,
) -> (f64, Option<f64>) {
    let model = DemographicModel::from_mechanism(mech, opts);
    let mut rng = rng_from(seed);
    let eps_abs = opts.eps_abs_factor * z0.max(f64::MIN_POSITIVE);
    let mut z = z0;
    let mut absorbed_at = None;
    StepSchedule { path: env_path, dt }.for_each(|t_next, dxi, sub| {
        z *= dxi.exp();
        z = model.step(z, sub, &mut rng);
        if z < eps_abs {
            z = 0.0;
            absorbed_at = Some(t_next);
            return false;
        }
        true
    });
    (z, absorbed_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentSpec;
    use crate::numeric::mean_and_se;
    use crate::path::sample_env_path;
    use crate::rng::child_seed;
    use approx::assert_relative_eq;

    fn degenerate_mech() -> BranchingMechanism {
        BranchingMechanism::composite(0.0, 0.0, vec![]).unwrap()
    }

    #[test]
    fn noiseless_mechanism_keeps_mass_constant() {
        let path = EnvironmentPath::deterministic_drift(0.0, 0.0, 1.0, 11);
        let traj = simulate_cble(&degenerate_mech(), &path, 3.0, 0.01, 1);
        for &m in traj.mass() {
            assert_relative_eq!(m, 3.0, max_relative = 1e-12);
        }
        assert!(traj.absorbed_at().is_none());
    }

    #[test]
    fn multiplicative_environment_step_is_exact() {
        let path = EnvironmentPath::deterministic_drift(0.7, 0.0, 2.0, 41);
        let traj = simulate_cble(&degenerate_mech(), &path, 1.5, 0.01, 1);
        for (t, m) in traj.times().iter().zip(traj.mass()) {
            assert_relative_eq!(*m, 1.5 * (0.7 * t).exp(), max_relative = 1e-10);
        }
    }

    #[test]
    fn absorption_is_absorbing() {
        let mech = BranchingMechanism::stable(1.0, 1.0).unwrap();
        let path = EnvironmentPath::deterministic_drift(-1.0, 0.0, 6.0, 61);
        for seed in 0..40 {
            let traj = simulate_cble(&mech, &path, 0.5, 0.01, seed);
            if let Some(at) = traj.absorbed_at() {
                for (t, m) in traj.times().iter().zip(traj.mass()) {
                    if *t >= at {
                        assert_eq!(*m, 0.0);
                    }
                }
                assert!(extinct_by(&traj, 6.0, 1e-14));
            }
        }
    }

    #[test]
    fn extinct_by_scans_prefix_only() {
        let mech = BranchingMechanism::stable(1.0, 1.0).unwrap();
        let path = EnvironmentPath::deterministic_drift(-2.0, 0.0, 8.0, 81);
        let traj = simulate_cble(&mech, &path, 1.0, 0.01, 9);
        if let Some(at) = traj.absorbed_at() {
            assert!(!extinct_by(&traj, at - 0.2, 1e-14));
            assert!(extinct_by(&traj, at + 0.2, 1e-14));
        }
    }

    #[test]
    fn quenched_martingale_mean_on_frozen_path() {
        let mech = BranchingMechanism::stable(0.5, 1.0).unwrap();
        let spec = EnvironmentSpec::brownian(-1.0, 1.0);
        let path = sample_env_path(&spec, 1.0, 0.01, 0.0, 77);
        let xi_t = *path.values().last().unwrap();
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let (m, _) = simulate_cble_final(
                    &mech,
                    &path,
                    1.0,
                    0.005,
                    child_seed(1234, i),
                    &SimOptions::default(),
                );
                m * (-xi_t).exp()
            })
            .collect();
        let (mean, se) = mean_and_se(&vals);
        assert!(
            (mean - 1.0).abs() < 4.0 * se + 5e-3,
            "quenched mean {mean} (se {se}) should be 1"
        );
    }

    #[test]
    fn immigration_drift_only_grows_linearly() {
        let imm = ImmigrationSpec::new(1.0, vec![]).unwrap();
        let path = EnvironmentPath::deterministic_drift(0.0, 0.0, 3.0, 31);
        let traj = simulate_cble_immigration(&degenerate_mech(), &imm, &path, 0.0, 0.01, 3);
        for (t, m) in traj.times().iter().zip(traj.mass()) {
            assert_relative_eq!(*m, t, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn immigration_jump_inflow_has_poisson_mean() {
        let imm = ImmigrationSpec::new(0.0, vec![Atom { x: 1.0, mass: 1.0 }]).unwrap();
        let path = EnvironmentPath::deterministic_drift(0.0, 0.0, 1.0, 11);
        let n = 10_000;
        let finals: Vec<f64> = (0..n)
            .map(|i| {
                simulate_cble_immigration(
                    &degenerate_mech(),
                    &imm,
                    &path,
                    0.0,
                    0.01,
                    child_seed(5, i),
                )
                .final_mass()
            })
            .collect();
        let (mean, se) = mean_and_se(&finals);
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn psi0_prime_immigration_derivation() {
        let mech = BranchingMechanism::composite(
            0.0,
            0.7,
            vec![Atom { x: 2.0, mass: 0.3 }],
        )
        .unwrap();
        let imm = ImmigrationSpec::from_psi0_prime(&mech).unwrap();
        assert_relative_eq!(imm.drift(), 1.4, max_relative = 1e-14);
        assert_eq!(imm.jump_atoms().len(), 1);
        assert_relative_eq!(imm.jump_atoms()[0].mass, 0.6, max_relative = 1e-14);

        let feller = BranchingMechanism::stable(0.5, 1.0).unwrap();
        let imm = ImmigrationSpec::from_psi0_prime(&feller).unwrap();
        assert_relative_eq!(imm.drift(), 1.0, max_relative = 1e-14);

        let stable = BranchingMechanism::stable(1.0, 0.5).unwrap();
        assert!(ImmigrationSpec::from_psi0_prime(&stable).is_err());
    }

    #[test]
    fn branching_property_on_frozen_path() {
        // Mass-2 trajectories match sums of two independent mass-1
        // trajectories in mean and variance, conditionally on the path.
        let mech = BranchingMechanism::stable(0.4, 1.0).unwrap();
        let spec = EnvironmentSpec::brownian(-0.5, 0.5);
        let path = sample_env_path(&spec, 1.0, 0.01, 0.0, 31);
        let n = 8_000;
        let opts = SimOptions::default();
        let doubled: Vec<f64> = (0..n)
            .map(|i| simulate_cble_final(&mech, &path, 2.0, 0.005, child_seed(70, i), &opts).0)
            .collect();
        let summed: Vec<f64> = (0..n)
            .map(|i| {
                simulate_cble_final(&mech, &path, 1.0, 0.005, child_seed(71, 2 * i), &opts).0
                    + simulate_cble_final(&mech, &path, 1.0, 0.005, child_seed(71, 2 * i + 1), &opts).0
            })
            .collect();
        let (m2, se2) = mean_and_se(&doubled);
        let (ms, ses) = mean_and_se(&summed);
        let joint = (se2 * se2 + ses * ses).sqrt();
        assert!((m2 - ms).abs() < 4.0 * joint, "means {m2} vs {ms} (joint se {joint})");
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
        let (v2, vs) = (var(&doubled, m2), var(&summed, ms));
        // Variance of the sample variance, normal approximation.
        let var_se = ((2.0 / (n as f64 - 1.0)).sqrt() * v2).max((2.0 / (n as f64 - 1.0)).sqrt() * vs);
        assert!((v2 - vs).abs() < 5.0 * var_se, "variances {v2} vs {vs}");
    }
}
