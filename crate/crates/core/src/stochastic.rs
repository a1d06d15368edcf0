//! Trajectory-level simulation: non-homogeneous Poisson jump points by
//! thinning, per-jump unitaries or random-time Hamiltonian evolution, and
//! Monte-Carlo ensembles that reduce deterministically in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{accumulate_cost, fidelity, Cost, DensityMatrix, Generator, GeneratorKind, Phi, StepPolicy};
use crate::error::{Error, Result};
use crate::linalg::{c, eig_hermitian, outer, CMatrix, CVector, C64, I};
use crate::paths::{GapModel, OperatorPath};

/// Grid on which the thinning envelope is computed.
pub const ENVELOPE_POINTS: usize = 1000;
/// Grid used for the single refinement after an envelope violation.
pub const REFINED_ENVELOPE_POINTS: usize = 10_000;
pub const ENVELOPE_SAFETY: f64 = 1.01;
/// `|g₀τ|` beyond which sampled dephasing times are rejected.
pub const TAU_TRUNCATION: f64 = 200.0;

/// Jump points of one realisation of a Poisson process on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoissonRealization {
    pub jump_points: Vec<f64>,
}

impl PoissonRealization {
    pub fn len(&self) -> usize {
        self.jump_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_points.is_empty()
    }
}

/// Deterministic 64-bit mix of a master seed and a trajectory index.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(master ^ splitmix(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn envelope_on_grid<F: Fn(f64) -> f64>(rate: &F, points: usize) -> Result<f64> {
    let mut top = 0.0f64;
    for k in 0..=points {
        let s = k as f64 / points as f64;
        let v = rate(s);
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!("rate {v} at s = {s} is not finite and nonnegative")));
        }
        top = top.max(v);
    }
    Ok(top * ENVELOPE_SAFETY)
}

/// Thinning sampler for a bounded rate `λ(s)` on `[0, 1]`.
pub struct ThinningSampler<F> {
    rate: F,
    envelope: f64,
}

impl<F: Fn(f64) -> f64> ThinningSampler<F> {
    pub fn new(rate: F) -> Result<Self> {
        let envelope = envelope_on_grid(&rate, ENVELOPE_POINTS)?;
        Ok(ThinningSampler { rate, envelope })
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    fn attempt<R: Rng>(&self, envelope: f64, rng: &mut R) -> Result<PoissonRealization> {
        let mut points = Vec::new();
        if envelope <= 0.0 {
            return Ok(PoissonRealization { jump_points: points });
        }
        let gaps = Exp::new(envelope).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut s = 0.0;
        loop {
            s += gaps.sample(rng);
            if s > 1.0 {
                break;
            }
            let lam = (self.rate)(s);
            if lam > envelope {
                return Err(Error::EnvelopeViolation { s, rate: lam, envelope });
            }
            if rng.random::<f64>() * envelope < lam {
                points.push(s);
            }
        }
        Ok(PoissonRealization { jump_points: points })
    }

    /// Candidates at the homogeneous envelope rate, each kept with
    /// probability `λ(s)/envelope`. On an envelope violation the envelope is
    /// recomputed once on a finer grid.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<PoissonRealization> {
        match self.attempt(self.envelope, rng) {
            Err(Error::EnvelopeViolation { rate: seen, .. }) => {
                let refined = envelope_on_grid(&self.rate, REFINED_ENVELOPE_POINTS)?.max(seen * ENVELOPE_SAFETY);
                self.attempt(refined, rng)
            }
            other => other,
        }
    }
}

/// One Poisson realisation with rate `λ(s)` from `seed`.
pub fn sample_poisson<F: Fn(f64) -> f64>(rate: F, seed: u64) -> Result<PoissonRealization> {
    ThinningSampler::new(rate)?.sample(&mut rng_from_seed(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub final_state: CVector,
    pub jump_count: usize,
    /// Total `|τ|` of the dephasing steps; zero for unitary jumps.
    pub hamiltonian_time: f64,
    pub seed: u64,
    /// Largest `|‖ψ‖ − 1|` seen before renormalisation.
    pub norm_drift: f64,
}

fn check_unit(psi: &CVector) -> Result<()> {
    let n = psi.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("initial state has norm {n}")));
    }
    Ok(())
}

fn renormalise(psi: &mut CVector, drift: &mut f64) {
    let n = psi.norm();
    *drift = drift.max((n - 1.0).abs());
    *psi /= c(n);
}

/// Applies `U(s_k)` at each jump point in increasing order.
pub fn run_trajectory_unitary(
    path: &dyn OperatorPath,
    realization: &PoissonRealization,
    psi0: &CVector,
    seed: u64,
) -> Result<TrajectoryResult> {
    check_unit(psi0)?;
    let mut psi = psi0.clone();
    let mut drift = 0.0;
    for &s in &realization.jump_points {
        psi = path.value(s)? * psi;
        renormalise(&mut psi, &mut drift);
    }
    Ok(TrajectoryResult {
        final_state: psi,
        jump_count: realization.len(),
        hamiltonian_time: 0.0,
        seed,
        norm_drift: drift,
    })
}

/// Draws `τ` with characteristic function `φ` for gap `g0`. The Fejér density
/// `(g₀/2π)sinc²(g₀τ/2)` is sampled exactly by rejection from the envelope
/// `min(1, 1/x²)/π` in `x = g₀τ/2`, restricted to `|g₀τ| ≤ 200`.
pub fn sample_tau<R: Rng>(phi: &Phi, g0: f64, rng: &mut R) -> Result<f64> {
    if !(g0 > 0.0 && g0.is_finite()) {
        return Err(Error::NonPositiveGap { s: f64::NAN });
    }
    match phi {
        Phi::Fejer => {
            let x_max = TAU_TRUNCATION / 2.0;
            loop {
                // Half the envelope mass is uniform on [−1, 1], half is the
                // 1/x² tail on |x| > 1.
                let body = rng.random::<bool>();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let x = if body {
                    rng.random::<f64>()
                } else {
                    1.0 / (1.0 - rng.random::<f64>())
                };
                if x > x_max {
                    continue;
                }
                let target = if x == 0.0 { 1.0 } else { (x.sin() / x).powi(2) };
                let envelope = if x <= 1.0 { 1.0 } else { 1.0 / (x * x) };
                if rng.random::<f64>() * envelope <= target {
                    return Ok(sign * 2.0 * x / g0);
                }
            }
        }
        Phi::Table { .. } => Err(Error::Unsupported(
            "trajectory sampling needs a density for the tabulated characteristic function".into(),
        )),
    }
}

/// At each jump point draws `τ` and applies `e^{−iτH(s_k)}`.
pub fn run_trajectory_phase<R: Rng>(
    path: &dyn OperatorPath,
    gap_model: &GapModel,
    phi: &Phi,
    realization: &PoissonRealization,
    psi0: &CVector,
    seed: u64,
    rng: &mut R,
) -> Result<TrajectoryResult> {
    check_unit(psi0)?;
    let mut psi = psi0.clone();
    let mut drift = 0.0;
    let mut time = 0.0;
    for &s in &realization.jump_points {
        let g0 = gap_model.g0(s);
        if !(g0 > 0.0) {
            return Err(Error::NonPositiveGap { s });
        }
        let tau = sample_tau(phi, g0, rng)?;
        time += tau.abs();
        let dec = eig_hermitian(&path.value(s)?)?;
        psi = dec.apply_real(|w| C64::from_polar(1.0, -tau * w)) * psi;
        renormalise(&mut psi, &mut drift);
    }
    Ok(TrajectoryResult {
        final_state: psi,
        jump_count: realization.len(),
        hamiltonian_time: time,
        seed,
        norm_drift: drift,
    })
}

/// Integrates `dψ/ds = −iT(s)H(s)ψ` with the same RK4 step policy as the
/// density-matrix integrator.
pub fn run_trajectory_liouville(gen: &Generator, psi0: &CVector, policy: &StepPolicy, seed: u64) -> Result<TrajectoryResult> {
    check_unit(psi0)?;
    let path = match &gen.kind {
        GeneratorKind::Liouville { path } => path,
        _ => return Err(Error::Unsupported("run_trajectory_liouville needs a Liouville generator".into())),
    };
    policy.validate()?;
    let frame = |s: f64| -> Result<CMatrix> { Ok(path.value(s)? * (-I * c(gen.rate_at(s)?))) };
    let mut psi = psi0.clone();
    let mut drift = 0.0;
    let mut s = 0.0;
    let mut start = frame(0.0)?;
    while 1.0 - s > 1e-14 {
        let mut h = policy.cap.min(1.0 - s);
        let lam = gen.rate_at(s)?.max(gen.rate_at(s + h)?);
        if lam > 0.0 {
            h = h.min(policy.rate_factor / lam);
        }
        if h < 1e-9 {
            return Err(Error::StepUnderflow { step: h, s });
        }
        let mid = frame(s + 0.5 * h)?;
        let end = frame(s + h)?;
        let k1 = &start * &psi;
        let k2 = &mid * (&psi + &k1 * c(0.5 * h));
        let k3 = &mid * (&psi + &k2 * c(0.5 * h));
        let k4 = &end * (&psi + &k3 * c(h));
        psi += (k1 + (k2 + k3) * c(2.0) + k4) * c(h / 6.0);
        renormalise(&mut psi, &mut drift);
        s += h;
        start = end;
    }
    Ok(TrajectoryResult {
        final_state: psi,
        jump_count: 0,
        hamiltonian_time: 0.0,
        seed,
        norm_drift: drift,
    })
}

/// One line of the trajectory export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub jump_count: usize,
    pub time: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub fidelity_mean: f64,
    /// Standard error of the mean fidelity.
    pub stderr: f64,
    pub jump_mean: f64,
    pub jump_variance: f64,
    /// Expected jumps `∫λ ds` and model time from quadrature.
    pub expected: Cost,
    /// Mean sampled `Σ|τ|` per trajectory.
    pub sampled_time_mean: f64,
    pub max_norm_drift: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub mean_state: CMatrix,
    pub stats: EnsembleStats,
    pub records: Vec<TrajectoryRecord>,
}

impl MonteCarloResult {
    pub fn mean_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.mean_state.clone())
    }
}

/// Runs `n_traj` trajectories of `gen` from `psi0` (in the generator's
/// space). Trajectory `k` uses the stream seeded by
/// `trajectory_seed(master_seed, k)`; results are reduced in index order, so
/// the output does not depend on the number of worker threads.
pub fn monte_carlo(
    gen: &Generator,
    psi0: &CVector,
    n_traj: usize,
    master_seed: u64,
    policy: &StepPolicy,
) -> Result<MonteCarloResult> {
    if n_traj < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 trajectories, got {n_traj}")));
    }
    if psi0.len() != gen.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, generator acts on dimension {}",
            psi0.len(),
            gen.dim()
        )));
    }
    let p_end = gen.projector(1.0)?;
    let sampler = ThinningSampler::new(|s| gen.rate.evaluate(s))?;
    let run_one = |k: usize| -> Result<TrajectoryResult> {
        let seed = trajectory_seed(master_seed, k as u64);
        let mut rng = rng_from_seed(seed);
        match &gen.kind {
            GeneratorKind::Liouville { .. } => run_trajectory_liouville(gen, psi0, policy, seed),
            GeneratorKind::JumpUnitary { path } => {
                let real = sampler.sample(&mut rng)?;
                run_trajectory_unitary(path.as_ref(), &real, psi0, seed)
            }
            GeneratorKind::PhaseRandomisation { path, phi, gap_model } => {
                let gm = gap_model.as_ref().ok_or(Error::GapModelMissing)?;
                let real = sampler.sample(&mut rng)?;
                run_trajectory_phase(path.as_ref(), gm, phi, &real, psi0, seed, &mut rng)
            }
        }
    };
    // A deterministic generator yields the same trajectory for every seed.
    let deterministic = matches!(gen.kind, GeneratorKind::Liouville { .. });
    let results: Vec<TrajectoryResult> = if deterministic {
        let first = run_one(0)?;
        (0..n_traj)
            .map(|k| TrajectoryResult {
                seed: trajectory_seed(master_seed, k as u64),
                ..first.clone()
            })
            .collect()
    } else {
        (0..n_traj).into_par_iter().map(run_one).collect::<Result<Vec<_>>>()?
    };

    let n = gen.dim();
    let mut mean = CMatrix::zeros(n, n);
    let mut records = Vec::with_capacity(n_traj);
    let mut drift = 0.0f64;
    for r in &results {
        mean += outer(&r.final_state, &r.final_state);
        let fid = fidelity(&outer(&r.final_state, &r.final_state), &p_end)?;
        drift = drift.max(r.norm_drift);
        records.push(TrajectoryRecord {
            seed: r.seed,
            jump_count: r.jump_count,
            time: r.hamiltonian_time,
            fidelity: fid,
        });
    }
    mean /= c(n_traj as f64);
    let nf = n_traj as f64;
    let fidelity_mean = records.iter().map(|r| r.fidelity).sum::<f64>() / nf;
    let fid_var = records.iter().map(|r| (r.fidelity - fidelity_mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let jump_mean = records.iter().map(|r| r.jump_count as f64).sum::<f64>() / nf;
    let jump_variance = records
        .iter()
        .map(|r| (r.jump_count as f64 - jump_mean).powi(2))
        .sum::<f64>()
        / (nf - 1.0);
    let sampled_time_mean = records.iter().map(|r| r.time).sum::<f64>() / nf;
    let stats = EnsembleStats {
        n_traj,
        fidelity_mean,
        stderr: (fid_var / nf).sqrt(),
        jump_mean,
        jump_variance,
        expected: accumulate_cost(gen, 256)?,
        sampled_time_mean,
        max_norm_drift: drift,
    };
    Ok(MonteCarloResult {
        mean_state: mean,
        stats,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, trace_distance};
    use crate::linalg::{diag_real, operator_norm, pauli, ONE, ZERO};
    use crate::paths::{exp_path, GapProfile, GroverInstance, LinearPath, SharedPath};
    use crate::schedules::Schedule;
    use crate::spectral::WindowRule;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn mean_count<F: Fn(f64) -> f64 + Sync>(rate: F, n: usize) -> (f64, f64) {
        let sampler = ThinningSampler::new(rate).unwrap();
        let counts: Vec<f64> = (0..n)
            .map(|k| sampler.sample(&mut rng_from_seed(trajectory_seed(7, k as u64))).unwrap().len() as f64)
            .collect();
        let m = counts.iter().sum::<f64>() / n as f64;
        let v = counts.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, v)
    }

    #[test]
    fn poisson_means() {
        let (m, _) = mean_count(|_| 1e-4, 100_000);
        assert!((m - 1e-4).abs() <= 3.0 * (1e-4f64 / 1e5).sqrt(), "{m}");
        let (m, v) = mean_count(|_| 50.0, 10_000);
        assert!((m - 50.0).abs() <= 3.0 * (50.0f64 / 1e4).sqrt(), "{m}");
        // Variance of a Poisson count equals its mean; its sample variance
        // has standard error ≈ √(2μ²/n).
        assert!((v - 50.0).abs() <= 3.0 * (2.0 * 50.0 * 50.0 / 1e4f64).sqrt(), "{v}");
        let (m, _) = mean_count(|s| 100.0 * s, 10_000);
        assert!((m - 50.0).abs() <= 3.0 * (50.0f64 / 1e4).sqrt(), "{m}");
    }

    #[test]
    fn realizations_are_sorted_and_in_range() {
        let r = sample_poisson(|s| 30.0 + 20.0 * (7.0 * s).sin(), 11).unwrap();
        assert!(r.jump_points.windows(2).all(|w| w[0] < w[1]));
        assert!(r.jump_points.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn envelope_violation_is_refined_then_reported() {
        use std::f64::consts::PI;
        // Vanishes on the coarse grid, peaks on the refined one.
        let coarse_blind = |s: f64| 1.0 + 5.0 * (1000.0 * PI * s).sin().abs();
        let sampler = ThinningSampler::new(coarse_blind).unwrap();
        assert!(sampler.envelope() < 1.1);
        for seed in 0..50 {
            sampler.sample(&mut rng_from_seed(seed)).unwrap();
        }
        // Vanishes on both grids.
        let blind = |s: f64| 1.0 + 50.0 * (1e5 * PI * s).sin().abs();
        let sampler = ThinningSampler::new(blind).unwrap();
        let failures = (0..50)
            .filter(|&seed| matches!(sampler.sample(&mut rng_from_seed(seed)), Err(Error::EnvelopeViolation { .. })))
            .count();
        assert!(failures > 0);
    }

    #[test]
    fn unitary_trajectory_examples() {
        #[derive(Debug)]
        struct Flip;
        impl OperatorPath for Flip {
            fn dim(&self) -> usize {
                2
            }
            fn kind(&self) -> crate::paths::PathKind {
                crate::paths::PathKind::Unitary
            }
            fn jet(&self, _s: f64) -> Result<crate::spectral::MatrixJet> {
                Ok(crate::spectral::MatrixJet {
                    value: pauli::x(),
                    d1: CMatrix::zeros(2, 2),
                    d2: CMatrix::zeros(2, 2),
                })
            }
            fn projector(&self, _s: f64) -> Result<crate::spectral::ProjectorPair> {
                crate::spectral::projector_by_rule(&pauli::x(), &WindowRule::Lowest { count: 1 }, true)
            }
        }
        let psi0 = CVector::from_column_slice(&[ONE, ZERO]);
        let none = run_trajectory_unitary(&Flip, &PoissonRealization::default(), &psi0, 0).unwrap();
        assert_eq!(none.final_state, psi0);
        let one = PoissonRealization { jump_points: vec![0.4] };
        let r = run_trajectory_unitary(&Flip, &one, &psi0, 0).unwrap();
        assert!((r.final_state[1] - ONE).norm() < 1e-15 && r.jump_count == 1);
    }

    #[test]
    fn tau_sampler_characteristic_function() {
        let mut rng = rng_from_seed(3);
        let g0 = 0.7;
        let n = 100_000;
        let taus: Vec<f64> = (0..n).map(|_| sample_tau(&Phi::Fejer, g0, &mut rng).unwrap()).collect();
        assert!(taus.iter().all(|t| (g0 * t).abs() <= TAU_TRUNCATION));
        let ecf = |w: f64| taus.iter().map(|t| (w * t).cos()).sum::<f64>() / n as f64;
        let half = ecf(g0 / 2.0);
        let se = (0.5 / n as f64).sqrt();
        assert!((half - 0.5).abs() <= 3.0 * se + 5e-3, "{half}");
        for w in [1.0, 1.5, 2.0, 3.0] {
            assert!(ecf(w * g0).abs() <= 0.02, "ω = {w}g₀: {}", ecf(w * g0));
        }
        // Scaling: doubling g₀ halves |τ| in distribution (same stream).
        let mut a = rng_from_seed(9);
        let mut b = rng_from_seed(9);
        for _ in 0..100 {
            let ta = sample_tau(&Phi::Fejer, 1.0, &mut a).unwrap();
            let tb = sample_tau(&Phi::Fejer, 2.0, &mut b).unwrap();
            assert!((ta - 2.0 * tb).abs() < 1e-12);
        }
        let table = Phi::table(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(sample_tau(&table, 1.0, &mut a), Err(Error::Unsupported(_))));
    }

    #[test]
    fn phase_trajectory_examples() {
        let h = diag_real(&[0.0, 1.0]);
        let path = LinearPath::new(h.clone(), h, WindowRule::Lowest { count: 1 }, "c").unwrap();
        let gm = GapModel::new(GapProfile::Constant { value: 1.0 }, 1.5).unwrap();
        let psi0 = CVector::from_column_slice(&[ZERO, ONE]);
        let mut rng = rng_from_seed(1);
        let empty = run_trajectory_phase(&path, &gm, &Phi::Fejer, &PoissonRealization::default(), &psi0, 1, &mut rng).unwrap();
        assert_eq!(empty.final_state, psi0);
        assert_eq!(empty.hamiltonian_time, 0.0);
        let real = PoissonRealization { jump_points: vec![0.1, 0.5, 0.9] };
        let r = run_trajectory_phase(&path, &gm, &Phi::Fejer, &real, &psi0, 1, &mut rng).unwrap();
        assert!((r.final_state[1].norm() - 1.0).abs() < 1e-12 && r.final_state[0].norm() < 1e-15);
        assert!(r.hamiltonian_time > 0.0);
    }

    fn grover_state(inst: &GroverInstance) -> CVector {
        let p = inst.reduced_path().unwrap();
        p.projector(0.0).unwrap().decomposition.eigenvectors.column(0).into_owned()
    }

    #[test]
    fn jump_ensemble_matches_ode() {
        let inst = GroverInstance::new(8, vec![3]).unwrap();
        let path = Arc::new(inst.reduced_path().unwrap().affine(0.5, 1.0).unwrap());
        let u: SharedPath = Arc::new(exp_path(path).unwrap());
        let gen = Generator::jump(u, Schedule::constant(15.0).unwrap()).unwrap();
        let psi0 = grover_state(&inst);
        let mc = monte_carlo(&gen, &psi0, 4000, 42, &StepPolicy::default()).unwrap();
        let ode = integrate(&gen, &DensityMatrix::pure(&psi0).unwrap(), &StepPolicy::default()).unwrap();
        let td = trace_distance(&mc.mean_state, ode.final_state()).unwrap();
        assert!(td <= (3.0 * mc.stats.stderr).max(1e-3) * 2.0, "td {td}, stderr {}", mc.stats.stderr);
        let se_jumps = (mc.stats.expected.jumps / 4000.0).sqrt();
        assert!((mc.stats.jump_mean - mc.stats.expected.jumps).abs() <= 3.0 * se_jumps);
        assert!(mc.stats.max_norm_drift < 1e-9);
    }

    #[test]
    fn ensembles_are_thread_count_independent() {
        let inst = GroverInstance::new(8, vec![3]).unwrap();
        let path: SharedPath = Arc::new(inst.reduced_path().unwrap());
        let gm = inst.gap_model(1.5).unwrap();
        let gen = Generator::phase_randomisation(path, Phi::Fejer, Some(gm), Schedule::constant(10.0).unwrap()).unwrap();
        let psi0 = grover_state(&inst);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo(&gen, &psi0, 300, 5, &StepPolicy::default()).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.records, b.records);
        assert_eq!(a.mean_state, b.mean_state);
        assert_eq!(a.stats, b.stats);
        assert!(monte_carlo(&gen, &psi0, 1, 5, &StepPolicy::default()).is_err());
    }

    #[test]
    fn liouville_trajectory_matches_density_ode() {
        let inst = GroverInstance::new(8, vec![3]).unwrap();
        let path: SharedPath = Arc::new(inst.reduced_path().unwrap());
        let gen = Generator::liouville(path, Schedule::constant(12.0).unwrap()).unwrap();
        let psi0 = grover_state(&inst);
        let t = run_trajectory_liouville(&gen, &psi0, &StepPolicy::default(), 0).unwrap();
        let ode = integrate(&gen, &DensityMatrix::pure(&psi0).unwrap(), &StepPolicy::default()).unwrap();
        let td = trace_distance(&outer(&t.final_state, &t.final_state), ode.final_state()).unwrap();
        assert!(td < 1e-6, "{td}");
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(trajectory_seed(1, 2), trajectory_seed(1, 2));
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|k| trajectory_seed(17, k)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(trajectory_seed(1, 0), trajectory_seed(2, 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn unitary_trajectories_preserve_norm(seed in any::<u64>(), lam in 1.0f64..40.0) {
            let inst = GroverInstance::new(8, vec![1]).unwrap();
            let path = Arc::new(inst.path().unwrap().affine(0.5, 1.0).unwrap());
            let u = exp_path(path).unwrap();
            let real = sample_poisson(|_| lam, seed).unwrap();
            let psi0 = inst.uniform();
            let r = run_trajectory_unitary(&u, &real, &psi0, seed).unwrap();
            prop_assert!(r.norm_drift <= 1e-9);
            prop_assert!((r.final_state.norm() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(r.jump_count, real.len());
            prop_assert!(operator_norm(&CMatrix::from_column_slice(8, 1, r.final_state.as_slice())) > 0.0);
        }
    }
}
