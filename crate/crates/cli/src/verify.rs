//! Seeded invariant suites. Every suite is deterministic for a given seed
//! and independent of the thread count: instances run concurrently but are
//! reduced in index order.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use eigenpath::dynamics::{fidelity, integrate, integrate_with_step_doubling, trace_distance};
use eigenpath::linalg::{eig_hermitian, frobenius, operator_norm, outer, trace};
use eigenpath::paths::TrotterPath;
use eigenpath::random::{
    normal_instance, random_bounded_hermitian, random_conditioned_hermitian, random_density, random_jet,
    random_unit_vector, rng,
};
use eigenpath::schedules::{gap_integral_check, GapKind};
use eigenpath::spectral::{
    commutator_residual, contour_clearance, default_contour, default_quad_points, norm_bound_suite,
    offdiagonal_residual, projector_derivative, projector_second_derivative, twiddle_contour,
    twiddle_single_eigenvalue, twiddle_spectral, twiddle_sylvester, window_projector, FD_STEP_FIRST,
    FD_STEP_SECOND,
};
use eigenpath::stochastic::{monte_carlo, rng_from_seed, sample_poisson, sample_tau, trajectory_seed, ThinningSampler};
use eigenpath::{
    CMatrix, DensityMatrix, Generator, GeneratorKind, LinearPath, OperatorPath, Phi, SpectralWindow,
    StepPolicy, TheoremId, TrotterOrder, WindowRule, C64,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_config, ExecutionConfig, ExperimentConfig, ScheduleConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{build, Experiment};
use crate::run::execute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    AppendixA,
    Dynamics,
    Stochastic,
    Bounds,
    All,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "appendix_a" => Ok(Suite::AppendixA),
            "dynamics" => Ok(Suite::Dynamics),
            "stochastic" => Ok(Suite::Stochastic),
            "bounds" => Ok(Suite::Bounds),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite '{s}' (expected appendix_a, dynamics, stochastic, bounds or all)")),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::AppendixA => "appendix_a",
            Suite::Dynamics => "dynamics",
            Suite::Stochastic => "stochastic",
            Suite::Bounds => "bounds",
            Suite::All => "all",
        }
    }

    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::AppendixA, Suite::Dynamics, Suite::Stochastic, Suite::Bounds],
            s => vec![s],
        }
    }
}

/// Deliberate defects for checking that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds `10⁻³·1` to every generator right-hand side.
    BrokenRhs,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "broken-rhs" => Ok(Fault::BrokenRhs),
            _ => Err(format!("unknown fault '{s}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random instances in the certification suite.
    pub instances: usize,
    /// Trajectories per Monte-Carlo comparison.
    pub trajectories: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            instances: 200,
            trajectories: 10_000,
            fault: None,
        }
    }
}

/// Outcome of one invariant over all of its checks. `worst_ratio` is the
/// largest observed `value / limit`; the invariant holds when it is at most
/// one, and `worst_margin = 1 − worst_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub suite: String,
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    pub worst_ratio: f64,
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<String>,
    pub invariants: Vec<InvariantResult>,
    pub violations: usize,
    pub passed: bool,
}

impl VerifyReport {
    pub fn invariant(&self, name: &str) -> Option<&InvariantResult> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Accumulates `value ≤ limit` checks per invariant, in insertion order.
#[derive(Debug, Default)]
pub struct Ledger {
    suite: &'static str,
    pub items: Vec<InvariantResult>,
}

impl Ledger {
    fn new(suite: &'static str) -> Self {
        Ledger { suite, items: Vec::new() }
    }

    fn slot(&mut self, name: &str) -> &mut InvariantResult {
        if let Some(k) = self.items.iter().position(|i| i.name == name) {
            return &mut self.items[k];
        }
        self.items.push(InvariantResult {
            suite: self.suite.to_string(),
            name: name.to_string(),
            checks: 0,
            violations: 0,
            worst_ratio: 0.0,
            worst_margin: 1.0,
            passed: true,
        });
        self.items.last_mut().expect("just pushed")
    }

    fn check(&mut self, name: &str, value: f64, limit: f64) {
        let ratio = if limit > 0.0 {
            value / limit
        } else if value <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let slot = self.slot(name);
        slot.checks += 1;
        // NaN counts as a violation.
        let ok = ratio <= 1.0;
        if !ok {
            slot.violations += 1;
            slot.passed = false;
        }
        let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
        if ratio > slot.worst_ratio {
            slot.worst_ratio = ratio;
        }
        slot.worst_margin = 1.0 - slot.worst_ratio;
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantResult> {
        self.items.iter().find(|i| i.name == name)
    }

    /// A kernel failure where success was expected.
    fn fail(&mut self, name: &str) {
        self.check(name, f64::INFINITY, 1.0);
    }

    fn merge(&mut self, other: Ledger) {
        for item in other.items {
            let slot = self.slot(&item.name);
            slot.checks += item.checks;
            slot.violations += item.violations;
            slot.passed &= item.passed;
            if item.worst_ratio > slot.worst_ratio {
                slot.worst_ratio = item.worst_ratio;
            }
            slot.worst_margin = 1.0 - slot.worst_ratio;
        }
    }
}

/// Non-finite ratios become JSON `null`; keep the report finite instead.
fn finite(mut r: InvariantResult) -> InvariantResult {
    if !r.worst_ratio.is_finite() {
        r.worst_ratio = f64::MAX;
        r.worst_margin = f64::MIN;
    }
    r
}

pub fn verify(suite: Suite, opts: &VerifyOptions) -> CliResult<VerifyReport> {
    let suites = suite.expand();
    let mut invariants = Vec::new();
    for s in &suites {
        let ledger = match s {
            Suite::AppendixA => appendix_a(opts),
            Suite::Dynamics => dynamics(opts)?,
            Suite::Stochastic => stochastic(opts)?,
            Suite::Bounds => bounds(opts)?,
            Suite::All => unreachable!("expanded"),
        };
        invariants.extend(ledger.items.into_iter().map(finite));
    }
    let violations = invariants.iter().map(|i| i.violations).sum();
    Ok(VerifyReport {
        seed: opts.seed,
        suites: suites.iter().map(|s| s.name().to_string()).collect(),
        invariants,
        violations,
        passed: violations == 0,
    })
}

pub fn write_report(dir: &Path, report: &VerifyReport) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("verify_report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| CliError::io(&path, e))
}

fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    trajectory_seed(trajectory_seed(seed, stream), index)
}

// ---------------------------------------------------------------- certification

fn appendix_a(opts: &VerifyOptions) -> Ledger {
    let mut ledger = certification(opts);
    ledger.merge(projector_calculus(opts.seed));
    ledger
}

/// Twiddle identities, agreement of the three twiddle algorithms and the
/// operator-norm bounds on `opts.instances` random normal instances.
pub fn certification(opts: &VerifyOptions) -> Ledger {
    let parts: Vec<Ledger> = (0..opts.instances)
        .into_par_iter()
        .map(|k| certification_instance(sub_seed(opts.seed, 1, k as u64)))
        .collect();
    let mut ledger = Ledger::new("appendix_a");
    for p in parts {
        ledger.merge(p);
    }
    ledger
}

fn certification_instance(seed: u64) -> Ledger {
    let mut l = Ledger::new("appendix_a");
    let mut r = rng(seed);
    let n = r.random_range(4..=8usize);
    let hermitian = r.random::<bool>();
    let inst = normal_instance(&mut r, n, 0.05, hermitian);
    let x = random_jet(&mut r, n);
    let a = &inst.a.value;
    let pp = match window_projector(a, &inst.window, hermitian) {
        Ok(pp) => pp,
        Err(_) => {
            l.fail("twiddle_identity");
            return l;
        }
    };
    let scale = operator_norm(a).max(1.0) * operator_norm(&x.value).max(1.0);
    let xt = twiddle_spectral(&pp, &x.value);
    l.check("twiddle_identity", commutator_residual(a, &pp, &x.value, &xt) / scale, 1e-9);
    l.check("twiddle_offdiagonal", offdiagonal_residual(&pp, &xt) / scale, 1e-9);

    let mut variants = vec![xt.clone()];
    match twiddle_sylvester(a, &pp, &x.value) {
        Ok(y) => variants.push(y),
        Err(_) => l.fail("twiddle_agreement"),
    }
    let w = default_contour(&pp);
    let clearance = contour_clearance(&pp.decomposition.eigenvalues, &w);
    let radius = match w {
        SpectralWindow::Contour { radius, .. } => radius,
        SpectralWindow::Interval { .. } => unreachable!("default contour is a circle"),
    };
    match twiddle_contour(a, &w, &x.value, default_quad_points(radius, clearance)) {
        Ok(y) => variants.push(y),
        Err(_) => l.fail("twiddle_agreement"),
    }
    if pp.m == 1 {
        if let Ok(y) = twiddle_single_eigenvalue(a, &pp, &x.value) {
            variants.push(y);
        }
    }
    let norm = operator_norm(&xt).max(1.0);
    for i in 0..variants.len() {
        for j in i + 1..variants.len() {
            l.check("twiddle_agreement", operator_norm(&(&variants[i] - &variants[j])) / norm, 1e-7);
        }
    }

    let report = norm_bound_suite(&pp, &inst.a.d1, &inst.a.d2, &x);
    for c in &report.checks {
        // Inequalities carry the same relative slack as `BoundCheck::holds`.
        l.check(&format!("norm_bound:{}", c.name), c.actual, c.bound * (1.0 + 1e-9) + 1e-12);
    }
    l
}

/// Analytic projector derivatives against finite differences on the Grover
/// and linear-systems paths.
pub fn projector_calculus(seed: u64) -> Ledger {
    let mut l = Ledger::new("appendix_a");
    let grover = eigenpath::GroverInstance::new(8, vec![3]).and_then(|g| g.path());
    let qlsp = random_conditioned_hermitian(&mut rng(sub_seed(seed, 2, 0)), 4, 4.0).and_then(|a| {
        let b = eigenpath::CVector::from_element(4, C64::new(0.5, 0.0));
        eigenpath::QlspInstance::new(&a, &b, None)?.path()
    });
    for path in [grover, qlsp] {
        let path = match path {
            Ok(p) => p,
            Err(_) => {
                l.fail("projector_first_derivative_fd");
                continue;
            }
        };
        for k in 0..20 {
            let s = (k as f64 + 0.5) / 20.0;
            let res: eigenpath::Result<(f64, f64)> = (|| {
                let pp = path.projector(s)?;
                let p = |t: f64| -> eigenpath::Result<CMatrix> { Ok(path.projector(t)?.p) };
                let h = FD_STEP_FIRST;
                let fd1 = (p(s + h)? - p(s - h)?) / C64::new(2.0 * h, 0.0);
                let h = FD_STEP_SECOND;
                let fd2 = (p(s + h)? - &pp.p * C64::new(2.0, 0.0) + p(s - h)?) / C64::new(h * h, 0.0);
                let d1 = projector_derivative(&path, s, &pp)?;
                let d2 = projector_second_derivative(&path, s, &pp)?;
                Ok((operator_norm(&(d1 - fd1)), operator_norm(&(d2 - fd2))))
            })();
            match res {
                Ok((e1, e2)) => {
                    l.check("projector_first_derivative_fd", e1, 1e-6);
                    l.check("projector_second_derivative_fd", e2, 1e-4);
                }
                Err(_) => l.fail("projector_first_derivative_fd"),
            }
        }
    }
    l
}

// ---------------------------------------------------------------- dynamics

/// Generator kinds exercised by the dynamics and stochastic suites.
pub fn generator_configs() -> Vec<(&'static str, serde_json::Value)> {
    vec![
        ("liouville", json!({"kind": "liouville"})),
        ("jump_exp", json!({"kind": "jump", "unitary": {"kind": "exp"}})),
        ("jump_qubitised", json!({"kind": "jump", "unitary": {"kind": "qubitised"}})),
        ("jump_trotter", json!({"kind": "jump", "unitary": {"kind": "trotter", "h_relative": 0.1}})),
        ("phase_rand", json!({"kind": "phase_rand"})),
    ]
}

fn config(instance: serde_json::Value, generator: &serde_json::Value, schedule: serde_json::Value) -> CliResult<ExperimentConfig> {
    let v = json!({"instance": instance, "generator": generator, "schedule": schedule});
    parse_config(&v.to_string(), &[], Path::new("."))
}

fn grover_full(n: usize) -> serde_json::Value {
    json!({"kind": "grover", "n": n, "marked": [3], "reduce": false})
}

fn qlsp_random(dim: usize, kappa: f64, seed: u64) -> serde_json::Value {
    json!({"kind": "qlsp", "matrix": {"random": {"dim": dim, "kappa": kappa, "seed": seed}}})
}

fn rhs_under_test(gen: &Generator, fault: Option<Fault>, s: f64, rho: &CMatrix) -> eigenpath::Result<CMatrix> {
    let out = gen.rhs(s, rho)?;
    Ok(match fault {
        Some(Fault::BrokenRhs) => out + CMatrix::identity(rho.nrows(), rho.nrows()) * C64::new(1e-3, 0.0),
        None => out,
    })
}

fn dynamics(opts: &VerifyOptions) -> CliResult<Ledger> {
    let instances = [grover_full(8), qlsp_random(2, 4.0, sub_seed(opts.seed, 3, 0))];
    let mut jobs = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        for (g, (_, gen)) in generator_configs().iter().enumerate() {
            jobs.push((i, g, config(inst.clone(), gen, json!({"kind": "constant", "value": 10.0}))?));
        }
    }
    let parts: Vec<Ledger> = jobs
        .par_iter()
        .map(|(i, g, cfg)| -> CliResult<Ledger> {
            let exp = build(cfg)?;
            Ok(dynamics_instance(&exp, opts.fault, sub_seed(opts.seed, 4, (*i * 16 + *g) as u64)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut ledger = Ledger::new("dynamics");
    for p in parts {
        ledger.merge(p);
    }
    Ok(ledger)
}

fn dynamics_instance(exp: &Experiment, fault: Option<Fault>, seed: u64) -> Ledger {
    let mut l = Ledger::new("dynamics");
    let gen = &exp.generator;
    let n = gen.dim();
    let mut r = rng(seed);
    for k in 0..=10 {
        let s = k as f64 / 10.0;
        for _ in 0..3 {
            let rho = random_density(&mut r, n);
            match rhs_under_test(gen, fault, s, &rho) {
                Ok(d) => {
                    l.check("rhs_trace_preservation", trace(&d).norm(), 1e-10);
                    l.check("rhs_hermiticity", operator_norm(&(&d - d.adjoint())), 1e-10);
                }
                Err(_) => l.fail("rhs_trace_preservation"),
            }
        }
        let fixed = gen
            .path()
            .projector(s)
            .and_then(|pp| {
                let rho = &pp.p / C64::new(pp.rank() as f64, 0.0);
                rhs_under_test(gen, fault, s, &rho)
            })
            .map(|d| operator_norm(&d));
        match fixed {
            Ok(v) => l.check("rhs_eigenprojector_stationary", v, 1e-9),
            Err(_) => l.fail("rhs_eigenprojector_stationary"),
        }
    }

    let rho0 = DensityMatrix::pure(&exp.psi0).expect("unit initial state");
    let policy = StepPolicy {
        samples: 10,
        ..StepPolicy::default()
    };
    match integrate_with_step_doubling(gen, &rho0, &policy) {
        Ok((run, delta)) => {
            let rho = run.final_state();
            let tr = (trace(rho).re - 1.0).abs();
            let min_eig = eig_hermitian(&eigenpath::linalg::hermitian_part(rho))
                .map(|d| d.real_eigenvalues().into_iter().fold(f64::INFINITY, f64::min))
                .unwrap_or(f64::NEG_INFINITY);
            l.check("ode_trace", tr, 1e-9);
            // RK4 keeps positivity only up to its truncation error.
            l.check("ode_positivity", (-min_eig).max(0.0), 1e-6);
            l.check("ode_step_doubling", delta, 1e-6);
        }
        Err(_) => l.fail("ode_trace"),
    }

    let idle = Generator {
        kind: gen.kind.clone(),
        rate: eigenpath::Schedule::constant(0.0).expect("zero is a valid rate"),
    };
    match integrate(&idle, &rho0, &policy) {
        Ok(run) => {
            let drift = frobenius(&(run.final_state() - rho0.matrix()));
            l.check("ode_zero_rate_stationary", drift, 1e-12);
        }
        Err(_) => l.fail("ode_zero_rate_stationary"),
    }
    l
}

// ---------------------------------------------------------------- stochastic

fn stochastic(opts: &VerifyOptions) -> CliResult<Ledger> {
    let mut l = Ledger::new("stochastic");
    poisson_checks(&mut l, opts.seed);
    tau_checks(&mut l, sub_seed(opts.seed, 5, 0), opts.trajectories);
    l.merge(phase_channel(opts)?);
    l.merge(marginal_consistency(opts)?);
    Ok(l)
}

fn poisson_checks(l: &mut Ledger, seed: u64) {
    let rate = |s: f64| 30.0 * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * s).sin()) + 5.0 * s;
    let total = 32.5;
    match ThinningSampler::new(rate) {
        Ok(sampler) => {
            let top = (0..=100_000).map(|k| rate(k as f64 / 100_000.0)).fold(0.0, f64::max);
            l.check("thinning_envelope_dominates", top / sampler.envelope(), 1.0);
        }
        Err(_) => l.fail("thinning_envelope_dominates"),
    }
    let n = 4000;
    let counts: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| match sample_poisson(rate, sub_seed(seed, 6, k as u64)) {
            Ok(r) => {
                let sorted = r.jump_points.windows(2).all(|w| w[0] <= w[1]);
                let inside = r.jump_points.iter().all(|&s| (0.0..=1.0).contains(&s));
                if sorted && inside {
                    r.len() as f64
                } else {
                    f64::NAN
                }
            }
            Err(_) => f64::NAN,
        })
        .collect();
    let nf = n as f64;
    let mean = counts.iter().sum::<f64>() / nf;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    l.check("poisson_points_sorted_in_unit_interval", if mean.is_nan() { 1.0 } else { 0.0 }, 0.0);
    l.check("poisson_count_mean", (mean - total).abs(), 4.0 * (total / nf).sqrt());
    // Var of the sample variance of a Poisson(Λ) count is (Λ + 2Λ²)/(n − 1).
    l.check("poisson_count_variance", (var - total).abs(), 4.0 * ((total + 2.0 * total * total) / (nf - 1.0)).sqrt());
}

fn tau_checks(l: &mut Ledger, seed: u64, n: usize) {
    let g0 = 0.7;
    let mut r = rng_from_seed(seed);
    let taus: Vec<f64> = (0..n).filter_map(|_| sample_tau(&Phi::Fejer, g0, &mut r).ok()).collect();
    if taus.len() != n {
        l.fail("tau_characteristic_function");
        return;
    }
    let nf = n as f64;
    for frac in [0.0, 0.2, 0.5, 0.8, 1.2] {
        let omega = frac * g0;
        let cos: Vec<f64> = taus.iter().map(|t| (omega * t).cos()).collect();
        let sin: Vec<f64> = taus.iter().map(|t| (omega * t).sin()).collect();
        for (vals, target, name) in [
            (&cos, Phi::Fejer.eval(omega, g0), "tau_characteristic_function"),
            (&sin, 0.0, "tau_symmetry"),
        ] {
            let mean = vals.iter().sum::<f64>() / nf;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
            l.check(name, (mean - target).abs(), 4.0 * sd / nf.sqrt() + 1e-12);
        }
    }
}

/// Block structure of the averaged phase channel and its reproduction by
/// sampled durations.
pub fn phase_channel(opts: &VerifyOptions) -> CliResult<Ledger> {
    let mut l = Ledger::new("stochastic");
    let phase = json!({"kind": "phase_rand"});
    let schedule = json!({"kind": "constant", "value": 10.0});
    let exps = [
        build(&config(grover_full(8), &phase, schedule.clone())?)?,
        build(&config(qlsp_random(2, 4.0, sub_seed(opts.seed, 7, 0)), &phase, schedule)?)?,
    ];
    let mut r = rng(sub_seed(opts.seed, 8, 0));
    for exp in &exps {
        let gen = &exp.generator;
        for _ in 0..25 {
            let s = r.random::<f64>();
            let rho = random_density(&mut r, gen.dim());
            let res = (|| -> eigenpath::Result<(f64, f64)> {
                let pp = gen.path().projector(s)?;
                let out = gen.phase_channel(s, &rho)?;
                let cross = operator_norm(&(&pp.p * &out * &pp.q)).max(operator_norm(&(&pp.q * &out * &pp.p)));
                let fixed = operator_norm(&(&pp.p * &out * &pp.p - &pp.p * &rho * &pp.p));
                Ok((cross, fixed))
            })();
            match res {
                Ok((cross, fixed)) => {
                    l.check("phase_channel_offdiagonal_blocks", cross, 1e-10);
                    l.check("phase_channel_fixes_inside_block", fixed, 1e-10);
                }
                Err(_) => l.fail("phase_channel_offdiagonal_blocks"),
            }
        }
    }

    // Sampled durations against the channel, aggregated in Frobenius norm:
    // E‖mean − C(ρ)‖² = (1 − ‖C(ρ)‖²)/n for pure inputs.
    let exp = &exps[0];
    let gen = &exp.generator;
    let (gm, path) = match &gen.kind {
        GeneratorKind::PhaseRandomisation { gap_model: Some(gm), path, .. } => (gm, path),
        _ => unreachable!("built as phase randomisation"),
    };
    for (k, s) in [0.3, 0.5, 0.8].into_iter().enumerate() {
        let psi = random_unit_vector(&mut r, gen.dim());
        let res = (|| -> eigenpath::Result<(f64, f64)> {
            let rho = outer(&psi, &psi);
            let channel = gen.phase_channel(s, &rho)?;
            let dec = eig_hermitian(&path.value(s)?)?;
            let g0 = gm.g0(s);
            let mut rs = rng_from_seed(sub_seed(opts.seed, 9, k as u64));
            let n = opts.trajectories;
            let mut mean = CMatrix::zeros(gen.dim(), gen.dim());
            for _ in 0..n {
                let tau = sample_tau(&Phi::Fejer, g0, &mut rs)?;
                let u = dec.apply_real(|w| C64::from_polar(1.0, -tau * w));
                let phi = &u * &psi;
                mean += outer(&phi, &phi);
            }
            mean /= C64::new(n as f64, 0.0);
            let se = ((1.0 - frobenius(&channel).powi(2)).max(0.0) / (n as f64 - 1.0)).sqrt();
            Ok((frobenius(&(mean - channel)), se))
        })();
        match res {
            Ok((err, se)) => l.check("phase_channel_sampled_durations", err, 3.0 * se + 1e-12),
            Err(_) => l.fail("phase_channel_sampled_durations"),
        }
    }
    Ok(l)
}

/// Monte-Carlo mean state against the ODE solution for every generator
/// kind on Grover `N = 8`, `M = 1` in the full space.
pub fn marginal_consistency(opts: &VerifyOptions) -> CliResult<Ledger> {
    let mut l = Ledger::new("stochastic");
    for (k, (name, gen_cfg)) in generator_configs().into_iter().enumerate() {
        let rate = match name {
            "liouville" => 4.0,
            "phase_rand" => 3.0,
            _ => 6.0,
        };
        let exp = build(&config(grover_full(8), &gen_cfg, json!({"kind": "constant", "value": rate}))?)?;
        let gen = &exp.generator;
        let rho0 = DensityMatrix::pure(&exp.psi0).expect("unit initial state");
        let fine = StepPolicy {
            cap: 2e-3,
            rate_factor: 0.02,
            samples: 10,
            motion_scaled: false,
        };
        let ode = integrate(gen, &rho0, &fine).map_err(|e| CliError::kernel("verify.stochastic", e))?;
        let mc = monte_carlo(gen, &exp.psi0, opts.trajectories, sub_seed(opts.seed, 10, k as u64), &fine)
            .map_err(|e| CliError::kernel("verify.stochastic", e))?;
        let td = trace_distance(&mc.mean_state, ode.final_state()).map_err(|e| CliError::kernel("verify.stochastic", e))?;
        let nf = opts.trajectories as f64;
        let se = ((1.0 - frobenius(&mc.mean_state).powi(2)).max(0.0) / (nf - 1.0)).sqrt();
        l.check(&format!("marginal_consistency:{name}"), td, (3.0 * se).max(1e-3));
        if !matches!(gen.kind, GeneratorKind::Liouville { .. }) {
            let lam = mc.stats.expected.jumps;
            l.check(
                &format!("jump_count_mean:{name}"),
                (mc.stats.jump_mean - lam).abs(),
                4.0 * (lam / nf).sqrt(),
            );
        }
        let p1 = gen.projector(1.0).map_err(|e| CliError::kernel("verify.stochastic", e))?;
        let f_ode = fidelity(ode.final_state(), &p1).map_err(|e| CliError::kernel("verify.stochastic", e))?;
        l.check(
            &format!("fidelity_consistency:{name}"),
            (mc.stats.fidelity_mean - f_ode).abs(),
            (3.0 * mc.stats.stderr).max(1e-3),
        );
    }
    Ok(l)
}

// ---------------------------------------------------------------- bounds

/// RK4 rate bound for the domination runs, applied to the motion-scaled
/// rate. Must keep the integration error well below the bound margins.
const DOMINATION_RATE_FACTOR: f64 = 0.4;

/// Measured infidelity against every bound on the suite instances, for
/// adaptive schedules and constant schedules of equal total rate.
pub fn bound_domination(opts: &VerifyOptions) -> CliResult<Ledger> {
    let instances = [
        json!({"kind": "grover", "n": 8, "marked": [3]}),
        json!({"kind": "grover", "n": 16, "marked": [3]}),
        qlsp_random(2, 4.0, sub_seed(opts.seed, 11, 0)),
        qlsp_random(2, 8.0, sub_seed(opts.seed, 11, 1)),
    ];
    let mut jobs = Vec::new();
    for inst in &instances {
        for (name, mut gen) in generator_configs() {
            if name == "jump_trotter" {
                gen = json!({"kind": "jump", "unitary": {"kind": "trotter", "h_relative": 0.25}});
            }
            let mut adaptive = config(inst.clone(), &gen, json!({"kind": "adaptive", "p": 1.5, "epsilon": 0.1}))?;
            adaptive.execution = ExecutionConfig::Ode {
                step_cap: 1e-2,
                rate_factor: DOMINATION_RATE_FACTOR,
                motion_scaled: true,
                samples: 10,
            };
            jobs.push(adaptive);
        }
    }
    // Constant schedules with the adaptive schedule's mean rate.
    let mut constant = Vec::new();
    for cfg in &jobs {
        let exp = build(cfg)?;
        let mean_rate = eigenpath::schedules::simpson_converged(|s| Ok(exp.generator.rate.evaluate(s)), 256, 1e-9)
            .map_err(|e| CliError::kernel("schedule", e))?;
        let mut c = cfg.clone();
        c.schedule = ScheduleConfig::Constant { value: mean_rate };
        constant.push(c);
    }
    jobs.extend(constant);

    let parts: Vec<Ledger> = jobs
        .par_iter()
        .map(|cfg| -> CliResult<Ledger> {
            let mut l = Ledger::new("bounds");
            let exp = build(cfg)?;
            let out = execute(&exp)?;
            for rep in &out.reports {
                let measured = rep.measured_infidelity.unwrap_or(f64::INFINITY);
                l.check(
                    &format!("bound_domination:{}", rep.theorem_id.label()),
                    measured,
                    rep.bound_value + 1e-9,
                );
            }
            let tight = out.reports.iter().find(|r| r.theorem_id == TheoremId::JumpTight);
            let loose = out.reports.iter().find(|r| r.theorem_id == TheoremId::JumpLoose);
            if let (Some(t), Some(lo)) = (tight, loose) {
                l.check("jump_tight_below_loose", t.bound_value, lo.bound_value * (1.0 + 1e-12));
            }
            Ok(l)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut ledger = Ledger::new("bounds");
    for p in parts {
        ledger.merge(p);
    }
    Ok(ledger)
}

/// `‖U₂,ₕ(s) − e^{−iπhH(s)/2}‖ ≤ h³/2` on random paths with `‖Hᵢ‖ ≤ 1`.
pub fn trotter_spectral_shift(seed: u64, count: usize) -> Ledger {
    let mut l = Ledger::new("bounds");
    let mut r = rng(seed);
    for _ in 0..count {
        let n = r.random_range(2..=6usize);
        let (n0, n1) = (r.random_range(0.1..=1.0), r.random_range(0.1..=1.0));
        let h0 = random_bounded_hermitian(&mut r, n, n0);
        let h1 = random_bounded_hermitian(&mut r, n, n1);
        let s = r.random::<f64>();
        let h = r.random_range(0.01..0.8);
        let res = LinearPath::new(h0, h1, WindowRule::Lowest { count: 1 }, "random")
            .and_then(|p| TrotterPath::unchecked(Arc::new(p), h, TrotterOrder::Second))
            .and_then(|t| Ok(operator_norm(&(t.value(s)? - t.ideal(s)?))));
        match res {
            Ok(d) => l.check("trotter_spectral_shift", d, h.powi(3) / 2.0 + 1e-12),
            Err(_) => l.fail("trotter_spectral_shift"),
        }
    }
    l
}

/// Doubling sweeps of the gap integrals with ratio spread at most 2.
pub fn gap_integral_growth() -> Ledger {
    let mut l = Ledger::new("bounds");
    let grover = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];
    let qlsp = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];
    for (kind, params) in [(GapKind::Grover, &grover[..]), (GapKind::Qlsp, &qlsp[..])] {
        for p in [1.0, 1.5] {
            let name = format!(
                "gap_integral:{}:p={p}",
                match kind {
                    GapKind::Grover => "grover",
                    GapKind::Qlsp => "qlsp",
                }
            );
            match gap_integral_check(kind, p, params) {
                Ok(rep) => l.check(&name, rep.spread, 2.0),
                Err(_) => l.fail(&name),
            }
        }
    }
    l
}

fn bounds(opts: &VerifyOptions) -> CliResult<Ledger> {
    let mut l = bound_domination(opts)?;
    l.merge(trotter_spectral_shift(sub_seed(opts.seed, 12, 0), 50));
    l.merge(gap_integral_growth());
    Ok(l)
}
