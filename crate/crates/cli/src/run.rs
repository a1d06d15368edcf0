//! Single experiment runs and their output artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use eigenpath::dynamics::{accumulate_cost, fidelity, integrate, Sample};
use eigenpath::schedules::{eval_bound, BOUND_POINTS};
use eigenpath::stochastic::monte_carlo;
use eigenpath::{BoundReport, DensityMatrix, RunResult, Schedule, StepPolicy, TrajectoryRecord};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExecutionConfig, OutputConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{BoundSpec, Experiment};

/// Deterministic intervals for the cost quadrature.
const COST_INTERVALS: usize = 256;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub reports: Vec<BoundReport>,
    pub records: Option<Vec<TrajectoryRecord>>,
}

impl RunOutput {
    pub fn violations(&self) -> usize {
        self.reports.iter().filter(|r| r.satisfied == Some(false)).count()
    }

    pub fn primary(&self) -> &BoundReport {
        &self.reports[0]
    }
}

fn policy(exec: &ExecutionConfig) -> StepPolicy {
    let base = StepPolicy::default();
    match *exec {
        ExecutionConfig::Ode {
            step_cap,
            rate_factor,
            motion_scaled,
            samples,
        } => StepPolicy {
            cap: step_cap,
            rate_factor,
            samples,
            motion_scaled,
        },
        ExecutionConfig::Trajectories { step_cap, .. } => StepPolicy { cap: step_cap, ..base },
    }
}

fn numerical(path: &'static str) -> impl Fn(eigenpath::Error) -> CliError {
    move |e| CliError::kernel(path, e)
}

/// Bound for a report. A vanishing rate leaves the state untouched and
/// admits only the trivial bound 1.
fn bound(spec: &BoundSpec, schedule: &Schedule) -> CliResult<BoundReport> {
    if let Schedule::Constant { value } = schedule {
        if *value == 0.0 {
            return Ok(BoundReport {
                theorem_id: spec.theorem,
                bound_value: 1.0,
                measured_infidelity: None,
                terms: BTreeMap::from([("trivial".to_string(), 1.0)]),
                satisfied: None,
                proven: true,
            });
        }
    }
    eval_bound(spec.theorem, spec.target.as_bound_target(), schedule, BOUND_POINTS)
        .map_err(numerical("schedule"))
}

/// Runs the dynamics in the configured mode and compares the result
/// against every bound of the experiment.
pub fn execute(exp: &Experiment) -> CliResult<RunOutput> {
    let gen = &exp.generator;
    let pol = policy(&exp.config.execution);
    let (mut result, records) = match exp.config.execution {
        ExecutionConfig::Ode { .. } => {
            let rho0 = DensityMatrix::pure(&exp.psi0).map_err(numerical("instance"))?;
            let mut r = integrate(gen, &rho0, &pol).map_err(numerical("execution"))?;
            r.cost = accumulate_cost(gen, COST_INTERVALS).map_err(numerical("schedule"))?;
            (r, None)
        }
        ExecutionConfig::Trajectories { n_traj, master_seed, .. } => {
            let mc = monte_carlo(gen, &exp.psi0, n_traj, master_seed, &pol).map_err(numerical("execution"))?;
            let rho0 = eigenpath::linalg::outer(&exp.psi0, &exp.psi0);
            let f0 = fidelity(&rho0, &gen.projector(0.0).map_err(numerical("instance"))?)
                .map_err(numerical("execution"))?;
            let p1 = gen.projector(1.0).map_err(numerical("instance"))?;
            let f1 = fidelity(&mc.mean_state, &p1).map_err(numerical("execution"))?;
            let mut diagnostics = BTreeMap::new();
            diagnostics.insert("n_traj".into(), json!(mc.stats.n_traj));
            diagnostics.insert("master_seed".into(), json!(master_seed));
            diagnostics.insert("fidelity_stderr".into(), json!(mc.stats.stderr));
            diagnostics.insert("jump_mean".into(), json!(mc.stats.jump_mean));
            diagnostics.insert("jump_variance".into(), json!(mc.stats.jump_variance));
            diagnostics.insert("sampled_time_mean".into(), json!(mc.stats.sampled_time_mean));
            diagnostics.insert("max_norm_drift".into(), json!(mc.stats.max_norm_drift));
            let r = RunResult {
                samples: vec![Sample { s: 0.0, fidelity: f0 }, Sample { s: 1.0, fidelity: f1 }],
                final_fidelity: f1,
                cost: mc.stats.expected,
                diagnostics,
                rho_samples: vec![(0.0, rho0), (1.0, mc.mean_state.clone())],
            };
            (r, Some(mc.records))
        }
    };

    let solution = match &exp.instance.qlsp {
        Some(q) => {
            let t = gen.path().embed_state(&q.target_state().map_err(numerical("instance"))?);
            let rho = result.final_state();
            if rho.nrows() != t.len() {
                return Err(CliError::kernel(
                    "instance",
                    eigenpath::Error::DimensionMismatch(format!(
                        "final state has dimension {}, solution state {}",
                        rho.nrows(),
                        t.len()
                    )),
                ));
            }
            Some((q.kappa, (t.adjoint() * rho * &t)[(0, 0)].re.clamp(0.0, 1.0)))
        }
        None => None,
    };
    let d = &mut result.diagnostics;
    if let Some((kappa, f)) = solution {
        d.insert("kappa".into(), json!(kappa));
        d.insert("solution_fidelity".into(), json!(f));
    }
    d.insert("generator".into(), json!(gen.label()));
    d.insert("theorem".into(), json!(exp.theorem().label()));
    d.insert("dim".into(), json!(gen.dim()));
    d.insert("tracked_eigenvalues".into(), json!(exp.m));
    d.insert("primary_cost".into(), json!(result.cost.primary(gen)));
    if let Some(c) = exp.c {
        d.insert("schedule_constant".into(), json!(c));
    }
    if let Some(g) = exp.cost_guarantee() {
        d.insert("cost_guarantee".into(), json!(g));
    }
    if let Some(gm) = &exp.gap_model {
        d.insert("gap_model".into(), serde_json::to_value(gm).expect("gap model serialises"));
    }
    for (k, v) in gen.path().metadata() {
        d.entry(format!("path.{k}")).or_insert(json!(v));
    }

    let state = result.final_state().clone();
    let mut reports = Vec::with_capacity(exp.bounds.len());
    for spec in &exp.bounds {
        let mut rep = bound(spec, &gen.rate)?;
        let p = spec.target.final_projector(gen).map_err(numerical("instance"))?;
        let f = fidelity(&state, &p).map_err(numerical("execution"))?;
        rep.record(1.0 - f);
        reports.push(rep);
    }
    Ok(RunOutput { result, reports, records })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialise");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

/// Writes the run artifacts into `dir`, which is created if needed.
pub fn write_outputs(dir: &Path, names: &OutputConfig, out: &RunOutput) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_json(&dir.join(&names.run_result), &out.result)?;
    write_json(&dir.join(&names.bound_report), &out.reports)?;

    let csv_path = dir.join(&names.samples_csv);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    for s in &out.result.samples {
        w.serialize(s).map_err(|e| csv_error(&csv_path, e))?;
    }
    if out.result.samples.is_empty() {
        w.write_record(["s", "fidelity"]).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;

    if let Some(records) = &out.records {
        let path = dir.join(&names.trajectories);
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("records serialise"));
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// Full `run` subcommand: build, execute, write, and check the bounds.
pub fn run(exp: &Experiment, out_dir: &Path, allow_violations: bool) -> CliResult<RunOutput> {
    let out = execute(exp)?;
    write_outputs(out_dir, &exp.config.outputs, &out)?;
    let bad = out.violations();
    if bad > 0 && !allow_violations {
        return Err(CliError::BoundViolation(bad));
    }
    Ok(out)
}
