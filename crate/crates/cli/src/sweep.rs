//! One-parameter sweeps over a config template.

use std::path::Path;
use std::str::FromStr;

use eigenpath::schedules::loglog_slope;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GeneratorConfig, InstanceConfig, MatrixSource, ScheduleConfig, UnitaryConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::build;
use crate::run::execute;

/// Column order of the sweep table.
pub const SWEEP_COLUMNS: [&str; 6] = ["value", "cost", "final_fidelity", "infidelity", "bound", "satisfied"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[serde(rename = "N")]
    N,
    #[serde(rename = "M")]
    M,
    Kappa,
    Epsilon,
    Lambda,
    P,
    H,
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "N" | "n" => Ok(Axis::N),
            "M" | "m" => Ok(Axis::M),
            "kappa" => Ok(Axis::Kappa),
            "epsilon" => Ok(Axis::Epsilon),
            "lambda" => Ok(Axis::Lambda),
            "p" => Ok(Axis::P),
            "h" => Ok(Axis::H),
            _ => Err(format!("unknown axis '{s}' (expected N, M, kappa, epsilon, lambda, p or h)")),
        }
    }
}

impl Axis {
    /// Axes whose cost is fitted by a power law.
    pub fn fits_slope(self) -> bool {
        matches!(self, Axis::N | Axis::Kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Expected jumps for jump generators, Hamiltonian time otherwise.
    pub cost: f64,
    pub final_fidelity: f64,
    pub infidelity: f64,
    /// Value of the primary bound.
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
    /// Log-log slope of cost against value, for the N and kappa axes.
    pub slope: Option<f64>,
    /// Extra per-row diagnostics (solution overlap for linear systems).
    pub solution_fidelity: Vec<Option<f64>>,
}

impl SweepOutput {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.satisfied).count()
    }
}

fn axis_error(axis: Axis, why: &str) -> CliError {
    CliError::validation("sweep.axis", format!("axis {axis:?} {why}"))
}

fn as_count(value: f64, axis: Axis) -> CliResult<usize> {
    if value.fract() != 0.0 || value < 1.0 {
        return Err(CliError::validation("sweep.values", format!("{axis:?} needs positive integers, got {value}")));
    }
    Ok(value as usize)
}

/// The template with `axis` set to `value`, revalidated.
pub fn apply_axis(template: &ExperimentConfig, axis: Axis, value: f64) -> CliResult<ExperimentConfig> {
    let mut cfg = template.clone();
    match axis {
        Axis::N => match &mut cfg.instance {
            InstanceConfig::Grover { n, .. } => *n = as_count(value, axis)?,
            _ => return Err(axis_error(axis, "needs a grover instance")),
        },
        Axis::M => match &mut cfg.instance {
            InstanceConfig::Grover { marked, .. } => *marked = (0..as_count(value, axis)?).collect(),
            _ => return Err(axis_error(axis, "needs a grover instance")),
        },
        Axis::Kappa => match &mut cfg.instance {
            InstanceConfig::Qlsp { matrix: MatrixSource::Random { random }, .. } => random.kappa = value,
            InstanceConfig::Qlsp { kappa_hint, .. } => *kappa_hint = Some(value),
            _ => return Err(axis_error(axis, "needs a qlsp instance")),
        },
        Axis::Epsilon => match &mut cfg.schedule {
            ScheduleConfig::Adaptive { epsilon, .. } => *epsilon = value,
            _ => return Err(axis_error(axis, "needs an adaptive schedule")),
        },
        Axis::P => match &mut cfg.schedule {
            ScheduleConfig::Adaptive { p, .. } => *p = value,
            _ => return Err(axis_error(axis, "needs an adaptive schedule")),
        },
        Axis::Lambda => match &mut cfg.schedule {
            ScheduleConfig::Constant { value: v } => *v = value,
            _ => return Err(axis_error(axis, "needs a constant schedule")),
        },
        Axis::H => match &mut cfg.generator {
            GeneratorConfig::Jump {
                unitary: UnitaryConfig::Trotter { h, h_relative, .. },
            } => {
                *h = Some(value);
                *h_relative = None;
            }
            _ => return Err(axis_error(axis, "needs a trotter generator")),
        },
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every sweep point (concurrently) and collects rows in value order.
pub fn sweep(template: &ExperimentConfig, axis: Axis, values: &[f64]) -> CliResult<SweepOutput> {
    if values.is_empty() {
        return Err(CliError::validation("sweep.values", "no values given"));
    }
    let configs = values
        .iter()
        .map(|&v| apply_axis(template, axis, v))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = configs
        .par_iter()
        .zip(values.par_iter())
        .map(|(cfg, &value)| -> CliResult<(SweepRow, Option<f64>)> {
            let exp = build(cfg)?;
            let out = execute(&exp)?;
            let primary = out.primary();
            let sol = out
                .result
                .diagnostics
                .get("solution_fidelity")
                .and_then(|v| v.as_f64());
            Ok((
                SweepRow {
                    value,
                    cost: out.result.cost.primary(&exp.generator),
                    final_fidelity: out.result.final_fidelity,
                    infidelity: out.result.infidelity(),
                    bound: primary.bound_value,
                    satisfied: primary.satisfied.unwrap_or(false),
                },
                sol,
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (rows, solution_fidelity): (Vec<SweepRow>, Vec<Option<f64>>) = rows.into_iter().unzip();
    let slope = if axis.fits_slope() && rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.cost).collect();
        Some(loglog_slope(&x, &y))
    } else {
        None
    };
    Ok(SweepOutput {
        axis,
        rows,
        slope,
        solution_fidelity,
    })
}

/// Writes `sweep.csv` (columns [`SWEEP_COLUMNS`]) and `sweep_summary.json`.
pub fn write_sweep(dir: &Path, out: &SweepOutput) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("sweep.csv");
    let io = |e: csv::Error| CliError::io(dir.join("sweep.csv"), std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    w.write_record(SWEEP_COLUMNS).map_err(io)?;
    for r in &out.rows {
        w.write_record([
            r.value.to_string(),
            r.cost.to_string(),
            r.final_fidelity.to_string(),
            r.infidelity.to_string(),
            r.bound.to_string(),
            r.satisfied.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let summary = dir.join("sweep_summary.json");
    let mut text = serde_json::to_string_pretty(out).expect("sweep output serialises");
    text.push('\n');
    std::fs::write(&summary, text).map_err(|e| CliError::io(&summary, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn template() -> ExperimentConfig {
        parse_config(
            &serde_json::json!({
                "instance": {"kind": "grover", "n": 8, "marked": [0]},
                "generator": {"kind": "jump", "unitary": {"kind": "exp"}},
                "schedule": {"kind": "adaptive", "p": 1.5, "epsilon": 0.1}
            })
            .to_string(),
            &[],
            Path::new("."),
        )
        .unwrap()
    }

    #[test]
    fn axes_apply_to_matching_configs_only() {
        let t = template();
        assert!(matches!(apply_axis(&t, Axis::N, 16.0).unwrap().instance, InstanceConfig::Grover { n: 16, .. }));
        assert!(matches!(
            apply_axis(&t, Axis::M, 3.0).unwrap().instance,
            InstanceConfig::Grover { ref marked, .. } if marked == &vec![0, 1, 2]
        ));
        assert!(apply_axis(&t, Axis::Kappa, 4.0).is_err());
        assert!(apply_axis(&t, Axis::Lambda, 4.0).is_err());
        assert!(apply_axis(&t, Axis::H, 0.1).is_err());
        assert!(apply_axis(&t, Axis::N, 2.5).is_err());
        assert_eq!(apply_axis(&t, Axis::Epsilon, 1.5).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn epsilon_sweep_meets_every_target() {
        let out = sweep(&template(), Axis::Epsilon, &[0.2, 0.1, 0.05]).unwrap();
        for r in &out.rows {
            assert!(r.infidelity <= r.value, "{r:?}");
            assert!(r.satisfied);
        }
        assert!(out.rows[0].cost < out.rows[2].cost);
        assert!(out.slope.is_none());
    }

    #[test]
    fn axis_names_parse() {
        assert_eq!("kappa".parse::<Axis>().unwrap(), Axis::Kappa);
        assert_eq!("N".parse::<Axis>().unwrap(), Axis::N);
        assert!("q".parse::<Axis>().is_err());
    }
}
