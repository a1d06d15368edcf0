//! Experiment configuration: a single JSON document, validated in full
//! before any computation starts.

use std::path::{Path, PathBuf};

use eigenpath::{GapProfile, MatrixJson, Phi, VectorJson, WindowRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub generator: GeneratorConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub execution: ExecutionConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceConfig {
    Grover {
        n: usize,
        marked: Vec<usize>,
        /// Run on the two-dimensional invariant subspace spanned by the
        /// uniform superpositions of marked and unmarked items.
        #[serde(default = "default_true")]
        reduce: bool,
    },
    Qlsp {
        matrix: MatrixSource,
        /// Right-hand side; the normalised all-ones vector when absent.
        #[serde(default)]
        b: Option<VectorSource>,
        #[serde(default)]
        kappa_hint: Option<f64>,
    },
    Custom {
        h0: MatrixSource,
        h1: MatrixSource,
        window: WindowRule,
        /// Lower bound on the gap of the tracked window, required by
        /// adaptive schedules and phase randomisation.
        #[serde(default)]
        gap: Option<GapProfile>,
        /// Affine map `scale·(H − shift)` applied before building unitary
        /// walks; chosen to bring the norm to 1/2 when absent.
        #[serde(default)]
        normalise: Option<Affine>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    File { file: PathBuf },
    Random { random: RandomMatrix },
    Inline(MatrixJson),
}

/// Random Hermitian matrix with unit norm and condition number `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMatrix {
    pub dim: usize,
    pub kappa: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    File { file: PathBuf },
    Inline(VectorJson),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Liouville,
    Jump { unitary: UnitaryConfig },
    PhaseRand {
        #[serde(default)]
        phi: Phi,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnitaryConfig {
    Exp,
    Qubitised,
    Trotter {
        /// Absolute step size.
        #[serde(default)]
        h: Option<f64>,
        /// Step size as a multiple of `√(min gap)` of the normalised path.
        #[serde(default)]
        h_relative: Option<f64>,
        #[serde(default = "default_order")]
        order: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant { value: f64 },
    Adaptive {
        #[serde(default = "default_p")]
        p: f64,
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExecutionConfig {
    Ode {
        #[serde(default = "default_step_cap")]
        step_cap: f64,
        /// Steps satisfy `Δs·λ(s) ≤ rate_factor`.
        #[serde(default = "default_rate_factor")]
        rate_factor: f64,
        /// Scale the rate bound by how far each jump unitary moves the state.
        #[serde(default)]
        motion_scaled: bool,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Trajectories {
        n_traj: usize,
        #[serde(default)]
        master_seed: u64,
        /// Step cap for the integrator used by deterministic trajectories.
        #[serde(default = "default_step_cap")]
        step_cap: f64,
    },
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig::Ode {
            step_cap: default_step_cap(),
            rate_factor: default_rate_factor(),
            motion_scaled: false,
            samples: default_samples(),
        }
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub run_result: String,
    pub bound_report: String,
    pub samples_csv: String,
    /// Per-trajectory records (JSON lines), trajectory mode only.
    pub trajectories: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            run_result: "run_result.json".into(),
            bound_report: "bound_report.json".into(),
            samples_csv: "samples.csv".into(),
            trajectories: "trajectories.jsonl".into(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_order() -> u32 {
    2
}
fn default_p() -> f64 {
    1.5
}
fn default_rate_factor() -> f64 {
    eigenpath::StepPolicy::default().rate_factor
}

fn default_step_cap() -> f64 {
    1e-2
}
fn default_samples() -> usize {
    100
}

/// Parses a config, applies `overrides` (`dotted.path=json` pairs), and
/// validates it. Relative file references are resolved against `base`.
pub fn parse_config(text: &str, overrides: &[String], base: &Path) -> CliResult<ExperimentConfig> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::validation("config", e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::validation("config", e.to_string()))?;
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, overrides, base)
}

/// Sets the field at a dotted path (`schedule.epsilon=0.05`) to a JSON
/// value, or to the raw string when the right side is not valid JSON.
pub fn apply_override(root: &mut serde_json::Value, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::validation("--set", format!("expected key=value, got '{spec}'")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    set_path(root, path, value)
}

pub fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        cur = match cur {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()))
            }
            serde_json::Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::validation(path, format!("'{part}' is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::validation(path, format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::validation(path, format!("'{part}' is not inside an object"))),
        };
    }
    Ok(())
}

fn check(cond: bool, path: &str, message: impl Into<String>) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::validation(path, message))
    }
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ExperimentConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.instance {
            InstanceConfig::Qlsp { matrix, b, .. } => {
                if let MatrixSource::File { file } = matrix {
                    fix(file);
                }
                if let Some(VectorSource::File { file }) = b {
                    fix(file);
                }
            }
            InstanceConfig::Custom { h0, h1, .. } => {
                for m in [h0, h1] {
                    if let MatrixSource::File { file } = m {
                        fix(file);
                    }
                }
            }
            InstanceConfig::Grover { .. } => {}
        }
    }

    /// Parameter domains and file existence; no numerical work.
    pub fn validate(&self) -> CliResult<()> {
        match &self.instance {
            InstanceConfig::Grover { n, marked, .. } => {
                check(*n >= 2, "instance.n", format!("N must be at least 2, got {n}"))?;
                check(
                    !marked.is_empty() && marked.len() < *n,
                    "instance.marked",
                    format!("need 1 <= |M| < N, got |M| = {}", marked.len()),
                )?;
                if let Some(bad) = marked.iter().find(|&&k| k >= *n) {
                    return Err(CliError::validation("instance.marked", format!("index {bad} outside 0..{n}")));
                }
            }
            InstanceConfig::Qlsp { matrix, b, kappa_hint } => {
                validate_matrix(matrix, "instance.matrix")?;
                if let Some(VectorSource::File { file }) = b {
                    check(file.is_file(), "instance.b.file", format!("{} does not exist", file.display()))?;
                }
                if let Some(k) = kappa_hint {
                    check(finite_positive(*k), "instance.kappa_hint", format!("must be positive, got {k}"))?;
                }
            }
            InstanceConfig::Custom { h0, h1, gap, normalise, .. } => {
                validate_matrix(h0, "instance.h0")?;
                validate_matrix(h1, "instance.h1")?;
                if let Some(a) = normalise {
                    check(finite_positive(a.scale), "instance.normalise.scale", "must be positive")?;
                    check(a.shift.is_finite(), "instance.normalise.shift", "must be finite")?;
                }
                let needs_gap = matches!(self.schedule, ScheduleConfig::Adaptive { .. })
                    || matches!(self.generator, GeneratorConfig::PhaseRand { .. });
                check(
                    gap.is_some() || !needs_gap,
                    "instance.gap",
                    "a gap profile is required for adaptive schedules and phase randomisation",
                )?;
            }
        }
        match &self.generator {
            GeneratorConfig::Jump {
                unitary: UnitaryConfig::Trotter { h, h_relative, order },
            } => {
                check(
                    h.is_some() != h_relative.is_some(),
                    "generator.unitary",
                    "give exactly one of h and h_relative",
                )?;
                if let Some(h) = h {
                    check(finite_positive(*h), "generator.unitary.h", format!("h must be > 0, got {h}"))?;
                }
                if let Some(h) = h_relative {
                    check(
                        finite_positive(*h) && *h < 1.0,
                        "generator.unitary.h_relative",
                        format!("must lie in (0, 1), got {h}"),
                    )?;
                }
                check(
                    *order == 1 || *order == 2,
                    "generator.unitary.order",
                    format!("order must be 1 or 2, got {order}"),
                )?;
            }
            GeneratorConfig::PhaseRand { phi: Phi::Table { x, value } } => {
                Phi::table(x.clone(), value.clone())
                    .map_err(|e| CliError::validation("generator.phi", e.to_string()))?;
                check(
                    matches!(self.execution, ExecutionConfig::Ode { .. }),
                    "generator.phi",
                    "tabulated phi is supported in ode mode only",
                )?;
            }
            _ => {}
        }
        match &self.schedule {
            ScheduleConfig::Constant { value } => check(
                value.is_finite() && *value >= 0.0,
                "schedule.value",
                format!("rate must be finite and nonnegative, got {value}"),
            )?,
            ScheduleConfig::Adaptive { p, epsilon } => {
                check(
                    *epsilon > 0.0 && *epsilon < 1.0,
                    "schedule.epsilon",
                    format!("epsilon must lie in (0, 1), got {epsilon}"),
                )?;
                check((1.0..=2.0).contains(p), "schedule.p", format!("p must lie in [1, 2], got {p}"))?;
            }
        }
        match &self.execution {
            ExecutionConfig::Ode {
                step_cap,
                rate_factor,
                samples,
                ..
            } => {
                check(
                    finite_positive(*step_cap) && *step_cap <= 1.0,
                    "execution.step_cap",
                    format!("must lie in (0, 1], got {step_cap}"),
                )?;
                check(
                    finite_positive(*rate_factor) && *rate_factor <= 1.0,
                    "execution.rate_factor",
                    format!("must lie in (0, 1], got {rate_factor}"),
                )?;
                check(*samples >= 1, "execution.samples", "need at least one sample")?;
            }
            ExecutionConfig::Trajectories { n_traj, step_cap, .. } => {
                check(*n_traj >= 2, "execution.n_traj", format!("need at least 2 trajectories, got {n_traj}"))?;
                check(
                    finite_positive(*step_cap) && *step_cap <= 1.0,
                    "execution.step_cap",
                    format!("must lie in (0, 1], got {step_cap}"),
                )?;
            }
        }
        let o = &self.outputs;
        for (name, f) in [
            ("outputs.run_result", &o.run_result),
            ("outputs.bound_report", &o.bound_report),
            ("outputs.samples_csv", &o.samples_csv),
            ("outputs.trajectories", &o.trajectories),
        ] {
            check(
                !f.is_empty() && Path::new(f).components().count() == 1,
                name,
                "must be a plain file name",
            )?;
        }
        Ok(())
    }

    /// The parameter `p` of the gap model.
    pub fn p(&self) -> f64 {
        match self.schedule {
            ScheduleConfig::Adaptive { p, .. } => p,
            ScheduleConfig::Constant { .. } => default_p(),
        }
    }

    pub fn master_seed(&self) -> Option<u64> {
        match self.execution {
            ExecutionConfig::Trajectories { master_seed, .. } => Some(master_seed),
            ExecutionConfig::Ode { .. } => None,
        }
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        if let ExecutionConfig::Trajectories { master_seed, .. } = &mut self.execution {
            *master_seed = seed;
        }
    }
}

fn validate_matrix(m: &MatrixSource, path: &str) -> CliResult<()> {
    match m {
        MatrixSource::File { file } => check(file.is_file(), path, format!("{} does not exist", file.display())),
        MatrixSource::Random { random } => {
            check(random.dim >= 2, path, "random matrix needs dim >= 2")?;
            check(
                random.kappa.is_finite() && random.kappa >= 1.0,
                path,
                format!("random matrix needs kappa >= 1, got {}", random.kappa),
            )
        }
        MatrixSource::Inline(j) => check(
            j.rows == j.cols && j.rows >= 1,
            path,
            format!("matrix must be square, got {}x{}", j.rows, j.cols),
        ),
    }
}
