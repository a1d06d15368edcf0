//! Turns a validated configuration into a generator, a schedule and the
//! path data its bound needs.

use std::sync::Arc;

use eigenpath::linalg::operator_norm;
use eigenpath::paths::{exp_path, qubitised_path, trotter_path, TrotterPath, PROBE_POINTS};
use eigenpath::schedules::{
    adaptive_schedule, compute_c, cost_guarantee, BoundTarget, PathNorms, NORM_GRID,
};
use eigenpath::{
    CMatrix, CVector, GapModel, GapProfile, Generator, GroverInstance, LinearPath, MatrixJson,
    OperatorPath, QlspInstance, Schedule, SharedPath, TheoremId, TrotterOrder, VectorJson, C64,
};

use crate::config::{
    Affine, ExperimentConfig, GeneratorConfig, InstanceConfig, MatrixSource, ScheduleConfig,
    UnitaryConfig, VectorSource,
};
use crate::error::{CliError, CliResult};

/// Path data a bound is evaluated on.
#[derive(Debug, Clone)]
pub enum Target {
    Hermitian(SharedPath),
    Unitary(SharedPath),
    Trotter(Arc<TrotterPath>),
}

impl Target {
    pub fn as_bound_target(&self) -> BoundTarget<'_> {
        match self {
            Target::Hermitian(p) => BoundTarget::Hermitian(p.as_ref()),
            Target::Unitary(p) => BoundTarget::Unitary(p.as_ref()),
            Target::Trotter(t) => BoundTarget::Trotter(t.as_ref()),
        }
    }

    /// Projector onto the space whose infidelity the bound controls.
    pub fn final_projector(&self, gen: &Generator) -> eigenpath::Result<CMatrix> {
        match self {
            Target::Unitary(p) => Ok(p.projector(1.0)?.p),
            _ => gen.projector(1.0),
        }
    }
}

/// A bound to evaluate after the run.
#[derive(Debug, Clone)]
pub struct BoundSpec {
    pub theorem: TheoremId,
    pub target: Target,
}

/// Instance data before any generator-specific normalisation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub path: Arc<LinearPath>,
    pub profile: Option<GapProfile>,
    pub psi0: CVector,
    /// Affine map bringing the path norm to at most 1/2.
    pub normalise: Affine,
    pub qlsp: Option<QlspInstance>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub instance: Instance,
    pub generator: Generator,
    /// Initial state in the generator's space.
    pub psi0: CVector,
    /// Primary bound first, then the jump-form bounds for jump generators.
    pub bounds: Vec<BoundSpec>,
    /// Gap model in the generator's normalisation.
    pub gap_model: Option<GapModel>,
    pub c: Option<f64>,
    /// Number of distinct tracked eigenvalues.
    pub m: usize,
}

impl Experiment {
    pub fn theorem(&self) -> TheoremId {
        self.bounds[0].theorem
    }

    pub fn schedule(&self) -> &Schedule {
        &self.generator.rate
    }

    pub fn cost_guarantee(&self) -> Option<f64> {
        cost_guarantee(&self.generator.rate)
    }
}

fn kernel(path: &str) -> impl Fn(eigenpath::Error) -> CliError + '_ {
    move |e| CliError::kernel(path, e)
}

fn load_matrix(src: &MatrixSource, path: &str) -> CliResult<CMatrix> {
    match src {
        MatrixSource::File { file } => {
            let text = std::fs::read_to_string(file).map_err(|e| CliError::io(file, e))?;
            let j: MatrixJson =
                serde_json::from_str(&text).map_err(|e| CliError::validation(path, e.to_string()))?;
            j.to_matrix().map_err(kernel(path))
        }
        MatrixSource::Inline(j) => j.to_matrix().map_err(kernel(path)),
        MatrixSource::Random { random } => {
            let mut rng = eigenpath::random::rng(random.seed);
            eigenpath::random::random_conditioned_hermitian(&mut rng, random.dim, random.kappa)
                .map_err(kernel(path))
        }
    }
}

fn load_vector(src: &VectorSource, path: &str) -> CliResult<CVector> {
    let j = match src {
        VectorSource::File { file } => {
            let text = std::fs::read_to_string(file).map_err(|e| CliError::io(file, e))?;
            serde_json::from_str::<VectorJson>(&text).map_err(|e| CliError::validation(path, e.to_string()))?
        }
        VectorSource::Inline(j) => j.clone(),
    };
    j.to_vector().map_err(kernel(path))
}

/// Builds the instance path, its gap profile and initial state.
pub fn build_instance(cfg: &InstanceConfig) -> CliResult<Instance> {
    match cfg {
        InstanceConfig::Grover { n, marked, reduce } => {
            let inst = GroverInstance::new(*n, marked.clone()).map_err(kernel("instance.marked"))?;
            let (path, psi0) = if *reduce {
                let r = inst.ratio();
                let psi = CVector::from_column_slice(&[C64::new(r.sqrt(), 0.0), C64::new((1.0 - r).sqrt(), 0.0)]);
                (inst.reduced_path().map_err(kernel("instance"))?, psi)
            } else {
                (inst.path().map_err(kernel("instance"))?, inst.uniform())
            };
            Ok(Instance {
                path: Arc::new(path),
                profile: Some(GapProfile::Grover { ratio: inst.ratio() }),
                psi0,
                normalise: Affine { shift: 0.5, scale: 1.0 },
                qlsp: None,
            })
        }
        InstanceConfig::Qlsp { matrix, b, kappa_hint } => {
            let a = load_matrix(matrix, "instance.matrix")?;
            let b = match b {
                Some(src) => load_vector(src, "instance.b")?,
                None => CVector::from_element(a.nrows(), C64::new(1.0 / (a.nrows() as f64).sqrt(), 0.0)),
            };
            let inst = QlspInstance::new(&a, &b, *kappa_hint).map_err(kernel("instance"))?;
            Ok(Instance {
                path: Arc::new(inst.path().map_err(kernel("instance"))?),
                profile: Some(GapProfile::Qlsp { kappa: inst.kappa }),
                psi0: inst.initial_state(),
                normalise: Affine { shift: 0.0, scale: 0.5 },
                qlsp: Some(inst),
            })
        }
        InstanceConfig::Custom { h0, h1, window, gap, normalise } => {
            let h0 = load_matrix(h0, "instance.h0")?;
            let h1 = load_matrix(h1, "instance.h1")?;
            let norm = operator_norm(&h0).max(operator_norm(&h1));
            let path = LinearPath::new(h0, h1, window.clone(), "custom").map_err(kernel("instance"))?;
            let pp = path.projector(0.0).map_err(kernel("instance.window"))?;
            let k = pp.inside.iter().position(|&b| b).ok_or_else(|| {
                CliError::kernel("instance.window", eigenpath::Error::EmptyWindow)
            })?;
            let psi0 = pp.decomposition.eigenvectors.column(k).into_owned();
            Ok(Instance {
                path: Arc::new(path),
                profile: gap.clone(),
                psi0,
                normalise: normalise.unwrap_or(Affine {
                    shift: 0.0,
                    scale: if norm > 0.5 { 0.5 / norm } else { 1.0 },
                }),
                qlsp: None,
            })
        }
    }
}

/// Smallest gap of the tracked window over the probe grid.
fn min_gap(path: &dyn OperatorPath) -> eigenpath::Result<f64> {
    let mut g = f64::INFINITY;
    for k in 0..=PROBE_POINTS {
        g = g.min(path.projector(k as f64 / PROBE_POINTS as f64)?.gap);
    }
    Ok(g)
}

/// Builds the generator, schedule and bound targets for a validated config.
pub fn build(config: &ExperimentConfig) -> CliResult<Experiment> {
    let instance = build_instance(&config.instance)?;
    let p = config.p();
    let source: SharedPath = instance.path.clone();
    let m = source.projector(0.0).map_err(kernel("instance"))?.m;
    let model = |profile: Option<&GapProfile>| -> CliResult<Option<GapModel>> {
        profile
            .map(|pr| GapModel::uniform(pr.clone(), p).map_err(kernel("instance.gap")))
            .transpose()
    };

    // (theorem, path whose norms enter C, gap model, bound targets, path)
    let (theorem, norm_path, gap_model, bounds, gen_path, phase): (
        TheoremId,
        SharedPath,
        Option<GapModel>,
        Vec<BoundSpec>,
        SharedPath,
        Option<eigenpath::Phi>,
    ) = match &config.generator {
        GeneratorConfig::Liouville => (
            TheoremId::Liouville,
            source.clone(),
            model(instance.profile.as_ref())?,
            vec![BoundSpec {
                theorem: TheoremId::Liouville,
                target: Target::Hermitian(source.clone()),
            }],
            source.clone(),
            None,
        ),
        GeneratorConfig::PhaseRand { phi } => (
            TheoremId::PhaseRandomisation,
            source.clone(),
            model(instance.profile.as_ref())?,
            vec![BoundSpec {
                theorem: TheoremId::PhaseRandomisation,
                target: Target::Hermitian(source.clone()),
            }],
            source.clone(),
            Some(phi.clone()),
        ),
        GeneratorConfig::Jump { unitary } => {
            let aff = instance.normalise;
            let hn = Arc::new(instance.path.affine(aff.shift, aff.scale).map_err(kernel("instance.normalise"))?);
            let scaled = instance.profile.as_ref().map(|pr| GapProfile::Scaled {
                base: Box::new(pr.clone()),
                factor: aff.scale,
            });
            let hn_shared: SharedPath = hn.clone();
            match unitary {
                UnitaryConfig::Exp | UnitaryConfig::Qubitised => {
                    let (theorem, u): (TheoremId, SharedPath) = if matches!(unitary, UnitaryConfig::Exp) {
                        (
                            TheoremId::Exp,
                            Arc::new(exp_path(hn_shared.clone()).map_err(kernel("generator.unitary"))?),
                        )
                    } else {
                        (
                            TheoremId::Qubitised,
                            Arc::new(qubitised_path(hn_shared.clone()).map_err(kernel("generator.unitary"))?),
                        )
                    };
                    let mut bounds = vec![BoundSpec {
                        theorem,
                        target: Target::Hermitian(hn_shared.clone()),
                    }];
                    for t in [TheoremId::JumpTight, TheoremId::JumpLoose] {
                        bounds.push(BoundSpec {
                            theorem: t,
                            target: Target::Unitary(u.clone()),
                        });
                    }
                    (theorem, hn_shared, model(scaled.as_ref())?, bounds, u, None)
                }
                UnitaryConfig::Trotter { h, h_relative, order } => {
                    let order = TrotterOrder::from_int(*order).map_err(kernel("generator.unitary.order"))?;
                    let h = match (h, h_relative) {
                        (Some(h), _) => *h,
                        (None, Some(r)) => r * min_gap(hn.as_ref()).map_err(kernel("instance"))?.sqrt(),
                        (None, None) => unreachable!("validated"),
                    };
                    let tp = Arc::new(trotter_path(hn.clone(), h, order).map_err(kernel("generator.unitary.h"))?);
                    let trotter_profile = scaled.map(|pr| GapProfile::Trotter { base: Box::new(pr), h });
                    let u: SharedPath = tp.clone();
                    let mut bounds = vec![BoundSpec {
                        theorem: TheoremId::Trotter,
                        target: Target::Trotter(tp.clone()),
                    }];
                    for t in [TheoremId::JumpTight, TheoremId::JumpLoose] {
                        bounds.push(BoundSpec {
                            theorem: t,
                            target: Target::Unitary(u.clone()),
                        });
                    }
                    (
                        TheoremId::Trotter,
                        u.clone(),
                        model(trotter_profile.as_ref())?,
                        bounds,
                        u,
                        None,
                    )
                }
            }
        }
    };

    let (rate, c) = match &config.schedule {
        ScheduleConfig::Constant { value } => (Schedule::constant(*value).map_err(kernel("schedule.value"))?, None),
        ScheduleConfig::Adaptive { epsilon, .. } => {
            let gm = gap_model
                .as_ref()
                .ok_or_else(|| CliError::kernel("instance.gap", eigenpath::Error::GapModelMissing))?;
            let norms = PathNorms::from_path(norm_path.as_ref(), NORM_GRID).map_err(kernel("instance"))?;
            let c = compute_c(theorem, &norms, gm, m);
            (adaptive_schedule(theorem, gm, *epsilon, c).map_err(kernel("schedule"))?, Some(c))
        }
    };

    let generator = match phase {
        Some(phi) => Generator::phase_randomisation(gen_path.clone(), phi, gap_model.clone(), rate),
        None => match config.generator {
            GeneratorConfig::Liouville => Generator::liouville(gen_path.clone(), rate),
            _ => Generator::jump(gen_path.clone(), rate),
        },
    }
    .map_err(kernel("generator"))?;
    let psi0 = gen_path.embed_state(&instance.psi0);
    Ok(Experiment {
        config: config.clone(),
        instance,
        generator,
        psi0,
        bounds,
        gap_model,
        c,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use std::path::Path;

    fn cfg(v: serde_json::Value) -> ExperimentConfig {
        parse_config(&v.to_string(), &[], Path::new(".")).unwrap()
    }

    #[test]
    fn every_generator_builds_on_grover() {
        for g in [
            serde_json::json!({"kind": "liouville"}),
            serde_json::json!({"kind": "phase_rand"}),
            serde_json::json!({"kind": "jump", "unitary": {"kind": "exp"}}),
            serde_json::json!({"kind": "jump", "unitary": {"kind": "qubitised"}}),
            serde_json::json!({"kind": "jump", "unitary": {"kind": "trotter", "h_relative": 0.1}}),
        ] {
            let e = build(&cfg(serde_json::json!({
                "instance": {"kind": "grover", "n": 8, "marked": [3]},
                "generator": g,
                "schedule": {"kind": "adaptive", "epsilon": 0.1}
            })))
            .unwrap();
            assert_eq!(e.psi0.len(), e.generator.dim());
            assert!((e.psi0.norm() - 1.0).abs() < 1e-12);
            assert!(e.c.unwrap() > 0.0);
            let f = eigenpath::dynamics::fidelity(&eigenpath::linalg::outer(&e.psi0, &e.psi0), &e.generator.projector(0.0).unwrap()).unwrap();
            assert!((f - 1.0).abs() < 1e-9, "{:?}: {f}", e.theorem());
        }
    }

    #[test]
    fn qlsp_random_matrix_has_requested_condition_number() {
        let e = build(&cfg(serde_json::json!({
            "instance": {"kind": "qlsp", "matrix": {"random": {"dim": 4, "kappa": 8.0, "seed": 3}}},
            "generator": {"kind": "liouville"},
            "schedule": {"kind": "constant", "value": 10.0}
        })))
        .unwrap();
        let q = e.instance.qlsp.unwrap();
        assert!((q.kappa_exact - 8.0).abs() < 1e-8);
        assert_eq!(e.generator.dim(), 16);
    }

    #[test]
    fn kernel_rejections_map_to_validation_exit() {
        let e = build(&cfg(serde_json::json!({
            "instance": {"kind": "qlsp", "matrix": {"rows": 2, "cols": 2, "re": [1.0, 0.0, 0.0, 1.0]}},
            "generator": {"kind": "liouville"},
            "schedule": {"kind": "constant", "value": 1.0}
        })))
        .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("KappaTooSmall"), "{e}");
    }
}
