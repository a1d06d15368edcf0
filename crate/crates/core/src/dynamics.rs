//! The three generators `L_s` of `dρ/ds = λ(s)L_s(ρ)`, a fixed-policy RK4
//! integrator for the marginal equation, fidelity and cost accounting.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, eig_hermitian, hermitian_residual, outer, trace, CMatrix, CVector, C64, I};
use crate::paths::{GapModel, PathKind, SharedPath};
use crate::schedules::{simpson_converged, Schedule, T0};

const TRACE_TOLERANCE: f64 = 1e-9;
const HERMITIAN_TOLERANCE: f64 = 1e-10;
const POSITIVITY_TOLERANCE: f64 = 1e-9;
/// Eigenvalue below which an evolved state counts as unphysical.
const NONPHYSICAL_THRESHOLD: f64 = -1e-6;
const MIN_STEP: f64 = 1e-9;

/// A validated density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidState(format!(
                "density matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let tr = trace(&matrix);
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace is {tr}, expected 1")));
        }
        let residual = hermitian_residual(&matrix);
        if residual > HERMITIAN_TOLERANCE {
            return Err(Error::InvalidState(format!("Hermitian residual {residual:.3e}")));
        }
        let low = min_eigenvalue(&matrix)?;
        if low < -POSITIVITY_TOLERANCE {
            return Err(Error::InvalidState(format!("negative eigenvalue {low:.3e}")));
        }
        Ok(DensityMatrix { matrix })
    }

    /// `|ψ⟩⟨ψ|` for the normalised `ψ`.
    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState("state vector has zero norm".into()));
        }
        let v = psi / c(norm);
        Ok(DensityMatrix { matrix: outer(&v, &v) })
    }

    /// The maximally mixed state on the range of a projector.
    pub fn from_projector(p: &CMatrix) -> Result<Self> {
        let tr = trace(p).re;
        if tr < 0.5 {
            return Err(Error::InvalidState("projector has rank 0".into()));
        }
        DensityMatrix::new(p / c(tr))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        trace_distance(&self.matrix, &other.matrix)
    }
}

fn min_eigenvalue(m: &CMatrix) -> Result<f64> {
    let dec = eig_hermitian(&symmetrise(m))?;
    Ok(dec.eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min))
}

fn symmetrise(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// `½‖A − B‖₁` for Hermitian `A`, `B`.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let dec = eig_hermitian(&symmetrise(&(a - b)))?;
    Ok(0.5 * dec.eigenvalues.iter().map(|z| z.re.abs()).sum::<f64>())
}

/// Characteristic function `φ` of the dephasing-time distribution, as a
/// function of `x = |ω|/g₀(s)`. Every choice has `φ(0) = 1` and `φ(x) = 0`
/// for `x ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phi {
    /// `max(0, 1 − x)`, the transform of the Fejér density.
    #[default]
    Fejer,
    /// Piecewise-linear interpolation of `(x, φ)` samples on `[0, 1]`.
    Table { x: Vec<f64>, value: Vec<f64> },
}

impl Phi {
    pub fn table(x: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("phi table: {msg}")));
        if x.len() != value.len() || x.len() < 2 {
            return bad("needs at least two (x, value) pairs of equal length");
        }
        if x[0] != 0.0 || (value[0] - 1.0).abs() > 1e-12 {
            return bad("must start at (0, 1)");
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || *x.last().unwrap() > 1.0 {
            return bad("x must increase strictly within [0, 1]");
        }
        if value.iter().any(|v| !(v.abs() <= 1.0)) {
            return bad("values must lie in [-1, 1]");
        }
        if *x.last().unwrap() == 1.0 && value.last().unwrap().abs() > 1e-12 {
            return bad("value at x = 1 must be 0");
        }
        Ok(Phi::Table { x, value })
    }

    /// `φ(ω)` for gap `g0`.
    pub fn eval(&self, omega: f64, g0: f64) -> f64 {
        let x = omega.abs() / g0;
        if x >= 1.0 {
            return 0.0;
        }
        match self {
            Phi::Fejer => 1.0 - x,
            Phi::Table { x: xs, value } => {
                let k = xs.partition_point(|&t| t <= x);
                if k >= xs.len() {
                    // Beyond the last sample, interpolate towards zero at 1.
                    let (x0, v0) = (xs[xs.len() - 1], value[value.len() - 1]);
                    return v0 * (1.0 - x) / (1.0 - x0);
                }
                let (x0, x1) = (xs[k - 1], xs[k]);
                let t = (x - x0) / (x1 - x0);
                value[k - 1] * (1.0 - t) + value[k] * t
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum GeneratorKind {
    /// `L_s(ρ) = −i[H(s), ρ]`; the rate plays the role of `T(s)`.
    Liouville { path: SharedPath },
    /// `L_s(ρ) = U(s)ρU(s)* − ρ`.
    JumpUnitary { path: SharedPath },
    /// `L_s(ρ) = PρP + ∫Q e^{−iτH}ρe^{iτH}Q dμ(τ) − ρ`.
    PhaseRandomisation {
        path: SharedPath,
        phi: Phi,
        gap_model: Option<GapModel>,
    },
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub kind: GeneratorKind,
    pub rate: Schedule,
}

/// The generator data at one value of `s`.
enum Frame {
    Liouville { t: f64, h: CMatrix },
    Jump { lam: f64, u: CMatrix },
    Phase { lam: f64, basis: CMatrix, weights: DMatrix<f64> },
}

impl Frame {
    /// `min(1, ‖U − 1‖_F)` for jump frames, 1 otherwise.
    fn motion(&self) -> f64 {
        match self {
            Frame::Jump { u, .. } => {
                let n = u.nrows();
                crate::linalg::frobenius(&(u - CMatrix::identity(n, n))).min(1.0)
            }
            _ => 1.0,
        }
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        match self {
            Frame::Liouville { t, h } => (h * rho - rho * h) * (-I * *t),
            Frame::Jump { lam, u } => (u * rho * u.adjoint() - rho) * c(*lam),
            Frame::Phase { lam, basis, weights } => {
                let mut inner = basis.adjoint() * rho * basis;
                inner.zip_apply(weights, |z, w| *z *= w);
                (basis * inner * basis.adjoint() - rho) * c(*lam)
            }
        }
    }
}

fn require_kind(path: &SharedPath, kind: PathKind, what: &str) -> Result<()> {
    if path.kind() != kind {
        return Err(Error::Unsupported(format!("{what} needs a {kind:?} path")));
    }
    Ok(())
}

impl Generator {
    pub fn liouville(path: SharedPath, rate: Schedule) -> Result<Self> {
        require_kind(&path, PathKind::Hermitian, "Liouville evolution")?;
        Ok(Generator {
            kind: GeneratorKind::Liouville { path },
            rate,
        })
    }

    pub fn jump(path: SharedPath, rate: Schedule) -> Result<Self> {
        require_kind(&path, PathKind::Unitary, "Poisson-distributed unitaries")?;
        Ok(Generator {
            kind: GeneratorKind::JumpUnitary { path },
            rate,
        })
    }

    pub fn phase_randomisation(path: SharedPath, phi: Phi, gap_model: Option<GapModel>, rate: Schedule) -> Result<Self> {
        require_kind(&path, PathKind::Hermitian, "phase randomisation")?;
        Ok(Generator {
            kind: GeneratorKind::PhaseRandomisation { path, phi, gap_model },
            rate,
        })
    }

    pub fn path(&self) -> &SharedPath {
        match &self.kind {
            GeneratorKind::Liouville { path }
            | GeneratorKind::JumpUnitary { path }
            | GeneratorKind::PhaseRandomisation { path, .. } => path,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            GeneratorKind::Liouville { .. } => "liouville",
            GeneratorKind::JumpUnitary { .. } => "jump",
            GeneratorKind::PhaseRandomisation { .. } => "phase_randomisation",
        }
    }

    pub fn dim(&self) -> usize {
        self.path().dim()
    }

    /// Projector defining the fidelity `Tr(P(s)ρ)`.
    pub fn projector(&self, s: f64) -> Result<CMatrix> {
        self.path().tracked_projector(s)
    }

    pub fn rate_at(&self, s: f64) -> Result<f64> {
        let lam = self.rate.evaluate(s);
        if !(lam.is_finite() && lam >= 0.0) {
            return Err(Error::ScheduleNotDifferentiable(format!("rate {lam} at s = {s}")));
        }
        Ok(lam)
    }

    /// `g₀(s)` of the phase-randomisation gap model.
    pub fn phase_gap(&self, s: f64) -> Result<f64> {
        match &self.kind {
            GeneratorKind::PhaseRandomisation { gap_model, .. } => {
                let g = gap_model.as_ref().ok_or(Error::GapModelMissing)?.g0(s);
                if !(g > 0.0) {
                    return Err(Error::NonPositiveGap { s });
                }
                Ok(g)
            }
            _ => Err(Error::Unsupported("only phase randomisation carries a gap model".into())),
        }
    }

    fn frame(&self, s: f64) -> Result<Frame> {
        let lam = self.rate_at(s)?;
        match &self.kind {
            GeneratorKind::Liouville { path } => Ok(Frame::Liouville { t: lam, h: path.value(s)? }),
            GeneratorKind::JumpUnitary { path } => Ok(Frame::Jump { lam, u: path.value(s)? }),
            GeneratorKind::PhaseRandomisation { path, phi, .. } => {
                let g0 = self.phase_gap(s)?;
                let pp = path.projector(s)?;
                let dec = &pp.decomposition;
                let n = dec.dim();
                let weights = DMatrix::from_fn(n, n, |j, k| match (pp.inside[j], pp.inside[k]) {
                    (true, true) => 1.0,
                    (false, false) => phi.eval(dec.eigenvalues[j].re - dec.eigenvalues[k].re, g0),
                    _ => 0.0,
                });
                Ok(Frame::Phase {
                    lam,
                    basis: dec.eigenvectors.clone(),
                    weights,
                })
            }
        }
    }

    /// `λ(s)·L_s(ρ)`.
    pub fn rhs(&self, s: f64, rho: &CMatrix) -> Result<CMatrix> {
        check_dim(self.dim(), rho)?;
        Ok(self.frame(s)?.apply(rho))
    }

    /// The averaged state `PρP + ∫Qe^{−iτH}ρe^{iτH}Q dμ` of a phase
    /// randomisation step at `s`.
    pub fn phase_channel(&self, s: f64, rho: &CMatrix) -> Result<CMatrix> {
        check_dim(self.dim(), rho)?;
        match self.frame(s)? {
            Frame::Phase { basis, weights, .. } => {
                let mut inner = basis.adjoint() * rho * &basis;
                inner.zip_apply(&weights, |z, w| *z *= w);
                Ok(&basis * inner * basis.adjoint())
            }
            _ => Err(Error::Unsupported("phase_channel needs a phase-randomisation generator".into())),
        }
    }
}

fn check_dim(n: usize, rho: &CMatrix) -> Result<()> {
    if rho.nrows() != n || rho.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{}, generator acts on dimension {n}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    Ok(())
}

/// `−iT(s)[H(s), ρ]`.
pub fn liouville_rhs(gen: &Generator, s: f64, rho: &CMatrix) -> Result<CMatrix> {
    match gen.kind {
        GeneratorKind::Liouville { .. } => gen.rhs(s, rho),
        _ => Err(Error::Unsupported("liouville_rhs needs a Liouville generator".into())),
    }
}

/// `λ(s)(UρU* − ρ)`.
pub fn jump_rhs(gen: &Generator, s: f64, rho: &CMatrix) -> Result<CMatrix> {
    match gen.kind {
        GeneratorKind::JumpUnitary { .. } => gen.rhs(s, rho),
        _ => Err(Error::Unsupported("jump_rhs needs a jump generator".into())),
    }
}

/// `λ(s)(PρP + ∫Qe^{−iτH}ρe^{iτH}Q dμ − ρ)`, evaluated in the eigenbasis of
/// `H(s)` with coherences weighted by `φ`.
pub fn phase_rand_rhs(gen: &Generator, s: f64, rho: &CMatrix) -> Result<CMatrix> {
    match gen.kind {
        GeneratorKind::PhaseRandomisation { .. } => gen.rhs(s, rho),
        _ => Err(Error::Unsupported("phase_rand_rhs needs a phase-randomisation generator".into())),
    }
}

/// `Tr(Pρ)` clamped to `[0, 1]`.
pub fn fidelity(rho: &CMatrix, p: &CMatrix) -> Result<f64> {
    if rho.shape() != p.shape() {
        return Err(Error::DimensionMismatch(format!(
            "state {:?} vs projector {:?}",
            rho.shape(),
            p.shape()
        )));
    }
    // Tr(Pρ) = Σ_ij P_ij ρ_ji.
    let mut acc = 0.0;
    for j in 0..rho.ncols() {
        for i in 0..rho.nrows() {
            acc += (p[(i, j)] * rho[(j, i)]).re;
        }
    }
    Ok(acc.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    /// Upper bound on `Δs`.
    pub cap: f64,
    /// `Δs ≤ rate_factor/λ(s)`.
    pub rate_factor: f64,
    /// Number of uniform intervals at whose end points fidelity is recorded.
    pub samples: usize,
    /// Replace `λ(s)` in the rate bound by `λ(s)·min(1, ‖U(s) − 1‖_F)` for
    /// jump generators.
    pub motion_scaled: bool,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            cap: 1e-2,
            rate_factor: 0.1,
            samples: 100,
            motion_scaled: false,
        }
    }
}

impl StepPolicy {
    pub fn halved(&self) -> Self {
        StepPolicy {
            cap: self.cap / 2.0,
            rate_factor: self.rate_factor / 2.0,
            samples: self.samples,
            motion_scaled: self.motion_scaled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap > 0.0 && self.cap <= 1.0 && self.rate_factor > 0.0 && self.samples >= 1) {
            return Err(Error::InvalidParameter(format!("invalid step policy {self:?}")));
        }
        Ok(())
    }

    fn step(&self, gen: &Generator, s: f64, stop: f64, frame: &Frame) -> Result<f64> {
        let motion = if self.motion_scaled { frame.motion() } else { 1.0 };
        let mut h = self.cap.min(stop - s);
        // Shrink until the rate bound holds at both ends of the step.
        loop {
            let lam = gen.rate_at(s)?.max(gen.rate_at(s + h)?) * motion;
            let limit = if lam > 0.0 { self.rate_factor / lam } else { f64::INFINITY };
            if h <= limit * (1.0 + 1e-12) {
                break;
            }
            h = limit;
            if h < MIN_STEP {
                return Err(Error::StepUnderflow { step: h, s });
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cost {
    /// Expected number of unitary applications or dephasing steps, `∫λ ds`.
    pub jumps: f64,
    /// Hamiltonian evolution time: `∫T ds` for Liouville evolution and
    /// `t₀∫λ/g₀ ds` for phase randomisation.
    pub time: f64,
}

impl Cost {
    /// The figure of merit for a generator: time for continuous evolution
    /// and phase randomisation, expected jumps for unitary steps.
    pub fn primary(&self, gen: &Generator) -> f64 {
        match gen.kind {
            GeneratorKind::JumpUnitary { .. } => self.jumps,
            _ => self.time,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub samples: Vec<Sample>,
    pub final_fidelity: f64,
    pub cost: Cost,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
    /// States at the sample points.
    #[serde(skip)]
    pub rho_samples: Vec<(f64, CMatrix)>,
}

impl RunResult {
    pub fn final_state(&self) -> &CMatrix {
        &self.rho_samples.last().expect("a run records at least one sample").1
    }

    pub fn infidelity(&self) -> f64 {
        1.0 - self.final_fidelity
    }
}

fn renormalise(rho: &mut CMatrix) {
    let sym = symmetrise(rho);
    let tr = trace(&sym).re;
    *rho = sym / c(tr);
}

/// Integrates `dρ/ds = λ(s)L_s(ρ)` from `s = 0` to `1` with classical RK4,
/// renormalising the trace and symmetrising after every step.
pub fn integrate(gen: &Generator, rho0: &DensityMatrix, policy: &StepPolicy) -> Result<RunResult> {
    policy.validate()?;
    check_dim(gen.dim(), rho0.matrix())?;
    let mut rho = rho0.matrix().clone();
    let mut s = 0.0;
    let mut samples = vec![Sample {
        s: 0.0,
        fidelity: fidelity(&rho, &gen.projector(0.0)?)?,
    }];
    let mut rho_samples = vec![(0.0, rho.clone())];
    let mut steps = 0usize;
    let mut min_eig = f64::INFINITY;
    let mut start_frame = gen.frame(0.0)?;
    for k in 1..=policy.samples {
        let stop = k as f64 / policy.samples as f64;
        while stop - s > 1e-14 {
            let h = policy.step(gen, s, stop, &start_frame)?;
            let mid = gen.frame(s + 0.5 * h)?;
            let end = gen.frame(s + h)?;
            let k1 = start_frame.apply(&rho);
            let k2 = mid.apply(&(&rho + &k1 * c(0.5 * h)));
            let k3 = mid.apply(&(&rho + &k2 * c(0.5 * h)));
            let k4 = end.apply(&(&rho + &k3 * c(h)));
            rho += (k1 + (k2 + k3) * c(2.0) + k4) * c(h / 6.0);
            renormalise(&mut rho);
            s += h;
            steps += 1;
            start_frame = end;
        }
        s = stop;
        let low = min_eigenvalue(&rho)?;
        min_eig = min_eig.min(low);
        if low < NONPHYSICAL_THRESHOLD {
            return Err(Error::NonPhysicalState { s, min_eigenvalue: low });
        }
        samples.push(Sample {
            s,
            fidelity: fidelity(&rho, &gen.projector(s)?)?,
        });
        rho_samples.push((s, rho.clone()));
    }
    let cost = accumulate_cost(gen, 256)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("generator".into(), serde_json::json!(gen.label()));
    diagnostics.insert("rk4_steps".into(), serde_json::json!(steps));
    diagnostics.insert("min_eigenvalue".into(), serde_json::json!(min_eig));
    diagnostics.insert("dimension".into(), serde_json::json!(gen.dim()));
    let final_fidelity = samples.last().map(|x| x.fidelity).unwrap_or(0.0);
    Ok(RunResult {
        samples,
        final_fidelity,
        cost,
        diagnostics,
        rho_samples,
    })
}

/// Runs [`integrate`] at `policy` and at the halved policy; returns the
/// finer result and the change in final fidelity.
pub fn integrate_with_step_doubling(
    gen: &Generator,
    rho0: &DensityMatrix,
    policy: &StepPolicy,
) -> Result<(RunResult, f64)> {
    let coarse = integrate(gen, rho0, policy)?;
    let mut fine = integrate(gen, rho0, &policy.halved())?;
    let delta = (coarse.final_fidelity - fine.final_fidelity).abs();
    fine.diagnostics
        .insert("step_doubling_delta".into(), serde_json::json!(delta));
    Ok((fine, delta))
}

/// Expected jump count and Hamiltonian time by Simpson quadrature, refined
/// until successive values agree to 1e−9.
pub fn accumulate_cost(gen: &Generator, intervals: usize) -> Result<Cost> {
    let total_rate = simpson_converged(|s| gen.rate_at(s), intervals, 1e-9)?;
    Ok(match gen.kind {
        GeneratorKind::Liouville { .. } => Cost {
            jumps: 0.0,
            time: total_rate,
        },
        GeneratorKind::JumpUnitary { .. } => Cost {
            jumps: total_rate,
            time: 0.0,
        },
        GeneratorKind::PhaseRandomisation { .. } => {
            let per_gap = simpson_converged(|s| Ok(gen.rate_at(s)? / gen.phase_gap(s)?), intervals, 1e-9)?;
            Cost {
                jumps: total_rate,
                time: T0 * per_gap,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_hermitian, rng};
    use crate::linalg::{diag_real, identity, operator_norm, pauli, ONE, ZERO};
    use crate::paths::{exp_path, GapProfile, GroverInstance, LinearPath, OperatorPath};
    use crate::schedules::{eval_bound, BoundTarget, TheoremId};
    use crate::spectral::WindowRule;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ket(v: &[C64]) -> CVector {
        CVector::from_column_slice(v)
    }

    fn grover8() -> (GroverInstance, Arc<LinearPath>) {
        let inst = GroverInstance::new(8, vec![3]).unwrap();
        let path = Arc::new(inst.reduced_path().unwrap());
        (inst, path)
    }

    fn const_path(h: CMatrix) -> SharedPath {
        Arc::new(LinearPath::new(h.clone(), h, WindowRule::Lowest { count: 1 }, "const").unwrap())
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(identity(2) * c(0.5)).is_ok());
        assert!(matches!(DensityMatrix::new(identity(2)), Err(Error::InvalidState(_))));
        assert!(DensityMatrix::new(diag_real(&[1.5, -0.5])).is_err());
        let mut m = identity(2) * c(0.5);
        m[(0, 1)] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(m).is_err());
        let rho = DensityMatrix::pure(&ket(&[c(3.0), c(4.0)])).unwrap();
        assert!((trace(rho.matrix()).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn liouville_example() {
        let path = const_path(pauli::z());
        let gen = Generator::liouville(path, Schedule::constant(1.0).unwrap()).unwrap();
        let plus = ket(&[c(0.5f64.sqrt()), c(0.5f64.sqrt())]);
        let rho = outer(&plus, &plus);
        let out = liouville_rhs(&gen, 0.3, &rho).unwrap();
        // −i[σ_z, |+⟩⟨+|] = [[0, −i], [i, 0]].
        let expect = CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]);
        assert!(operator_norm(&(out - expect)) < 1e-14);
        let z0 = outer(&ket(&[ONE, ZERO]), &ket(&[ONE, ZERO]));
        assert!(operator_norm(&liouville_rhs(&gen, 0.3, &z0).unwrap()) < 1e-15);
    }

    #[test]
    fn jump_example() {
        #[derive(Debug)]
        struct Flip;
        impl OperatorPath for Flip {
            fn dim(&self) -> usize {
                2
            }
            fn kind(&self) -> PathKind {
                PathKind::Unitary
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
        let gen = Generator::jump(Arc::new(Flip), Schedule::constant(1.0).unwrap()).unwrap();
        let z0 = outer(&ket(&[ONE, ZERO]), &ket(&[ONE, ZERO]));
        let out = jump_rhs(&gen, 0.5, &z0).unwrap();
        assert!(operator_norm(&(out - diag_real(&[-1.0, 1.0]))) < 1e-15);
        let plus = ket(&[c(0.5f64.sqrt()), c(0.5f64.sqrt())]);
        assert!(operator_norm(&jump_rhs(&gen, 0.5, &outer(&plus, &plus)).unwrap()) < 1e-15);
        assert!(liouville_rhs(&gen, 0.5, &z0).is_err());
    }

    fn phase_gen(h: CMatrix, g0: f64, lam: f64) -> Generator {
        Generator::phase_randomisation(
            const_path(h),
            Phi::Fejer,
            Some(GapModel::new(GapProfile::Constant { value: g0 }, 1.5).unwrap()),
            Schedule::constant(lam).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn phase_examples() {
        let h = diag_real(&[0.0, 1.0, 1.3]);
        let gen = phase_gen(h, 1.0, 2.0);
        // Invariant state.
        let inside = diag_real(&[1.0, 0.0, 0.0]);
        assert!(operator_norm(&phase_rand_rhs(&gen, 0.2, &inside).unwrap()) < 1e-15);
        // (|in⟩ + |out⟩)/√2: cross blocks of the rhs are −λ times those of ρ.
        let psi = ket(&[c(0.5f64.sqrt()), c(0.5f64.sqrt()), ZERO]);
        let rho = outer(&psi, &psi);
        let out = phase_rand_rhs(&gen, 0.2, &rho).unwrap();
        assert!((out[(0, 1)] + rho[(0, 1)] * c(2.0)).norm() < 1e-15);
        assert!((out[(1, 0)] + rho[(1, 0)] * c(2.0)).norm() < 1e-15);
        assert!(out[(0, 0)].norm() < 1e-15 && out[(1, 1)].norm() < 1e-15);
        // Outside coherences are weighted by the triangle: φ(0.3) = 0.7.
        let psi = ket(&[ZERO, c(0.6), c(0.8)]);
        let rho = outer(&psi, &psi);
        let avg = gen.phase_channel(0.0, &rho).unwrap();
        assert!((avg[(1, 2)] - rho[(1, 2)] * c(0.7)).norm() < 1e-14);
        let missing = Generator::phase_randomisation(
            const_path(pauli::z()),
            Phi::Fejer,
            None,
            Schedule::constant(1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(phase_rand_rhs(&missing, 0.0, &identity(2)), Err(Error::GapModelMissing));
    }

    #[test]
    fn phi_choices() {
        assert_eq!(Phi::Fejer.eval(0.0, 1.0), 1.0);
        assert_eq!(Phi::Fejer.eval(-0.25, 0.5), 0.5);
        assert_eq!(Phi::Fejer.eval(2.0, 1.0), 0.0);
        let t = Phi::table(vec![0.0, 0.5], vec![1.0, 0.2]).unwrap();
        assert!((t.eval(0.25, 1.0) - 0.6).abs() < 1e-15);
        assert!((t.eval(0.75, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(t.eval(1.0, 1.0), 0.0);
        assert!(Phi::table(vec![0.0, 1.0], vec![0.9, 0.0]).is_err());
        assert!(Phi::table(vec![0.0, 1.0], vec![1.0, 0.3]).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let p = diag_real(&[1.0, 1.0, 0.0]);
        assert!((fidelity(&(&p * c(0.5)), &p).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&diag_real(&[0.0, 0.0, 1.0]), &p).unwrap(), 0.0);
        let p1 = diag_real(&[1.0, 0.0, 0.0]);
        let mixed = diag_real(&[0.5, 0.0, 0.5]);
        assert!((fidelity(&mixed, &p).unwrap() - 0.5).abs() < 1e-15);
        assert!((fidelity(&mixed, &p1).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(fidelity(&identity(2), &p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_rate_leaves_state_unchanged() {
        let (_, path) = grover8();
        let gen = Generator::liouville(path.clone(), Schedule::constant(0.0).unwrap()).unwrap();
        let rho0 = DensityMatrix::pure(&ket(&[c(0.6), c(0.8)])).unwrap();
        let r = integrate(&gen, &rho0, &StepPolicy::default()).unwrap();
        assert!(operator_norm(&(r.final_state() - rho0.matrix())) < 1e-14);
        assert_eq!(r.cost, Cost::default());
    }

    #[test]
    fn constant_path_keeps_fidelity_one() {
        let h = diag_real(&[-1.0, 0.5, 2.0]);
        let p = diag_real(&[1.0, 0.0, 0.0]);
        let rho0 = DensityMatrix::from_projector(&p).unwrap();
        for gen in [
            Generator::liouville(const_path(h.clone()), Schedule::constant(50.0).unwrap()).unwrap(),
            phase_gen(h.clone(), 1.5, 50.0),
        ] {
            let r = integrate(&gen, &rho0, &StepPolicy::default()).unwrap();
            assert!(r.samples.iter().all(|x| (x.fidelity - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn grover_jump_run_is_within_bound_and_converged() {
        let (_, path) = grover8();
        let shifted = Arc::new(path.affine(0.5, 1.0).unwrap());
        let u: SharedPath = Arc::new(exp_path(shifted.clone()).unwrap());
        let sched = Schedule::constant(400.0).unwrap();
        let gen = Generator::jump(u.clone(), sched.clone()).unwrap();
        let rho0 = DensityMatrix::pure(&shifted.projector(0.0).unwrap().decomposition.eigenvectors.column(0).into_owned())
            .unwrap();
        let (r, delta) = integrate_with_step_doubling(&gen, &rho0, &StepPolicy::default()).unwrap();
        assert!(delta <= 1e-6, "step doubling changed fidelity by {delta}");
        let bound = eval_bound(TheoremId::JumpTight, BoundTarget::Unitary(u.as_ref()), &sched, 256).unwrap();
        assert!(r.infidelity() <= bound.bound_value, "{} > {}", r.infidelity(), bound.bound_value);
        assert!((r.cost.jumps - 400.0).abs() < 1e-9);
        let fid = fidelity(r.final_state(), &gen.projector(1.0).unwrap()).unwrap();
        assert!((fid - r.final_fidelity).abs() < 1e-12);
    }

    #[test]
    fn doubling_rate_does_not_hurt() {
        let (_, path) = grover8();
        let shifted = Arc::new(path.affine(0.5, 1.0).unwrap());
        let u: SharedPath = Arc::new(exp_path(shifted.clone()).unwrap());
        let rho0 = DensityMatrix::pure(&shifted.projector(0.0).unwrap().decomposition.eigenvectors.column(0).into_owned())
            .unwrap();
        let mut prev = f64::INFINITY;
        for lam in [25.0, 50.0, 100.0, 200.0, 400.0] {
            let gen = Generator::jump(u.clone(), Schedule::constant(lam).unwrap()).unwrap();
            let inf = integrate(&gen, &rho0, &StepPolicy::default()).unwrap().infidelity();
            assert!(inf <= prev + 1e-8, "λ = {lam}: {inf} > {prev}");
            prev = inf;
        }
    }

    #[test]
    fn phase_cost_uses_t0() {
        let gen = phase_gen(diag_real(&[0.0, 1.0]), 0.5, 3.0);
        let cost = accumulate_cost(&gen, 64).unwrap();
        assert!((cost.jumps - 3.0).abs() < 1e-12);
        assert!((cost.time - T0 * 6.0).abs() < 1e-9);
        assert_eq!(cost.primary(&gen), cost.time);
    }

    #[test]
    fn adaptive_cost_within_five_percent_of_guarantee() {
        let a = diag_real(&[1.0, -0.25, 0.5, 0.7]);
        let b = CVector::from_element(4, c(0.5));
        let inst = crate::paths::QlspInstance::new(&a, &b, None).unwrap();
        let path: SharedPath = Arc::new(inst.path().unwrap());
        let gm = inst.gap_model(1.5).unwrap();
        let norms = crate::schedules::PathNorms::from_path(path.as_ref(), 1000).unwrap();
        let cc = crate::schedules::compute_c(TheoremId::Liouville, &norms, &gm, 1);
        let sched = crate::schedules::adaptive_schedule(TheoremId::Liouville, &gm, 0.1, cc).unwrap();
        let gen = Generator::liouville(path, sched.clone()).unwrap();
        let cost = accumulate_cost(&gen, 64).unwrap();
        let guarantee = crate::schedules::cost_guarantee(&sched).unwrap();
        assert!(cost.time <= guarantee && cost.time >= 0.95 * guarantee, "{} vs {guarantee}", cost.time);
    }

    #[test]
    fn cost_is_refinement_stable() {
        let gm = GapModel::new(GapProfile::Grover { ratio: 1.0 / 64.0 }, 1.5).unwrap();
        let sched = crate::schedules::adaptive_schedule(TheoremId::Exp, &gm, 0.1, 2.0).unwrap();
        let path: SharedPath = Arc::new(GroverInstance::new(64, vec![0]).unwrap().reduced_path().unwrap());
        let gen = Generator::liouville(path, sched).unwrap();
        let a = accumulate_cost(&gen, 32).unwrap().time;
        let b = accumulate_cost(&gen, 1024).unwrap().time;
        assert!((a - b).abs() <= 1e-6 * b);
    }

    #[test]
    fn step_underflow_is_reported() {
        let gen = Generator::liouville(const_path(pauli::z()), Schedule::constant(1e9).unwrap()).unwrap();
        let rho0 = DensityMatrix::from_projector(&diag_real(&[1.0, 0.0])).unwrap();
        assert!(matches!(integrate(&gen, &rho0, &StepPolicy::default()), Err(Error::StepUnderflow { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rhs_are_traceless_and_hermitian(seed in any::<u64>(), s in 0.0f64..1.0) {
            let mut r = rng(seed);
            let n = 4;
            let h0 = random_hermitian(&mut r, n) * c(0.2);
            let h1 = random_hermitian(&mut r, n) * c(0.2);
            let path: SharedPath = Arc::new(LinearPath::new(h0, h1, WindowRule::Lowest { count: 1 }, "r").unwrap());
            let Ok(u) = exp_path(path.clone()) else { return Ok(()); };
            let rho = crate::random::random_density(&mut r, n);
            let gap = (0..=20).map(|k| path.projector(k as f64 / 20.0).map(|p| p.gap).unwrap_or(0.0)).fold(f64::INFINITY, f64::min);
            prop_assume!(gap > 1e-3);
            let gens = [
                Generator::liouville(path.clone(), Schedule::constant(3.0).unwrap()).unwrap(),
                Generator::jump(Arc::new(u), Schedule::constant(3.0).unwrap()).unwrap(),
                Generator::phase_randomisation(
                    path.clone(),
                    Phi::Fejer,
                    Some(GapModel::new(GapProfile::Constant { value: gap }, 1.5).unwrap()),
                    Schedule::constant(3.0).unwrap(),
                ).unwrap(),
            ];
            for gen in &gens {
                let out = gen.rhs(s, &rho).unwrap();
                prop_assert!(trace(&out).norm() <= 1e-12);
                prop_assert!(hermitian_residual(&out) <= 1e-12);
            }
            // Tr(P·rhs) vanishes for the phase generator: P commutes with its structure.
            let p = path.projector(s).unwrap().p;
            let pr = &p * gens[2].rhs(s, &rho).unwrap();
            prop_assert!(trace(&pr).norm() <= 1e-10);
        }

        #[test]
        fn phase_channel_kills_cross_blocks(seed in any::<u64>()) {
            let mut r = rng(seed);
            let h = random_hermitian(&mut r, 5);
            let pp = crate::spectral::projector_by_rule(&h, &WindowRule::Lowest { count: 1 }, true).unwrap();
            prop_assume!(pp.gap > 1e-3);
            let gen = phase_gen(h, pp.gap, 1.0);
            let rho = crate::random::random_density(&mut r, 5);
            let avg = gen.phase_channel(0.0, &rho).unwrap();
            let q = identity(5) - &pp.p;
            prop_assert!(operator_norm(&(&pp.p * &avg * &q)) <= 1e-10);
            prop_assert!(operator_norm(&(&pp.p * &avg * &pp.p - &pp.p * &rho * &pp.p)) <= 1e-12);
        }
    }
}
