//! Operator paths `s ↦ A(s)` on `[0, 1]` with exact first and second
//! derivatives: linear Hermitian interpolations (including the Grover and
//! linear-systems instances), and the unitary paths derived from a Hermitian
//! source (fixed-time exponential, qubitisation, product-formula steps).

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c, eig_hermitian, identity, kron, operator_norm, outer, pauli, CMatrix, CVector,
    SpectralDecomposition, C64, I, ONE, ZERO,
};
use crate::spectral::{
    projector_by_rule, projector_from_decomposition, separating_circle, MatrixJet, ProjectorPair,
    SpectralWindow, WindowRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Hermitian,
    Unitary,
}

/// A twice continuously differentiable path of normal operators together
/// with the spectral window it tracks.
pub trait OperatorPath: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn kind(&self) -> PathKind;

    /// Value and first two derivatives at `s`.
    fn jet(&self, s: f64) -> Result<MatrixJet>;

    fn value(&self, s: f64) -> Result<CMatrix> {
        Ok(self.jet(s)?.value)
    }

    fn derivative(&self, s: f64) -> Result<CMatrix> {
        Ok(self.jet(s)?.d1)
    }

    fn second_derivative(&self, s: f64) -> Result<CMatrix> {
        Ok(self.jet(s)?.d2)
    }

    /// Spectral projector data of `value(s)` for the tracked window.
    fn projector(&self, s: f64) -> Result<ProjectorPair>;

    fn window(&self, s: f64) -> Result<SpectralWindow> {
        Ok(self.projector(s)?.window)
    }

    /// Projector against which the fidelity of a state is measured. For
    /// paths derived from a Hermitian source this is the (embedded) source
    /// projector.
    fn tracked_projector(&self, s: f64) -> Result<CMatrix> {
        Ok(self.projector(s)?.p)
    }

    /// Maps a state of the source space into the space this path acts on.
    fn embed_state(&self, psi: &CVector) -> CVector {
        psi.clone()
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }
}

pub type SharedPath = Arc<dyn OperatorPath>;

fn check_unit_interval(s: f64) -> Result<()> {
    if !(s.is_finite() && (-1e-9..=1.0 + 1e-9).contains(&s)) {
        // Finite-difference probes reach slightly outside [0, 1]; anything
        // farther is a caller error.
        if !(s.is_finite() && (-0.01..=1.01).contains(&s)) {
            return Err(Error::InvalidParameter(format!("s = {s} outside [0, 1]")));
        }
    }
    Ok(())
}

/// `H(s) = (1 − s)H₀ + sH₁`.
#[derive(Debug, Clone)]
pub struct LinearPath {
    pub h0: CMatrix,
    pub h1: CMatrix,
    pub rule: WindowRule,
    pub label: String,
}

pub fn linear_path(h0: CMatrix, h1: CMatrix, rule: WindowRule) -> Result<LinearPath> {
    LinearPath::new(h0, h1, rule, "linear")
}

impl LinearPath {
    pub fn new(h0: CMatrix, h1: CMatrix, rule: WindowRule, label: &str) -> Result<Self> {
        if h0.shape() != h1.shape() || h0.nrows() != h0.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "H0 is {}x{}, H1 is {}x{}",
                h0.nrows(),
                h0.ncols(),
                h1.nrows(),
                h1.ncols()
            )));
        }
        for h in [&h0, &h1] {
            let residual = crate::linalg::hermitian_residual(h);
            let tolerance = 1e-12 * operator_norm(h).max(1.0);
            if residual > tolerance {
                return Err(Error::NonHermitian { residual, tolerance });
            }
        }
        Ok(LinearPath {
            h0: crate::linalg::hermitian_part(&h0),
            h1: crate::linalg::hermitian_part(&h1),
            rule,
            label: label.to_string(),
        })
    }

    pub fn at(&self, s: f64) -> CMatrix {
        &self.h0 * c(1.0 - s) + &self.h1 * c(s)
    }

    /// `scale · (H(s) − shift)`, with the window rule mapped along.
    pub fn affine(&self, shift: f64, scale: f64) -> Result<LinearPath> {
        if !(scale.is_finite() && scale > 0.0 && shift.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "affine map needs a positive finite scale, got {scale}"
            )));
        }
        let n = self.dim();
        let map = |h: &CMatrix| (h - identity(n) * c(shift)) * c(scale);
        Ok(LinearPath {
            h0: map(&self.h0),
            h1: map(&self.h1),
            rule: self.rule.affine(shift, scale),
            label: self.label.clone(),
        })
    }

    /// Restriction to the range of the isometry `w` (columns orthonormal),
    /// which must be invariant under both endpoints.
    pub fn restrict(&self, w: &CMatrix) -> LinearPath {
        LinearPath {
            h0: crate::linalg::hermitian_part(&(w.adjoint() * &self.h0 * w)),
            h1: crate::linalg::hermitian_part(&(w.adjoint() * &self.h1 * w)),
            rule: self.rule.clone(),
            label: format!("{} (reduced to dim {})", self.label, w.ncols()),
        }
    }
}

impl OperatorPath for LinearPath {
    fn dim(&self) -> usize {
        self.h0.nrows()
    }

    fn kind(&self) -> PathKind {
        PathKind::Hermitian
    }

    fn jet(&self, s: f64) -> Result<MatrixJet> {
        check_unit_interval(s)?;
        let n = self.dim();
        Ok(MatrixJet {
            value: self.at(s),
            d1: &self.h1 - &self.h0,
            d2: CMatrix::zeros(n, n),
        })
    }

    fn value(&self, s: f64) -> Result<CMatrix> {
        check_unit_interval(s)?;
        Ok(self.at(s))
    }

    fn projector(&self, s: f64) -> Result<ProjectorPair> {
        projector_by_rule(&self.value(s)?, &self.rule, true)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("path".to_string(), self.label.clone()),
            ("dim".to_string(), self.dim().to_string()),
        ])
    }
}

/// Orthonormal basis of the smallest subspace containing `seed` that is
/// invariant under every matrix in `generators`.
pub fn invariant_subspace(generators: &[&CMatrix], seed: &CVector, tol: f64) -> Result<CMatrix> {
    let n = seed.len();
    if generators.iter().any(|g| g.shape() != (n, n)) {
        return Err(Error::DimensionMismatch("generator and seed sizes differ".into()));
    }
    let mut basis: Vec<CVector> = Vec::new();
    let mut queue: Vec<CVector> = vec![seed.clone()];
    while let Some(mut v) = queue.pop() {
        // Two passes of Gram-Schmidt keep the basis orthonormal to rounding.
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let norm = v.norm();
        if norm <= tol {
            continue;
        }
        let v = v / c(norm);
        for g in generators {
            queue.push(*g * &v);
        }
        basis.push(v);
        if basis.len() == n {
            break;
        }
    }
    Ok(CMatrix::from_fn(n, basis.len(), |i, j| basis[j][i]))
}

/// A scalar function with its first four derivatives, used for Fréchet
/// derivatives of `f(H)` by divided differences in the eigenbasis of `H`.
trait ScalarFn: Send + Sync {
    fn derivs(&self, x: f64) -> [C64; 5];
}

/// `x ↦ e^{iax}`.
struct Exponential {
    a: f64,
}

impl ScalarFn for Exponential {
    fn derivs(&self, x: f64) -> [C64; 5] {
        let e = C64::from_polar(1.0, self.a * x);
        let ia = C64::new(0.0, self.a);
        [e, ia * e, ia * ia * e, ia * ia * ia * e, ia * ia * ia * ia * e]
    }
}

/// `x ↦ √(1 − x²)` on `|x| < 1`.
struct Cosine;

impl ScalarFn for Cosine {
    fn derivs(&self, x: f64) -> [C64; 5] {
        let u = 1.0 - x * x;
        let r = u.sqrt();
        [
            c(r),
            c(-x / r),
            c(-1.0 / (u * r)),
            c(-3.0 * x / (u * u * r)),
            c(-3.0 / (u * u * r) - 15.0 * x * x / (u * u * u * r)),
        ]
    }
}

/// Below this spread divided differences switch to Taylor expansions.
const DD_TAYLOR_SPREAD: f64 = 1e-3;

fn dd1(f: &dyn ScalarFn, x: f64, fx: C64, y: f64, fy: C64) -> C64 {
    let d = x - y;
    if d.abs() > DD_TAYLOR_SPREAD {
        (fx - fy) / d
    } else {
        let t = f.derivs(0.5 * (x + y));
        t[1] + t[3] * (d * d / 24.0)
    }
}

fn dd2(f: &dyn ScalarFn, pts: [(f64, C64); 3]) -> C64 {
    let mut p = pts;
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spread = p[2].0 - p[0].0;
    if spread > DD_TAYLOR_SPREAD {
        let left = dd1(f, p[0].0, p[0].1, p[1].0, p[1].1);
        let right = dd1(f, p[1].0, p[1].1, p[2].0, p[2].1);
        (right - left) / spread
    } else {
        let m = (p[0].0 + p[1].0 + p[2].0) / 3.0;
        let h = [p[0].0 - m, p[1].0 - m, p[2].0 - m];
        let h2 = h[0] * h[0] + h[1] * h[1] + h[2] * h[2] + h[0] * h[1] + h[0] * h[2] + h[1] * h[2];
        let t = f.derivs(m);
        t[2] * 0.5 + t[4] * (h2 / 24.0)
    }
}

/// `f(H)` with its first two derivatives along `H(s)` given `H, H', H''`
/// (the eigendecomposition `dec` of `H` is supplied).
fn function_jet(f: &dyn ScalarFn, dec: &SpectralDecomposition, h1: &CMatrix, h2: &CMatrix) -> MatrixJet {
    let n = dec.dim();
    let w: Vec<f64> = dec.real_eigenvalues();
    let fw: Vec<C64> = w.iter().map(|&x| f.derivs(x)[0]).collect();
    let g1 = CMatrix::from_fn(n, n, |i, j| dd1(f, w[i], fw[i], w[j], fw[j]));
    let e1 = dec.to_eigenbasis(h1);
    let e2 = dec.to_eigenbasis(h2);
    let d1 = g1.component_mul(&e1);
    let mut d2 = g1.component_mul(&e2);
    for i in 0..n {
        for j in 0..n {
            let mut acc = ZERO;
            for k in 0..n {
                let t = e1[(i, k)] * e1[(k, j)];
                if t != ZERO {
                    acc += dd2(f, [(w[i], fw[i]), (w[k], fw[k]), (w[j], fw[j])]) * t;
                }
            }
            d2[(i, j)] += acc * 2.0;
        }
    }
    MatrixJet {
        value: dec.apply_real(|x| f.derivs(x)[0]),
        d1: dec.from_eigenbasis(&d1),
        d2: dec.from_eigenbasis(&d2),
    }
}

fn max_norm_on_grid(path: &dyn OperatorPath, points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..=points {
        let s = k as f64 / points as f64;
        worst = worst.max(operator_norm(&path.value(s)?));
    }
    Ok(worst)
}

/// Grid used to validate norm preconditions of derived paths.
pub const PROBE_POINTS: usize = 100;

/// `U(s) = e^{−iπH(s)/2}` for a Hermitian source with `‖H(s)‖ ≤ 1/2`.
#[derive(Debug, Clone)]
pub struct ExpPath {
    pub source: SharedPath,
}

pub fn exp_path(source: SharedPath) -> Result<ExpPath> {
    if source.kind() != PathKind::Hermitian {
        return Err(Error::Unsupported("exp_path needs a Hermitian source".into()));
    }
    let norm = max_norm_on_grid(source.as_ref(), PROBE_POINTS)?;
    if norm > 0.5 + 1e-12 {
        return Err(Error::NormTooLarge { norm, bound: 0.5 });
    }
    Ok(ExpPath { source })
}

impl ExpPath {
    fn f() -> Exponential {
        Exponential { a: -FRAC_PI_2 }
    }
}

impl OperatorPath for ExpPath {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn kind(&self) -> PathKind {
        PathKind::Unitary
    }

    fn jet(&self, s: f64) -> Result<MatrixJet> {
        let h = self.source.jet(s)?;
        let dec = eig_hermitian(&h.value)?;
        Ok(function_jet(&Self::f(), &dec, &h.d1, &h.d2))
    }

    fn value(&self, s: f64) -> Result<CMatrix> {
        let dec = eig_hermitian(&self.source.value(s)?)?;
        Ok(dec.apply_real(|x| C64::from_polar(1.0, -FRAC_PI_2 * x)))
    }

    fn projector(&self, s: f64) -> Result<ProjectorPair> {
        let hp = self.source.projector(s)?;
        let mut dec = hp.decomposition.clone();
        for w in dec.eigenvalues.iter_mut() {
            *w = C64::from_polar(1.0, -FRAC_PI_2 * w.re);
        }
        let (ins, outs): (Vec<_>, Vec<_>) = dec
            .eigenvalues
            .iter()
            .zip(&hp.inside)
            .partition(|(_, &b)| b);
        let ins: Vec<C64> = ins.into_iter().map(|(&z, _)| z).collect();
        let outs: Vec<C64> = outs.into_iter().map(|(&z, _)| z).collect();
        let window = separating_circle(&ins, &outs)?;
        projector_from_decomposition(dec, &window)
    }

    fn tracked_projector(&self, s: f64) -> Result<CMatrix> {
        Ok(self.source.projector(s)?.p)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = self.source.metadata();
        m.insert("unitary".into(), "exp".into());
        m
    }
}

/// `U(s) = [[H, −√(1−H²)], [√(1−H²), H]]`, qubit register first.
#[derive(Debug, Clone)]
pub struct QubitisedPath {
    pub source: SharedPath,
    pub max_norm: f64,
}

/// `|y−⟩ = (|0⟩ − i|1⟩)/√2`, the `−1` eigenvector of `σ_y`.
fn y_minus() -> CVector {
    CVector::from_column_slice(&[c(1.0 / 2f64.sqrt()), C64::new(0.0, -1.0 / 2f64.sqrt())])
}

fn y_plus() -> CVector {
    CVector::from_column_slice(&[c(1.0 / 2f64.sqrt()), C64::new(0.0, 1.0 / 2f64.sqrt())])
}

pub fn qubitised_path(source: SharedPath) -> Result<QubitisedPath> {
    if source.kind() != PathKind::Hermitian {
        return Err(Error::Unsupported("qubitised_path needs a Hermitian source".into()));
    }
    let norm = max_norm_on_grid(source.as_ref(), PROBE_POINTS)?;
    let bound = 1.0 - 1e-6;
    if norm > bound {
        return Err(Error::NormTooLarge { norm, bound });
    }
    Ok(QubitisedPath { source, max_norm: norm })
}

impl OperatorPath for QubitisedPath {
    fn dim(&self) -> usize {
        2 * self.source.dim()
    }

    fn kind(&self) -> PathKind {
        PathKind::Unitary
    }

    fn jet(&self, s: f64) -> Result<MatrixJet> {
        let h = self.source.jet(s)?;
        let dec = eig_hermitian(&h.value)?;
        let b = function_jet(&Cosine, &dec, &h.d1, &h.d2);
        let id2 = identity(2);
        let j = pauli::y() * (-I);
        let assemble = |hm: &CMatrix, bm: &CMatrix| kron(&id2, hm) + kron(&j, bm);
        Ok(MatrixJet {
            value: assemble(&h.value, &b.value),
            d1: assemble(&h.d1, &b.d1),
            d2: assemble(&h.d2, &b.d2),
        })
    }

    fn value(&self, s: f64) -> Result<CMatrix> {
        let h = self.source.value(s)?;
        let b = eig_hermitian(&h)?.apply_real(|x| c((1.0 - x * x).max(0.0).sqrt()));
        Ok(kron(&identity(2), &h) + kron(&(pauli::y() * (-I)), &b))
    }

    fn projector(&self, s: f64) -> Result<ProjectorPair> {
        let hp = self.source.projector(s)?;
        let n = hp.dim();
        let hd = &hp.decomposition;
        let mut eigenvalues = Vec::with_capacity(2 * n);
        let mut vectors = CMatrix::zeros(2 * n, 2 * n);
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for (branch, (qubit, sign)) in [(y_minus(), 1.0), (y_plus(), -1.0)].into_iter().enumerate() {
            for k in 0..n {
                let a = hd.eigenvalues[k].re;
                let z = C64::new(a, sign * (1.0 - a * a).max(0.0).sqrt());
                let col = branch * n + k;
                eigenvalues.push(z);
                let v = kron(
                    &CMatrix::from_column_slice(2, 1, qubit.as_slice()),
                    &CMatrix::from_column_slice(n, 1, hd.eigenvectors.column(k).as_slice()),
                );
                vectors.set_column(col, &v.column(0));
                if branch == 0 && hp.inside[k] {
                    inside.push(z);
                } else {
                    outside.push(z);
                }
            }
        }
        let window = separating_circle(&inside, &outside)?;
        projector_from_decomposition(
            SpectralDecomposition {
                eigenvalues,
                eigenvectors: vectors,
            },
            &window,
        )
    }

    fn tracked_projector(&self, s: f64) -> Result<CMatrix> {
        let p = self.source.projector(s)?.p;
        let ym = y_minus();
        Ok(kron(&outer(&ym, &ym), &p))
    }

    fn embed_state(&self, psi: &CVector) -> CVector {
        let ym = CMatrix::from_column_slice(2, 1, y_minus().as_slice());
        let v = kron(&ym, &CMatrix::from_column_slice(psi.len(), 1, psi.as_slice()));
        v.column(0).into_owned()
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = self.source.metadata();
        m.insert("unitary".into(), "qubitised".into());
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrotterOrder {
    First,
    Second,
}

impl TrotterOrder {
    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            1 => Ok(TrotterOrder::First),
            2 => Ok(TrotterOrder::Second),
            _ => Err(Error::InvalidParameter(format!("Trotter order must be 1 or 2, got {order}"))),
        }
    }
}

/// Product-formula steps approximating `e^{−iπhH(s)/2}` for
/// `H(s) = (1−s)H₀ + sH₁`:
/// `U₁ = e^{−iπ(1−s)hH₀/2} e^{−iπshH₁/2}` and
/// `U₂ = e^{−iπ(1−s)hH₀/4} e^{−iπshH₁/2} e^{−iπ(1−s)hH₀/4}`.
#[derive(Debug, Clone)]
pub struct TrotterPath {
    pub source: Arc<LinearPath>,
    pub h: f64,
    pub order: TrotterOrder,
    dec0: SpectralDecomposition,
    dec1: SpectralDecomposition,
}

pub fn trotter_path(source: Arc<LinearPath>, h: f64, order: TrotterOrder) -> Result<TrotterPath> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("Trotter step must be positive, got {h}")));
    }
    for m in [&source.h0, &source.h1] {
        let norm = operator_norm(m);
        if norm > 1.0 + 1e-12 {
            return Err(Error::NormTooLarge { norm, bound: 1.0 });
        }
    }
    for k in 0..=PROBE_POINTS {
        let s = k as f64 / PROBE_POINTS as f64;
        let gap = source.projector(s)?.gap;
        if h >= gap.sqrt() {
            return Err(Error::StepTooLarge { h, sqrt_gap: gap.sqrt() });
        }
    }
    let dec0 = eig_hermitian(&source.h0)?;
    let dec1 = eig_hermitian(&source.h1)?;
    Ok(TrotterPath {
        source,
        h,
        order,
        dec0,
        dec1,
    })
}

impl TrotterPath {
    /// The product-formula path without the gap condition on `h`, for
    /// studying the step unitary itself. Spectral queries may then fail.
    pub fn unchecked(source: Arc<LinearPath>, h: f64, order: TrotterOrder) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!("Trotter step must be positive, got {h}")));
        }
        let dec0 = eig_hermitian(&source.h0)?;
        let dec1 = eig_hermitian(&source.h1)?;
        Ok(TrotterPath {
            source,
            h,
            order,
            dec0,
            dec1,
        })
    }

    /// `e^{−i·t·H}` together with `d/ds` factor `−i·dt/ds·H`.
    fn factor(dec: &SpectralDecomposition, t: f64) -> CMatrix {
        dec.apply_real(|x| C64::from_polar(1.0, -t * x))
    }

    /// The ideal step `e^{−iπhH(s)/2}`.
    pub fn ideal(&self, s: f64) -> Result<CMatrix> {
        let dec = eig_hermitian(&self.source.at(s))?;
        Ok(dec.apply_real(|x| C64::from_polar(1.0, -PI * self.h * x / 2.0)))
    }
}

impl OperatorPath for TrotterPath {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn kind(&self) -> PathKind {
        PathKind::Unitary
    }

    fn jet(&self, s: f64) -> Result<MatrixJet> {
        check_unit_interval(s)?;
        let h = self.h;
        let h0 = &self.source.h0;
        let h1 = &self.source.h1;
        let b = Self::factor(&self.dec1, PI * s * h / 2.0);
        let gb = h1 * C64::new(0.0, -PI * h / 2.0);
        let b1 = &gb * &b;
        let b2 = &gb * &b1;
        match self.order {
            TrotterOrder::First => {
                let a = Self::factor(&self.dec0, PI * (1.0 - s) * h / 2.0);
                let ga = h0 * C64::new(0.0, PI * h / 2.0);
                let a1 = &ga * &a;
                let a2 = &ga * &a1;
                Ok(MatrixJet {
                    value: &a * &b,
                    d1: &a1 * &b + &a * &b1,
                    d2: &a2 * &b + (&a1 * &b1) * c(2.0) + &a * &b2,
                })
            }
            TrotterOrder::Second => {
                let a = Self::factor(&self.dec0, PI * (1.0 - s) * h / 4.0);
                let ga = h0 * C64::new(0.0, PI * h / 4.0);
                let a1 = &ga * &a;
                let a2 = &ga * &a1;
                let value = &a * &b * &a;
                let d1 = &a1 * &b * &a + &a * &b1 * &a + &a * &b * &a1;
                let d2 = &a2 * &b * &a
                    + &a * &b2 * &a
                    + &a * &b * &a2
                    + (&a1 * &b1 * &a + &a1 * &b * &a1 + &a * &b1 * &a1) * c(2.0);
                Ok(MatrixJet { value, d1, d2 })
            }
        }
    }

    fn value(&self, s: f64) -> Result<CMatrix> {
        check_unit_interval(s)?;
        let h = self.h;
        let b = Self::factor(&self.dec1, PI * s * h / 2.0);
        Ok(match self.order {
            TrotterOrder::First => Self::factor(&self.dec0, PI * (1.0 - s) * h / 2.0) * b,
            TrotterOrder::Second => {
                let a = Self::factor(&self.dec0, PI * (1.0 - s) * h / 4.0);
                &a * b * &a
            }
        })
    }

    /// Inside eigenvalues are those of `U(s)` nearest the images
    /// `e^{−iπhω/2}` of the tracked eigenvalues `ω` of `H(s)`.
    fn projector(&self, s: f64) -> Result<ProjectorPair> {
        let hp = self.source.projector(s)?;
        let images: Vec<C64> = hp
            .inside_values()
            .iter()
            .map(|w| C64::from_polar(1.0, -PI * self.h * w.re / 2.0))
            .collect();
        let dec = crate::linalg::eig_normal(&self.value(s)?, false)?;
        let rank = hp.rank();
        let mut order: Vec<(f64, usize)> = dec
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let d = images.iter().map(|im| (z - im).norm()).fold(f64::INFINITY, f64::min);
                (d, k)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let chosen: Vec<usize> = order[..rank].iter().map(|&(_, k)| k).collect();
        let ins: Vec<C64> = chosen.iter().map(|&k| dec.eigenvalues[k]).collect();
        let outs: Vec<C64> = (0..dec.dim())
            .filter(|k| !chosen.contains(k))
            .map(|k| dec.eigenvalues[k])
            .collect();
        let window = separating_circle(&ins, &outs)?;
        projector_from_decomposition(dec, &window)
    }

    fn tracked_projector(&self, s: f64) -> Result<CMatrix> {
        Ok(self.source.projector(s)?.p)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = self.source.metadata();
        m.insert("unitary".into(), "trotter".into());
        m.insert("trotter_h".into(), self.h.to_string());
        m.insert(
            "trotter_order".into(),
            match self.order {
                TrotterOrder::First => "1".into(),
                TrotterOrder::Second => "2".into(),
            },
        );
        m
    }
}

/// Analytic or tabulated lower bound `g₀(s)` on the gap along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapProfile {
    Constant { value: f64 },
    /// `√(1 − 4(1 − r)s(1 − s))` with `r = M/N`.
    Grover { ratio: f64 },
    /// `√((1 − s)² + (s/κ)²)`.
    Qlsp { kappa: f64 },
    /// `factor · base`.
    Scaled { base: Box<GapProfile>, factor: f64 },
    /// `h(base − h²)`: the phase gap of a product-formula step.
    Trotter { base: Box<GapProfile>, h: f64 },
}

impl GapProfile {
    pub fn g0(&self, s: f64) -> f64 {
        match self {
            GapProfile::Constant { value } => *value,
            GapProfile::Grover { ratio } => (1.0 - 4.0 * (1.0 - ratio) * s * (1.0 - s)).max(0.0).sqrt(),
            GapProfile::Qlsp { kappa } => ((1.0 - s).powi(2) + (s / kappa).powi(2)).sqrt(),
            GapProfile::Scaled { base, factor } => factor * base.g0(s),
            GapProfile::Trotter { base, h } => h * (base.g0(s) - h * h),
        }
    }

    pub fn dg0(&self, s: f64) -> f64 {
        match self {
            GapProfile::Constant { .. } => 0.0,
            GapProfile::Grover { ratio } => {
                -2.0 * (1.0 - ratio) * (1.0 - 2.0 * s) / self.g0(s).max(f64::MIN_POSITIVE)
            }
            GapProfile::Qlsp { kappa } => {
                (-(1.0 - s) + s / (kappa * kappa)) / self.g0(s).max(f64::MIN_POSITIVE)
            }
            GapProfile::Scaled { base, factor } => factor * base.dg0(s),
            GapProfile::Trotter { base, h } => h * base.dg0(s),
        }
    }

    /// Certified lower bound on `min_s g₀(s)`.
    pub fn g0m(&self) -> f64 {
        match self {
            GapProfile::Constant { value } => *value,
            GapProfile::Grover { ratio } => ratio.sqrt(),
            GapProfile::Qlsp { kappa } => 1.0 / (2.0 * kappa),
            GapProfile::Scaled { base, factor } => factor * base.g0m(),
            GapProfile::Trotter { base, h } => h * (base.g0m() - h * h),
        }
    }

    /// Upper bound on `sup_s |g₀'(s)|`.
    pub fn dg0_bound(&self) -> f64 {
        match self {
            GapProfile::Constant { .. } => 0.0,
            GapProfile::Grover { .. } => 2.0,
            GapProfile::Qlsp { kappa } => (1.0 + 1.0 / (kappa * kappa)).sqrt(),
            GapProfile::Scaled { base, factor } => factor * base.dg0_bound(),
            GapProfile::Trotter { base, h } => h * base.dg0_bound(),
        }
    }

    /// Closed-form `B` with `∫g₀^{−p} ≤ B·g₀ₘ^{1−p}`, when one is known.
    pub fn analytic_b(&self, p: f64) -> Option<f64> {
        match self {
            GapProfile::Constant { value } => Some(1.0 / value),
            GapProfile::Grover { ratio } => {
                if *ratio > 0.25 {
                    return None;
                }
                if (p - 1.0).abs() < 1e-12 {
                    Some(2.0 * (1.0 + (2.0 / 3.0) * (1.0 / (2.0 * ratio.sqrt())).ln()))
                } else {
                    Some(2.0 * (1.0 + (2.0 / 3.0) * 2f64.powf(1.0 - p) / (p - 1.0)))
                }
            }
            GapProfile::Qlsp { kappa } => {
                if (p - 1.0).abs() < 1e-12 {
                    Some(1.0 + (2.0 * kappa).ln())
                } else {
                    Some(4f64.powf(1.0 - p) + (5f64.sqrt() / 4.0).powf(p - 1.0) / (p - 1.0))
                }
            }
            GapProfile::Scaled { base, factor } => base.analytic_b(p).map(|b| b / factor),
            GapProfile::Trotter { .. } => None,
        }
    }
}

/// Relative inflation of certified integral constants.
pub const CERTIFY_SLACK: f64 = 1.0 + 1e-6;

/// Gap lower bound together with the integral constants `B_p`, `B_{3−p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapModel {
    pub profile: GapProfile,
    pub p: f64,
    pub b_p: f64,
    pub b_3mp: f64,
}

impl GapModel {
    /// Carries the smallest constants certified by quadrature, inflated by
    /// `CERTIFY_SLACK` to absorb quadrature error.
    pub fn new(profile: GapProfile, p: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("p must lie in [1, 2], got {p}")));
        }
        let (b_p, b_3mp) = crate::schedules::certify_profile(&profile, p, crate::schedules::CERTIFY_POINTS)?;
        Ok(GapModel {
            profile,
            p,
            b_p: b_p * CERTIFY_SLACK,
            b_3mp: b_3mp * CERTIFY_SLACK,
        })
    }

    /// Carries the closed-form constants of the profile's instance family
    /// when both exponents have one, so that they do not depend on the
    /// instance size. Never smaller than the certified constants.
    pub fn uniform(profile: GapProfile, p: f64) -> Result<Self> {
        let certified = GapModel::new(profile, p)?;
        let prof = &certified.profile;
        match (prof.analytic_b(p), prof.analytic_b(3.0 - p)) {
            (Some(a), Some(b)) => Ok(GapModel {
                b_p: a.max(certified.b_p),
                b_3mp: b.max(certified.b_3mp),
                ..certified
            }),
            _ => Ok(certified),
        }
    }

    pub fn g0(&self, s: f64) -> f64 {
        self.profile.g0(s)
    }

    pub fn dg0(&self, s: f64) -> f64 {
        self.profile.dg0(s)
    }

    pub fn g0m(&self) -> f64 {
        self.profile.g0m()
    }

    pub fn dg0_bound(&self) -> f64 {
        self.profile.dg0_bound()
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        GapModel::new(self.profile.clone(), p)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        GapModel::new(
            GapProfile::Scaled {
                base: Box::new(self.profile.clone()),
                factor,
            },
            self.p,
        )
    }

    /// Largest `g₀(s) − gap(s)` over a uniform grid; nonpositive when the
    /// model is a valid lower bound there.
    pub fn lower_bound_excess(&self, path: &dyn OperatorPath, points: usize) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=points {
            let s = k as f64 / points as f64;
            worst = worst.max(self.g0(s) - path.projector(s)?.gap);
        }
        Ok(worst)
    }
}

/// Unstructured search over `N` items with marked set `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroverInstance {
    pub n: usize,
    pub marked: Vec<usize>,
}

impl GroverInstance {
    pub fn new(n: usize, marked: Vec<usize>) -> Result<Self> {
        let mut sorted = marked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != marked.len() {
            return Err(Error::InvalidMarkedSet("duplicate marked index".into()));
        }
        if marked.is_empty() || marked.len() >= n {
            return Err(Error::InvalidMarkedSet(format!(
                "need 1 <= |M| < N, got |M| = {} with N = {n}",
                marked.len()
            )));
        }
        if let Some(&bad) = sorted.iter().find(|&&k| k >= n) {
            return Err(Error::InvalidMarkedSet(format!("index {bad} outside 0..{n}")));
        }
        Ok(GroverInstance { n, marked: sorted })
    }

    pub fn ratio(&self) -> f64 {
        self.marked.len() as f64 / self.n as f64
    }

    pub fn uniform(&self) -> CVector {
        CVector::from_element(self.n, c(1.0 / (self.n as f64).sqrt()))
    }

    /// `H₀ = 1 − |u⟩⟨u|`, `H₁ = 1 − P_M` on the full space, tracking the
    /// lowest eigenvalue.
    pub fn path(&self) -> Result<LinearPath> {
        let n = self.n;
        let u = self.uniform();
        let h0 = identity(n) - outer(&u, &u);
        let mut h1 = identity(n);
        for &k in &self.marked {
            h1[(k, k)] = ZERO;
        }
        LinearPath::new(h0, h1, WindowRule::Lowest { count: 1 }, "grover")
    }

    /// The same path restricted to `span{|marked⟩, |unmarked⟩}` (uniform
    /// superpositions), which contains `|u⟩` and is invariant under both
    /// endpoints. Basis order: marked, unmarked.
    pub fn reduced_path(&self) -> Result<LinearPath> {
        let r = self.ratio();
        let u = CVector::from_column_slice(&[c(r.sqrt()), c((1.0 - r).sqrt())]);
        let h0 = identity(2) - outer(&u, &u);
        let h1 = crate::linalg::diag_real(&[0.0, 1.0]);
        LinearPath::new(h0, h1, WindowRule::Lowest { count: 1 }, "grover (reduced)")
    }

    /// Columns: uniform superposition of marked, then of unmarked items.
    pub fn reduction_isometry(&self) -> CMatrix {
        let m = self.marked.len() as f64;
        let rest = (self.n - self.marked.len()) as f64;
        CMatrix::from_fn(self.n, 2, |i, j| {
            let is_marked = self.marked.binary_search(&i).is_ok();
            match (j, is_marked) {
                (0, true) => c(1.0 / m.sqrt()),
                (1, false) => c(1.0 / rest.sqrt()),
                _ => ZERO,
            }
        })
    }

    pub fn gap_model(&self, p: f64) -> Result<GapModel> {
        GapModel::new(GapProfile::Grover { ratio: self.ratio() }, p)
    }

    /// The four distinct eigenvalues `½(1 ± g)`, `1 − s`, `1` (the third only
    /// when `M > 1`, the fourth only when `N − M > 1`).
    pub fn eigenvalues(&self, s: f64) -> Vec<f64> {
        let g = GapProfile::Grover { ratio: self.ratio() }.g0(s);
        let mut out = vec![0.5 * (1.0 - g), 0.5 * (1.0 + g)];
        if self.marked.len() > 1 {
            out.push(1.0 - s);
        }
        if self.n - self.marked.len() > 1 {
            out.push(1.0);
        }
        out
    }
}

/// `[[0, A], [A*, 0]]` with right-hand side `(b, 0)`; the solution of the
/// dilated system carries `A⁻¹b` in its second block.
pub fn hermitian_dilation(a: &CMatrix, b: &CVector) -> Result<(CMatrix, CVector)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut d = CMatrix::zeros(2 * n, 2 * n);
    d.view_mut((0, n), (n, n)).copy_from(a);
    d.view_mut((n, 0), (n, n)).copy_from(&a.adjoint());
    let mut rhs = CVector::zeros(2 * n);
    rhs.rows_mut(0, n).copy_from(b);
    Ok((d, rhs))
}

/// Condition number `‖A‖·‖A⁻¹‖` from singular values.
pub fn condition_number(a: &CMatrix) -> Result<f64> {
    let sv = a.singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo <= 1e-14 * hi.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularA);
    }
    Ok(hi / lo)
}

/// The linear-systems path for Hermitian invertible `A` and unit `b`.
#[derive(Debug, Clone)]
pub struct QlspInstance {
    /// `A/‖A‖`.
    pub a_hat: CMatrix,
    pub b: CVector,
    pub kappa: f64,
    /// Exact condition number of `A`.
    pub kappa_exact: f64,
}

fn ket_plus() -> CVector {
    CVector::from_element(2, c(1.0 / 2f64.sqrt()))
}

fn ket_minus() -> CVector {
    CVector::from_column_slice(&[c(1.0 / 2f64.sqrt()), c(-1.0 / 2f64.sqrt())])
}

fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

impl QlspInstance {
    /// `kappa_hint`, when given, must be an upper bound on the condition
    /// number of `A`; it then replaces it in the gap model.
    pub fn new(a: &CMatrix, b: &CVector, kappa_hint: Option<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let residual = crate::linalg::hermitian_residual(a);
        let tolerance = 1e-12 * operator_norm(a).max(1.0);
        if residual > tolerance {
            return Err(Error::NonHermitian { residual, tolerance });
        }
        let bn = b.norm();
        if (bn - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("b must be unit-normalised, has norm {bn}")));
        }
        let kappa_exact = condition_number(a)?;
        let kappa = match kappa_hint {
            Some(k) if k + 1e-9 * k < kappa_exact => {
                return Err(Error::InvalidParameter(format!(
                    "kappa_hint {k} is below the condition number {kappa_exact}"
                )))
            }
            Some(k) => k,
            None => kappa_exact,
        };
        if kappa < 2.0 {
            return Err(Error::KappaTooSmall { kappa });
        }
        let a_hat = crate::linalg::hermitian_part(a) / c(operator_norm(a));
        Ok(QlspInstance {
            a_hat,
            b: b.clone(),
            kappa,
            kappa_exact,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.b.len()
    }

    /// `A(s) = (1 − s)σ_z⊗1 + sσ_x⊗Â`.
    pub fn a_of_s(&self, s: f64) -> CMatrix {
        let n = self.system_dim();
        kron(&pauli::z(), &identity(n)) * c(1.0 - s) + kron(&pauli::x(), &self.a_hat) * c(s)
    }

    fn q_plus_b(&self) -> CMatrix {
        let pb = kron_vec(&ket_plus(), &self.b);
        identity(2 * self.system_dim()) - outer(&pb, &pb)
    }

    fn endpoint(&self, a: &CMatrix) -> CMatrix {
        let q = self.q_plus_b();
        let sp = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let sm = sp.adjoint();
        kron(&sp, &(a * &q)) + kron(&sm, &(&q * a))
    }

    /// `H(s) = σ₊⊗A(s)Q + σ₋⊗QA(s)` as a linear path tracking eigenvalue 0.
    pub fn path(&self) -> Result<LinearPath> {
        let n = self.system_dim();
        let h0 = self.endpoint(&kron(&pauli::z(), &identity(n)));
        let h1 = self.endpoint(&kron(&pauli::x(), &self.a_hat));
        LinearPath::new(h0, h1, WindowRule::NearestCluster { target: 0.0 }, "qlsp")
    }

    pub fn gap_model(&self, p: f64) -> Result<GapModel> {
        GapModel::new(GapProfile::Qlsp { kappa: self.kappa }, p)
    }

    /// `|x(s)⟩ ∝ A(s)⁻¹|+⟩|b⟩`.
    pub fn x_of_s(&self, s: f64) -> Result<CVector> {
        let rhs = kron_vec(&ket_plus(), &self.b);
        let x = self.a_of_s(s).lu().solve(&rhs).ok_or(Error::SingularA)?;
        let norm = x.norm();
        Ok(x / c(norm))
    }

    /// `|0⟩⊗|x(s)⟩` in the `4N`-dimensional space.
    pub fn zero_state(&self, s: f64) -> Result<CVector> {
        let e0 = CVector::from_column_slice(&[ONE, ZERO]);
        Ok(kron_vec(&e0, &self.x_of_s(s)?))
    }

    /// `|1⟩⊗|+⟩|b⟩`, the second zero mode.
    pub fn idle_state(&self) -> CVector {
        let e1 = CVector::from_column_slice(&[ZERO, ONE]);
        kron_vec(&e1, &kron_vec(&ket_plus(), &self.b))
    }

    /// `|0⟩|−⟩|b⟩ = |0⟩⊗|x(0)⟩`.
    pub fn initial_state(&self) -> CVector {
        let e0 = CVector::from_column_slice(&[ONE, ZERO]);
        kron_vec(&e0, &kron_vec(&ket_minus(), &self.b))
    }

    /// `|0⟩|+⟩⊗A⁻¹b/‖A⁻¹b‖`.
    pub fn target_state(&self) -> Result<CVector> {
        let x = self.a_hat.clone().lu().solve(&self.b).ok_or(Error::SingularA)?;
        let norm = x.norm();
        let e0 = CVector::from_column_slice(&[ONE, ZERO]);
        Ok(kron_vec(&e0, &kron_vec(&ket_plus(), &(x / c(norm)))))
    }

    /// Overlap `⟨t|ρ|t⟩` of a final density matrix with the target state.
    pub fn solution_fidelity(&self, rho: &CMatrix) -> Result<f64> {
        let t = self.target_state()?;
        if rho.nrows() != t.len() {
            return Err(Error::DimensionMismatch(format!(
                "density matrix has dimension {}, expected {}",
                rho.nrows(),
                t.len()
            )));
        }
        Ok((t.adjoint() * rho * &t)[(0, 0)].re.clamp(0.0, 1.0))
    }
}

/// All-in-one QLSP construction returning the path, gap model and the
/// solution-fidelity extractor.
pub fn qlsp_path(
    a: &CMatrix,
    b: &CVector,
    kappa_hint: Option<f64>,
    p: f64,
) -> Result<(LinearPath, GapModel, QlspInstance)> {
    let inst = QlspInstance::new(a, b, kappa_hint)?;
    Ok((inst.path()?, inst.gap_model(p)?, inst))
}

/// All-in-one Grover construction (full space).
pub fn grover_path(n: usize, marked: &[usize], p: f64) -> Result<(LinearPath, GapModel)> {
    let inst = GroverInstance::new(n, marked.to_vec())?;
    Ok((inst.path()?, inst.gap_model(p)?))
}
