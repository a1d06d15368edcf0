//! Dense complex linear algebra: normal eigendecomposition, matrix
//! functions, operator norms and the block Sylvester solve.
//!
//! Everything works on `nalgebra::DMatrix<Complex64>`. Matrices serialize
//! through [`MatrixJson`] as `{rows, cols, re, im}` in row-major order.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

const MAX_EIG_ITER: usize = 10_000;

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn diag(values: &[C64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(values))
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(
        values.len(),
        values.iter().map(|&v| c(v)),
    ))
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn outer(u: &CVector, v: &CVector) -> CMatrix {
    u * v.adjoint()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `(A + A*) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c(0.5)
}

pub fn hermitian_residual(a: &CMatrix) -> f64 {
    frobenius(&(a - a.adjoint()))
}

pub fn normality_residual(a: &CMatrix) -> f64 {
    let ad = a.adjoint();
    frobenius(&(a * &ad - &ad * a))
}

/// Pauli matrices, used throughout the tests and the QLSP construction.
pub mod pauli {
    use super::*;

    pub fn x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
    }

    pub fn z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }
}

/// JSON form of a dense complex matrix (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            re,
            im,
        }
    }

    /// An empty `im` array means a real matrix.
    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.rows * self.cols;
        if self.re.len() != n || !(self.im.is_empty() || self.im.len() == n) {
            return Err(Error::DimensionMismatch(format!(
                "matrix json declares {}x{} but carries {} real / {} imaginary entries",
                self.rows,
                self.cols,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            C64::new(self.re[k], self.im.get(k).copied().unwrap_or(0.0))
        }))
    }
}

/// JSON form of a complex vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorJson {
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl VectorJson {
    pub fn from_vector(v: &CVector) -> Self {
        VectorJson {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }

    pub fn to_vector(&self) -> Result<CVector> {
        if !(self.im.is_empty() || self.im.len() == self.re.len()) {
            return Err(Error::DimensionMismatch(
                "vector json re/im lengths differ".into(),
            ));
        }
        Ok(CVector::from_iterator(
            self.re.len(),
            self.re
                .iter()
                .enumerate()
                .map(|(k, &r)| C64::new(r, self.im.get(k).copied().unwrap_or(0.0))),
        ))
    }
}

/// Tolerances for [`eig_normal_with`]. All are relative to the matrix scale.
#[derive(Debug, Clone, Copy)]
pub struct EigTolerances {
    /// `‖A − A*‖ ≤ hermitian · ‖A‖` when a Hermitian hint is given.
    pub hermitian: f64,
    /// `‖AA* − A*A‖ ≤ normal · ‖A‖²` otherwise.
    pub normal: f64,
    /// Strict upper triangle of the Schur factor, relative to `‖A‖`.
    pub schur_offdiag: f64,
}

impl Default for EigTolerances {
    fn default() -> Self {
        EigTolerances {
            hermitian: 1e-12,
            normal: 1e-10,
            schur_offdiag: 1e-8,
        }
    }
}

/// Eigenvalues with a unitary matrix of eigenvectors (as columns).
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<C64>,
    pub eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V · diag(f(ω_k)) · V*`.
    pub fn apply<F: Fn(C64) -> C64>(&self, f: F) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, &w) in self.eigenvalues.iter().enumerate() {
            let fw = f(w);
            for z in scaled.column_mut(k).iter_mut() {
                *z *= fw;
            }
        }
        scaled * v.adjoint()
    }

    /// Same as [`apply`](Self::apply) but with `f` evaluated on real
    /// eigenvalues; meant for Hermitian sources.
    pub fn apply_real<F: Fn(f64) -> C64>(&self, f: F) -> CMatrix {
        self.apply(|w| f(w.re))
    }

    /// `V* X V`.
    pub fn to_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * x * &self.eigenvectors
    }

    /// `V X V*`.
    pub fn from_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        &self.eigenvectors * x * self.eigenvectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.apply(|w| w)
    }

    pub fn real_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|w| w.re).collect()
    }
}

fn check_square(a: &CMatrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub fn eig_normal(a: &CMatrix, hermitian_hint: bool) -> Result<SpectralDecomposition> {
    eig_normal_with(a, hermitian_hint, &EigTolerances::default())
}

/// Eigendecomposition of a normal matrix.
///
/// Hermitian inputs go through the symmetric eigensolver; other normal
/// inputs through a complex Schur factorisation whose triangular factor
/// must come out diagonal. Eigenpairs are sorted by (real, imag).
pub fn eig_normal_with(
    a: &CMatrix,
    hermitian_hint: bool,
    tol: &EigTolerances,
) -> Result<SpectralDecomposition> {
    check_square(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let scale = frobenius(a).max(f64::MIN_POSITIVE);

    let (eigenvalues, eigenvectors) = if hermitian_hint {
        let residual = hermitian_residual(a);
        let tolerance = tol.hermitian * scale.max(1.0);
        if residual > tolerance {
            return Err(Error::NonHermitian {
                residual,
                tolerance,
            });
        }
        let eig = SymmetricEigen::try_new(hermitian_part(a), f64::EPSILON, MAX_EIG_ITER)
            .ok_or(Error::NoConvergence)?;
        let values: Vec<C64> = eig.eigenvalues.iter().map(|&w| c(w)).collect();
        (values, eig.eigenvectors)
    } else {
        let residual = normality_residual(a);
        let tolerance = tol.normal * (scale * scale).max(1.0);
        if residual > tolerance {
            return Err(Error::NonNormal {
                residual,
                tolerance,
            });
        }
        let (q, t) = schur(a)?;
        let mut off = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                off = off.max(t[(i, j)].norm());
            }
        }
        let off_tol = tol.schur_offdiag * scale.max(1.0);
        if off > off_tol {
            return Err(Error::NonNormal {
                residual: off,
                tolerance: off_tol,
            });
        }
        let values: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
        (values, q)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[i]
            .re
            .total_cmp(&eigenvalues[j].re)
            .then(eigenvalues[i].im.total_cmp(&eigenvalues[j].im))
    });
    let sorted_values = order.iter().map(|&k| eigenvalues[k]).collect();
    let sorted_vectors = CMatrix::from_fn(n, n, |r, k| eigenvectors[(r, order[k])]);
    Ok(SpectralDecomposition {
        eigenvalues: sorted_values,
        eigenvectors: sorted_vectors,
    })
}

/// Complex Schur factors `(Q, T)`. The QR iteration can stall at machine
/// precision on clustered spectra, so the deflation threshold is relaxed
/// stepwise before giving up.
fn schur(a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    for eps in [f64::EPSILON, 8.0 * f64::EPSILON, 64.0 * f64::EPSILON] {
        if let Some(s) = Schur::try_new(a.clone(), eps, MAX_EIG_ITER) {
            return Ok(s.unpack());
        }
    }
    Err(Error::NoConvergence)
}

/// Convenience wrapper for Hermitian input.
pub fn eig_hermitian(a: &CMatrix) -> Result<SpectralDecomposition> {
    eig_normal(a, true)
}

/// `f(A) = V · diag(f(ω_k)) · V*` for normal `A`.
pub fn matrix_function<F: Fn(C64) -> C64>(
    a: &CMatrix,
    hermitian_hint: bool,
    f: F,
) -> Result<CMatrix> {
    Ok(eig_normal(a, hermitian_hint)?.apply(f))
}

/// Scalar pseudo-inverse: `0` below `threshold`, `1/x` otherwise.
pub fn pinv_scalar(x: C64, threshold: f64) -> C64 {
    if x.norm() <= threshold {
        ZERO
    } else {
        x.inv()
    }
}

/// Pseudo-inverse of a normal matrix through its spectrum. Eigenvalues
/// below `1e-10 · ‖A‖` count as zero.
pub fn pseudo_inverse_normal(a: &CMatrix, hermitian_hint: bool) -> Result<CMatrix> {
    let dec = eig_normal(a, hermitian_hint)?;
    let scale = dec
        .eigenvalues
        .iter()
        .map(|w| w.norm())
        .fold(0.0, f64::max);
    let threshold = 1e-10 * scale;
    Ok(dec.apply(|w| pinv_scalar(w, threshold)))
}

/// Largest singular value.
pub fn operator_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Orthonormal bases `(W_P, W_Q)` of the range and kernel of an orthogonal
/// projector.
pub fn projector_bases(p: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let dec = eig_hermitian(p)?;
    let n = p.nrows();
    let range: Vec<usize> = (0..n).filter(|&k| dec.eigenvalues[k].re > 0.5).collect();
    let kernel: Vec<usize> = (0..n).filter(|&k| dec.eigenvalues[k].re <= 0.5).collect();
    let pick = |cols: &[usize]| {
        CMatrix::from_fn(n, cols.len(), |r, k| dec.eigenvectors[(r, cols[k])])
    };
    Ok((pick(&range), pick(&kernel)))
}

/// Solves `L Z − Z R = C` for square `L` (k×k), `R` (l×l) with the
/// Bartels–Stewart algorithm on complex Schur forms.
pub fn solve_sylvester(l: &CMatrix, r: &CMatrix, rhs: &CMatrix, min_sep: f64) -> Result<CMatrix> {
    let k = l.nrows();
    let m = r.nrows();
    if rhs.nrows() != k || rhs.ncols() != m {
        return Err(Error::DimensionMismatch(
            "sylvester right-hand side has the wrong shape".into(),
        ));
    }
    if k == 0 || m == 0 {
        return Ok(CMatrix::zeros(k, m));
    }
    let (u1, t1) = schur(l)?;
    let (u2, t2) = schur(r)?;
    let c_hat = u1.adjoint() * rhs * &u2;
    let mut z_hat = CMatrix::zeros(k, m);
    for j in 0..m {
        let mut b: CVector = c_hat.column(j).into_owned();
        for i in 0..j {
            let coeff = t2[(i, j)];
            if coeff != ZERO {
                b += z_hat.column(i) * coeff;
            }
        }
        let shift = t2[(j, j)];
        // Back substitution with (T1 − shift·1), upper triangular.
        for row in (0..k).rev() {
            let mut acc = b[row];
            for col in row + 1..k {
                acc -= t1[(row, col)] * z_hat[(col, j)];
            }
            let d = t1[(row, row)] - shift;
            if d.norm() < min_sep {
                return Err(Error::SingularOperator {
                    separation: d.norm(),
                });
            }
            z_hat[(row, j)] = acc / d;
        }
    }
    Ok(u1 * z_hat * u2.adjoint())
}

/// The unique off-diagonal `Y` with `[A, Y] = [P, X]`.
///
/// The two off-diagonal blocks are obtained from Sylvester equations on the
/// restrictions of `A` to `range P` and `range Q`:
/// `A_P Y_PQ − Y_PQ A_Q = X_PQ` and `A_Q Y_QP − Y_QP A_P = −X_QP`.
pub fn sylvester_block_solve(a: &CMatrix, p: &CMatrix, q: &CMatrix, x: &CMatrix) -> Result<CMatrix> {
    check_square(a)?;
    let n = a.nrows();
    if p.shape() != (n, n) || q.shape() != (n, n) || x.shape() != (n, n) {
        return Err(Error::DimensionMismatch(
            "sylvester_block_solve operands must share the dimension of A".into(),
        ));
    }
    let (wp, _) = projector_bases(p)?;
    let (wq, _) = projector_bases(q)?;
    let a_p = wp.adjoint() * a * &wp;
    let a_q = wq.adjoint() * a * &wq;
    let min_sep = 1e-8;
    let y_pq = solve_sylvester(&a_p, &a_q, &(wp.adjoint() * x * &wq), min_sep)?;
    let y_qp = solve_sylvester(&a_q, &a_p, &(-(wq.adjoint() * x * &wp)), min_sep)?;
    Ok(&wp * y_pq * wq.adjoint() + &wq * y_qp * wp.adjoint())
}

/// Matrix exponential `e^{-i t H}` of a Hermitian matrix.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> Result<CMatrix> {
    Ok(eig_hermitian(h)?.apply_real(|w| C64::from_polar(1.0, -t * w)))
}

#[cfg(test)]
mod tests {
    use crate::random::*;
    use super::*;
    use proptest::prelude::*;

    fn max_abs(a: &CMatrix) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn diagonal_eigenvalues_are_sorted() {
        let a = diag_real(&[3.0, 1.0]);
        let dec = eig_normal(&a, true).unwrap();
        assert_eq!(dec.real_eigenvalues(), vec![1.0, 3.0]);
        // eigenvectors are a permutation of the identity
        assert!((dec.eigenvectors[(1, 0)].norm() - 1.0).abs() < 1e-14);
        assert!((dec.eigenvectors[(0, 1)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pauli_x_spectrum() {
        let dec = eig_normal(&pauli::x(), true).unwrap();
        let w = dec.real_eigenvalues();
        assert!((w[0] + 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let dec = eig_normal(&pauli::x(), false).unwrap();
        assert!((dec.eigenvalues[0].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_hermitian_reconstruction() {
        let mut r = rng(11);
        let a = random_hermitian(&mut r, 6);
        let dec = eig_normal(&a, true).unwrap();
        let scale = operator_norm(&a);
        assert!(operator_norm(&(dec.reconstruct() - &a)) <= 1e-10 * scale);
        let v = &dec.eigenvectors;
        assert!(max_abs(&(v.adjoint() * v - identity(6))) < 1e-10);
        let av = &a * v;
        let vl = v * diag(&dec.eigenvalues);
        assert!(operator_norm(&(av - vl)) <= 1e-10 * scale);
    }

    #[test]
    fn random_normal_via_schur() {
        let mut r = rng(5);
        let eig: Vec<C64> = (0..6)
            .map(|k| C64::from_polar(1.0 + 0.1 * k as f64, 0.9 * k as f64))
            .collect();
        let a = random_normal_with(&mut r, &eig);
        let dec = eig_normal(&a, false).unwrap();
        assert!(operator_norm(&(dec.reconstruct() - &a)) <= 1e-10 * operator_norm(&a));
        let v = &dec.eigenvectors;
        assert!(max_abs(&(v.adjoint() * v - identity(6))) < 1e-10);
        for w in 1..6 {
            let (x, y) = (dec.eigenvalues[w - 1], dec.eigenvalues[w]);
            assert!(x.re <= y.re);
        }
    }

    #[test]
    fn non_normal_rejected() {
        let a = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, c(2.0)]);
        assert!(matches!(eig_normal(&a, false), Err(Error::NonNormal { .. })));
        assert!(matches!(eig_normal(&a, true), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn exponential_of_diagonal() {
        let a = diag_real(&[0.5, -0.5]);
        let f = matrix_function(&a, true, |w| (-I * std::f64::consts::FRAC_PI_2 * w).exp()).unwrap();
        let expect = diag(&[
            C64::from_polar(1.0, -std::f64::consts::FRAC_PI_4),
            C64::from_polar(1.0, std::f64::consts::FRAC_PI_4),
        ]);
        assert!(max_abs(&(f - expect)) < 1e-14);
    }

    #[test]
    fn pseudo_inverse_of_one_minus_sigma_z() {
        // 1 − σ_z = diag(0, 2), so the pseudo-inverse is diag(0, 1/2).
        let a = identity(2) - pauli::z();
        let p = pseudo_inverse_normal(&a, true).unwrap();
        assert!(max_abs(&(p - diag_real(&[0.0, 0.5]))) < 1e-14);
    }

    #[test]
    fn square_root_identity() {
        let mut r = rng(3);
        let h = random_hermitian(&mut r, 5);
        let h = &h * c(0.9 / operator_norm(&h));
        let b = matrix_function(&h, true, |w| c((1.0 - w.re * w.re).max(0.0).sqrt())).unwrap();
        let err = &b * &b + &h * &h - identity(5);
        assert!(operator_norm(&err) < 1e-9);
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&identity(4)) - 1.0).abs() < 1e-14);
        assert!((operator_norm(&diag_real(&[2.0, -3.0])) - 3.0).abs() < 1e-14);
        let mut r = rng(8);
        let a = random_matrix(&mut r, 5);
        // Gram-matrix oracle
        let gram = a.adjoint() * &a;
        let top = eig_hermitian(&gram).unwrap().eigenvalues[4].re.sqrt();
        assert!((operator_norm(&a) - top).abs() < 1e-10 * top);
    }

    #[test]
    fn sylvester_two_by_two() {
        let a = diag_real(&[0.0, 1.0]);
        let p = diag_real(&[1.0, 0.0]);
        let q = identity(2) - &p;
        let y = sylvester_block_solve(&a, &p, &q, &pauli::x()).unwrap();
        // y_01 = [P,X]_01 / (ω_0 − ω_1) = 1 / (0 − 1)
        let expect = CMatrix::from_row_slice(2, 2, &[ZERO, -ONE, -ONE, ZERO]);
        assert!(max_abs(&(y - expect)) < 1e-12);
    }

    #[test]
    fn sylvester_commuting_rhs_vanishes() {
        let a = diag_real(&[0.0, 1.0, 2.5]);
        let p = diag_real(&[1.0, 0.0, 0.0]);
        let q = identity(3) - &p;
        let x = diag_real(&[0.3, -2.0, 1.0]);
        let y = sylvester_block_solve(&a, &p, &q, &x).unwrap();
        assert!(max_abs(&y) < 1e-14);
    }

    #[test]
    fn sylvester_rejects_touching_spectra() {
        let a = diag_real(&[1.0, 1.0]);
        let p = diag_real(&[1.0, 0.0]);
        let q = identity(2) - &p;
        let r = sylvester_block_solve(&a, &p, &q, &pauli::x());
        assert!(matches!(r, Err(Error::SingularOperator { .. })));
    }

    #[test]
    fn matrix_json_round_trip() {
        let mut r = rng(1);
        let a = random_matrix(&mut r, 3);
        let js = serde_json::to_string(&MatrixJson::from_matrix(&a)).unwrap();
        let back: MatrixJson = serde_json::from_str(&js).unwrap();
        assert_eq!(back.to_matrix().unwrap(), a);
        let bad = MatrixJson {
            rows: 2,
            cols: 2,
            re: vec![1.0; 3],
            im: vec![],
        };
        assert!(bad.to_matrix().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn norm_is_submultiplicative(seed in any::<u64>(), n in 2usize..7) {
            let mut r = rng(seed);
            let a = random_matrix(&mut r, n);
            let b = random_matrix(&mut r, n);
            prop_assert!(operator_norm(&(&a * &b)) <= operator_norm(&a) * operator_norm(&b) + 1e-10);
        }

        #[test]
        fn function_composition(seed in any::<u64>(), n in 2usize..7) {
            let mut r = rng(seed);
            let h = random_hermitian(&mut r, n);
            let g = |w: C64| c(w.re.sin());
            let f = |w: C64| c(w.re * w.re + 0.5 * w.re);
            let once = matrix_function(&h, true, |w| f(g(w))).unwrap();
            let inner = matrix_function(&h, true, g).unwrap();
            let twice = matrix_function(&inner, true, f).unwrap();
            prop_assert!(operator_norm(&(once - twice)) < 1e-9);
        }

        #[test]
        fn identity_function_reproduces_input(seed in any::<u64>(), n in 1usize..8) {
            let mut r = rng(seed);
            let h = random_hermitian(&mut r, n);
            let back = matrix_function(&h, true, |w| w).unwrap();
            prop_assert!(operator_norm(&(back - &h)) < 1e-10 * (1.0 + operator_norm(&h)));
        }
    }
}
