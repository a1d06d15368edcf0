//! Seeded random instances for property checks, verification suites and
//! benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::{commutator, diag, expm_hermitian, hermitian_part, trace, CMatrix, CVector, C64};
use crate::spectral::{MatrixJet, SpectralWindow};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
    })
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    hermitian_part(&random_matrix(rng, n))
}

pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    let h = random_hermitian(rng, n);
    expm_hermitian(&h, 1.3).unwrap()
}

/// Normal matrix `V diag(z) V*` with prescribed complex eigenvalues.
pub fn random_normal_with<R: Rng>(rng: &mut R, eigenvalues: &[C64]) -> CMatrix {
    let v = random_unitary(rng, eigenvalues.len());
    &v * diag(eigenvalues) * v.adjoint()
}

/// A normal quadratic-in-`s` curve `A(s) = W(s) D(s) W(s)*` with
/// `W(s) = e^{sK} V`, returned as its value and first two derivatives at
/// `s = 0`, together with the eigenvalue indices chosen as the window.
pub struct NormalInstance {
    pub a: MatrixJet,
    pub window: SpectralWindow,
}

pub fn normal_instance<R: Rng>(rng: &mut R, n: usize, min_gap: f64, hermitian: bool) -> NormalInstance {
    loop {
        let eig: Vec<C64> = (0..n)
            .map(|_| {
                let re = rng.random::<f64>() * 4.0 - 2.0;
                let im = if hermitian { 0.0 } else { rng.random::<f64>() * 4.0 - 2.0 };
                C64::new(re, im)
            })
            .collect();
        let d1: Vec<C64> = (0..n)
            .map(|_| {
                let im = if hermitian { 0.0 } else { rng.random::<f64>() - 0.5 };
                C64::new(rng.random::<f64>() - 0.5, im)
            })
            .collect();
        let d2: Vec<C64> = (0..n)
            .map(|_| {
                let im = if hermitian { 0.0 } else { rng.random::<f64>() - 0.5 };
                C64::new(rng.random::<f64>() - 0.5, im)
            })
            .collect();
        let v = random_unitary(rng, n);
        let k = random_hermitian(rng, n) * C64::new(0.0, 0.5);
        let a = &v * diag(&eig) * v.adjoint();
        let vd1 = &v * diag(&d1) * v.adjoint();
        let vd2 = &v * diag(&d2) * v.adjoint();
        let a1 = commutator(&k, &a) + &vd1;
        let a2 = commutator(&k, &a1) + commutator(&k, &vd1) + vd2;

        // Window: a disc around a random subset of 1 or 2 eigenvalues.
        let count = 1 + rng.random_range(0..2usize);
        let start = rng.random_range(0..n);
        let chosen: Vec<usize> = (0..count).map(|j| (start + j) % n).collect();
        let inside: Vec<C64> = chosen.iter().map(|&j| eig[j]).collect();
        let outside: Vec<C64> = (0..n).filter(|j| !chosen.contains(j)).map(|j| eig[j]).collect();
        let mut gap = f64::INFINITY;
        for zi in &inside {
            for zo in &outside {
                gap = gap.min((zi - zo).norm());
            }
        }
        if gap < min_gap {
            continue;
        }
        let center = inside.iter().sum::<C64>() / C64::new(count as f64, 0.0);
        let r_in = inside.iter().map(|z| (z - center).norm()).fold(0.0, f64::max);
        let r_out = outside.iter().map(|z| (z - center).norm()).fold(f64::INFINITY, f64::min);
        if r_out - r_in < min_gap {
            continue;
        }
        let window = if hermitian {
            let lo = inside.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            let hi = inside.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            // Interval windows need the inside eigenvalues to be contiguous.
            if outside.iter().any(|z| z.re > lo && z.re < hi) {
                continue;
            }
            let below = outside.iter().map(|z| z.re).filter(|&r| r < lo).fold(lo - 1.0, f64::max);
            let above = outside.iter().map(|z| z.re).filter(|&r| r > hi).fold(hi + 1.0, f64::min);
            SpectralWindow::interval(0.5 * (below + lo), 0.5 * (hi + above)).unwrap()
        } else {
            SpectralWindow::contour(center, 0.5 * (r_in + r_out)).unwrap()
        };
        let a = if hermitian { hermitian_part(&a) } else { a };
        return NormalInstance {
            a: MatrixJet { value: a, d1: a1, d2: a2 },
            window,
        };
    }
}

pub fn random_jet<R: Rng>(rng: &mut R, n: usize) -> MatrixJet {
    MatrixJet {
        value: random_matrix(rng, n),
        d1: random_matrix(rng, n),
        d2: random_matrix(rng, n),
    }
}

pub fn eval_curve(jet: &MatrixJet, s: f64) -> CMatrix {
    &jet.value + &jet.d1 * C64::new(s, 0.0) + &jet.d2 * C64::new(0.5 * s * s, 0.0)
}

/// Random density matrix `AA*/Tr(AA*)`.
pub fn random_density<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    let a = random_matrix(rng, n);
    let rho = &a * a.adjoint();
    let tr = trace(&rho);
    rho / tr
}

pub fn random_unit_vector<R: Rng>(rng: &mut R, n: usize) -> CVector {
    let v = CVector::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

/// Hermitian matrix scaled to operator norm `norm`.
pub fn random_bounded_hermitian<R: Rng>(rng: &mut R, n: usize, norm: f64) -> CMatrix {
    let h = random_hermitian(rng, n);
    let current = crate::linalg::operator_norm(&h);
    h * C64::new(norm / current, 0.0)
}

/// Hermitian `n×n` matrix with condition number exactly `kappa` and unit
/// norm: eigenvalue magnitudes include `1` and `1/κ`, the rest are
/// log-uniform between them, and signs are random.
pub fn random_conditioned_hermitian<R: Rng>(rng: &mut R, n: usize, kappa: f64) -> Result<CMatrix> {
    if n < 2 || !(kappa >= 1.0) {
        return Err(crate::error::Error::InvalidParameter(format!(
            "need n >= 2 and kappa >= 1, got n = {n}, kappa = {kappa}"
        )));
    }
    let mut mags = vec![1.0, 1.0 / kappa];
    for _ in 2..n {
        mags.push(kappa.powf(-rng.random::<f64>()));
    }
    let eig: Vec<C64> = mags
        .iter()
        .map(|&m| C64::new(if rng.random::<bool>() { m } else { -m }, 0.0))
        .collect();
    Ok(hermitian_part(&random_normal_with(rng, &eig)))
}
