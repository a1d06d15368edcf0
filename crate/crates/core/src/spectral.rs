//! Spectral windows, Riesz projectors, the twiddle operation and its
//! derivatives, and numerical certification of the norm bounds satisfied by
//! projector derivatives.
//!
//! For a normal `A` with spectral projector `P` onto the eigenvalues inside a
//! window and `Q = 1 − P`, the twiddle `X̃` of `X` is the unique off-diagonal
//! operator with `[A, X̃] = [P, X]`. Three independent routes are provided:
//! the eigenbasis expansion ([`twiddle_spectral`]), trapezoidal quadrature of
//! the resolvent integral ([`twiddle_contour`]) and a Sylvester solve
//! ([`twiddle_sylvester`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    commutator, eig_normal, identity, operator_norm, sylvester_block_solve, CMatrix,
    SpectralDecomposition, C64, ZERO,
};
use crate::paths::OperatorPath;

/// Minimum distance between an eigenvalue and the window boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-10;
/// Relative tolerance for merging eigenvalues into one distinct eigenvalue.
pub const CLUSTER_TOLERANCE: f64 = 1e-8;
/// Gaps below this are rejected rather than resolved.
pub const MIN_GAP: f64 = 1e-8;
/// Step for first-derivative finite differences.
pub const FD_STEP_FIRST: f64 = 1e-5;
/// Step for second-derivative finite differences.
pub const FD_STEP_SECOND: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralWindow {
    /// Real interval `[b0, b1]`; membership is decided on the real part.
    Interval { b0: f64, b1: f64 },
    /// Open disc bounded by the circle `|z − center| = radius`.
    Contour { center: C64, radius: f64 },
}

impl SpectralWindow {
    pub fn interval(b0: f64, b1: f64) -> Result<Self> {
        if !(b0.is_finite() && b1.is_finite() && b0 < b1) {
            return Err(Error::InvalidWindow(format!(
                "interval requires b0 < b1, got [{b0}, {b1}]"
            )));
        }
        Ok(SpectralWindow::Interval { b0, b1 })
    }

    pub fn contour(center: C64, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0 && center.re.is_finite() && center.im.is_finite())
        {
            return Err(Error::InvalidWindow(format!(
                "contour radius must be positive, got {radius}"
            )));
        }
        Ok(SpectralWindow::Contour { center, radius })
    }

    /// Whether `z` lies inside, and its distance to the boundary.
    pub fn classify(&self, z: C64) -> (bool, f64) {
        match *self {
            SpectralWindow::Interval { b0, b1 } => {
                let inside = z.re > b0 && z.re < b1;
                (inside, (z.re - b0).abs().min((z.re - b1).abs()))
            }
            SpectralWindow::Contour { center, radius } => {
                let d = (z - center).norm();
                (d < radius, (d - radius).abs())
            }
        }
    }

    /// Affine image `z ↦ scale·(z − shift)` of an interval window, with
    /// `scale > 0`.
    pub fn affine(&self, shift: f64, scale: f64) -> Self {
        match *self {
            SpectralWindow::Interval { b0, b1 } => SpectralWindow::Interval {
                b0: scale * (b0 - shift),
                b1: scale * (b1 - shift),
            },
            SpectralWindow::Contour { center, radius } => SpectralWindow::Contour {
                center: (center - C64::new(shift, 0.0)) * scale,
                radius: radius * scale,
            },
        }
    }
}

/// Rules that turn the spectrum of `A(s)` into a concrete window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WindowRule {
    Fixed { window: SpectralWindow },
    /// The `count` smallest eigenvalues (with multiplicity) of a Hermitian
    /// operator, with boundaries at mid-gap.
    Lowest { count: usize },
    /// The cluster of eigenvalues nearest `target`, boundaries at mid-gap.
    NearestCluster { target: f64 },
}

impl WindowRule {
    /// The rule for `scale·(A − shift)` with `scale > 0`.
    pub fn affine(&self, shift: f64, scale: f64) -> WindowRule {
        match self {
            WindowRule::Fixed { window } => WindowRule::Fixed {
                window: window.affine(shift, scale),
            },
            WindowRule::Lowest { count } => WindowRule::Lowest { count: *count },
            WindowRule::NearestCluster { target } => WindowRule::NearestCluster {
                target: scale * (target - shift),
            },
        }
    }

    pub fn resolve(&self, eigenvalues: &[C64]) -> Result<SpectralWindow> {
        match self {
            WindowRule::Fixed { window } => Ok(*window),
            WindowRule::Lowest { count } => {
                let mut re: Vec<f64> = eigenvalues.iter().map(|z| z.re).collect();
                re.sort_by(f64::total_cmp);
                if *count == 0 {
                    return Err(Error::EmptyWindow);
                }
                if *count >= re.len() {
                    return Err(Error::FullWindow);
                }
                interval_around_sorted(&re, 0, *count)
            }
            WindowRule::NearestCluster { target } => {
                let mut re: Vec<f64> = eigenvalues.iter().map(|z| z.re).collect();
                re.sort_by(f64::total_cmp);
                if re.is_empty() {
                    return Err(Error::EmptyWindow);
                }
                let scale = re.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                let tol = CLUSTER_TOLERANCE * scale;
                let nearest = re
                    .iter()
                    .copied()
                    .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
                    .unwrap_or(*target);
                let lo = re.iter().position(|&w| (w - nearest).abs() <= tol).unwrap_or(0);
                let hi = re
                    .iter()
                    .rposition(|&w| (w - nearest).abs() <= tol)
                    .map(|k| k + 1)
                    .unwrap_or(re.len());
                if lo == 0 && hi == re.len() {
                    return Err(Error::FullWindow);
                }
                interval_around_sorted(&re, lo, hi)
            }
        }
    }
}

/// Interval enclosing `sorted[lo..hi]` with boundaries at the midpoints to
/// the neighbouring eigenvalues (or one unit beyond an extreme eigenvalue).
pub fn interval_around_sorted(sorted: &[f64], lo: usize, hi: usize) -> Result<SpectralWindow> {
    if lo >= hi || hi > sorted.len() {
        return Err(Error::EmptyWindow);
    }
    let b0 = if lo == 0 {
        sorted[0] - 1.0
    } else {
        0.5 * (sorted[lo - 1] + sorted[lo])
    };
    let b1 = if hi == sorted.len() {
        sorted[hi - 1] + 1.0
    } else {
        0.5 * (sorted[hi - 1] + sorted[hi])
    };
    if b1 - sorted[hi - 1] < BOUNDARY_TOLERANCE || sorted[lo] - b0 < BOUNDARY_TOLERANCE {
        return Err(Error::GapTooSmall {
            gap: 2.0 * (b1 - sorted[hi - 1]).min(sorted[lo] - b0),
            minimum: MIN_GAP,
        });
    }
    SpectralWindow::interval(b0, b1)
}

/// Circle separating `inside` points from `outside` points, centred on the
/// unit circle at the angular midpoint of the inside arc. Meant for the
/// spectra of unitaries.
pub fn separating_circle(inside: &[C64], outside: &[C64]) -> Result<SpectralWindow> {
    if inside.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let anchor = inside[0].arg();
    let rel: Vec<f64> = inside
        .iter()
        .map(|z| {
            let mut d = z.arg() - anchor;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            d
        })
        .collect();
    let lo = rel.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let center = C64::from_polar(1.0, anchor + 0.5 * (lo + hi));
    let r_in = inside.iter().map(|z| (z - center).norm()).fold(0.0, f64::max);
    let r_out = outside
        .iter()
        .map(|z| (z - center).norm())
        .fold(f64::INFINITY, f64::min);
    if r_out.is_infinite() {
        return SpectralWindow::contour(center, r_in + 1.0);
    }
    if r_out - r_in < 2.0 * BOUNDARY_TOLERANCE {
        return Err(Error::InvalidWindow(format!(
            "no circle centred at {center} separates the tracked eigenvalues \
             (inside radius {r_in:.3e}, outside radius {r_out:.3e})"
        )));
    }
    SpectralWindow::contour(center, 0.5 * (r_in + r_out))
}

/// Continues a window along a parameter grid by nearest matching of the
/// tracked eigenvalues between consecutive grid points.
#[derive(Debug, Clone)]
pub struct WindowTracker {
    tracked: Vec<f64>,
}

impl WindowTracker {
    /// Starts tracking the real eigenvalues `sorted[lo..hi]`.
    pub fn new(sorted: &[f64], lo: usize, hi: usize) -> Result<Self> {
        if lo >= hi || hi > sorted.len() {
            return Err(Error::EmptyWindow);
        }
        Ok(WindowTracker {
            tracked: sorted[lo..hi].to_vec(),
        })
    }

    pub fn tracked(&self) -> &[f64] {
        &self.tracked
    }

    /// Matches the tracked eigenvalues to the nearest contiguous block of the
    /// new sorted spectrum and returns the mid-gap interval around it.
    pub fn advance(&mut self, sorted: &[f64]) -> Result<SpectralWindow> {
        let k = self.tracked.len();
        if sorted.len() < k {
            return Err(Error::DimensionMismatch(
                "spectrum shrank while tracking a window".into(),
            ));
        }
        let mut best = (f64::INFINITY, 0usize);
        for start in 0..=sorted.len() - k {
            let cost: f64 = self
                .tracked
                .iter()
                .zip(&sorted[start..start + k])
                .map(|(a, b)| (a - b).abs())
                .sum();
            if cost < best.0 {
                best = (cost, start);
            }
        }
        let lo = best.1;
        self.tracked = sorted[lo..lo + k].to_vec();
        interval_around_sorted(sorted, lo, lo + k)
    }
}

/// Spectral projector data of a normal operator for a given window.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    pub p: CMatrix,
    pub q: CMatrix,
    /// Number of distinct eigenvalues inside the window.
    pub m: usize,
    /// Distinct inside eigenvalues with their spectral projectors.
    pub inside_eigs: Vec<(C64, CMatrix)>,
    pub gap: f64,
    pub decomposition: SpectralDecomposition,
    /// `inside[k]` tells whether eigenpair `k` of `decomposition` is inside.
    pub inside: Vec<bool>,
    pub window: SpectralWindow,
}

impl ProjectorPair {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn rank(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn inside_values(&self) -> Vec<C64> {
        self.values_where(true)
    }

    pub fn outside_values(&self) -> Vec<C64> {
        self.values_where(false)
    }

    fn values_where(&self, flag: bool) -> Vec<C64> {
        self.decomposition
            .eigenvalues
            .iter()
            .zip(&self.inside)
            .filter(|(_, &b)| b == flag)
            .map(|(&w, _)| w)
            .collect()
    }

    /// `Q − P`.
    pub fn reflection(&self) -> CMatrix {
        &self.q - &self.p
    }

    pub fn twiddle(&self, x: &CMatrix) -> CMatrix {
        twiddle_spectral(self, x)
    }
}

/// Spectral projector of the eigenvalues of normal `a` inside `w`.
pub fn window_projector(a: &CMatrix, w: &SpectralWindow, hermitian: bool) -> Result<ProjectorPair> {
    let dec = eig_normal(a, hermitian)?;
    projector_from_decomposition(dec, w)
}

pub fn projector_from_decomposition(
    dec: SpectralDecomposition,
    w: &SpectralWindow,
) -> Result<ProjectorPair> {
    let n = dec.dim();
    let mut inside = Vec::with_capacity(n);
    for &z in &dec.eigenvalues {
        let (is_in, dist) = w.classify(z);
        if dist < BOUNDARY_TOLERANCE {
            return Err(Error::BoundaryEigenvalue {
                eigenvalue: format!("{z}"),
                distance: dist,
            });
        }
        inside.push(is_in);
    }
    if !inside.iter().any(|&b| b) {
        return Err(Error::EmptyWindow);
    }
    if inside.iter().all(|&b| b) {
        return Err(Error::FullWindow);
    }

    let mut gap = f64::INFINITY;
    for (i, zi) in dec.eigenvalues.iter().enumerate() {
        if !inside[i] {
            continue;
        }
        for (j, zj) in dec.eigenvalues.iter().enumerate() {
            if !inside[j] {
                gap = gap.min((zi - zj).norm());
            }
        }
    }
    if gap < MIN_GAP {
        return Err(Error::GapTooSmall { gap, minimum: MIN_GAP });
    }

    let v = &dec.eigenvectors;
    let scale = dec.eigenvalues.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    let tol = CLUSTER_TOLERANCE * scale;
    let mut clusters: Vec<(C64, Vec<usize>)> = Vec::new();
    for k in (0..n).filter(|&k| inside[k]) {
        let z = dec.eigenvalues[k];
        match clusters.iter_mut().find(|(c, _)| (c - z).norm() <= tol) {
            Some((_, members)) => members.push(k),
            None => clusters.push((z, vec![k])),
        }
    }
    let rank_one = |k: usize| {
        let col = v.column(k);
        col * col.adjoint()
    };
    let inside_eigs: Vec<(C64, CMatrix)> = clusters
        .into_iter()
        .map(|(_, members)| {
            let mean = members.iter().map(|&k| dec.eigenvalues[k]).sum::<C64>()
                / C64::new(members.len() as f64, 0.0);
            let mut pk = CMatrix::zeros(n, n);
            for &k in &members {
                pk += rank_one(k);
            }
            (mean, pk)
        })
        .collect();
    let mut p = CMatrix::zeros(n, n);
    for (_, pk) in &inside_eigs {
        p += pk;
    }
    p = (&p + p.adjoint()) * C64::new(0.5, 0.0);
    let q = identity(n) - &p;
    Ok(ProjectorPair {
        p,
        q,
        m: inside_eigs.len(),
        inside_eigs,
        gap,
        decomposition: dec,
        inside,
        window: *w,
    })
}

/// Eigenbasis expansion of the twiddle: in the eigenbasis of `A`,
/// `X̃_ij = X_ij / (ω_i − ω_j)` for `i` inside and `j` outside,
/// `X̃_ij = X_ij / (ω_j − ω_i)` for `i` outside and `j` inside, zero otherwise.
pub fn twiddle_spectral(pp: &ProjectorPair, x: &CMatrix) -> CMatrix {
    let dec = &pp.decomposition;
    let xe = dec.to_eigenbasis(x);
    let n = dec.dim();
    let w = &dec.eigenvalues;
    let y = CMatrix::from_fn(n, n, |i, j| match (pp.inside[i], pp.inside[j]) {
        (true, false) => xe[(i, j)] / (w[i] - w[j]),
        (false, true) => xe[(i, j)] / (w[j] - w[i]),
        _ => ZERO,
    });
    dec.from_eigenbasis(&y)
}

/// The twiddle by a Sylvester solve on the blocks of `a`.
pub fn twiddle_sylvester(a: &CMatrix, pp: &ProjectorPair, x: &CMatrix) -> Result<CMatrix> {
    sylvester_block_solve(a, &pp.p, &pp.q, x)
}

/// Circle around the inside eigenvalues, used when the window is an
/// interval: centred at the midpoint of the inside eigenvalue range with
/// radius half that range plus half the gap.
pub fn default_contour(pp: &ProjectorPair) -> SpectralWindow {
    match pp.window {
        SpectralWindow::Contour { .. } => pp.window,
        SpectralWindow::Interval { .. } => {
            let ins = pp.inside_values();
            let lo = ins.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            let hi = ins.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let center = C64::new(0.5 * (lo + hi), 0.0);
            let radius = ins
                .iter()
                .map(|z| (z - center).norm())
                .fold(0.0, f64::max)
                + 0.5 * pp.gap;
            SpectralWindow::Contour { center, radius }
        }
    }
}

/// Quadrature node count giving roughly 1e-13 relative accuracy for a
/// circle whose nearest eigenvalue is `clearance` away.
pub fn default_quad_points(radius: f64, clearance: f64) -> usize {
    let n = (30.0 * radius / clearance.max(1e-300)).ceil();
    (n.min(1e6) as usize).max(64)
}

/// Smallest distance between the spectrum and the circle of a contour window.
pub fn contour_clearance(eigenvalues: &[C64], w: &SpectralWindow) -> f64 {
    eigenvalues
        .iter()
        .map(|&z| w.classify(z).1)
        .fold(f64::INFINITY, f64::min)
}

/// Trapezoidal quadrature of `(1/2πi) ∮ R(z) X R(z) dz` with
/// `R(z) = (z − A)⁻¹` on `quad_points` equispaced nodes of the circle.
pub fn twiddle_contour(
    a: &CMatrix,
    w: &SpectralWindow,
    x: &CMatrix,
    quad_points: usize,
) -> Result<CMatrix> {
    let (center, radius) = match *w {
        SpectralWindow::Contour { center, radius } => (center, radius),
        SpectralWindow::Interval { .. } => {
            return Err(Error::InvalidWindow(
                "contour quadrature needs a contour window".into(),
            ))
        }
    };
    let n = a.nrows();
    if quad_points == 0 {
        return Err(Error::InvalidParameter("quad_points must be positive".into()));
    }
    let mut acc = CMatrix::zeros(n, n);
    for k in 0..quad_points {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / quad_points as f64;
        let e = C64::from_polar(1.0, theta);
        let z = center + e * radius;
        let shifted = CMatrix::identity(n, n) * z - a;
        let r = shifted
            .lu()
            .try_inverse()
            .ok_or(Error::ResolventBlowup { norm: f64::INFINITY, node: k })?;
        let norm = crate::linalg::frobenius(&r);
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::ResolventBlowup { norm, node: k });
        }
        acc += &r * x * &r * (e * radius);
    }
    Ok(acc / C64::new(quad_points as f64, 0.0))
}

/// `P' = Ã'`.
pub fn projector_derivative_from(pp: &ProjectorPair, a1: &CMatrix) -> CMatrix {
    twiddle_spectral(pp, a1)
}

/// `P'' = Ã'' + (Q − P)(2P'² + 2·tw([A', P']))`.
pub fn projector_second_derivative_from(pp: &ProjectorPair, a1: &CMatrix, a2: &CMatrix) -> CMatrix {
    let p1 = twiddle_spectral(pp, a1);
    let inner = &p1 * &p1 * C64::new(2.0, 0.0)
        + twiddle_spectral(pp, &commutator(a1, &p1)) * C64::new(2.0, 0.0);
    twiddle_spectral(pp, a2) + pp.reflection() * inner
}

pub fn projector_derivative(path: &dyn OperatorPath, s: f64, pp: &ProjectorPair) -> Result<CMatrix> {
    Ok(projector_derivative_from(pp, &path.derivative(s)?))
}

pub fn projector_second_derivative(
    path: &dyn OperatorPath,
    s: f64,
    pp: &ProjectorPair,
) -> Result<CMatrix> {
    let jet = path.jet(s)?;
    Ok(projector_second_derivative_from(pp, &jet.d1, &jet.d2))
}

/// First derivative of `s ↦ tw(X(s))` along a path with `A' = a1`:
/// `tw(X') + (Q − P)(P'X̃ + X̃P' + tw([A', X̃]) − tw([P', X]))`.
pub fn twiddle_derivative(pp: &ProjectorPair, a1: &CMatrix, x: &CMatrix, x1: &CMatrix) -> CMatrix {
    let p1 = twiddle_spectral(pp, a1);
    twiddle_derivative_with(pp, a1, &p1, x, x1)
}

fn twiddle_derivative_with(
    pp: &ProjectorPair,
    a1: &CMatrix,
    p1: &CMatrix,
    x: &CMatrix,
    x1: &CMatrix,
) -> CMatrix {
    let xt = twiddle_spectral(pp, x);
    let w = p1 * &xt + &xt * p1 + twiddle_spectral(pp, &commutator(a1, &xt))
        - twiddle_spectral(pp, &commutator(p1, x));
    twiddle_spectral(pp, x1) + pp.reflection() * w
}

/// Second derivative of `s ↦ tw(X(s))` given `A', A''` and `X, X', X''`.
pub fn twiddle_second_derivative(
    pp: &ProjectorPair,
    a1: &CMatrix,
    a2: &CMatrix,
    x: &CMatrix,
    x1: &CMatrix,
    x2: &CMatrix,
) -> CMatrix {
    let p1 = twiddle_spectral(pp, a1);
    let p2 = projector_second_derivative_from(pp, a1, a2);
    let xt = twiddle_spectral(pp, x);
    let xt1 = twiddle_derivative_with(pp, a1, &p1, x, x1);
    let d = |y: &CMatrix, y1: &CMatrix| twiddle_derivative_with(pp, a1, &p1, y, y1);

    let w = &p1 * &xt + &xt * &p1 + twiddle_spectral(pp, &commutator(a1, &xt))
        - twiddle_spectral(pp, &commutator(&p1, x));
    let ax = commutator(a1, &xt);
    let ax1 = commutator(a2, &xt) + commutator(a1, &xt1);
    let px = commutator(&p1, x);
    let px1 = commutator(&p2, x) + commutator(&p1, x1);
    let w1 = &p2 * &xt + &p1 * &xt1 + &xt1 * &p1 + &xt * &p2 + d(&ax, &ax1) - d(&px, &px1);
    d(x1, x2) - &p1 * w * C64::new(2.0, 0.0) + pp.reflection() * w1
}

/// One numerically certified inequality `actual ≤ bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub bound: f64,
    pub actual: f64,
}

impl BoundCheck {
    fn new(name: &str, bound: f64, actual: f64) -> Self {
        BoundCheck {
            name: name.to_string(),
            bound,
            actual,
        }
    }

    /// Relative slack below which an inequality counts as violated.
    pub fn holds(&self) -> bool {
        self.actual <= self.bound * (1.0 + 1e-9) + 1e-12
    }

    /// `actual / bound`, or 0 when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.actual / self.bound
        } else if self.actual <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBoundReport {
    pub checks: Vec<BoundCheck>,
}

impl NormBoundReport {
    pub fn violations(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.holds()).collect()
    }

    pub fn worst_ratio(&self) -> f64 {
        self.checks.iter().map(BoundCheck::ratio).fold(0.0, f64::max)
    }
}

/// A curve `X(s)` through a point, given by value and two derivatives.
#[derive(Debug, Clone)]
pub struct MatrixJet {
    pub value: CMatrix,
    pub d1: CMatrix,
    pub d2: CMatrix,
}

/// Evaluates every norm bound on the twiddle and projector derivatives at
/// one point of a normal path (`A' = a1`, `A'' = a2`) and a test curve `x`.
pub fn norm_bound_suite(
    pp: &ProjectorPair,
    a1: &CMatrix,
    a2: &CMatrix,
    x: &MatrixJet,
) -> NormBoundReport {
    let m = pp.m as f64;
    let sm = m.sqrt();
    let g = pp.gap;
    let (p, q) = (&pp.p, &pp.q);
    let na1 = operator_norm(a1);
    let na2 = operator_norm(a2);
    let nx = operator_norm(&x.value);
    let nx1 = operator_norm(&x.d1);
    let nx2 = operator_norm(&x.d2);
    let mut checks = Vec::new();

    let blocks = [
        operator_norm(&(p * &x.value * p)),
        operator_norm(&(p * &x.value * q)),
        operator_norm(&(q * &x.value * p)),
        operator_norm(&(q * &x.value * q)),
    ];
    let block_norm = nalgebra::Matrix2::new(blocks[0], blocks[1], blocks[2], blocks[3])
        .singular_values()
        .max();
    checks.push(BoundCheck::new("block_norm", block_norm, nx));

    let xt = twiddle_spectral(pp, &x.value);
    checks.push(BoundCheck::new(
        "twiddle_norm",
        sm * blocks[1].max(blocks[2]) / g,
        operator_norm(&xt),
    ));

    let p1 = projector_derivative_from(pp, a1);
    checks.push(BoundCheck::new(
        "projector_derivative",
        sm * na1 / g,
        operator_norm(&p1),
    ));

    let xt1 = twiddle_derivative(pp, a1, &x.value, &x.d1);
    checks.push(BoundCheck::new(
        "twiddle_first_derivative",
        sm / g * nx1 + 6.0 * m * na1 / (g * g) * nx,
        operator_norm(&xt1),
    ));

    let xt2 = twiddle_second_derivative(pp, a1, a2, &x.value, &x.d1, &x.d2);
    checks.push(BoundCheck::new(
        "twiddle_second_derivative",
        64.0 * m * sm * na1 * na1 / g.powi(3) * nx
            + 6.0 * m * na2 / (g * g) * nx
            + 12.0 * m * na1 / (g * g) * nx1
            + sm / g * nx2,
        operator_norm(&xt2),
    ));

    let p2 = projector_second_derivative_from(pp, a1, a2);
    let pp1 = commutator(p, &p1);
    let pp1_d = commutator(p, &p2);
    checks.push(BoundCheck::new(
        "commutator_derivative",
        sm * na2 / g + 2.0 * m * na1 * na1 / (g * g),
        operator_norm(&pp1_d),
    ));

    let tw_pp1_d = twiddle_derivative(pp, a1, &pp1, &pp1_d);
    checks.push(BoundCheck::new(
        "twiddle_commutator_derivative",
        m / (g * g) * operator_norm(&(p * a2 * q)) + 5.0 * m * sm * na1 * na1 / g.powi(3),
        operator_norm(&tw_pp1_d),
    ));

    NormBoundReport { checks }
}

/// Single-eigenvalue closed form `(ω·1 − A)⁺XP + PX(ω·1 − A)⁺`, with the
/// pseudo-inverse taken on the complement of the eigenvalue `ω`.
pub fn twiddle_single_eigenvalue(a: &CMatrix, pp: &ProjectorPair, x: &CMatrix) -> Result<CMatrix> {
    if pp.m != 1 {
        return Err(Error::InvalidWindow(format!(
            "closed form needs one inside eigenvalue, window has {}",
            pp.m
        )));
    }
    if a.shape() != pp.p.shape() {
        return Err(Error::DimensionMismatch("operator and projector differ in size".into()));
    }
    let omega = pp.inside_eigs[0].0;
    let pinv = pp
        .decomposition
        .apply(|w| crate::linalg::pinv_scalar(omega - w, 0.5 * pp.gap));
    Ok(&pinv * x * &pp.p + &pp.p * x * &pinv)
}

/// Off-diagonality residual `‖PYP‖ + ‖QYQ‖`.
pub fn offdiagonal_residual(pp: &ProjectorPair, y: &CMatrix) -> f64 {
    operator_norm(&(&pp.p * y * &pp.p)) + operator_norm(&(&pp.q * y * &pp.q))
}

/// Commutator residual `‖[A, Y] − [P, X]‖`.
pub fn commutator_residual(a: &CMatrix, pp: &ProjectorPair, x: &CMatrix, y: &CMatrix) -> f64 {
    operator_norm(&(commutator(a, y) - commutator(&pp.p, x)))
}

/// Projector of `a` onto the eigenvalues matched by `rule`.
pub fn projector_by_rule(a: &CMatrix, rule: &WindowRule, hermitian: bool) -> Result<ProjectorPair> {
    let dec = eig_normal(a, hermitian)?;
    let w = rule.resolve(&dec.eigenvalues)?;
    projector_from_decomposition(dec, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::*;
    use crate::linalg::{c, diag_real, pauli, ONE};
    use proptest::prelude::*;

    fn two_by_two() -> (CMatrix, ProjectorPair) {
        let a = diag_real(&[0.0, 1.0]);
        let w = SpectralWindow::interval(-0.5, 0.5).unwrap();
        let pp = window_projector(&a, &w, true).unwrap();
        (a, pp)
    }

    fn max_abs(a: &CMatrix) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn diagonal_window() {
        let (_, pp) = two_by_two();
        assert!(max_abs(&(&pp.p - diag_real(&[1.0, 0.0]))) < 1e-15);
        assert_eq!(pp.m, 1);
        assert!((pp.gap - 1.0).abs() < 1e-15);
    }

    #[test]
    fn window_errors() {
        let a = diag_real(&[0.0, 1.0]);
        let on_edge = SpectralWindow::interval(0.0, 0.5).unwrap();
        assert!(matches!(window_projector(&a, &on_edge, true), Err(Error::BoundaryEigenvalue { .. })));
        let empty = SpectralWindow::interval(2.0, 3.0).unwrap();
        assert!(matches!(window_projector(&a, &empty, true), Err(Error::EmptyWindow)));
        let full = SpectralWindow::interval(-1.0, 2.0).unwrap();
        assert!(matches!(window_projector(&a, &full, true), Err(Error::FullWindow)));
        assert!(SpectralWindow::interval(1.0, 0.0).is_err());
        assert!(SpectralWindow::contour(ONE, 0.0).is_err());
    }

    #[test]
    fn random_hermitian_projector_matches_rank_one_sum() {
        let mut r = rng(21);
        let h = random_hermitian(&mut r, 6);
        let dec = crate::linalg::eig_hermitian(&h).unwrap();
        let w = dec.real_eigenvalues();
        let window = SpectralWindow::interval(0.5 * (w[1] + w[2]), 0.5 * (w[3] + w[4])).unwrap();
        let pp = window_projector(&h, &window, true).unwrap();
        let mut expect = CMatrix::zeros(6, 6);
        for k in [2, 3] {
            let col = dec.eigenvectors.column(k);
            expect += col * col.adjoint();
        }
        assert!(operator_norm(&(&pp.p - expect)) < 1e-10);
        assert_eq!(pp.m, 2);
        assert!((pp.gap - (w[2] - w[1]).min(w[4] - w[3])).abs() < 1e-12);
        let sum: CMatrix = pp.inside_eigs.iter().fold(CMatrix::zeros(6, 6), |acc, (_, pk)| acc + pk);
        assert!(operator_norm(&(sum - &pp.p)) < 1e-10);
        assert!(operator_norm(&(&pp.p * &pp.p - &pp.p)) < 1e-10);
    }

    #[test]
    fn degenerate_eigenvalues_count_once() {
        let a = diag_real(&[0.0, 0.0, 1.0]);
        let pp = window_projector(&a, &SpectralWindow::interval(-0.5, 0.5).unwrap(), true).unwrap();
        assert_eq!(pp.m, 1);
        assert_eq!(pp.rank(), 2);
    }

    #[test]
    fn twiddle_two_by_two() {
        let (a, pp) = two_by_two();
        let expect = CMatrix::from_row_slice(2, 2, &[ZERO, -ONE, -ONE, ZERO]);
        assert!(max_abs(&(twiddle_spectral(&pp, &pauli::x()) - &expect)) < 1e-14);
        assert!(max_abs(&(twiddle_sylvester(&a, &pp, &pauli::x()).unwrap() - &expect)) < 1e-12);
        let w = default_contour(&pp);
        let yc = twiddle_contour(&a, &w, &pauli::x(), 64).unwrap();
        assert!(max_abs(&(yc - &expect)) < 1e-10);
        assert!(max_abs(&twiddle_spectral(&pp, &pp.p)) < 1e-15);
        assert!(max_abs(&twiddle_contour(&a, &w, &CMatrix::zeros(2, 2), 64).unwrap()) == 0.0);
    }

    #[test]
    fn contour_quadrature_converges_geometrically() {
        let mut r = rng(4);
        let mut checked = 0;
        while checked < 5 {
            let inst = normal_instance(&mut r, 4, 0.3, true);
            let pp = window_projector(&inst.a.value, &inst.window, true).unwrap();
            let w = default_contour(&pp);
            let x = random_matrix(&mut r, 4);
            let exact = twiddle_spectral(&pp, &x);
            let (n0, radius) = match w {
                SpectralWindow::Contour { radius, .. } => (default_quad_points(radius, contour_clearance(&pp.decomposition.eigenvalues, &w)) / 4, radius),
                _ => unreachable!(),
            };
            let _ = radius;
            let e1 = operator_norm(&(twiddle_contour(&inst.a.value, &w, &x, n0).unwrap() - &exact));
            let e2 = operator_norm(&(twiddle_contour(&inst.a.value, &w, &x, 2 * n0).unwrap() - &exact));
            if e1 < 1e-11 {
                continue;
            }
            assert!(e2 * 10.0 <= e1, "errors {e1:.3e} -> {e2:.3e}");
            checked += 1;
        }
    }

    #[test]
    fn single_eigenvalue_closed_form() {
        let mut r = rng(9);
        for _ in 0..20 {
            let inst = normal_instance(&mut r, 5, 0.1, false);
            let pp = window_projector(&inst.a.value, &inst.window, false).unwrap();
            if pp.m != 1 {
                continue;
            }
            let x = random_matrix(&mut r, 5);
            let closed = twiddle_single_eigenvalue(&inst.a.value, &pp, &x).unwrap();
            assert!(operator_norm(&(closed - twiddle_spectral(&pp, &x))) < 1e-9);
        }
    }

    #[test]
    fn projector_derivatives_match_finite_differences() {
        let mut r = rng(17);
        for _ in 0..10 {
            let inst = normal_instance(&mut r, 5, 0.2, true);
            let pp = window_projector(&inst.a.value, &inst.window, true).unwrap();
            let at = |s: f64| window_projector(&eval_curve(&inst.a, s), &inst.window, true).unwrap().p;
            let h = FD_STEP_FIRST;
            let fd1 = (at(h) - at(-h)) / c(2.0 * h);
            let p1 = projector_derivative_from(&pp, &inst.a.d1);
            assert!(operator_norm(&(fd1 - &p1)) < 1e-6);
            let h = FD_STEP_SECOND;
            let fd2 = (at(h) - at(0.0) * c(2.0) + at(-h)) / c(h * h);
            let p2 = projector_second_derivative_from(&pp, &inst.a.d1, &inst.a.d2);
            assert!(operator_norm(&(&fd2 - &p2)) < 1e-4, "{}", operator_norm(&(fd2 - &p2)));
        }
    }

    #[test]
    fn twiddle_derivatives_match_finite_differences() {
        let mut r = rng(31);
        for _ in 0..10 {
            let inst = normal_instance(&mut r, 5, 0.2, true);
            let x = random_jet(&mut r, 5);
            let pp = window_projector(&inst.a.value, &inst.window, true).unwrap();
            let tw_at = |s: f64| {
                let pps = window_projector(&eval_curve(&inst.a, s), &inst.window, true).unwrap();
                twiddle_spectral(&pps, &eval_curve(&x, s))
            };
            let h = FD_STEP_FIRST;
            let fd1 = (tw_at(h) - tw_at(-h)) / c(2.0 * h);
            let d1 = twiddle_derivative(&pp, &inst.a.d1, &x.value, &x.d1);
            assert!(operator_norm(&(fd1 - d1)) < 1e-4);
            let h = FD_STEP_SECOND;
            let fd2 = (tw_at(h) - tw_at(0.0) * c(2.0) + tw_at(-h)) / c(h * h);
            let d2 = twiddle_second_derivative(&pp, &inst.a.d1, &inst.a.d2, &x.value, &x.d1, &x.d2);
            let scale = 1.0 + operator_norm(&d2);
            assert!(operator_norm(&(fd2 - d2)) < 1e-3 * scale);
        }
    }

    #[test]
    fn sigma_path_projector_derivative() {
        // H(s) = (1−s)σ_z + sσ_x at s = 0, tracking the +1 eigenvalue.
        let a = pauli::z();
        let a1 = pauli::x() - pauli::z();
        let pp = window_projector(&a, &SpectralWindow::interval(0.5, 1.5).unwrap(), true).unwrap();
        let p1 = projector_derivative_from(&pp, &a1);
        assert!(max_abs(&(p1 - pauli::x() * c(0.5))) < 1e-14);
        let report = norm_bound_suite(&pp, &a1, &CMatrix::zeros(2, 2), &MatrixJet {
            value: pauli::x(),
            d1: CMatrix::zeros(2, 2),
            d2: CMatrix::zeros(2, 2),
        });
        let pd = report.checks.iter().find(|c| c.name == "projector_derivative").unwrap();
        assert!((pd.actual - 0.5).abs() < 1e-12);
        assert!((pd.bound - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_input_bounds_are_trivial() {
        let (_, pp) = two_by_two();
        let zero = CMatrix::zeros(2, 2);
        let report = norm_bound_suite(&pp, &zero, &zero, &MatrixJet {
            value: diag_real(&[1.0, 2.0]),
            d1: zero.clone(),
            d2: zero.clone(),
        });
        let tw = report.checks.iter().find(|c| c.name == "twiddle_norm").unwrap();
        assert_eq!(tw.bound, 0.0);
        assert!(tw.actual < 1e-15);
        assert!(report.violations().is_empty());
    }

    #[test]
    fn window_rules() {
        let eig: Vec<C64> = [0.0, 0.0, 1.0, 3.0].iter().map(|&x| c(x)).collect();
        assert_eq!(
            WindowRule::Lowest { count: 2 }.resolve(&eig).unwrap(),
            SpectralWindow::Interval { b0: -1.0, b1: 0.5 }
        );
        assert_eq!(
            WindowRule::NearestCluster { target: 0.9 }.resolve(&eig).unwrap(),
            SpectralWindow::Interval { b0: 0.5, b1: 2.0 }
        );
        assert!(matches!(WindowRule::Lowest { count: 4 }.resolve(&eig), Err(Error::FullWindow)));
    }

    #[test]
    fn tracker_follows_crossing_free_branch() {
        let mut t = WindowTracker::new(&[0.0, 1.0, 2.0], 1, 2).unwrap();
        let w = t.advance(&[0.1, 1.2, 2.5]).unwrap();
        assert_eq!(w, SpectralWindow::Interval { b0: 0.65, b1: 1.85 });
        assert_eq!(t.tracked(), &[1.2]);
    }

    #[test]
    fn separating_circle_on_unit_circle() {
        let inside = [C64::from_polar(1.0, 0.1), C64::from_polar(1.0, -0.1)];
        let outside = [C64::from_polar(1.0, 2.0), C64::from_polar(1.0, -2.5)];
        let w = separating_circle(&inside, &outside).unwrap();
        for z in inside {
            assert!(w.classify(z).0);
        }
        for z in outside {
            assert!(!w.classify(z).0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn twiddle_identities_hold(seed in any::<u64>(), n in 4usize..9, hermitian in any::<bool>()) {
            let mut r = rng(seed);
            let inst = normal_instance(&mut r, n, 0.05, hermitian);
            let a = &inst.a.value;
            let pp = window_projector(a, &inst.window, hermitian).unwrap();
            let x = random_matrix(&mut r, n);
            let y = twiddle_spectral(&pp, &x);
            let scale = 1.0 + operator_norm(&x);
            prop_assert!(commutator_residual(a, &pp, &x, &y) <= 1e-9 * scale);
            prop_assert!(offdiagonal_residual(&pp, &y) <= 1e-9 * scale);
            let ys = twiddle_sylvester(a, &pp, &x).unwrap();
            prop_assert!(operator_norm(&(&ys - &y)) <= 1e-8);
            let w = default_contour(&pp);
            let nq = default_quad_points(match w { SpectralWindow::Contour { radius, .. } => radius, _ => 1.0 },
                contour_clearance(&pp.decomposition.eigenvalues, &w));
            let yc = twiddle_contour(a, &w, &x, nq).unwrap();
            prop_assert!(operator_norm(&(&yc - &y)) <= 1e-7);
        }

        #[test]
        fn norm_bounds_dominate(seed in any::<u64>(), n in 4usize..9, hermitian in any::<bool>()) {
            let mut r = rng(seed);
            let inst = normal_instance(&mut r, n, 0.05, hermitian);
            let pp = window_projector(&inst.a.value, &inst.window, hermitian).unwrap();
            let x = random_jet(&mut r, n);
            let report = norm_bound_suite(&pp, &inst.a.d1, &inst.a.d2, &x);
            prop_assert!(report.violations().is_empty(), "{:?}", report.violations());
        }

        #[test]
        fn projector_is_orthogonal(seed in any::<u64>(), n in 2usize..9) {
            let mut r = rng(seed);
            let inst = normal_instance(&mut r, n.max(3), 0.05, false);
            let pp = window_projector(&inst.a.value, &inst.window, false).unwrap();
            prop_assert!(operator_norm(&(&pp.p * &pp.p - &pp.p)) <= 1e-10);
            prop_assert!(operator_norm(&(&pp.p - pp.p.adjoint())) <= 1e-10);
            prop_assert!(operator_norm(&(&pp.p + &pp.q - identity(pp.dim()))) <= 1e-12);
        }
    }
}
