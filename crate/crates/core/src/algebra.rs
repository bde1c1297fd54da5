//! Finite-dimensional matrix algebra with the ordinary trace.
//!
//! Everything downstream works with `n x n` complex matrices. Hermitian and
//! projection newtypes carry their invariants; free functions provide the
//! spectral calculus and the projection lattice.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Hermitian defect tolerated on input, relative to the largest entry.
pub const EPS_HERM: f64 = 1e-10;
/// Idempotence and positivity defect tolerated for projections.
pub const EPS_PROJ: f64 = 1e-9;
/// Eigenvalues within this (relative) distance above a threshold count as below it.
pub const EPS_EIG: f64 = 1e-10;
/// Eigenvalues within this (relative) distance of zero count as zero.
pub const EPS_ZERO: f64 = 1e-12;
/// Relative singular-value cutoff for rank decisions in lattice operations.
pub const EPS_RANK: f64 = 1e-9;

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entry modulus, used as a cheap scale.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `‖A - A*‖_max`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(A + A*) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// A complex Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermMatrix(CMat);

impl HermMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(invalid!("matrix must be square and nonempty, got {}x{}", m.nrows(), m.ncols()));
        }
        let defect = hermitian_defect(&m);
        if defect > EPS_HERM * max_abs(&m).max(1.0) {
            return Err(invalid!("matrix is not Hermitian (defect {defect:e})"));
        }
        Ok(Self(hermitian_part(&m)))
    }

    /// Wraps a matrix already known to be Hermitian, symmetrizing away rounding.
    pub fn from_hermitian_unchecked(m: CMat) -> Self {
        Self(hermitian_part(&m))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMat::zeros(n, n))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let v = DVector::from_iterator(diag.len(), diag.iter().map(|&x| c(x)));
        Self(CMat::from_diagonal(&v))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        spectral_decompose(self).eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *spectral_decompose(self).eigenvalues.last().unwrap()
    }
}

/// An orthogonal projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjMatrix(HermMatrix);

impl ProjMatrix {
    pub fn new(h: HermMatrix) -> Result<Self> {
        let p = h.matrix();
        let idem = op_norm(&(p * p - p));
        if idem > EPS_PROJ {
            return Err(invalid!("matrix is not idempotent (defect {idem:e})"));
        }
        let min = h.min_eigenvalue();
        if min < -EPS_PROJ {
            return Err(invalid!("projection has negative eigenvalue {min:e}"));
        }
        Ok(Self(h))
    }

    pub fn from_matrix(m: CMat) -> Result<Self> {
        Self::new(HermMatrix::new(m)?)
    }

    /// `U U*` for a matrix `U` with orthonormal columns.
    pub fn from_orthonormal_columns(u: &CMat) -> Self {
        Self(HermMatrix::from_hermitian_unchecked(u * u.adjoint()))
    }

    pub fn identity(n: usize) -> Self {
        Self(HermMatrix::identity(n))
    }

    pub fn zero(n: usize) -> Self {
        Self(HermMatrix::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &CMat {
        self.0.matrix()
    }

    pub fn herm(&self) -> &HermMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0.into_matrix()
    }

    pub fn rank(&self) -> usize {
        trace(self.matrix()).round() as usize
    }

    pub fn complement(&self) -> Self {
        let n = self.dim();
        Self(HermMatrix::from_hermitian_unchecked(CMat::identity(n, n) - self.matrix()))
    }

    /// Orthonormal basis of the range, as columns.
    pub fn range_basis(&self) -> CMat {
        let sd = spectral_decompose(&self.0);
        let cols: Vec<usize> = (0..self.dim()).filter(|&i| sd.eigenvalues[i] > 0.5).collect();
        let mut u = CMat::zeros(self.dim(), cols.len());
        for (j, &i) in cols.iter().enumerate() {
            u.set_column(j, &sd.eigenvectors.column(i));
        }
        u
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl SpectralData {
    /// `U g(Λ) U*`.
    pub fn apply(&self, g: impl Fn(f64) -> f64) -> CMat {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..n {
            let gj = g(self.eigenvalues[j]);
            for i in 0..n {
                scaled[(i, j)] *= gj;
            }
        }
        hermitian_part(&(scaled * self.eigenvectors.adjoint()))
    }

    pub fn reconstruct(&self) -> CMat {
        self.apply(|x| x)
    }
}

pub fn spectral_decompose(a: &HermMatrix) -> SpectralData {
    let n = a.dim();
    if n == 1 {
        return SpectralData {
            eigenvalues: alloc::vec![a.matrix()[(0, 0)].re],
            eigenvectors: CMat::identity(1, 1),
        };
    }
    let eig = a.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    SpectralData {
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eigenvectors: vecs,
    }
}

/// Checked entry point: validates the Hermitian property first.
pub fn spectral_decompose_checked(m: &CMat) -> Result<SpectralData> {
    Ok(spectral_decompose(&HermMatrix::new(m.clone())?))
}

pub fn func_calc(a: &HermMatrix, g: impl Fn(f64) -> f64) -> HermMatrix {
    HermMatrix::from_hermitian_unchecked(spectral_decompose(a).apply(g))
}

fn projection_from_selected(sd: &SpectralData, keep: impl Fn(f64) -> bool) -> ProjMatrix {
    let n = sd.eigenvalues.len();
    let cols: Vec<usize> = (0..n).filter(|&i| keep(sd.eigenvalues[i])).collect();
    let mut u = CMat::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        u.set_column(j, &sd.eigenvectors.column(i));
    }
    ProjMatrix::from_orthonormal_columns(&u)
}

fn spectral_scale(sd: &SpectralData) -> f64 {
    sd.eigenvalues.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `1_{(0, λ]}(A)`: eigenvalues that are numerically zero are excluded, those
/// within `EPS_EIG` above `λ` are included.
pub fn spectral_proj_leq(a: &HermMatrix, lam: f64) -> Result<ProjMatrix> {
    if lam.is_nan() || lam <= 0.0 {
        return Err(invalid!("threshold must be positive, got {lam}"));
    }
    let sd = spectral_decompose(a);
    let scale = spectral_scale(&sd);
    let zero = EPS_ZERO * scale;
    let top = lam + EPS_EIG * scale.max(lam);
    Ok(projection_from_selected(&sd, |x| x > zero && x <= top))
}

/// `1_{(λ, ∞)}(A)`, the complement of `1_{(-∞, λ]}(A)`.
pub fn spectral_proj_gt(a: &HermMatrix, lam: f64) -> ProjMatrix {
    let sd = spectral_decompose(a);
    let top = lam + EPS_EIG * spectral_scale(&sd).max(lam.abs());
    projection_from_selected(&sd, |x| x > top)
}

/// Spectral projection of `A = s A s` onto eigenvalues `<= λ` taken inside the
/// range of `s`, i.e. `s - 1_{(λ,∞)}(A)`. Agrees with [`spectral_proj_leq`]
/// except on the kernel of `A` inside `ran(s)`, which it keeps.
pub fn spectral_proj_leq_on(support: &ProjMatrix, a: &HermMatrix, lam: f64) -> Result<ProjMatrix> {
    if lam.is_nan() || lam <= 0.0 {
        return Err(invalid!("threshold must be positive, got {lam}"));
    }
    if support.dim() != a.dim() {
        return Err(invalid!("dimension mismatch {} vs {}", support.dim(), a.dim()));
    }
    let above = spectral_proj_gt(a, lam);
    let q = support.matrix() - above.matrix();
    Ok(ProjMatrix(HermMatrix::from_hermitian_unchecked(q)))
}

/// Join of projections: the projection onto the sum of their ranges.
pub fn proj_join<'a>(dim: usize, ps: impl IntoIterator<Item = &'a ProjMatrix>) -> Result<ProjMatrix> {
    let mut bases: Vec<CMat> = Vec::new();
    let mut total = 0;
    for p in ps {
        if p.dim() != dim {
            return Err(invalid!("projection of dim {} in a dim-{} join", p.dim(), dim));
        }
        let b = p.range_basis();
        total += b.ncols();
        if b.ncols() > 0 {
            bases.push(b);
        }
    }
    Ok(join_of_bases(dim, &bases, total))
}

fn join_of_bases(dim: usize, bases: &[CMat], total: usize) -> ProjMatrix {
    if total == 0 {
        return ProjMatrix::zero(dim);
    }
    let mut stacked = CMat::zeros(dim, total);
    let mut col = 0;
    for b in bases {
        for j in 0..b.ncols() {
            stacked.set_column(col, &b.column(j));
            col += 1;
        }
    }
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > EPS_RANK * smax)
        .collect();
    let mut basis = CMat::zeros(dim, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    ProjMatrix::from_orthonormal_columns(&basis)
}

/// Meet of projections: the complement of the join of complements.
pub fn proj_meet<'a>(dim: usize, ps: impl IntoIterator<Item = &'a ProjMatrix>) -> Result<ProjMatrix> {
    let comps: Vec<ProjMatrix> = ps.into_iter().map(ProjMatrix::complement).collect();
    Ok(proj_join(dim, comps.iter())?.complement())
}

/// Real part of the matrix trace.
pub fn trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Singular values, descending.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 1 && a.ncols() == 1 {
        return alloc::vec![a[(0, 0)].norm()];
    }
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn op_norm(a: &CMat) -> f64 {
    if a.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return 0.0;
    }
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Schatten `p`-norm computed from the singular values; `p = ∞` is the operator norm.
pub fn schatten_norm(a: &CMat, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(invalid!("Schatten exponent must be >= 1, got {p}"));
    }
    if p.is_infinite() {
        return Ok(op_norm(a));
    }
    Ok(singular_values(a).iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// `‖AB - BA‖_op`.
pub fn commutator_norm(a: &CMat, b: &CMat) -> f64 {
    op_norm(&(a * b - b * a))
}

/// Modulus `|x| = (x* x)^{1/2}`.
pub fn modulus(x: &CMat) -> HermMatrix {
    let xx = HermMatrix::from_hermitian_unchecked(x.adjoint() * x);
    func_calc(&xx, |v| v.max(0.0).sqrt())
}

/// Square root of a PSD matrix; rounding negatives are clipped at zero.
pub fn psd_sqrt(a: &HermMatrix) -> HermMatrix {
    func_calc(a, |v| v.max(0.0).sqrt())
}

pub fn is_zero_within(a: &CMat, tol: f64) -> bool {
    max_abs(a) <= tol
}

impl From<ProjMatrix> for HermMatrix {
    fn from(p: ProjMatrix) -> Self {
        p.0
    }
}

impl TryFrom<CMat> for HermMatrix {
    type Error = Error;
    fn try_from(m: CMat) -> Result<Self> {
        HermMatrix::new(m)
    }
}
