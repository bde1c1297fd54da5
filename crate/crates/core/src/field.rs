//! Matrix-valued step functions on the dyadic grid.

use alloc::vec::Vec;

use crate::algebra::{hermitian_defect, max_abs, op_norm, trace, CMat, ProjMatrix, EPS_HERM, EPS_PROJ};
use crate::error::{invalid, Result};
use crate::grid::DyadicDomain;

/// A step function constant on the cells of `level`, with `n x n` values.
///
/// Values are general complex matrices: off-diagonal pieces of the
/// decomposition such as `p_i f p_j` are not Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorField {
    domain: DyadicDomain,
    level: u32,
    dim: usize,
    values: Vec<CMat>,
}

impl OperatorField {
    pub fn new(domain: DyadicDomain, level: u32, values: Vec<CMat>) -> Result<Self> {
        if level > domain.depth() {
            return Err(invalid!("field level {level} exceeds depth {}", domain.depth()));
        }
        let expected = domain.cell_count(level);
        if values.len() != expected {
            return Err(invalid!("expected {expected} cell values at level {level}, got {}", values.len()));
        }
        let dim = values[0].nrows();
        if dim == 0 || values.iter().any(|v| v.nrows() != dim || v.ncols() != dim) {
            return Err(invalid!("cell values must be nonempty square matrices of one size"));
        }
        Ok(Self { domain, level, dim, values })
    }

    /// Like [`new`](Self::new) but additionally requires Hermitian values.
    pub fn hermitian(domain: DyadicDomain, level: u32, values: Vec<CMat>) -> Result<Self> {
        let f = Self::new(domain, level, values)?;
        for (i, v) in f.values.iter().enumerate() {
            if hermitian_defect(v) > EPS_HERM * max_abs(v).max(1.0) {
                return Err(invalid!("cell {i} value is not Hermitian"));
            }
        }
        Ok(f)
    }

    pub fn from_fn(domain: DyadicDomain, level: u32, dim: usize, f: impl FnMut(usize) -> CMat) -> Result<Self> {
        let values = (0..domain.cell_count(level)).map(f).collect();
        let field = Self::new(domain, level, values)?;
        if field.dim != dim {
            return Err(invalid!("generated values have dim {}, expected {dim}", field.dim));
        }
        Ok(field)
    }

    pub fn constant(domain: DyadicDomain, value: CMat) -> Self {
        let dim = value.nrows();
        Self { domain, level: 0, dim, values: alloc::vec![value] }
    }

    pub fn zeros(domain: DyadicDomain, level: u32, dim: usize) -> Self {
        Self { domain, level, dim, values: alloc::vec![CMat::zeros(dim, dim); domain.cell_count(level)] }
    }

    pub fn identity(domain: DyadicDomain, dim: usize) -> Self {
        Self::constant(domain, CMat::identity(dim, dim))
    }

    pub fn domain(&self) -> &DyadicDomain {
        &self.domain
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[CMat] {
        &self.values
    }

    pub fn into_values(self) -> Vec<CMat> {
        self.values
    }

    /// Value on the finest cell `x`.
    pub fn at(&self, x: usize) -> &CMat {
        &self.values[self.domain.ancestor(self.domain.depth(), x, self.level)]
    }

    /// The same function represented on the finer cells of `level`.
    pub fn refine(&self, level: u32) -> Result<Self> {
        if level < self.level || level > self.domain.depth() {
            return Err(invalid!("cannot refine level {} to {level}", self.level));
        }
        if level == self.level {
            return Ok(self.clone());
        }
        let values = (0..self.domain.cell_count(level))
            .map(|i| self.values[self.domain.ancestor(level, i, self.level)].clone())
            .collect();
        Ok(Self { domain: self.domain, level, dim: self.dim, values })
    }

    /// Representation at the finest level.
    pub fn finest(&self) -> Self {
        self.refine(self.domain.depth()).expect("depth is a valid level")
    }

    pub fn map(&self, mut g: impl FnMut(&CMat) -> CMat) -> Self {
        let values: Vec<CMat> = self.values.iter().map(&mut g).collect();
        let dim = values[0].nrows();
        Self { domain: self.domain, level: self.level, dim, values }
    }

    pub fn map_indexed(&self, mut g: impl FnMut(usize, &CMat) -> CMat) -> Self {
        let values: Vec<CMat> = self.values.iter().enumerate().map(|(i, v)| g(i, v)).collect();
        let dim = values[0].nrows();
        Self { domain: self.domain, level: self.level, dim, values }
    }

    /// Pointwise combination at the finer of the two levels.
    pub fn zip_with(&self, other: &Self, mut g: impl FnMut(&CMat, &CMat) -> CMat) -> Result<Self> {
        if self.domain != other.domain {
            return Err(invalid!("fields live on different domains"));
        }
        if self.dim != other.dim {
            return Err(invalid!("matrix dims differ: {} vs {}", self.dim, other.dim));
        }
        let level = self.level.max(other.level);
        let values = (0..self.domain.cell_count(level))
            .map(|i| {
                let a = &self.values[self.domain.ancestor(level, i, self.level)];
                let b = &other.values[self.domain.ancestor(level, i, other.level)];
                g(a, b)
            })
            .collect();
        Ok(Self { domain: self.domain, level, dim: self.dim, values })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise product `f(x) g(x)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// `a(x) f(x) b(x)`.
    pub fn sandwich(&self, a: &Self, b: &Self) -> Result<Self> {
        a.mul(self)?.mul(b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v.scale(s))
    }

    pub fn adjoint(&self) -> Self {
        self.map(|v| v.adjoint())
    }

    /// Sum of several fields of equal shape.
    pub fn sum<'a>(domain: DyadicDomain, dim: usize, fields: impl IntoIterator<Item = &'a Self>) -> Result<Self> {
        let mut acc = Self::zeros(domain, 0, dim);
        for f in fields {
            acc = acc.add(f)?;
        }
        Ok(acc)
    }

    /// `∫ f` over the window, as a matrix.
    pub fn integral(&self) -> CMat {
        let vol = self.domain.cell_volume(self.level);
        let mut acc = CMat::zeros(self.dim, self.dim);
        for v in &self.values {
            acc += v;
        }
        acc.scale(vol)
    }

    /// `∫_Q f` for the level-`level` cube with the given index.
    pub fn cube_integral(&self, level: u32, index: usize) -> CMat {
        let vol = self.domain.cell_volume(self.domain.depth());
        let mut acc = CMat::zeros(self.dim, self.dim);
        for x in self.domain.fine_cells(level, index) {
            acc += self.at(x);
        }
        acc.scale(vol)
    }

    /// The trace `φ(f) = Σ |cell| tr f(cell)`.
    pub fn trace_integral(&self) -> f64 {
        trace(&self.integral())
    }

    /// Largest entry modulus over all cells.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(max_abs(v)))
    }

    /// `sup_x ‖f(x)‖_op`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(op_norm(v)))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.values.iter().all(|v| hermitian_defect(v) <= tol * max_abs(v).max(1.0))
    }
}

/// A field of orthogonal projections.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionField(OperatorField);

impl ProjectionField {
    pub fn new(field: OperatorField) -> Result<Self> {
        for (i, v) in field.values.iter().enumerate() {
            if let Err(e) = ProjMatrix::from_matrix(v.clone()) {
                return Err(invalid!("cell {i}: {e}"));
            }
        }
        Ok(Self(field))
    }

    pub fn from_projections(domain: DyadicDomain, level: u32, ps: Vec<ProjMatrix>) -> Result<Self> {
        let values = ps.into_iter().map(ProjMatrix::into_matrix).collect();
        Ok(Self(OperatorField::new(domain, level, values)?))
    }

    pub fn identity(domain: DyadicDomain, dim: usize) -> Self {
        Self(OperatorField::identity(domain, dim))
    }

    pub fn zero(domain: DyadicDomain, dim: usize) -> Self {
        Self(OperatorField::zeros(domain, 0, dim))
    }

    pub fn field(&self) -> &OperatorField {
        &self.0
    }

    pub fn into_field(self) -> OperatorField {
        self.0
    }

    pub fn level(&self) -> u32 {
        self.0.level
    }

    pub fn at(&self, x: usize) -> &CMat {
        self.0.at(x)
    }

    pub fn complement(&self) -> Self {
        let n = self.0.dim;
        Self(self.0.map(|p| CMat::identity(n, n) - p))
    }

    /// Largest idempotence defect over cells.
    pub fn idempotence_defect(&self) -> f64 {
        self.0.values.iter().fold(0.0, |m, p| m.max(op_norm(&(p * p - p))))
    }

    pub fn is_valid(&self) -> bool {
        self.idempotence_defect() <= EPS_PROJ
    }
}

impl AsRef<OperatorField> for ProjectionField {
    fn as_ref(&self) -> &OperatorField {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::c;

    fn dom() -> DyadicDomain {
        DyadicDomain::periodic(1, 4).unwrap()
    }

    fn ramp(level: u32) -> OperatorField {
        OperatorField::from_fn(dom(), level, 1, |i| CMat::from_element(1, 1, c(i as f64))).unwrap()
    }

    #[test]
    fn shape_is_validated() {
        assert!(OperatorField::new(dom(), 2, alloc::vec![CMat::identity(2, 2); 3]).is_err());
        assert!(OperatorField::new(dom(), 5, alloc::vec![CMat::identity(2, 2); 32]).is_err());
        let mut vals = alloc::vec![CMat::identity(2, 2); 4];
        vals[1] = CMat::identity(3, 3);
        assert!(OperatorField::new(dom(), 2, vals).is_err());
        let mut m = CMat::identity(2, 2);
        m[(0, 1)] = c(1.0);
        assert!(OperatorField::hermitian(dom(), 0, alloc::vec![m.clone()]).is_err());
        assert!(OperatorField::new(dom(), 0, alloc::vec![m]).is_ok());
    }

    #[test]
    fn refinement_preserves_values_and_integrals() {
        let f = ramp(2);
        let g = f.refine(4).unwrap();
        assert_eq!(g.values().len(), 16);
        assert_eq!(g.at(5), f.at(5));
        assert_eq!(g.values()[5][(0, 0)], c(1.0));
        assert!((f.trace_integral() - g.trace_integral()).abs() < 1e-15);
        assert_eq!(f.trace_integral(), 1.5);
        assert!(f.refine(1).is_err());
    }

    #[test]
    fn mixed_levels_combine_on_the_finer_grid() {
        let s = ramp(1).add(&ramp(3)).unwrap();
        assert_eq!(s.level(), 3);
        assert_eq!(s.values()[6][(0, 0)], c(7.0));
        let d = s.sub(&ramp(3)).unwrap();
        assert_eq!(d.refine(3).unwrap(), ramp(1).refine(3).unwrap());
    }

    #[test]
    fn cube_integrals_add_up() {
        let f = ramp(4);
        let parts: f64 = (0..4).map(|q| f.cube_integral(2, q)[(0, 0)].re).sum();
        assert!((parts - f.trace_integral()).abs() < 1e-14);
        assert_eq!(f.cube_integral(2, 1)[(0, 0)].re, (4.0 + 5.0 + 6.0 + 7.0) / 16.0);
    }

    #[test]
    fn identity_projection_field_and_complement() {
        let p = ProjectionField::identity(dom(), 2);
        assert!(p.is_valid());
        let q = p.complement();
        assert!(q.field().max_abs() == 0.0);
        let bad = OperatorField::constant(dom(), CMat::identity(2, 2).scale(2.0));
        assert!(ProjectionField::new(bad).is_err());
    }
}
