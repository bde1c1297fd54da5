//! Norms and quasi-norms of fields and field sequences.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::algebra::{op_norm, psd_sqrt, singular_values, CMat, HermMatrix};
use crate::error::{invalid, Result};
use crate::field::OperatorField;
use crate::grid::DyadicCube;
use crate::operators::{rademacher_combine, SignPattern};
#[allow(unused_imports)]
use num_traits::Float;

/// `‖f‖_p = (Σ |cell| tr |f(cell)|^p)^{1/p}`; `p = ∞` is `sup_x ‖f(x)‖_op`.
pub fn lp_norm(f: &OperatorField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(invalid!("L_p exponent must be >= 1, got {p}"));
    }
    if p.is_infinite() {
        return Ok(f.sup_norm());
    }
    let vol = f.domain().cell_volume(f.level());
    let sum: f64 = f
        .values()
        .iter()
        .map(|v| singular_values(v).iter().map(|s| s.powf(p)).sum::<f64>())
        .sum();
    Ok((sum * vol).powf(1.0 / p))
}

/// `φ(f^* g)`, the `L_2` inner product (real part).
pub fn inner(f: &OperatorField, g: &OperatorField) -> Result<f64> {
    Ok(f.adjoint().mul(g)?.trace_integral())
}

/// Distribution function `λ ↦ φ(χ_{(λ,∞)}(|f|))` of one field or of a weighted
/// family of fields (the average over sign patterns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDistribution {
    /// Distinct positive singular values, ascending.
    pub breakpoints: Vec<f64>,
    /// `weights[j]` is the measure of `{|f| >= breakpoints[j]}`; nonincreasing.
    pub weights: Vec<f64>,
}

impl SpectralDistribution {
    pub fn of(f: &OperatorField) -> Self {
        Self::pooled([(f, 1.0)])
    }

    /// Distribution of `Σ_i w_i φ(χ_{(λ,∞)}(|f_i|))`.
    pub fn pooled<'a>(fields: impl IntoIterator<Item = (&'a OperatorField, f64)>) -> Self {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for (f, w) in fields {
            let vol = f.domain().cell_volume(f.level()) * w;
            for v in f.values() {
                for s in singular_values(v) {
                    if s > 0.0 {
                        atoms.push((s, vol));
                    }
                }
            }
        }
        Self::from_atoms(atoms)
    }

    /// Distribution of a measure given as `(singular value, mass)` atoms.
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.retain(|a| a.0 > 0.0);
        atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut breakpoints = Vec::new();
        let mut weights = Vec::new();
        let mut acc = 0.0;
        let mut i = 0;
        while i < atoms.len() {
            let s = atoms[i].0;
            while i < atoms.len() && atoms[i].0 == s {
                acc += atoms[i].1;
                i += 1;
            }
            breakpoints.push(s);
            weights.push(acc);
        }
        breakpoints.reverse();
        weights.reverse();
        Self { breakpoints, weights }
    }

    /// `φ(|f| > λ)`.
    pub fn mass_above(&self, lam: f64) -> f64 {
        let j = self.breakpoints.partition_point(|&b| b <= lam);
        self.weights.get(j).copied().unwrap_or(0.0)
    }

    /// `sup_λ λ φ(|f| > λ)`, approached as `λ` increases to a breakpoint.
    pub fn weak_norm(&self) -> f64 {
        self.breakpoints.iter().zip(&self.weights).fold(0.0, |m, (b, w)| m.max(b * w))
    }

    /// Measure of the support of `|f|`.
    pub fn support_measure(&self) -> f64 {
        self.weights.first().copied().unwrap_or(0.0)
    }
}

/// Distribution of `Σ_k ε_k f_k` under `φ̃ = ∫_Ω ⊗ φ`, where `Ω` is the given
/// list of sign patterns with uniform mass. Patterns are paired with their
/// negatives, which give the same modulus, so only those with `ε_0 = 1` are
/// evaluated when the list is closed under negation.
pub fn omega_distribution(family: &[OperatorField], patterns: &[SignPattern]) -> Result<SpectralDistribution> {
    if patterns.is_empty() {
        return Err(invalid!("empty sign space"));
    }
    let closed = patterns.iter().all(|p| {
        let neg = p.negated();
        patterns.iter().any(|q| q.signs == neg.signs)
    });
    let used: Vec<&SignPattern> = if closed { patterns.iter().filter(|p| p.signs[0] == 1).collect() } else { patterns.iter().collect() };
    let mass = 1.0 / used.len() as f64;
    let mut atoms = Vec::new();
    for eps in used {
        let sum = rademacher_combine(family, eps)?;
        let vol = sum.domain().cell_volume(sum.level()) * mass;
        for v in sum.values() {
            atoms.extend(singular_values(v).into_iter().map(|s| (s, vol)));
        }
    }
    Ok(SpectralDistribution::from_atoms(atoms))
}

/// `φ(|f| > λ)`.
pub fn distribution(f: &OperatorField, lam: f64) -> f64 {
    SpectralDistribution::of(f).mass_above(lam)
}

/// `‖f‖_{1,∞} = sup_λ λ φ(|f| > λ)`.
pub fn weak_l1(f: &OperatorField) -> f64 {
    SpectralDistribution::of(f).weak_norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Row,
    Col,
}

/// Placement of a sequence in the matrix-unit frame: `Σ f_k ⊗ e_{k1}` (a
/// column of operators) or `Σ f_k ⊗ e_{1k}` (a row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Ek1,
    E1k,
}

fn common_shape(seq: &[OperatorField]) -> Result<(usize, u32)> {
    let first = seq.first().ok_or_else(|| invalid!("empty sequence"))?;
    let level = seq.iter().map(OperatorField::level).max().unwrap_or(0);
    for f in seq {
        if f.domain() != first.domain() || f.dim() != first.dim() {
            return Err(invalid!("sequence members differ in shape"));
        }
    }
    Ok((first.dim(), level))
}

/// Pointwise `Σ_k |f_k|^2` (column, `f_k^* f_k`) or `Σ_k |f_k^*|^2` (row).
pub fn square_sum(seq: &[OperatorField], side: Side) -> Result<OperatorField> {
    let (n, _) = common_shape(seq)?;
    let dom = *seq[0].domain();
    let mut acc = OperatorField::zeros(dom, 0, n);
    for f in seq {
        let term = match side {
            Side::Col => f.adjoint().mul(f)?,
            Side::Row => f.mul(&f.adjoint())?,
        };
        acc = acc.add(&term)?;
    }
    Ok(acc)
}

/// The square function `(Σ_k |f_k|^2)^{1/2}` on the given side.
pub fn square_function(seq: &[OperatorField], side: Side) -> Result<OperatorField> {
    Ok(square_sum(seq, side)?.map(|m| psd_sqrt(&HermMatrix::from_hermitian_unchecked(m.clone())).into_matrix()))
}

pub fn sq_norm(seq: &[OperatorField], p: f64, side: Side) -> Result<f64> {
    lp_norm(&square_function(seq, side)?, p)
}

/// A splitting `f_k = g_k + h_k` of a sequence into a column part and a row part.
#[derive(Clone, Debug)]
pub struct RcDecomposition {
    pub g: Vec<OperatorField>,
    pub h: Vec<OperatorField>,
}

impl RcDecomposition {
    pub fn new(g: Vec<OperatorField>, h: Vec<OperatorField>) -> Result<Self> {
        if g.len() != h.len() {
            return Err(invalid!("column part has {} terms, row part {}", g.len(), h.len()));
        }
        Ok(Self { g, h })
    }

    pub fn column_only(seq: &[OperatorField]) -> Self {
        let h = seq.iter().map(|f| OperatorField::zeros(*f.domain(), 0, f.dim())).collect();
        Self { g: seq.to_vec(), h }
    }

    pub fn row_only(seq: &[OperatorField]) -> Self {
        let g = seq.iter().map(|f| OperatorField::zeros(*f.domain(), 0, f.dim())).collect();
        Self { g, h: seq.to_vec() }
    }

    /// Largest entrywise defect of `g_k + h_k - f_k`.
    pub fn defect(&self, seq: &[OperatorField]) -> Result<f64> {
        if seq.len() != self.g.len() {
            return Err(invalid!("decomposition has {} terms, sequence {}", self.g.len(), seq.len()));
        }
        let mut worst: f64 = 0.0;
        for ((f, g), h) in seq.iter().zip(&self.g).zip(&self.h) {
            worst = worst.max(g.add(h)?.sub(f)?.max_abs());
        }
        Ok(worst)
    }

    fn check(&self, seq: &[OperatorField]) -> Result<()> {
        let scale = seq.iter().fold(1.0f64, |m, f| m.max(f.max_abs()));
        let defect = self.defect(seq)?;
        if defect > 1e-10 * scale {
            return Err(invalid!("g + h differs from the sequence by {defect:e}"));
        }
        Ok(())
    }
}

/// Upper bound `‖(Σ|g_k|^2)^{1/2}‖_{1,∞} + ‖(Σ|h_k^*|^2)^{1/2}‖_{1,∞}` for the
/// weak `ℓ_2^{rc}` quasi-norm, witnessed by `dec`.
pub fn rc_weak_upper(seq: &[OperatorField], dec: &RcDecomposition) -> Result<f64> {
    dec.check(seq)?;
    Ok(weak_l1(&square_function(&dec.g, Side::Col)?) + weak_l1(&square_function(&dec.h, Side::Row)?))
}

/// Upper bound for the `L_p(ℓ_2^{rc})` sum norm witnessed by `dec`.
pub fn rc_lp_upper(seq: &[OperatorField], dec: &RcDecomposition, p: f64) -> Result<f64> {
    dec.check(seq)?;
    Ok(sq_norm(&dec.g, p, Side::Col)? + sq_norm(&dec.h, p, Side::Row)?)
}

/// `‖(|Q|^{-1} ∫_Q |F - A_Q|^2)^{1/2}‖` for `F = Σ f_k ⊗ e` with per-term
/// centers `A_Q = (a_k)`, computed on the finest cells of `Q`.
fn oscillation(seq: &[OperatorField], cube: &DyadicCube, centers: &[CMat], side: Side, frame: Frame) -> f64 {
    let dom = *seq[0].domain();
    let n = seq[0].dim();
    let m = seq.len();
    let cells = cube.fine_cells(&dom);
    let w = 1.0 / cells.len() as f64;
    // |X|^2 = X^* X for the column norm and X X^* for the row norm; for a
    // column of operators X^* X collapses to a sum, X X^* is a block Gram matrix
    let gram = matches!((side, frame), (Side::Row, Frame::Ek1) | (Side::Col, Frame::E1k));
    let mut acc = if gram { CMat::zeros(n * m, n * m) } else { CMat::zeros(n, n) };
    for &x in &cells {
        let g: Vec<CMat> = seq.iter().zip(centers).map(|(f, a)| f.at(x) - a).collect();
        if gram {
            for (i, gi) in g.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    let block = match side {
                        Side::Row => gi * gj.adjoint(),
                        Side::Col => gi.adjoint() * gj,
                    };
                    let mut view = acc.view_mut((i * n, j * n), (n, n));
                    view += block.scale(w);
                }
            }
        } else {
            for gk in &g {
                acc += match side {
                    Side::Col => gk.adjoint() * gk,
                    Side::Row => gk * gk.adjoint(),
                }
                .scale(w);
            }
        }
    }
    op_norm(&acc).sqrt()
}

/// Every dyadic cube of every level `0..=K`.
pub fn all_cubes(domain: &crate::grid::DyadicDomain) -> Vec<DyadicCube> {
    let mut out = Vec::new();
    for level in 0..=domain.depth() {
        for i in 0..domain.cell_count(level) {
            out.push(DyadicCube { level, coords: domain.coords(level, i) });
        }
    }
    out
}

/// Dyadic BMO norm of `Σ f_k ⊗ e` with the mean `F_Q` as center, together with
/// the maximizing cube.
pub fn bmo_d_witness(seq: &[OperatorField], side: Side, frame: Frame) -> Result<(f64, DyadicCube)> {
    bmo_d_centered(seq, side, frame, |q, k| {
        let f = &seq[k];
        f.cube_integral(q.level, q.index(f.domain())).scale(1.0 / q.volume(f.domain()))
    })
}

pub fn bmo_d(seq: &[OperatorField], side: Side, frame: Frame) -> Result<f64> {
    Ok(bmo_d_witness(seq, side, frame)?.0)
}

/// The same supremum with arbitrary per-cube centers `α_{Q,k}`.
pub fn bmo_d_centered(
    seq: &[OperatorField],
    side: Side,
    frame: Frame,
    alpha: impl Fn(&DyadicCube, usize) -> CMat,
) -> Result<(f64, DyadicCube)> {
    common_shape(seq)?;
    let dom = *seq[0].domain();
    let mut best = (0.0, DyadicCube { level: 0, coords: [0, 0] });
    for q in all_cubes(&dom) {
        let centers: Vec<CMat> = (0..seq.len()).map(|k| alpha(&q, k)).collect();
        let v = oscillation(seq, &q, &centers, side, frame);
        if v > best.0 {
            best = (v, q);
        }
    }
    Ok(best)
}
