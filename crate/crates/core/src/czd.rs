//! Cuculescu's construction and the noncommutative Calderón-Zygmund
//! decomposition of a positive field.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::algebra::{
    max_abs, op_norm, proj_meet, spectral_proj_gt, spectral_proj_leq_on, CMat, HermMatrix, ProjMatrix,
};
use crate::error::{invalid, Error, Result};
use crate::field::{OperatorField, ProjectionField};
use crate::grid::{cube_of, dilate_cubes, DyadicDomain};
use crate::norms::{lp_norm, square_function, Side};
use crate::operators::{ball_avgs, cond_exp, mart_diff, t_family, LevelRange};
#[allow(unused_imports)]
use num_traits::Float;

/// Relative tolerance for the positivity of inputs.
pub const EPS_PSD: f64 = 1e-10;

/// Projections `q_k` (level `k`) and `p_k = q_{k-1} - q_k` for `k = 0..=K`,
/// with `q_0 = 1` and `p_0 = 0`.
#[derive(Clone, Debug)]
pub struct CuculescuSequence {
    pub lambda: f64,
    pub q: Vec<ProjectionField>,
    pub p: Vec<ProjectionField>,
    /// `q = ∧_k q_k`, which equals `q_K` since the sequence decreases.
    pub q_final: ProjectionField,
}

impl CuculescuSequence {
    pub fn depth(&self) -> u32 {
        (self.q.len() - 1) as u32
    }

    pub fn domain(&self) -> &DyadicDomain {
        self.q[0].field().domain()
    }

    pub fn dim(&self) -> usize {
        self.q[0].field().dim()
    }

    /// `φ(1 - q)`.
    pub fn defect_mass(&self) -> f64 {
        self.q_final.complement().field().trace_integral()
    }
}

fn check_positive(f: &OperatorField) -> Result<()> {
    let scale = f.sup_norm().max(f64::MIN_POSITIVE);
    for (i, v) in f.values().iter().enumerate() {
        let h = HermMatrix::new(v.clone()).map_err(|e| invalid!("cell {i}: {e}"))?;
        let min = h.min_eigenvalue();
        if min < -EPS_PSD * scale {
            return Err(invalid!("field is not positive: cell {i} has eigenvalue {min:e}"));
        }
    }
    Ok(())
}

fn check_precondition(f: &OperatorField, lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(invalid!("λ must be positive and finite, got {lambda}"));
    }
    let top = op_norm(&cond_exp(f, 0)?.values()[0]);
    if top > lambda * (1.0 + 1e-12) {
        return Err(Error::Precondition(alloc::format!(
            "‖E_0 f‖ = {top} exceeds λ = {lambda}; choose λ >= {top}"
        )));
    }
    Ok(())
}

/// `q_k = q_{k-1} - χ_{(λ,∞)}(q_{k-1} f_k q_{k-1})` on each level-`k` cube, with
/// `q_{k-1}` read from the parent cube.
///
/// This is `1_{[0,λ]}` of the compressed average taken inside `ran q_{k-1}`;
/// it differs from `1_{(0,λ]}` only on the kernel of `q_{k-1} f_k q_{k-1}`
/// inside `ran q_{k-1}`, which is kept, so that regions where `f` vanishes are
/// not stopped.
pub fn cuculescu(f: &OperatorField, lambda: f64) -> Result<CuculescuSequence> {
    check_positive(f)?;
    check_precondition(f, lambda)?;
    let dom = *f.domain();
    let n = f.dim();
    let mut q = alloc::vec![ProjectionField::identity(dom, n)];
    let mut p = alloc::vec![ProjectionField::zero(dom, n)];
    for k in 1..=dom.depth() {
        let fk = cond_exp(f, k)?;
        let prev = q[(k - 1) as usize].field().clone();
        let mut qk = Vec::with_capacity(dom.cell_count(k));
        let mut pk = Vec::with_capacity(dom.cell_count(k));
        for (i, v) in fk.values().iter().enumerate() {
            let parent = &prev.values()[dom.ancestor(k, i, prev.level())];
            let support = ProjMatrix::from_matrix(parent.clone())?;
            let a = HermMatrix::from_hermitian_unchecked(support.matrix() * v * support.matrix());
            let stopped = spectral_proj_gt(&a, lambda);
            qk.push(spectral_proj_leq_on(&support, &a, lambda)?);
            pk.push(stopped);
        }
        q.push(ProjectionField::from_projections(dom, k, qk)?);
        p.push(ProjectionField::from_projections(dom, k, pk)?);
    }
    let q_final = q.last().expect("q_0 is always present").clone();
    Ok(CuculescuSequence { lambda, q, p, q_final })
}

/// Join over levels `k` of the dilated projection fields
/// `5A_k(x) = ∨_{Q ∈ Q_k, x ∈ 5Q} A_k(Q)`, as a level-`K` field.
pub fn dilated_join(levels: &[ProjectionField], factor: u32) -> Result<ProjectionField> {
    let first = levels.first().ok_or_else(|| invalid!("no levels to join"))?;
    let dom = *first.field().domain();
    let n = first.field().dim();
    // range bases per (level, cube), computed once
    let mut bases: Vec<Vec<CMat>> = Vec::with_capacity(levels.len());
    for a in levels {
        let per_cube = a
            .field()
            .values()
            .iter()
            .map(|m| ProjMatrix::from_matrix(m.clone()).map(|p| p.range_basis()))
            .collect::<Result<Vec<_>>>()?;
        bases.push(per_cube);
    }
    let mut out = Vec::with_capacity(dom.cell_count(dom.depth()));
    for x in 0..dom.cell_count(dom.depth()) {
        let mut cols: Vec<&CMat> = Vec::new();
        for (a, per_cube) in levels.iter().zip(&bases) {
            let lvl = a.level();
            let own = cube_of(&dom, x, lvl)?;
            for q in dilate_cubes(&dom, &own, factor)? {
                let b = &per_cube[q.index(&dom)];
                if b.ncols() > 0 {
                    cols.push(b);
                }
            }
        }
        out.push(join_bases(n, &cols));
    }
    ProjectionField::from_projections(dom, dom.depth(), out)
}

fn join_bases(n: usize, bases: &[&CMat]) -> ProjMatrix {
    let total: usize = bases.iter().map(|b| b.ncols()).sum();
    if total == 0 {
        return ProjMatrix::zero(n);
    }
    let mut stacked = CMat::zeros(n, total);
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
        .filter(|&i| svd.singular_values[i] > crate::algebra::EPS_RANK * smax)
        .collect();
    let mut basis = CMat::zeros(n, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    ProjMatrix::from_orthonormal_columns(&basis)
}

/// `ζ = (∨_{Q} p_Q 1_{5Q})^⊥` over the levels `1..=K`.
pub fn zeta(cu: &CuculescuSequence) -> Result<ProjectionField> {
    Ok(dilated_join(&cu.p[1..], 5)?.complement())
}

/// Output of the decomposition at level `λ`. Level-indexed vectors have
/// length `K + 1`; entries at index 0 vanish.
#[derive(Clone, Debug)]
pub struct CzBundle {
    pub lambda: f64,
    pub f: OperatorField,
    /// `f_k = E_k f`.
    pub fk: Vec<OperatorField>,
    pub cuculescu: CuculescuSequence,
    pub g_d: OperatorField,
    pub g_off: OperatorField,
    pub b_d: OperatorField,
    pub b_off: OperatorField,
    /// `b_n = p_n (f - f_n) p_n`.
    pub b_diag: Vec<OperatorField>,
    /// `b_{n,s} = p_n (f - f_{n+s}) p_{n+s} + p_{n+s} (f - f_{n+s}) p_n`, keyed `(n, s)`.
    pub b_offdiag: BTreeMap<(u32, u32), OperatorField>,
    /// `g^ℓ_{s,k} = p_k df_{k+s} q_{k+s-1}`, keyed `(s, k)`.
    pub g_left: BTreeMap<(u32, u32), OperatorField>,
    /// `g^r_{s,k} = q_{k+s-1} df_{k+s} p_k`, keyed `(s, k)`.
    pub g_right: BTreeMap<(u32, u32), OperatorField>,
    pub zeta: ProjectionField,
}

impl CzBundle {
    pub fn depth(&self) -> u32 {
        self.f.domain().depth()
    }

    fn p(&self, k: u32) -> &OperatorField {
        self.cuculescu.p[k as usize].field()
    }

    /// `b_{i,j} = p_i (f - f_{i∨j}) p_j`.
    pub fn b_ij(&self, i: u32, j: u32) -> Result<OperatorField> {
        let top = i.max(j);
        if i == 0 || j == 0 || top > self.depth() {
            return Err(invalid!("indices ({i}, {j}) outside 1..={}", self.depth()));
        }
        self.f.sub(&self.fk[top as usize])?.sandwich(self.p(i), self.p(j))
    }

    /// `g^ℓ_s = Σ_k g^ℓ_{s,k}`.
    pub fn g_left_sum(&self, s: u32) -> OperatorField {
        sum_keyed(&self.f, self.g_left.range((s, 0)..=(s, u32::MAX)).map(|(_, v)| v))
    }

    pub fn g_right_sum(&self, s: u32) -> OperatorField {
        sum_keyed(&self.f, self.g_right.range((s, 0)..=(s, u32::MAX)).map(|(_, v)| v))
    }

    /// Relative defect of `f = g_d + g_off + b_d + b_off`.
    pub fn reconstruction_defect(&self) -> Result<f64> {
        let sum = self.g_d.add(&self.g_off)?.add(&self.b_d)?.add(&self.b_off)?;
        Ok(sum.sub(&self.f)?.max_abs() / self.f.max_abs().max(f64::MIN_POSITIVE))
    }

    /// Named fields in a fixed order, for serialization.
    pub fn named_fields(&self) -> Vec<(String, OperatorField)> {
        let mut out: Vec<(String, OperatorField)> = alloc::vec![
            ("f".into(), self.f.clone()),
            ("g_d".into(), self.g_d.clone()),
            ("g_off".into(), self.g_off.clone()),
            ("b_d".into(), self.b_d.clone()),
            ("b_off".into(), self.b_off.clone()),
            ("zeta".into(), self.zeta.field().clone()),
            ("q".into(), self.cuculescu.q_final.field().clone()),
        ];
        for k in 1..=self.depth() {
            out.push((alloc::format!("q_{k}"), self.cuculescu.q[k as usize].field().clone()));
            out.push((alloc::format!("p_{k}"), self.p(k).clone()));
        }
        for n in 1..=self.depth() {
            out.push((alloc::format!("b_{n}"), self.b_diag[n as usize].clone()));
        }
        for ((n, s), v) in &self.b_offdiag {
            out.push((alloc::format!("b_{n}_{s}"), v.clone()));
        }
        for ((s, k), v) in &self.g_left {
            out.push((alloc::format!("gl_{s}_{k}"), v.clone()));
        }
        for ((s, k), v) in &self.g_right {
            out.push((alloc::format!("gr_{s}_{k}"), v.clone()));
        }
        out
    }
}

fn sum_keyed<'a>(like: &OperatorField, fields: impl Iterator<Item = &'a OperatorField>) -> OperatorField {
    OperatorField::sum(*like.domain(), like.dim(), fields).expect("pieces share the shape of f")
}

pub fn cz_decompose(f: &OperatorField, lambda: f64) -> Result<CzBundle> {
    let cu = cuculescu(f, lambda)?;
    let dom = *f.domain();
    let depth = dom.depth();
    let n = f.dim();
    let f = f.finest();
    let fk: Vec<OperatorField> = (0..=depth).map(|k| cond_exp(&f, k)).collect::<Result<_>>()?;
    let p: Vec<&OperatorField> = cu.p.iter().map(ProjectionField::field).collect();
    let q = cu.q_final.field();
    let qp = cu.q_final.complement();
    let qperp = qp.field();
    let zero = OperatorField::zeros(dom, 0, n);

    let mut g_d = f.sandwich(q, q)?;
    let mut b_d = zero.clone();
    let mut b_diag = alloc::vec![zero.clone()];
    for k in 1..=depth as usize {
        g_d = g_d.add(&fk[k].sandwich(p[k], p[k])?)?;
        let bn = f.sub(&fk[k])?.sandwich(p[k], p[k])?;
        b_d = b_d.add(&bn)?;
        b_diag.push(bn);
    }

    let mut g_off = f.sandwich(q, qperp)?.add(&f.sandwich(qperp, q)?)?;
    let mut b_off = zero.clone();
    let mut b_offdiag = BTreeMap::new();
    for i in 1..=depth as usize {
        for j in 1..=depth as usize {
            if i == j {
                continue;
            }
            let top = i.max(j);
            g_off = g_off.add(&fk[top].sandwich(p[i], p[j])?)?;
        }
    }
    for nn in 1..depth {
        for s in 1..=(depth - nn) {
            let m = (nn + s) as usize;
            let centered = f.sub(&fk[m])?;
            let piece = centered
                .sandwich(p[nn as usize], p[m])?
                .add(&centered.sandwich(p[m], p[nn as usize])?)?;
            b_off = b_off.add(&piece)?;
            b_offdiag.insert((nn, s), piece);
        }
    }

    let mut g_left = BTreeMap::new();
    let mut g_right = BTreeMap::new();
    for s in 1..depth {
        for k in 1..=(depth - s) {
            let d = mart_diff(&f, k + s)?;
            let qk = cu.q[(k + s - 1) as usize].field();
            g_left.insert((s, k), d.sandwich(p[k as usize], qk)?);
            g_right.insert((s, k), d.sandwich(qk, p[k as usize])?);
        }
    }

    let zeta = zeta(&cu)?;
    Ok(CzBundle {
        lambda,
        f,
        fk,
        cuculescu: cu,
        g_d,
        g_off,
        b_d,
        b_off,
        b_diag,
        b_offdiag,
        g_left,
        g_right,
        zeta,
    })
}

/// The support projection `A_{h,s} = ∨_k 5A_k` of the pseudo-localization
/// estimate, after checking `A_k^⊥ dh_{k+s} = 0`.
///
/// `dh[m]` is the `m`-th martingale difference of `h` and `a[k]` the level-`k`
/// projection field `A_k`; both are indexed from 0.
pub fn pseudo_loc_support(dh: &[OperatorField], s: u32, a: &[ProjectionField], tol: f64) -> Result<ProjectionField> {
    if s == 0 {
        return Err(invalid!("s must be at least 1"));
    }
    let scale = dh.iter().fold(0.0f64, |m, d| m.max(d.max_abs())).max(f64::MIN_POSITIVE);
    for (k, ak) in a.iter().enumerate() {
        if ak.level() as usize != k {
            return Err(invalid!("A_{k} must be constant on level-{k} cubes, got level {}", ak.level()));
        }
        let Some(d) = dh.get(k + s as usize) else { continue };
        let residual = d.sandwich(ak.complement().field(), &OperatorField::identity(*d.domain(), d.dim()))?;
        for (x, v) in residual.values().iter().enumerate() {
            if max_abs(v) > tol * scale {
                return Err(Error::Precondition(alloc::format!(
                    "A_{k}^⊥ dh_{} is nonzero at cell {x} (level {}): {:e}",
                    k + s as usize,
                    residual.level(),
                    max_abs(v)
                )));
            }
        }
    }
    dilated_join(a, 5)
}

/// Measurements attached to the projection of the maximal inequality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalReport {
    pub lambda: f64,
    /// `sup_k ‖q M_k f q‖_∞` over the level range.
    pub sup_qmq: f64,
    /// `sup_k ‖q M_k f q‖_∞ / λ`; the construction guarantees at most 3.
    pub sup_ratio: f64,
    /// `λ φ(1 - q) / ‖f‖_1`.
    pub mass_ratio: f64,
    /// `φ(1 - e_i)` for `e_1, e_2, e_3`.
    pub defect_masses: [f64; 3],
}

/// Builds `q = e_1 ∧ e_2 ∧ e_3` with `e_1` Cuculescu's projection, and `e_2`,
/// `e_3` the spectral projections `1_{[0,λ]}` of the column square function of
/// `g_k = ζ T_k f` and of the row square function of `h_k = (1 - ζ) T_k f`.
pub fn maximal_projection(f: &OperatorField, lambda: f64, range: &LevelRange) -> Result<(ProjectionField, MaximalReport)> {
    let bundle = cz_decompose(f, lambda)?;
    let dom = *f.domain();
    let n = f.dim();
    let f = &bundle.f;
    let zeta = bundle.zeta.field();
    let zperp = bundle.zeta.complement();
    let family = t_family(f, range)?;
    let g: Vec<OperatorField> = family.iter().map(|t| zeta.mul(t)).collect::<Result<_>>()?;
    let h: Vec<OperatorField> = family.iter().map(|t| zperp.field().mul(t)).collect::<Result<_>>()?;
    let col = square_function(&g, Side::Col)?.finest();
    let row = square_function(&h, Side::Row)?.finest();
    let e1 = bundle.cuculescu.q_final.field().finest();
    let one = ProjMatrix::identity(n);
    let mut qs = Vec::with_capacity(dom.cell_count(dom.depth()));
    let mut e2s = Vec::with_capacity(qs.capacity());
    let mut e3s = Vec::with_capacity(qs.capacity());
    for x in 0..dom.cell_count(dom.depth()) {
        let e1x = ProjMatrix::from_matrix(e1.values()[x].clone())?;
        let e2x = spectral_proj_leq_on(&one, &HermMatrix::from_hermitian_unchecked(col.values()[x].clone()), lambda)?;
        let e3x = spectral_proj_leq_on(&one, &HermMatrix::from_hermitian_unchecked(row.values()[x].clone()), lambda)?;
        qs.push(proj_meet(n, [&e1x, &e2x, &e3x])?);
        e2s.push(e2x);
        e3s.push(e3x);
    }
    let q = ProjectionField::from_projections(dom, dom.depth(), qs)?;
    let e2 = ProjectionField::from_projections(dom, dom.depth(), e2s)?;
    let e3 = ProjectionField::from_projections(dom, dom.depth(), e3s)?;

    let mut sup_qmq: f64 = 0.0;
    for m in ball_avgs(f, range.levels())? {
        let c = m.sandwich(q.field(), q.field())?;
        sup_qmq = sup_qmq.max(c.sup_norm());
    }
    let l1 = lp_norm(f, 1.0)?;
    let mass = q.complement().field().trace_integral();
    let report = MaximalReport {
        lambda,
        sup_qmq,
        sup_ratio: sup_qmq / lambda,
        mass_ratio: if l1 > 0.0 { lambda * mass / l1 } else { 0.0 },
        defect_masses: [
            bundle.cuculescu.defect_mass(),
            e2.complement().field().trace_integral(),
            e3.complement().field().trace_integral(),
        ],
    };
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c, C64};
    use crate::grid::{dilate, DyadicCube};
    use crate::operators::tk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn psd_field(rng: &mut ChaCha8Rng, dom: DyadicDomain, n: usize, spikes: usize) -> OperatorField {
        let cells = dom.cell_count(dom.depth());
        let hot: Vec<usize> = (0..spikes).map(|_| rng.random_range(0..cells)).collect();
        OperatorField::from_fn(dom, dom.depth(), n, |x| {
            let b = CMat::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            let m = &b * b.adjoint();
            if hot.contains(&x) {
                m.scale(30.0)
            } else {
                m.scale(0.2)
            }
        })
        .unwrap()
    }

    fn lam_for(f: &OperatorField, factor: f64) -> f64 {
        op_norm(&cond_exp(f, 0).unwrap().values()[0]) * factor
    }

    #[test]
    fn large_lambda_stops_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dom = DyadicDomain::periodic(1, 5).unwrap();
        let f = psd_field(&mut rng, dom, 2, 2);
        let lam = f.sup_norm() * 1.01;
        let b = cz_decompose(&f, lam).unwrap();
        assert!(b.cuculescu.p.iter().all(|p| p.field().max_abs() < 1e-12));
        assert!(b.cuculescu.q_final.complement().field().max_abs() < 1e-12);
        assert!(b.g_d.sub(&f).unwrap().max_abs() < 1e-12);
        for part in [&b.g_off, &b.b_d, &b.b_off] {
            assert!(part.max_abs() < 1e-12);
        }
        assert!(b.zeta.complement().field().max_abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let dom = DyadicDomain::periodic(1, 3).unwrap();
        let neg = OperatorField::constant(dom, CMat::from_element(1, 1, c(-1.0)));
        assert!(matches!(cuculescu(&neg, 1.0), Err(Error::InvalidInput(_))));
        let big = OperatorField::constant(dom, CMat::from_element(1, 1, c(5.0)));
        assert!(matches!(cuculescu(&big, 1.0), Err(Error::Precondition(_))));
        assert!(cuculescu(&big, 0.0).is_err());
    }

    /// Classical stopping time: x survives to level k while every f_j(x), j <= k, is <= λ.
    #[test]
    fn scalar_case_is_the_classical_stopping_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        for _ in 0..10 {
            let vals: Vec<f64> = (0..64).map(|_| rng.random::<f64>().powi(6) * 20.0).collect();
            let f = OperatorField::from_fn(dom, 6, 1, |x| CMat::from_element(1, 1, c(vals[x]))).unwrap();
            let lam = lam_for(&f, 1.5);
            let cu = cuculescu(&f, lam).unwrap();
            for x in 0..64 {
                let mut alive = true;
                for k in 1..=6u32 {
                    let span = 1usize << (6 - k);
                    let start = (x / span) * span;
                    let avg = vals[start..start + span].iter().sum::<f64>() / span as f64;
                    alive &= avg <= lam;
                    let qk = cu.q[k as usize].at(x)[(0, 0)].re;
                    assert_eq!(qk, if alive { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn cuculescu_properties_on_matrix_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dom in [DyadicDomain::periodic(1, 6).unwrap(), DyadicDomain::periodic(2, 3).unwrap()] {
            for n in [2, 3] {
                let f = psd_field(&mut rng, dom, n, 3);
                let lam = lam_for(&f, 2.0);
                let cu = cuculescu(&f, lam).unwrap();
                for k in 1..=dom.depth() as usize {
                    let fk = cond_exp(&f, k as u32).unwrap();
                    let qk = cu.q[k].field();
                    let prev = cu.q[k - 1].field();
                    let comp = fk.sandwich(prev, prev).unwrap();
                    let comm = qk.mul(&comp).unwrap().sub(&comp.mul(qk).unwrap()).unwrap();
                    assert!(comm.sup_norm() < 1e-9);
                    let capped = fk.sandwich(qk, qk).unwrap();
                    for v in capped.values() {
                        assert!(op_norm(v) <= lam * (1.0 + 1e-9));
                    }
                    // decreasing: q_k <= q_{k-1}
                    let gap = prev.sub(qk).unwrap();
                    for v in gap.values() {
                        assert!(HermMatrix::from_hermitian_unchecked(v.clone()).min_eigenvalue() > -1e-9);
                    }
                }
                let l1 = lp_norm(&f, 1.0).unwrap();
                assert!(lam * cu.defect_mass() <= l1 * (1.0 + 1e-12));
                // disjointness and resolution of the identity
                let mut total = cu.q_final.field().clone();
                for i in 1..=dom.depth() as usize {
                    total = total.add(cu.p[i].field()).unwrap();
                    for j in (i + 1)..=dom.depth() as usize {
                        assert!(cu.p[i].field().mul(cu.p[j].field()).unwrap().sup_norm() < 1e-9);
                    }
                }
                assert!(total.sub(&OperatorField::identity(dom, n)).unwrap().max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decomposition_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        for n in [1, 2, 3] {
            let f = psd_field(&mut rng, dom, n, 3);
            let lam = lam_for(&f, 1.5);
            let b = cz_decompose(&f, lam).unwrap();
            assert!(b.reconstruction_defect().unwrap() < 1e-10);
            let sum_bn = sum_keyed(&b.f, b.b_diag.iter());
            assert!(sum_bn.sub(&b.b_d).unwrap().max_abs() < 1e-10 * f.max_abs());
            let sum_bns = sum_keyed(&b.f, b.b_offdiag.values());
            assert!(sum_bns.sub(&b.b_off).unwrap().max_abs() < 1e-10 * f.max_abs());
            let sum_g = sum_keyed(&b.f, b.g_left.values().chain(b.g_right.values()));
            assert!(sum_g.sub(&b.g_off).unwrap().max_abs() < 1e-10 * f.max_abs());
            // Δ_{k+s} g^ℓ_s = g^ℓ_{s,k}
            for s in 1..6 {
                let gs = b.g_left_sum(s);
                for k in 1..=(6 - s) {
                    let d = mart_diff(&gs, k + s).unwrap();
                    assert!(d.sub(&b.g_left[&(s, k)]).unwrap().max_abs() < 1e-10 * f.max_abs());
                }
            }
            let l1 = lp_norm(&f, 1.0).unwrap();
            assert!(lp_norm(&b.g_d, 2.0).unwrap().powi(2) <= 2.0 * lam * l1 * (1.0 + 1e-9));
            assert!(lp_norm(&b.b_d, 1.0).unwrap() <= 2.0 * l1 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn zeta_mass_and_cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dom in [DyadicDomain::periodic(1, 6).unwrap(), DyadicDomain::periodic(2, 3).unwrap()] {
            let f = psd_field(&mut rng, dom, 2, 2);
            let lam = lam_for(&f, 1.2);
            let b = cz_decompose(&f, lam).unwrap();
            let l1 = lp_norm(&f, 1.0).unwrap();
            let five_d = 5f64.powi(dom.dim() as i32);
            assert!(lam * b.zeta.complement().field().trace_integral() <= five_d * l1 * (1.0 + 1e-12));
            for k in 1..=dom.depth() {
                for qi in 0..dom.cell_count(k) {
                    let cube = DyadicCube { level: k, coords: dom.coords(k, qi) };
                    let pq = &b.cuculescu.p[k as usize].field().values()[qi];
                    for x in dilate(&dom, &cube, 5).unwrap() {
                        let z = b.zeta.at(x);
                        assert!(op_norm(&(z * pq)) < 1e-10);
                        assert!(op_norm(&(pq * z)) < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn bad_part_cancellations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        let f = psd_field(&mut rng, dom, 2, 3);
        let b = cz_decompose(&f, lam_for(&f, 1.3)).unwrap();
        let scale = f.sup_norm();
        for i in 1..=6u32 {
            for j in 1..=6u32 {
                if i == j {
                    continue;
                }
                let bij = b.b_ij(i, j).unwrap();
                let top = i.max(j);
                for q in 0..dom.cell_count(top) {
                    assert!(op_norm(&bij.cube_integral(top, q)) <= 1e-10 * scale);
                }
                for x in 0..64 {
                    let z = b.zeta.at(x);
                    let cube = cube_of(&dom, x, i.min(j)).unwrap();
                    for y in dilate(&dom, &cube, 5).unwrap() {
                        assert!(op_norm(&(z * bij.at(y) * z)) <= 1e-10 * scale);
                    }
                }
            }
        }
        // ζ T_k b_n ζ = 0 for k >= n
        for nn in 1..=4u32 {
            for k in nn..=4u32 {
                let t = tk(&b.b_diag[nn as usize], k).unwrap();
                let z = b.zeta.field();
                assert!(t.sandwich(z, z).unwrap().sup_norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn pseudo_localization_support_for_left_good_pieces() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        let f = psd_field(&mut rng, dom, 2, 3);
        let b = cz_decompose(&f, lam_for(&f, 1.3)).unwrap();
        let s = 2;
        let h = b.g_left_sum(s);
        let dh: Vec<OperatorField> = (0..=6)
            .map(|m| if m == 0 { cond_exp(&h, 0).unwrap() } else { mart_diff(&h, m).unwrap() })
            .collect();
        let a: Vec<ProjectionField> = b.cuculescu.p.clone();
        let support = pseudo_loc_support(&dh, s, &a, 1e-10).unwrap();
        // with A_k = p_k the support is the complement of ζ
        let diff = support.field().sub(b.zeta.complement().field()).unwrap();
        assert!(diff.max_abs() < 1e-9);
        // violating the hypothesis is reported
        let wrong: Vec<ProjectionField> = (0..=6).map(|_| ProjectionField::zero(dom, 2)).collect();
        let wrong: Vec<ProjectionField> = wrong
            .into_iter()
            .enumerate()
            .map(|(k, p)| ProjectionField::new(p.field().refine(k as u32).unwrap()).unwrap())
            .collect();
        if h.max_abs() > 1e-12 {
            assert!(matches!(pseudo_loc_support(&dh, s, &wrong, 1e-10), Err(Error::Precondition(_))));
        }
    }

    #[test]
    fn maximal_projection_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        let range = LevelRange::new(&dom, 0, 4).unwrap();
        for n in [1, 2] {
            let f = psd_field(&mut rng, dom, n, 3);
            let lam = lam_for(&f, 1.5);
            let (q, rep) = maximal_projection(&f, lam, &range).unwrap();
            assert!(q.is_valid());
            assert!(rep.sup_ratio <= 3.0 * (1.0 + 1e-9), "{}", rep.sup_ratio);
            assert!(rep.mass_ratio.is_finite());
        }
        // scalar f below λ everywhere: nothing is removed
        let f = OperatorField::from_fn(dom, 6, 1, |x| CMat::from_element(1, 1, c(1.0 + (x % 3) as f64))).unwrap();
        let (q, _) = maximal_projection(&f, 10.0, &range).unwrap();
        assert!(q.complement().field().max_abs() < 1e-12);
    }
}
