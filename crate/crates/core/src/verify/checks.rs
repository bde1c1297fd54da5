//! One checker per claim. Every checker returns report lines; exact identities
//! and constants are compared against fixed thresholds, `≲` claims are
//! reported as constants or fitted slopes.

use alloc::vec::Vec;

use crate::algebra::{commutator_norm, op_norm, CMat};
use crate::corpus::PseudoLocInstance;
use crate::czd::{maximal_projection, pseudo_loc_support, CuculescuSequence, CzBundle};
use crate::error::{invalid, Result};
use crate::field::OperatorField;
use crate::grid::{cube_of, dilate, BallStencil, DyadicCube, DyadicDomain};
use crate::norms::{
    bmo_d, lp_norm, omega_distribution, sq_norm, Frame, Side, SpectralDistribution,
};
use crate::operators::{
    ball_avg, ball_avgs, cond_exp, mart_diff, mkn, rk_terms, t_family, tk, LevelRange, SignPattern,
};

use super::report::{CheckReport, Instance};
use super::sweep::DecaySweep;
#[allow(unused_imports)]
use num_traits::Float;

/// Threshold for exact field identities, relative to `‖f‖_∞`.
pub const TOL_IDENTITY: f64 = 1e-10;
/// Threshold for projection identities.
pub const TOL_PROJ: f64 = 1e-9;
/// Relative slack on exact constants.
pub const TOL_CONSTANT: f64 = 1e-9;
/// Slope windows of the decay checks.
pub const SLOPE_BOUNDARY: f64 = -0.9;
pub const SLOPE_SQUARE_FN: f64 = -0.4;
pub const SLOPE_PSEUDO_LOC: f64 = -0.4;
/// `‖T_k df_n‖_2 <= C 2^{-|n-k|/2} ‖df_n‖_2` with this `C` in the
/// almost-orthogonality instance for `T_k`.
pub const SQUARE_FN_SIGMA: f64 = 2.0;

fn scale_of(f: &OperatorField) -> f64 {
    f.sup_norm().max(f64::MIN_POSITIVE)
}

fn l2(f: &OperatorField) -> f64 {
    lp_norm(f, 2.0).expect("p = 2 is valid")
}

pub fn cz_reconstruction(b: &CzBundle, inst: &Instance) -> Result<Vec<CheckReport>> {
    let scale = b.f.max_abs().max(f64::MIN_POSITIVE);
    let rel = |x: &OperatorField, y: &OperatorField| -> Result<f64> { Ok(x.sub(y)?.max_abs() / scale) };
    let dom = *b.f.domain();
    let n = b.f.dim();
    let bd = OperatorField::sum(dom, n, b.b_diag.iter())?;
    let boff = OperatorField::sum(dom, n, b.b_offdiag.values())?;
    let goff = OperatorField::sum(dom, n, b.g_left.values().chain(b.g_right.values()))?;
    let total = b.reconstruction_defect()?;
    let parts = [rel(&bd, &b.b_d)?, rel(&boff, &b.b_off)?, rel(&goff, &b.g_off)?];
    let worst = parts.iter().fold(total, |m, &x| m.max(x));
    Ok(alloc::vec![CheckReport::residual("cz_reconstruction", "", inst, worst, TOL_IDENTITY)
        .with_detail("f_defect", total)
        .with_detail("b_d_pieces", parts[0])
        .with_detail("b_off_pieces", parts[1])
        .with_detail("g_off_pieces", parts[2])])
}

pub fn cuculescu_properties(f: &OperatorField, cu: &CuculescuSequence, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "cuculescu_properties";
    let dom = *f.domain();
    let lam = cu.lambda;
    let scale = scale_of(f);
    let mut comm: f64 = 0.0;
    let mut cap: f64 = 0.0;
    for k in 1..=dom.depth() {
        let fk = cond_exp(f, k)?;
        let prev = cu.q[(k - 1) as usize].field();
        let qk = cu.q[k as usize].field();
        let compressed = fk.sandwich(prev, prev)?;
        let capped = fk.sandwich(qk, qk)?;
        for x in 0..dom.cell_count(k) {
            let fine = dom.fine_cells(k, x)[0];
            comm = comm.max(commutator_norm(qk.at(fine), compressed.at(fine)));
            cap = cap.max(op_norm(capped.at(fine)));
        }
    }
    let l1 = lp_norm(f, 1.0)?;
    let mut disjoint: f64 = 0.0;
    let mut total = cu.q_final.field().clone();
    for i in 1..=dom.depth() as usize {
        disjoint = disjoint.max(cu.p[i].idempotence_defect());
        total = total.add(cu.p[i].field())?;
        for j in (i + 1)..=dom.depth() as usize {
            disjoint = disjoint.max(cu.p[i].field().mul(cu.p[j].field())?.sup_norm());
        }
    }
    let resolution = total.sub(&OperatorField::identity(dom, f.dim()))?.max_abs();
    Ok(alloc::vec![
        CheckReport::residual(id, "commutation", inst, comm / scale, TOL_PROJ),
        CheckReport::bounded(id, "cap", inst, cap, lam, TOL_CONSTANT),
        CheckReport::bounded(id, "trace", inst, lam * cu.defect_mass(), l1, TOL_CONSTANT),
        CheckReport::residual(id, "disjointness", inst, disjoint.max(resolution), TOL_PROJ)
            .with_detail("resolution_defect", resolution),
    ])
}

pub fn diagonal_estimates(b: &CzBundle, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "diagonal_estimates";
    let d = b.f.domain().dim() as i32;
    let l1 = lp_norm(&b.f, 1.0)?;
    let g2 = l2(&b.g_d).powi(2);
    let b1 = lp_norm(&b.b_d, 1.0)?;
    Ok(alloc::vec![
        CheckReport::bounded(id, "good_l2", inst, g2, 2f64.powi(d) * b.lambda * l1, TOL_CONSTANT),
        CheckReport::bounded(id, "bad_l1", inst, b1, 2.0 * l1, TOL_CONSTANT),
    ])
}

/// `Δ_{k+s} g^ℓ_s = g^ℓ_{s,k}` (and the right-hand analogue), together with
/// `sup_s ‖g^ℓ_s‖_2^2 / (λ ‖f‖_1)`.
pub fn good_offdiag_structure(b: &CzBundle, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "good_offdiag_structure";
    let depth = b.depth();
    let scale = scale_of(&b.f);
    let l1 = lp_norm(&b.f, 1.0)?;
    let mut resid: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for s in 1..depth {
        let left = b.g_left_sum(s);
        let right = b.g_right_sum(s);
        for k in 1..=(depth - s) {
            resid = resid.max(mart_diff(&left, k + s)?.sub(&b.g_left[&(s, k)])?.max_abs());
            resid = resid.max(mart_diff(&right, k + s)?.sub(&b.g_right[&(s, k)])?.max_abs());
        }
        if l1 > 0.0 {
            worst = worst.max(l2(&left).powi(2) / (b.lambda * l1));
        }
    }
    Ok(alloc::vec![
        CheckReport::residual(id, "difference_identity", inst, resid / scale, TOL_IDENTITY),
        CheckReport::empirical(id, "l2_constant", inst, worst, Some(0.0), None),
    ])
}

pub fn zeta_support(b: &CzBundle, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "zeta_support";
    let dom = *b.f.domain();
    let l1 = lp_norm(&b.f, 1.0)?;
    let mass = b.lambda * b.zeta.complement().field().trace_integral();
    let mut resid: f64 = 0.0;
    for k in 1..=dom.depth() {
        let pk = b.cuculescu.p[k as usize].field();
        for qi in 0..dom.cell_count(k) {
            let pq = &pk.values()[qi];
            if pq.iter().all(|z| z.norm_sqr() == 0.0) {
                continue;
            }
            let cube = DyadicCube { level: k, coords: dom.coords(k, qi) };
            for x in dilate(&dom, &cube, 5)? {
                let z = b.zeta.at(x);
                resid = resid.max(op_norm(&(z * pq))).max(op_norm(&(pq * z)));
            }
        }
    }
    Ok(alloc::vec![
        CheckReport::bounded(id, "mass", inst, mass, 5f64.powi(dom.dim() as i32) * l1, TOL_CONSTANT),
        CheckReport::residual(id, "vanishing", inst, resid, TOL_IDENTITY),
    ])
}

/// Cells sampled as `x` in scans that are quadratic in the grid size.
pub const SAMPLED_CENTERS: usize = 64;

/// `∫_Q b_{i,j} = 0` for `Q ∈ Q_{i∨j}` and `ζ(x) b_{i,j}(y) ζ(x) = 0` for
/// `y ∈ 5Q_{x,i∧j}`.
pub fn bad_cancellation(b: &CzBundle, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "bad_cancellation";
    let dom = *b.f.domain();
    let depth = dom.depth();
    let scale = scale_of(&b.f);
    let cells = dom.cell_count(depth);
    let stride = (cells / SAMPLED_CENTERS).max(1);
    let mut integral: f64 = 0.0;
    let mut sandwich: f64 = 0.0;
    for i in 1..=depth {
        for j in 1..=depth {
            if i == j {
                continue;
            }
            let bij = b.b_ij(i, j)?;
            let top = i.max(j);
            for q in 0..dom.cell_count(top) {
                integral = integral.max(op_norm(&bij.cube_integral(top, q)) / dom.cell_volume(top));
            }
            for x in (0..cells).step_by(stride) {
                let z = b.zeta.at(x);
                for y in dilate(&dom, &cube_of(&dom, x, i.min(j))?, 5)? {
                    sandwich = sandwich.max(op_norm(&(z * bij.at(y) * z)));
                }
            }
        }
    }
    Ok(alloc::vec![
        CheckReport::residual(id, "mean_zero", inst, integral / scale, TOL_IDENTITY),
        CheckReport::residual(id, "zeta_sandwich", inst, sandwich / scale, TOL_IDENTITY)
            .with_detail("center_stride", stride as f64),
    ])
}

/// `ζ T_k b_n ζ = 0` and `ζ T_k b_{n,s} ζ = 0` for `k >= n`, `k` in the range.
pub fn bad_annihilation(b: &CzBundle, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let scale = scale_of(&b.f);
    let z = b.zeta.field();
    let mut diag: f64 = 0.0;
    let mut off: f64 = 0.0;
    let mut pairs = 0usize;
    for n in 1..=b.depth() {
        let ks: Vec<u32> = range.levels().filter(|&k| k >= n).collect();
        if ks.is_empty() {
            continue;
        }
        for (&k, t) in ks.iter().zip(t_many(&b.b_diag[n as usize], &ks)?) {
            let _ = k;
            diag = diag.max(t.sandwich(z, z)?.sup_norm());
            pairs += 1;
        }
        for s in 1..=(b.depth() - n) {
            let piece = &b.b_offdiag[&(n, s)];
            for t in t_many(piece, &ks)? {
                off = off.max(t.sandwich(z, z)?.sup_norm());
            }
        }
    }
    Ok(alloc::vec![
        CheckReport::residual("bad_annihilation", "diagonal", inst, diag / scale, TOL_IDENTITY)
            .with_detail("pairs", pairs as f64),
        CheckReport::residual("bad_annihilation", "off_diagonal", inst, off / scale, TOL_IDENTITY),
    ])
}

fn t_many(f: &OperatorField, ks: &[u32]) -> Result<Vec<OperatorField>> {
    let balls = ball_avgs(f, ks.iter().copied())?;
    ks.iter().zip(balls).map(|(&k, m)| m.sub(&cond_exp(f, k)?)).collect()
}

/// `M_k b_n = M_{k,n} b_n` for `k < n`: `b_n` has mean zero on level-`n` cubes,
/// so only the partially covered ones contribute.
pub fn boundary_reduction(b: &CzBundle, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let scale = scale_of(&b.f);
    let mut resid: f64 = 0.0;
    for n in 1..=b.depth() {
        for k in range.levels().filter(|&k| k < n) {
            let bn = &b.b_diag[n as usize];
            resid = resid.max(ball_avg(bn, k)?.sub(&mkn(bn, k, n)?)?.max_abs());
        }
    }
    Ok(alloc::vec![CheckReport::residual("boundary_reduction", "", inst, resid / scale, TOL_IDENTITY)])
}

/// Hypothesis and conclusion of the almost orthogonality principle for a
/// family `S_k` and a splitting `h = Σ_n u_n`: if `‖S_k u_n‖_2 <= σ(n-k) ‖v_n‖_2`
/// for all `k, n`, then `Σ_k ‖S_k h‖_2^2 <= w^2 Σ_n ‖v_n‖_2^2` with `w = Σ_j σ(j)`.
#[allow(clippy::too_many_arguments)]
pub fn almost_orthogonality(
    part: &str,
    inst: &Instance,
    s: impl Fn(u32, &OperatorField) -> Result<OperatorField>,
    ks: &[u32],
    h: &OperatorField,
    u: &[(u32, OperatorField)],
    v_norms: &[f64],
    sigma: impl Fn(i64) -> f64,
) -> Result<Vec<CheckReport>> {
    let id = "almost_orthogonality";
    if u.len() != v_norms.len() || u.is_empty() || ks.is_empty() {
        return Err(invalid!("u and v must be nonempty and of equal length"));
    }
    let dom = *h.domain();
    let sum = OperatorField::sum(dom, h.dim(), u.iter().map(|p| &p.1))?;
    let defect = sum.sub(h)?.max_abs();
    if defect > TOL_IDENTITY * h.max_abs().max(1.0) {
        return Err(invalid!("h differs from Σ u_n by {defect:e}"));
    }
    // Where `σ` vanishes the hypothesis is an identity, checked to roundoff.
    let floor = TOL_IDENTITY * l2(h).max(f64::MIN_POSITIVE);
    let mut hyp: f64 = 0.0;
    for &k in ks {
        for ((n, un), &vn) in u.iter().zip(v_norms) {
            let lhs = l2(&s(k, un)?);
            let rhs = sigma(*n as i64 - k as i64) * vn;
            if rhs > 0.0 {
                hyp = hyp.max(lhs / rhs);
            } else if lhs > floor {
                hyp = f64::INFINITY;
            }
        }
    }
    let n_lo = u.iter().map(|p| p.0 as i64).min().unwrap_or(0);
    let n_hi = u.iter().map(|p| p.0 as i64).max().unwrap_or(0);
    let k_lo = *ks.iter().min().unwrap_or(&0) as i64;
    let k_hi = *ks.iter().max().unwrap_or(&0) as i64;
    let w: f64 = ((n_lo - k_hi)..=(n_hi - k_lo)).map(&sigma).sum();
    let mut lhs = 0.0;
    for &k in ks {
        lhs += l2(&s(k, h)?).powi(2);
    }
    let rhs = w * w * v_norms.iter().map(|v| v * v).sum::<f64>();
    Ok(alloc::vec![
        CheckReport::bounded(id, &alloc::format!("{part}/hypothesis"), inst, hyp, 1.0, TOL_CONSTANT),
        CheckReport::bounded(id, &alloc::format!("{part}/conclusion"), inst, lhs, rhs, TOL_CONSTANT).with_detail("w", w),
    ])
}

fn differences(f: &OperatorField) -> Result<Vec<(u32, OperatorField)>> {
    let mut out = alloc::vec![(0, cond_exp(f, 0)?)];
    for n in 1..=f.domain().depth() {
        out.push((n, mart_diff(f, n)?));
    }
    Ok(out)
}

/// Martingale differences against `S_k = E_k - E_{k-1}`: exact orthogonality.
pub fn orthogonality_martingale(f: &OperatorField, inst: &Instance) -> Result<Vec<CheckReport>> {
    let u = differences(f)?;
    let v: Vec<f64> = u.iter().map(|p| l2(&p.1)).collect();
    let ks: Vec<u32> = (0..=f.domain().depth()).collect();
    let s = |k: u32, g: &OperatorField| if k == 0 { cond_exp(g, 0) } else { mart_diff(g, k) };
    almost_orthogonality("martingale", inst, s, &ks, &f.finest(), &u, &v, |j| if j == 0 { 1.0 } else { 0.0 })
}

/// `S_k = M_k - E_k` on martingale differences, `σ(j) = C 2^{-|j|/2}`.
pub fn orthogonality_square_fn(f: &OperatorField, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let u = differences(f)?;
    let v: Vec<f64> = u.iter().map(|p| l2(&p.1)).collect();
    let ks: Vec<u32> = range.levels().collect();
    let sigma = |j: i64| SQUARE_FN_SIGMA * 2f64.powf(-(j.abs() as f64) / 2.0);
    almost_orthogonality("square_function", inst, |k, g| tk(g, k), &ks, &f.finest(), &u, &v, sigma)
}

/// Declared constant `C_d` in `‖ζ T_k b_n ζ‖_2 <= C_d λ 2^{-|n-k|} ‖p_n‖_2`:
/// `2^{d+1}` times a bound on the measure of the boundary band of `B_k` at
/// level `n` relative to `2^{k-n} |B_k|`.
pub fn bad_diag_sigma_constant(d: u32) -> f64 {
    let band = if d == 1 { 2.0 } else { 8.0 };
    2f64.powi(d as i32 + 1) * band
}

/// `S_k h = ζ (M_k - E_k) h ζ`, `u_n = b_n`, `v_n = p_n`.
pub fn orthogonality_bad_diag(b: &CzBundle, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let depth = b.depth();
    let u: Vec<(u32, OperatorField)> = (1..=depth).map(|n| (n, b.b_diag[n as usize].clone())).collect();
    let v: Vec<f64> = (1..=depth).map(|n| l2(b.cuculescu.p[n as usize].field())).collect();
    let ks: Vec<u32> = range.levels().collect();
    let z = b.zeta.field().clone();
    let c = bad_diag_sigma_constant(b.f.domain().dim()) * b.lambda;
    let s = move |k: u32, g: &OperatorField| tk(g, k)?.sandwich(&z, &z);
    let mut reports = almost_orthogonality("bad_diagonal", inst, s, &ks, &b.b_d, &u, &v, |j| c * 2f64.powi(-(j.abs() as i32)))?;
    for r in &mut reports {
        r.details.insert("sigma_constant".into(), c / b.lambda);
    }
    Ok(reports)
}

/// `‖M_{k,n} h‖_2 / ‖h‖_2` against `n - k` at fixed `n`, for `k` in the range.
pub fn boundary_decay(h: &OperatorField, n: u32, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let norm = l2(h);
    if norm == 0.0 {
        return Err(invalid!("boundary decay needs a nonzero field"));
    }
    let mut samples = Vec::new();
    for k in range.levels().filter(|&k| k < n && n - k <= 6) {
        samples.push(((n - k) as f64, l2(&mkn(h, k, n)?) / norm));
    }
    let sweep = DecaySweep::fit("n-k", samples)?;
    Ok(alloc::vec![CheckReport::slope("boundary_decay", "", inst, sweep, SLOPE_BOUNDARY).with_detail("n", n as f64)])
}

/// The off-diagonal bad pieces against `M_k` for `k < n`: `E_k b_{n,s} = 0`
/// and `M_k b_{n,s} = M_{k,n+s} b_{n,s}` exactly, and the ratios
/// `‖M_k b_{n,s}‖_1 / ‖b_{n,s}‖_1` as a surface over `(s, n-k)`. The surface
/// gets a joint least-squares fit `log2 ρ = a + α s + β (n-k)`; both slopes are
/// reported without a window. The sweeps aggregate in `L_1`: over all `n` at
/// `n - k = 1` for `s`, and over all `(n, s)` for `n - k`.
pub fn bad_offdiag_decay(b: &CzBundle, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "bad_offdiag_decay";
    let scale = scale_of(&b.f);
    let mut cancel: f64 = 0.0;
    let mut reduce: f64 = 0.0;
    let mut surface = Vec::new();
    let mut by_s: alloc::collections::BTreeMap<u32, (f64, f64)> = alloc::collections::BTreeMap::new();
    let mut by_j: alloc::collections::BTreeMap<u32, (f64, f64)> = alloc::collections::BTreeMap::new();
    for (&(n, s), bns) in &b.b_offdiag {
        let mass = lp_norm(bns, 1.0)?;
        // Pieces at roundoff size carry no signal.
        if mass <= TOL_IDENTITY * lp_norm(&b.f, 1.0)? {
            continue;
        }
        for k in range.levels().filter(|&k| k < n) {
            cancel = cancel.max(cond_exp(bns, k)?.max_abs());
            let m = ball_avg(bns, k)?;
            reduce = reduce.max(m.sub(&mkn(bns, k, n + s)?)?.max_abs());
            let out = lp_norm(&m, 1.0)?;
            let ratio = out / mass;
            if ratio > TOL_IDENTITY {
                surface.push((s as f64, (n - k) as f64, ratio.log2()));
            }
            let e = by_j.entry(n - k).or_insert((0.0, 0.0));
            e.0 += out;
            e.1 += mass;
            if n - k == 1 {
                let e = by_s.entry(s).or_insert((0.0, 0.0));
                e.0 += out;
                e.1 += mass;
            }
        }
    }
    let mut out = alloc::vec![
        CheckReport::residual(id, "cancellation", inst, cancel / scale, TOL_IDENTITY),
        CheckReport::residual(id, "boundary_reduction", inst, reduce / scale, TOL_IDENTITY),
    ];
    let fit = joint_slopes(&surface);
    let marginal = |m: &alloc::collections::BTreeMap<u32, (f64, f64)>| -> Vec<(f64, f64)> {
        m.iter().map(|(&x, &(a, b))| (x as f64, a / b)).collect()
    };
    if let Some((alpha, beta)) = fit {
        let samples = surface.len() as f64;
        let mut rs = CheckReport::empirical(id, "slope_s", inst, alpha, None, None).with_detail("samples", samples);
        rs.sweep = DecaySweep::fit("s", marginal(&by_s)).ok();
        let mut rj = CheckReport::empirical(id, "slope_n-k", inst, beta, None, None).with_detail("samples", samples);
        rj.sweep = DecaySweep::fit("n-k", marginal(&by_j)).ok();
        out.push(rs);
        out.push(rj);
    }
    Ok(out)
}

/// Least-squares `z = a + α x + β y`; `None` when the points do not determine
/// a plane.
fn joint_slopes(pts: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 4 {
        return None;
    }
    let a = nalgebra::DMatrix::from_fn(pts.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => pts[i].0,
        _ => pts[i].1,
    });
    let z = nalgebra::DVector::from_iterator(pts.len(), pts.iter().map(|p| p.2));
    let ata = a.transpose() * &a;
    if ata.determinant().abs() <= 1e-9 * ata.norm().powi(3) {
        return None;
    }
    let coef = ata.lu().solve(&(a.transpose() * z))?;
    Some((coef[1], coef[2]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `k >= n`, sweeping `k` at fixed `n`.
    Fine,
    /// `k < n`, sweeping `n` at fixed `k`.
    Coarse,
}

/// `‖(M_k - E_k) df_n‖_2 / ‖df_n‖_2` against `|n - k|`.
pub fn square_fn_decay(f: &OperatorField, regime: Regime, fixed: u32, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let depth = f.domain().depth();
    let mut samples = Vec::new();
    let part = match regime {
        Regime::Fine => {
            let d = mart_diff(f, fixed)?;
            let norm = l2(&d);
            let ks: Vec<u32> = range.levels().filter(|&k| k > fixed).collect();
            for (&k, t) in ks.iter().zip(t_many(&d, &ks)?) {
                samples.push(((k - fixed) as f64, l2(&t) / norm));
            }
            "fine"
        }
        Regime::Coarse => {
            if !range.levels().any(|k| k == fixed) {
                return Err(invalid!("level {fixed} outside the range"));
            }
            // Differences at roundoff size carry no signal and are left out.
            let floor = TOL_IDENTITY * l2(f);
            for n in (fixed + 1)..=depth {
                let d = mart_diff(f, n)?;
                let norm = l2(&d);
                if norm > floor {
                    samples.push(((n - fixed) as f64, l2(&tk(&d, fixed)?) / norm));
                }
            }
            "coarse"
        }
    };
    let sweep = DecaySweep::fit("|n-k|", samples)?;
    Ok(alloc::vec![CheckReport::slope("square_fn_decay", part, inst, sweep, SLOPE_SQUARE_FN).with_detail("fixed", fixed as f64)])
}

/// `‖A_{h,s}^⊥ T h‖_2 / ‖h‖_2` for one instance, where the norm on the left
/// is `(Σ_k ‖A^⊥ T_k h‖_2^2)^{1/2}` (the Rademacher average of `|Σ ε_k …|^2`).
pub fn pseudo_loc_ratio(p: &PseudoLocInstance, range: &LevelRange) -> Result<f64> {
    let support = pseudo_loc_support(&p.dh, p.s, &p.a, TOL_IDENTITY)?;
    let perp = support.complement();
    let norm = l2(&p.h);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for t in t_family(&p.h, range)? {
        acc += l2(&perp.field().mul(&t)?).powi(2);
    }
    Ok(acc.sqrt() / norm)
}

/// Decay in `s` of [`pseudo_loc_ratio`]; instances sharing an `s` are pooled
/// in mean square.
pub fn pseudo_localization(instances: &[PseudoLocInstance], range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let mut by_s: alloc::collections::BTreeMap<u32, (f64, usize)> = alloc::collections::BTreeMap::new();
    for p in instances {
        // Below roundoff the ratio is an exact zero and is left out of the fit.
        let r = pseudo_loc_ratio(p, range)?;
        let r = if r < TOL_IDENTITY { 0.0 } else { r };
        let e = by_s.entry(p.s).or_insert((0.0, 0));
        e.0 += r * r;
        e.1 += 1;
    }
    let samples = by_s.iter().map(|(&s, &(sq, c))| (s as f64, (sq / c as f64).sqrt())).collect();
    let sweep = DecaySweep::fit("s", samples)?;
    Ok(alloc::vec![CheckReport::slope("pseudo_localization", "", inst, sweep, SLOPE_PSEUDO_LOC)])
}

/// Sign patterns: all of `{±1}^m`, or `count` seeded samples.
pub fn sign_space(m: usize, sample: Option<usize>, seed: u64) -> Result<Vec<SignPattern>> {
    use rand::SeedableRng;
    match sample {
        None => SignPattern::enumerate(m),
        Some(count) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Ok((0..count).map(|_| SignPattern::sampled(m, &mut rng, seed)).collect())
        }
    }
}

fn tf_distribution(f: &OperatorField, range: &LevelRange, patterns: &[SignPattern]) -> Result<SpectralDistribution> {
    omega_distribution(&t_family(f, range)?, patterns)
}

/// `sup_λ λ φ̃(|Tf| > λ) / ‖f‖_1` over the grid `λ = c ‖E_0 f‖`, with the
/// decomposition bound `φ̃(|Tf| > λ) <= Σ_h φ̃(|Th| > λ/4)` over the four parts
/// of the decomposition at each admissible `λ`.
pub fn weak_type_11(
    f: &OperatorField,
    lambda_factors: &[f64],
    range: &LevelRange,
    patterns: &[SignPattern],
    inst: &Instance,
) -> Result<Vec<CheckReport>> {
    let id = "weak_type_11";
    let l1 = lp_norm(f, 1.0)?;
    let dist = tf_distribution(f, range, patterns)?;
    let base = op_norm(&cond_exp(f, 0)?.values()[0]);
    if l1 == 0.0 || base == 0.0 {
        return Ok(alloc::vec![CheckReport::empirical(id, "constant", inst, 0.0, Some(0.0), None)]);
    }
    let mut grid_const: f64 = 0.0;
    let mut chain_worst: f64 = 0.0;
    let mut chain_const: f64 = 0.0;
    let mut zeta_const: f64 = 0.0;
    for &c in lambda_factors {
        let lam = c * base;
        let lhs = lam * dist.mass_above(lam);
        grid_const = grid_const.max(lhs / l1);
        if c < 1.0 {
            continue;
        }
        let b = crate::czd::cz_decompose(f, lam)?;
        let mut rhs = 0.0;
        for h in [&b.b_d, &b.b_off, &b.g_d, &b.g_off] {
            rhs += lam * tf_distribution(h, range, patterns)?.mass_above(lam / 4.0);
        }
        chain_const = chain_const.max(rhs / l1);
        zeta_const = zeta_const.max(lam * b.zeta.complement().field().trace_integral() / l1);
        if rhs > 0.0 {
            chain_worst = chain_worst.max(lhs / rhs);
        } else if lhs > 0.0 {
            chain_worst = f64::INFINITY;
        }
    }
    let mut out = Vec::new();
    let m = range.len();
    if f.dim() == 1 && m < 64 && patterns.len() == 1usize << m {
        // Exhaustive signs on a scalar field: the oracle computes the same number.
        let g = super::oracle::ScalarGrid::of(f.domain());
        let levels: Vec<u32> = range.levels().collect();
        let oracle = super::oracle::weak_norm_rademacher(&g, &super::oracle::scalar_values(f)?, &levels) / l1;
        let rel = (dist.weak_norm() / l1 - oracle).abs() / oracle.max(f64::MIN_POSITIVE);
        out.push(CheckReport::residual(id, "scalar_oracle", inst, rel, SCALAR_WEAK_AGREEMENT).with_detail("oracle_constant", oracle));
    }
    out.splice(0..0, [
        CheckReport::empirical(id, "constant", inst, grid_const, Some(0.0), None)
            .with_detail("sup_over_all_lambda", dist.weak_norm() / l1)
            .with_detail("decomposition_constant", chain_const)
            .with_detail("zeta_mass_constant", zeta_const),
        CheckReport::bounded(id, "decomposition_bound", inst, chain_worst, 1.0, TOL_CONSTANT),
    ]);
    Ok(out)
}

/// Relative agreement required between the scalar weak constant and the oracle.
pub const SCALAR_WEAK_AGREEMENT: f64 = 0.05;

/// `M_k f` at the center of `Q`, which is a cell center for `Q` at level `K`
/// and a grid corner otherwise.
fn ball_avg_at_center(f: &OperatorField, q: &DyadicCube, k: u32) -> Result<CMat> {
    let dom = *f.domain();
    let depth = dom.depth();
    let span = 1usize << (depth - q.level);
    let mut coords = [q.coords[0] * span, q.coords[1] * span];
    let shift = if span == 1 {
        [0.0, 0.0]
    } else {
        coords[0] += span / 2;
        if dom.dim() == 2 {
            coords[1] += span / 2;
        }
        [-0.5, if dom.dim() == 2 { -0.5 } else { 0.0 }]
    };
    let stencil = BallStencil::shifted(&dom, k, shift)?;
    let mut acc = CMat::zeros(f.dim(), f.dim());
    for (o, w) in &stencil.offsets {
        if let Some(y) = dom.offset_cell(depth, coords, *o) {
            acc += f.at(y).scale(*w);
        }
    }
    Ok(acc.scale(1.0 / stencil.total))
}

/// Continuous value of `sup |(B + x) Δ (B + c_Q)| / (2^k ℓ(Q) |B|)` over
/// `x ∈ Q`, `2^{-k} >= ℓ(Q)`: `1/2` on the line, `(4/π)(√2/2)` in the plane.
pub fn geometry_constant(d: u32) -> f64 {
    if d == 1 {
        0.5
    } else {
        4.0 / core::f64::consts::PI * core::f64::consts::FRAC_1_SQRT_2
    }
}

/// Relative slack granted to the discretized disks of the plane.
pub const GEOMETRY_SLACK_2D: f64 = 0.5;

/// BMO norms of `(T_k f)` in the four frame/side combinations relative to
/// `‖f‖_∞`, and the local structure of `F_{k,Q} = T_k f_2 - T_k f_2(c_Q)` with
/// `f_2 = f 1_{(3Q)^c}` on sampled cubes `Q`.
pub fn bmo_bound(f: &OperatorField, range: &LevelRange, cubes_per_level: usize, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "bmo_bound";
    let dom = *f.domain();
    let sup = scale_of(f);
    let family = t_family(f, range)?;
    let mut out = Vec::new();
    for (side, frame, part) in [
        (Side::Col, Frame::Ek1, "col_ek1"),
        (Side::Row, Frame::Ek1, "row_ek1"),
        (Side::Col, Frame::E1k, "col_e1k"),
        (Side::Row, Frame::E1k, "row_e1k"),
    ] {
        out.push(CheckReport::empirical(id, part, inst, bmo_d(&family, side, frame)? / sup, Some(0.0), None));
    }
    let mut vanish: f64 = 0.0;
    let mut geom: f64 = 0.0;
    for level in 1..=dom.depth() {
        let count = dom.cell_count(level);
        let step = (count / cubes_per_level.max(1)).max(1);
        for qi in (0..count).step_by(step).take(cubes_per_level.max(1)) {
            let q = DyadicCube { level, coords: dom.coords(level, qi) };
            let near = dilate(&dom, &q, 3)?;
            let mut mask = alloc::vec![true; dom.cell_count(dom.depth())];
            for y in near {
                mask[y] = false;
            }
            let f2 = f.finest().map_indexed(|y, v| if mask[y] { v.clone() } else { CMat::zeros(v.nrows(), v.ncols()) });
            let ks: Vec<u32> = range.levels().collect();
            let balls = ball_avgs(&f2, ks.iter().copied())?;
            for (&k, m) in ks.iter().zip(&balls) {
                let e = cond_exp(&f2, k)?;
                let t = m.sub(&e)?;
                let center_cell = q.fine_cells(&dom)[0];
                let at_center = ball_avg_at_center(&f2, &q, k)? - cube_value(&e, &q, center_cell);
                let mut worst: f64 = 0.0;
                for x in q.fine_cells(&dom) {
                    worst = worst.max(op_norm(&(t.at(x) - &at_center)));
                }
                if k > level {
                    vanish = vanish.max(worst);
                } else {
                    let scale = 2f64.powi(k as i32) * q.side_length() * sup;
                    geom = geom.max(worst / scale);
                }
            }
        }
    }
    let bound = geometry_constant(dom.dim()) * if dom.dim() == 2 { 1.0 + GEOMETRY_SLACK_2D } else { 1.0 };
    out.push(CheckReport::residual(id, "fine_levels_vanish", inst, vanish / sup, TOL_IDENTITY));
    out.push(CheckReport::bounded(id, "geometry", inst, geom, bound, TOL_CONSTANT).with_detail("continuous_constant", geometry_constant(dom.dim())));
    Ok(out)
}

// `E_k f_2` at the center of `Q`: constant on the level-`k` cube containing
// `Q` when `k <= level(Q)`; for finer `k` the center cell's cube is used.
fn cube_value(e: &OperatorField, _q: &DyadicCube, center_cell: usize) -> CMat {
    e.at(center_cell).clone()
}

/// `‖(T_k f)‖` in `L_p(ℓ_2^{rc})` relative to `‖f‖_p`: for `p >= 2` the larger
/// of the row and column norms, for `p < 2` the sum-norm of the witness
/// `(ζ T_k f, (1 - ζ) T_k f)` at `λ = 2 ‖E_0 f‖`. At `p = 2` the sum
/// `Σ_k ‖T_k f‖_2^2` is also compared with `l2_constant ‖f‖_2^2`.
pub fn strong_type_pp(
    f: &OperatorField,
    ps: &[f64],
    range: &LevelRange,
    l2_constant: Option<f64>,
    inst: &Instance,
) -> Result<Vec<CheckReport>> {
    let id = "strong_type_pp";
    let family = t_family(f, range)?;
    let mut out = Vec::new();
    let base = op_norm(&cond_exp(f, 0)?.values()[0]);
    for &p in ps {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid!("p must lie in (1, ∞), got {p}"));
        }
        let fp = lp_norm(f, p)?;
        let value = if p >= 2.0 {
            sq_norm(&family, p, Side::Col)?.max(sq_norm(&family, p, Side::Row)?)
        } else {
            let positive = f.values().iter().all(|v| {
                crate::algebra::HermMatrix::new(v.clone()).map(|h| h.min_eigenvalue() >= -1e-12 * scale_of(f)).unwrap_or(false)
            });
            if positive && base > 0.0 {
                let b = crate::czd::cz_decompose(f, 2.0 * base)?;
                let z = b.zeta.field();
                let zp = b.zeta.complement();
                let g: Vec<OperatorField> = family.iter().map(|t| z.mul(t)).collect::<Result<_>>()?;
                let h: Vec<OperatorField> = family.iter().map(|t| zp.field().mul(t)).collect::<Result<_>>()?;
                sq_norm(&g, p, Side::Col)? + sq_norm(&h, p, Side::Row)?
            } else {
                sq_norm(&family, p, Side::Col)?.min(sq_norm(&family, p, Side::Row)?)
            }
        };
        let ratio = if fp > 0.0 { value / fp } else { 0.0 };
        out.push(CheckReport::empirical(id, &alloc::format!("p={p}"), inst, ratio, Some(0.0), None).with_detail("p", p));
    }
    if let Some(c) = l2_constant {
        let sum: f64 = family.iter().map(|t| l2(t).powi(2)).sum();
        out.push(CheckReport::bounded(id, "l2_sum", inst, sum, c * l2(f).powi(2), TOL_CONSTANT));
    }
    Ok(out)
}

/// The grid constant `C_d` of `Σ_k ‖T_k f‖_2^2 <= C_d ‖f‖_2^2`.
pub fn l2_bound(domain: &DyadicDomain, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let c = if domain.cell_count(domain.depth()) <= 1024 {
        crate::operators::square_function_l2_constant(domain, range)?
    } else {
        crate::operators::square_function_l2_constant_iter(domain, range, inst.seed, 300, 1e-10)?
    };
    Ok(alloc::vec![CheckReport::empirical("l2_bound", "", inst, c, Some(0.0), None)])
}

/// `R_k = M_k - M_{k-1}`: the split `R_k f = T_k f + df_k - T_{k-1} f`, the
/// weak constant of `(R_k f)` over `Ω`, and the bound of `φ̃(|Rf| > λ)` by the
/// three split terms at `λ/3`.
pub fn r_square_fn_weak(f: &OperatorField, range: &LevelRange, patterns_for: impl Fn(usize) -> Result<Vec<SignPattern>>, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "r_square_fn_weak";
    let ks: Vec<u32> = range.levels().filter(|&k| k >= 1).collect();
    if ks.is_empty() {
        return Err(invalid!("R_k needs a level k >= 1 in the range"));
    }
    let scale = scale_of(f);
    let mut split: f64 = 0.0;
    let mut rs = Vec::new();
    let mut terms: [Vec<OperatorField>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &k in &ks {
        let r = ball_avg(f, k)?.sub(&ball_avg(f, k - 1)?)?;
        let [a, b, c] = rk_terms(f, k)?;
        let recombined = a.add(&b)?.sub(&c)?;
        split = split.max(recombined.sub(&r)?.max_abs());
        rs.push(r);
        terms[0].push(a);
        terms[1].push(b);
        terms[2].push(c);
    }
    let patterns = patterns_for(ks.len())?;
    let l1 = lp_norm(f, 1.0)?;
    let dist = omega_distribution(&rs, &patterns)?;
    let parts: Vec<SpectralDistribution> = terms.iter().map(|t| omega_distribution(t, &patterns)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for &lam in &dist.breakpoints {
        let below = lam * (1.0 - 1e-12);
        let lhs = dist.mass_above(below);
        let rhs: f64 = parts.iter().map(|p| p.mass_above(below / 3.0)).sum();
        worst = worst.max(if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 });
    }
    let constant = if l1 > 0.0 { dist.weak_norm() / l1 } else { 0.0 };
    Ok(alloc::vec![
        CheckReport::residual(id, "split", inst, split / scale, 1e-12),
        CheckReport::empirical(id, "constant", inst, constant, Some(0.0), None),
        CheckReport::bounded(id, "split_bound", inst, worst, 1.0, TOL_CONSTANT),
    ])
}

pub fn maximal_projection_check(f: &OperatorField, lam: f64, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    let id = "maximal_projection";
    let (q, rep) = maximal_projection(f, lam, range)?;
    Ok(alloc::vec![
        CheckReport::bounded(id, "sup", inst, rep.sup_qmq, 3.0 * lam, TOL_CONSTANT),
        CheckReport::empirical(id, "mass", inst, rep.mass_ratio, Some(0.0), None)
            .with_detail("e1_mass", rep.defect_masses[0])
            .with_detail("e2_mass", rep.defect_masses[1])
            .with_detail("e3_mass", rep.defect_masses[2]),
        CheckReport::residual(id, "projection", inst, q.idempotence_defect(), TOL_PROJ),
    ])
}

fn entry(f: &OperatorField, i: usize, j: usize, imag: bool) -> Vec<f64> {
    let cells = f.domain().cell_count(f.domain().depth());
    (0..cells).map(|x| if imag { f.at(x)[(i, j)].im } else { f.at(x)[(i, j)].re }).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Averages act entrywise, so every real and imaginary entry of `E_k f`,
/// `T_k f` and `M_{k,n} f` must agree with the scalar oracle applied to the
/// same entry of `f`. For diagonal `f` Cuculescu's `q_k` must be the diagonal
/// of the scalar stopping times (a nonzero off-diagonal makes that part `NaN`
/// and it is skipped).
pub fn scalar_oracle_match(f: &OperatorField, lambda: f64, range: &LevelRange, inst: &Instance) -> Result<Vec<CheckReport>> {
    use super::oracle;
    let id = "scalar_oracle_match";
    let dom = *f.domain();
    let g = oracle::ScalarGrid::of(&dom);
    let scale = scale_of(f);
    let fine = f.finest();
    let n = f.dim();
    let ks: Vec<u32> = range.levels().collect();
    let mut worst: f64 = 0.0;
    let mut mk: Vec<(u32, u32)> = Vec::new();
    for &k in &ks {
        for m in [k + 1, k + 2] {
            if m <= dom.depth() {
                mk.push((k, m));
            }
        }
    }
    let e: Vec<OperatorField> = (0..=dom.depth()).map(|k| cond_exp(&fine, k)).collect::<Result<_>>()?;
    let t: Vec<OperatorField> = ks.iter().map(|&k| tk(&fine, k)).collect::<Result<_>>()?;
    let b: Vec<OperatorField> = mk.iter().map(|&(k, m)| mkn(&fine, k, m)).collect::<Result<_>>()?;
    for i in 0..n {
        for j in 0..n {
            for imag in [false, true] {
                let v = entry(&fine, i, j, imag);
                for (k, ek) in e.iter().enumerate() {
                    worst = worst.max(max_diff(&entry(ek, i, j, imag), &oracle::cond_exp(&g, &v, k as u32)));
                }
                for (&k, tk_) in ks.iter().zip(&t) {
                    worst = worst.max(max_diff(&entry(tk_, i, j, imag), &oracle::tk(&g, &v, k)));
                }
                for (&(k, m), bk) in mk.iter().zip(&b) {
                    worst = worst.max(max_diff(&entry(bk, i, j, imag), &oracle::mkn(&g, &v, k, m)));
                }
            }
        }
    }
    let mut out = alloc::vec![CheckReport::residual(id, "operators", inst, worst / scale, TOL_IDENTITY)];
    let diagonal = fine.values().iter().all(|v| (0..n).all(|i| (0..n).all(|j| i == j || v[(i, j)].norm_sqr() == 0.0)));
    if diagonal {
        let cu = crate::czd::cuculescu(&fine, lambda)?;
        let mut mismatch = 0usize;
        for i in 0..n {
            let times = oracle::stopping_times(&g, &diagonal_real(&fine, i), lambda);
            for (k, alive) in times.iter().enumerate() {
                let q = cu.q[k].field().refine(dom.depth())?;
                for (x, &a) in alive.iter().enumerate() {
                    let qv = q.at(x)[(i, i)].re;
                    if (qv - if a { 1.0 } else { 0.0 }).abs() > TOL_PROJ {
                        mismatch += 1;
                    }
                }
            }
        }
        out.push(CheckReport::residual(id, "stopping_times", inst, mismatch as f64, 0.0));
    }
    Ok(out)
}

fn diagonal_real(f: &OperatorField, i: usize) -> Vec<f64> {
    entry(f, i, i, false)
}
