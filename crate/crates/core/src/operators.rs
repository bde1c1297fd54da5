//! Dyadic averages, ball averages and the square-function operators built
//! from them.
//!
//! Ball averages are evaluated with row-wise prefix sums: the stencil of `B_k`
//! is split into runs of equal weight along the last axis, so one output cell
//! costs one prefix-sum difference per run instead of one term per cell.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{CMat, C64};
use crate::error::{invalid, Error, Result};
use crate::field::OperatorField;
use crate::grid::{BallStencil, BoundaryMode, BoundaryPlan, DyadicDomain};
#[allow(unused_imports)]
use num_traits::Float;

/// Levels `k_lo..=k_hi` over which square-function sums run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRange {
    pub k_lo: u32,
    pub k_hi: u32,
}

impl LevelRange {
    pub fn new(domain: &DyadicDomain, k_lo: u32, k_hi: u32) -> Result<Self> {
        let max = domain
            .max_ball_level()
            .ok_or_else(|| Error::Resolution(alloc::format!("depth {} admits no ball level", domain.depth())))?;
        if k_lo > k_hi {
            return Err(invalid!("empty level range {k_lo}..={k_hi}"));
        }
        if k_hi > max {
            return Err(Error::Resolution(alloc::format!("level range ends at {k_hi} > K - 2 = {max}")));
        }
        Ok(Self { k_lo, k_hi })
    }

    /// All admissible levels `0..=K-2`.
    pub fn full(domain: &DyadicDomain) -> Result<Self> {
        let max = domain.max_ball_level().unwrap_or(0);
        Self::new(domain, 0, max)
    }

    pub fn len(&self) -> usize {
        (self.k_hi - self.k_lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn levels(&self) -> impl Iterator<Item = u32> + Clone {
        self.k_lo..=self.k_hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignProvenance {
    /// The `index`-th element of `{±1}^m`, bit `j` giving the sign of level `k_lo + j`.
    Exhaustive { index: u64 },
    Sampled { seed: u64 },
}

/// Rademacher signs indexed by the levels of a range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignPattern {
    pub signs: Vec<i8>,
    pub provenance: SignProvenance,
}

/// Largest range size enumerated exhaustively.
pub const MAX_EXHAUSTIVE_LEVELS: usize = 10;

impl SignPattern {
    pub fn exhaustive(m: usize, index: u64) -> Result<Self> {
        if m > 63 || index >= 1u64 << m {
            return Err(invalid!("sign index {index} outside {{±1}}^{m}"));
        }
        let signs = (0..m).map(|j| if index >> j & 1 == 1 { -1 } else { 1 }).collect();
        Ok(Self { signs, provenance: SignProvenance::Exhaustive { index } })
    }

    /// Every pattern of `{±1}^m`.
    pub fn enumerate(m: usize) -> Result<Vec<Self>> {
        if m > MAX_EXHAUSTIVE_LEVELS {
            return Err(invalid!("exhaustive enumeration limited to {MAX_EXHAUSTIVE_LEVELS} levels, got {m}"));
        }
        (0..1u64 << m).map(|i| Self::exhaustive(m, i)).collect()
    }

    pub fn sampled<R: Rng>(m: usize, rng: &mut R, seed: u64) -> Self {
        let signs = (0..m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self { signs, provenance: SignProvenance::Sampled { seed } }
    }

    pub fn constant(m: usize, sign: i8) -> Self {
        Self { signs: alloc::vec![sign; m], provenance: SignProvenance::Exhaustive { index: 0 } }
    }

    pub fn negated(&self) -> Self {
        Self { signs: self.signs.iter().map(|s| -s).collect(), provenance: self.provenance }
    }
}

fn check_level(f: &OperatorField, k: u32) -> Result<()> {
    if k > f.domain().depth() {
        return Err(invalid!("level {k} outside 0..={}", f.domain().depth()));
    }
    Ok(())
}

/// `E_k f`: averages over level-`k` cubes. Fields already constant on level-`k`
/// cubes are returned unchanged.
pub fn cond_exp(f: &OperatorField, k: u32) -> Result<OperatorField> {
    check_level(f, k)?;
    if k >= f.level() {
        return Ok(f.clone());
    }
    let dom = *f.domain();
    let n = f.dim();
    let mut sums = alloc::vec![CMat::zeros(n, n); dom.cell_count(k)];
    for (i, v) in f.values().iter().enumerate() {
        sums[dom.ancestor(f.level(), i, k)] += v;
    }
    let w = dom.cell_volume(f.level()) / dom.cell_volume(k);
    OperatorField::new(dom, k, sums.into_iter().map(|s| s.scale(w)).collect())
}

/// `df_n = E_n f - E_{n-1} f` for `n >= 1`.
pub fn mart_diff(f: &OperatorField, n: u32) -> Result<OperatorField> {
    if n == 0 {
        return Err(invalid!("martingale differences start at n = 1"));
    }
    check_level(f, n)?;
    cond_exp(f, n)?.sub(&cond_exp(f, n - 1)?)
}

/// Finest-level values packed as `[cell][entry]` with `n*n` column-major entries.
struct Flat {
    dim: usize,
    nn: usize,
    data: Vec<C64>,
}

impl Flat {
    fn from_field(f: &OperatorField) -> Self {
        let fine = f.finest();
        let nn = f.dim() * f.dim();
        let mut data = Vec::with_capacity(fine.values().len() * nn);
        for v in fine.values() {
            data.extend_from_slice(v.as_slice());
        }
        Self { dim: f.dim(), nn, data }
    }

    fn cell(&self, x: usize) -> &[C64] {
        &self.data[x * self.nn..(x + 1) * self.nn]
    }

    fn into_field(self, domain: DyadicDomain) -> Result<OperatorField> {
        let n = self.dim;
        let values = self.data.chunks(self.nn).map(|c| CMat::from_column_slice(n, n, c)).collect();
        OperatorField::new(domain, domain.depth(), values)
    }
}

fn axpy(acc: &mut [C64], w: f64, x: &[C64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b * w;
    }
}

/// Run of equal stencil weights along the last axis: offsets `lo..lo+len`.
#[derive(Clone, Copy, Debug)]
struct Run {
    row: i64,
    lo: i64,
    len: usize,
    weight: f64,
}

fn stencil_runs(domain: &DyadicDomain, stencil: &BallStencil) -> Vec<Run> {
    // (row offset, column offset) in the layout used by the prefix sums
    let mut cells: Vec<(i64, i64, f64)> = stencil
        .offsets
        .iter()
        .map(|&(o, w)| if domain.dim() == 1 { (0, o[0], w) } else { (o[0], o[1], w) })
        .collect();
    cells.sort_by_key(|a| (a.0, a.1));
    let mut runs: Vec<Run> = Vec::new();
    for (row, col, w) in cells {
        if let Some(last) = runs.last_mut() {
            if last.row == row && last.lo + last.len as i64 == col && last.weight == w {
                last.len += 1;
                continue;
            }
        }
        runs.push(Run { row, lo: col, len: 1, weight: w });
    }
    runs
}

/// Row-wise prefix sums of a finest-level field.
struct Prefix {
    rows: usize,
    cols: usize,
    nn: usize,
    data: Vec<C64>,
}

impl Prefix {
    fn new(domain: &DyadicDomain, flat: &Flat) -> Self {
        let cols = domain.side(domain.depth());
        let rows = domain.cell_count(domain.depth()) / cols;
        let nn = flat.nn;
        let mut data = alloc::vec![C64::new(0.0, 0.0); rows * (cols + 1) * nn];
        for r in 0..rows {
            for c in 0..cols {
                let base = (r * (cols + 1) + c) * nn;
                let (head, tail) = data.split_at_mut(base + nn);
                let prev = &head[base..base + nn];
                let next = &mut tail[..nn];
                let x = flat.cell(r * cols + c);
                for e in 0..nn {
                    next[e] = prev[e] + x[e];
                }
            }
        }
        Self { rows, cols, nn, data }
    }

    fn at(&self, row: usize, c: usize) -> &[C64] {
        let base = (row * (self.cols + 1) + c) * self.nn;
        &self.data[base..base + self.nn]
    }

    /// Adds `w * Σ_{c in [c0, c1)} row` for `0 <= c0 <= c1 <= cols`.
    fn add_segment(&self, acc: &mut [C64], w: f64, row: usize, c0: usize, c1: usize) {
        if c0 == c1 {
            return;
        }
        let hi = self.at(row, c1);
        let lo = self.at(row, c0);
        for e in 0..self.nn {
            acc[e] += (hi[e] - lo[e]) * w;
        }
    }

    /// Adds `w * Σ` over columns `start..start+len` of `row`, wrapped or clipped.
    fn add_range(&self, acc: &mut [C64], w: f64, row: usize, start: i64, len: usize, mode: BoundaryMode) {
        let cols = self.cols as i64;
        match mode {
            BoundaryMode::Periodic => {
                let cycles = len / self.cols;
                if cycles > 0 {
                    self.add_segment(acc, w * cycles as f64, row, 0, self.cols);
                }
                let rem = len % self.cols;
                let s = start.rem_euclid(cols) as usize;
                if s + rem <= self.cols {
                    self.add_segment(acc, w, row, s, s + rem);
                } else {
                    self.add_segment(acc, w, row, s, self.cols);
                    self.add_segment(acc, w, row, 0, s + rem - self.cols);
                }
            }
            BoundaryMode::Interior => {
                let lo = start.max(0);
                let hi = (start + len as i64).min(cols);
                if lo < hi {
                    self.add_segment(acc, w, row, lo as usize, hi as usize);
                }
            }
        }
    }
}

fn resolve_row(domain: &DyadicDomain, rows: usize, row: i64) -> Option<usize> {
    match domain.mode() {
        BoundaryMode::Periodic => Some(row.rem_euclid(rows as i64) as usize),
        BoundaryMode::Interior => (0..rows as i64).contains(&row).then_some(row as usize),
    }
}

/// `M_k f(x) = |B_k|^{-1} ∫_{B_k} f(x + y) dy`, sampled on the finest cells.
/// In interior mode `f` is extended by zero outside the window.
pub fn ball_avg(f: &OperatorField, k: u32) -> Result<OperatorField> {
    Ok(ball_avgs(f, [k])?.pop().expect("one level requested"))
}

/// Ball averages for several levels, sharing one prefix-sum table.
pub fn ball_avgs(f: &OperatorField, levels: impl IntoIterator<Item = u32>) -> Result<Vec<OperatorField>> {
    let dom = *f.domain();
    let flat = Flat::from_field(f);
    let prefix = Prefix::new(&dom, &flat);
    let cells = dom.cell_count(dom.depth());
    let nn = flat.nn;
    let mut fields = Vec::new();
    for k in levels {
        let stencil = BallStencil::new(&dom, k)?;
        let runs = stencil_runs(&dom, &stencil);
        let inv = 1.0 / stencil.total;
        let mut out = alloc::vec![C64::new(0.0, 0.0); cells * nn];
        for x in 0..cells {
            let (r, c) = (x / prefix.cols, x % prefix.cols);
            let acc = &mut out[x * nn..(x + 1) * nn];
            for run in &runs {
                if let Some(row) = resolve_row(&dom, prefix.rows, r as i64 + run.row) {
                    prefix.add_range(acc, run.weight * inv, row, c as i64 + run.lo, run.len, dom.mode());
                }
            }
        }
        fields.push(Flat { dim: flat.dim, nn, data: out }.into_field(dom)?);
    }
    Ok(fields)
}

/// `T_k f = (M_k - E_k) f`.
pub fn tk(f: &OperatorField, k: u32) -> Result<OperatorField> {
    ball_avg(f, k)?.sub(&cond_exp(f, k)?)
}

/// `R_k f = (M_k - M_{k-1}) f` for `k >= 1`.
pub fn rk(f: &OperatorField, k: u32) -> Result<OperatorField> {
    if k == 0 {
        return Err(invalid!("R_k needs k >= 1"));
    }
    ball_avg(f, k)?.sub(&ball_avg(f, k - 1)?)
}

/// The split `R_k f = T_k f + df_k - T_{k-1} f`, returned as its three terms.
pub fn rk_terms(f: &OperatorField, k: u32) -> Result<[OperatorField; 3]> {
    if k == 0 {
        return Err(invalid!("R_k needs k >= 1"));
    }
    Ok([tk(f, k)?, mart_diff(f, k)?, tk(f, k - 1)?])
}

/// `M_{k,n} h(x) = |B_k|^{-1} ∫_{I(B_k + x, n)} h`.
pub fn mkn(f: &OperatorField, k: u32, n: u32) -> Result<OperatorField> {
    let dom = *f.domain();
    if n <= k {
        return Err(invalid!("M_(k,n) needs n > k, got k = {k}, n = {n}"));
    }
    check_level(f, n)?;
    let stencil = BallStencil::new(&dom, k)?;
    let plan = BoundaryPlan::new(&dom, &stencil, n)?;
    let flat = Flat::from_field(f);
    let nn = flat.nn;
    let cells = dom.cell_count(dom.depth());
    let inv = 1.0 / stencil.total;
    let mut out = alloc::vec![C64::new(0.0, 0.0); cells * nn];
    for x in 0..cells {
        let c = dom.coords(dom.depth(), x);
        let acc = &mut out[x * nn..(x + 1) * nn];
        for (o, w) in plan.offsets_for(&dom, x) {
            if let Some(y) = dom.offset_cell(dom.depth(), c, *o) {
                axpy(acc, w * inv, flat.cell(y));
            }
        }
    }
    Flat { dim: flat.dim, nn, data: out }.into_field(dom)
}

/// The fields `T_k f` for `k` in a range, in level order.
pub fn t_family(f: &OperatorField, range: &LevelRange) -> Result<Vec<OperatorField>> {
    let balls = ball_avgs(f, range.levels())?;
    range.levels().zip(balls).map(|(k, m)| m.sub(&cond_exp(f, k)?)).collect()
}

/// `Σ_k ε_k T_k f` from precomputed `T_k f`.
pub fn rademacher_combine(family: &[OperatorField], eps: &SignPattern) -> Result<OperatorField> {
    if family.len() != eps.signs.len() {
        return Err(invalid!("{} signs for {} levels", eps.signs.len(), family.len()));
    }
    let first = family.first().ok_or_else(|| invalid!("empty family"))?;
    let mut acc = first.scale(eps.signs[0] as f64);
    for (t, &s) in family.iter().zip(&eps.signs).skip(1) {
        acc = acc.zip_with(t, |a, b| a + b.scale(s as f64))?;
    }
    Ok(acc)
}

/// `Σ_{k in range} ε_k T_k f`.
pub fn rademacher_t(f: &OperatorField, eps: &SignPattern, range: &LevelRange) -> Result<OperatorField> {
    if eps.signs.len() != range.len() {
        return Err(invalid!("{} signs for a range of {} levels", eps.signs.len(), range.len()));
    }
    rademacher_combine(&t_family(f, range)?, eps)
}

/// Matrix of a scalar linear operator on the finest cells: column `y` is the
/// image of the indicator of cell `y`.
pub fn scalar_operator_matrix(
    domain: &DyadicDomain,
    op: impl Fn(&OperatorField) -> Result<OperatorField>,
) -> Result<DMatrix<f64>> {
    let cells = domain.cell_count(domain.depth());
    let mut m = DMatrix::zeros(cells, cells);
    for y in 0..cells {
        let e = OperatorField::from_fn(*domain, domain.depth(), 1, |x| {
            CMat::from_element(1, 1, C64::new(if x == y { 1.0 } else { 0.0 }, 0.0))
        })?;
        let img = op(&e)?.finest();
        for (x, v) in img.values().iter().enumerate() {
            m[(x, y)] = v[(0, 0)].re;
        }
    }
    Ok(m)
}

/// Sharp constant of `Σ_k ‖T_k f‖_2^2 <= C ‖f‖_2^2` on the grid: the top
/// eigenvalue of `Σ_k T_k^* T_k` acting on scalar functions. The same constant
/// holds for matrix-valued `f`, since `T_k` acts on the spatial variable only.
pub fn square_function_l2_constant(domain: &DyadicDomain, range: &LevelRange) -> Result<f64> {
    let cells = domain.cell_count(domain.depth());
    let mut gram = DMatrix::<f64>::zeros(cells, cells);
    for k in range.levels() {
        let t = scalar_operator_matrix(domain, |f| tk(f, k))?;
        gram += t.transpose() * &t;
    }
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = gram.symmetric_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |m, &v| m.max(v)))
}

/// Lanczos estimate of [`square_function_l2_constant`] for grids too large
/// for the dense eigenproblem. `M_k` has a symmetric stencil, so `T_k^* = T_k`
/// and the Krylov space is built for `Σ_k T_k^2`, with full
/// reorthogonalization. Stops once the top Ritz value moves by less than
/// `rtol` relative, or after `max_iter` steps.
pub fn square_function_l2_constant_iter(
    domain: &DyadicDomain,
    range: &LevelRange,
    seed: u64,
    max_iter: usize,
    rtol: f64,
) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cells = domain.cell_count(domain.depth());
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let f = OperatorField::from_fn(*domain, domain.depth(), 1, |x| CMat::from_element(1, 1, C64::new(v[x], 0.0)))?;
        let mut w = alloc::vec![0.0; cells];
        for (k, t) in range.levels().zip(t_family(&f, range)?) {
            for (a, m) in w.iter_mut().zip(tk(&t, k)?.values()) {
                *a += m[(0, 0)].re;
            }
        }
        Ok(w)
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q: Vec<f64> = (0..cells).map(|_| rng.random::<f64>() - 0.5).collect();
    let nq = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut top = 0.0;
    for _ in 0..max_iter.max(1).min(cells) {
        let mut w = apply(&q)?;
        let a = dot(&q, &w);
        basis.push(q);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
            0 => alpha[i],
            1 => beta[i.min(j)],
            _ => 0.0,
        });
        let next = t.symmetric_eigenvalues().iter().fold(0.0f64, |acc, &v| acc.max(v));
        let done = m > 1 && (next - top).abs() <= rtol * next.abs();
        top = next;
        let bnorm = dot(&w, &w).sqrt();
        if done || bnorm <= 1e-14 * next.abs().max(1.0) {
            break;
        }
        beta.push(bnorm);
        q = w.into_iter().map(|x| x / bnorm).collect();
    }
    Ok(top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c, hermitian_part, HermMatrix};
    use crate::grid::ball_cells;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_field(rng: &mut ChaCha8Rng, dom: DyadicDomain, n: usize) -> OperatorField {
        OperatorField::from_fn(dom, dom.depth(), n, |_| {
            let m = CMat::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            hermitian_part(&m)
        })
        .unwrap()
    }

    fn psd_field(rng: &mut ChaCha8Rng, dom: DyadicDomain, n: usize) -> OperatorField {
        random_field(rng, dom, n).map(|m| m * m)
    }

    fn diff(a: &OperatorField, b: &OperatorField) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    fn domains() -> [DyadicDomain; 3] {
        [
            DyadicDomain::periodic(1, 6).unwrap(),
            DyadicDomain::periodic(2, 4).unwrap(),
            DyadicDomain::new(1, 6, BoundaryMode::Interior).unwrap(),
        ]
    }

    #[test]
    fn cond_exp_fixed_points_and_tower() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dom in domains() {
            let f = random_field(&mut rng, dom, 2);
            assert_eq!(cond_exp(&f, dom.depth()).unwrap(), f);
            let a = OperatorField::constant(dom, HermMatrix::from_real_diagonal(&[1.0, 2.0]).into_matrix());
            for k in 0..=dom.depth() {
                assert!(diff(&cond_exp(&a, k).unwrap(), &a) == 0.0);
            }
            for k in 0..=dom.depth() {
                for j in 0..=dom.depth() {
                    let kj = cond_exp(&cond_exp(&f, j).unwrap(), k).unwrap();
                    let m = cond_exp(&f, k.min(j)).unwrap();
                    assert!(diff(&kj, &m) < 1e-13);
                }
            }
            assert!(cond_exp(&f, dom.depth() + 1).is_err());
        }
    }

    #[test]
    fn bimodule_property_of_cond_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dom = DyadicDomain::periodic(2, 3).unwrap();
        let f = random_field(&mut rng, dom, 3);
        for k in 0..=3 {
            let a = cond_exp(&random_field(&mut rng, dom, 3), k).unwrap();
            let b = cond_exp(&random_field(&mut rng, dom, 3), k).unwrap();
            let lhs = cond_exp(&f.sandwich(&a, &b).unwrap(), k).unwrap();
            let rhs = cond_exp(&f, k).unwrap().sandwich(&a, &b).unwrap();
            assert!(diff(&lhs, &rhs) < 1e-12);
        }
    }

    /// Direct summation over the weighted ball cells.
    fn ball_avg_direct(f: &OperatorField, k: u32) -> OperatorField {
        let dom = *f.domain();
        let total = BallStencil::new(&dom, k).unwrap().total;
        OperatorField::from_fn(dom, dom.depth(), f.dim(), |x| {
            let mut acc = CMat::zeros(f.dim(), f.dim());
            for (y, w) in ball_cells(&dom, x, k).unwrap() {
                acc += f.at(y).scale(w);
            }
            acc.scale(1.0 / total)
        })
        .unwrap()
    }

    #[test]
    fn prefix_sums_match_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dom in domains() {
            let f = random_field(&mut rng, dom, 2);
            for k in 0..=dom.depth() - 2 {
                let fast = ball_avg(&f, k).unwrap();
                assert!(diff(&fast, &ball_avg_direct(&f, k)) < 1e-12, "k = {k}");
            }
        }
    }

    #[test]
    fn ball_avg_unital_positive_and_trace_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dom in domains() {
            let f = psd_field(&mut rng, dom, 2);
            let one = OperatorField::identity(dom, 2);
            for k in 0..=dom.depth() - 2 {
                let m = ball_avg(&f, k).unwrap();
                assert!(m.values().iter().all(|v| HermMatrix::from_hermitian_unchecked(v.clone()).min_eigenvalue() > -1e-12));
                if dom.mode() == BoundaryMode::Periodic {
                    assert!(diff(&ball_avg(&one, k).unwrap(), &one) < 1e-13);
                    let rel = (m.trace_integral() - f.trace_integral()).abs() / f.trace_integral();
                    assert!(rel < 1e-12);
                }
            }
            assert!(matches!(ball_avg(&f, dom.depth() - 1), Err(Error::Resolution(_))));
        }
    }

    #[test]
    fn ball_avg_scalar_riemann_sum() {
        // continuous average of a step function over [c - r, c + r), wrapped
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
        let f = OperatorField::from_fn(dom, 6, 1, |x| CMat::from_element(1, 1, c(vals[x]))).unwrap();
        for k in 0..=4 {
            let m = ball_avg(&f, k).unwrap();
            let r = 0.5f64.powi(k as i32);
            for x in 0..64 {
                let center = (x as f64 + 0.5) / 64.0;
                // fine quadrature: 64 * 16 points per unit
                let pts = 2048usize >> k;
                let mut s = 0.0;
                for i in 0..pts {
                    let t = center - r + (i as f64 + 0.5) * (2.0 * r / pts as f64);
                    let cell = (t.rem_euclid(1.0) * 64.0).floor() as usize;
                    s += vals[cell];
                }
                assert!((m.values()[x][(0, 0)].re - s / pts as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contractivity_on_random_fields() {
        use crate::algebra::schatten_norm;
        let lp = |f: &OperatorField, p: f64| -> f64 {
            let fine = f.finest();
            let vol = fine.domain().cell_volume(fine.domain().depth());
            if p.is_infinite() {
                return fine.sup_norm();
            }
            let s: f64 = fine.values().iter().map(|v| schatten_norm(v, p).unwrap().powf(p)).sum();
            (s * vol).powf(1.0 / p)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for dom in domains() {
            let f = random_field(&mut rng, dom, 2);
            for p in [1.0, 2.0, f64::INFINITY] {
                for k in 0..=dom.depth() - 2 {
                    assert!(lp(&cond_exp(&f, k).unwrap(), p) <= lp(&f, p) * (1.0 + 1e-12));
                    assert!(lp(&ball_avg(&f, k).unwrap(), p) <= lp(&f, p) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn t_and_r_annihilate_constants_and_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dom in domains().into_iter().filter(|d| d.mode() == BoundaryMode::Periodic) {
            let a = OperatorField::constant(dom, HermMatrix::from_real_diagonal(&[2.0, -1.0]).into_matrix());
            let f = random_field(&mut rng, dom, 2);
            for k in 0..=dom.depth() - 2 {
                assert!(tk(&a, k).unwrap().max_abs() < 1e-13);
                if k >= 1 {
                    assert!(rk(&a, k).unwrap().max_abs() < 1e-13);
                    let [t, d, t1] = rk_terms(&f, k).unwrap();
                    let split = t.add(&d).unwrap().sub(&t1).unwrap();
                    assert!(diff(&split, &rk(&f, k).unwrap()) < 1e-12);
                }
            }
            assert!(rk(&f, 0).is_err());
        }
    }

    #[test]
    fn martingale_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dom in domains() {
            let f = random_field(&mut rng, dom, 2);
            let mut sum = OperatorField::zeros(dom, 0, 2);
            let mut energy = 0.0;
            for n in 1..=dom.depth() {
                let d = mart_diff(&f, n).unwrap();
                for q in 0..dom.cell_count(n - 1) {
                    assert!(crate::algebra::max_abs(&d.cube_integral(n - 1, q)) < 1e-14);
                }
                energy += d.mul(&d).unwrap().trace_integral();
                sum = sum.add(&d).unwrap();
            }
            let centered = f.sub(&cond_exp(&f, 0).unwrap()).unwrap();
            assert!(diff(&sum, &centered) < 1e-12);
            let total = centered.mul(&centered).unwrap().trace_integral();
            assert!((energy - total).abs() < 1e-12 * total);
            assert!(mart_diff(&f, 0).is_err());
        }
    }

    #[test]
    fn mkn_equals_ball_average_on_level_mean_zero_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dom in domains() {
            let f = random_field(&mut rng, dom, 2);
            for k in 0..=dom.depth() - 2 {
                for n in (k + 1)..=dom.depth() {
                    let h = f.sub(&cond_exp(&f, n).unwrap()).unwrap();
                    let m = ball_avg(&h, k).unwrap();
                    let b = mkn(&h, k, n).unwrap();
                    assert!(diff(&m, &b) < 1e-12, "k = {k}, n = {n}");
                }
            }
            assert!(mkn(&f, 2, 2).is_err());
        }
    }

    #[test]
    fn rademacher_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dom = DyadicDomain::periodic(1, 6).unwrap();
        let f = random_field(&mut rng, dom, 2);
        let single = LevelRange::new(&dom, 2, 2).unwrap();
        let t = rademacher_t(&f, &SignPattern::constant(1, 1), &single).unwrap();
        assert!(diff(&t, &tk(&f, 2).unwrap()) == 0.0);

        let range = LevelRange::new(&dom, 0, 3).unwrap();
        let fam = t_family(&f, &range).unwrap();
        let eps = SignPattern::exhaustive(4, 5).unwrap();
        let plus = rademacher_combine(&fam, &eps).unwrap();
        let minus = rademacher_combine(&fam, &eps.negated()).unwrap();
        assert!(plus.add(&minus).unwrap().max_abs() < 1e-14);
        assert!(rademacher_combine(&fam, &SignPattern::constant(3, 1)).is_err());

        // averaging |Σ ε_k T_k f|^2 over all signs gives Σ_k |T_k f|^2
        let patterns = SignPattern::enumerate(4).unwrap();
        let mut avg = OperatorField::zeros(dom, 0, 2);
        for eps in &patterns {
            let t = rademacher_combine(&fam, eps).unwrap();
            avg = avg.add(&t.adjoint().mul(&t).unwrap()).unwrap();
        }
        avg = avg.scale(1.0 / patterns.len() as f64);
        let mut direct = OperatorField::zeros(dom, 0, 2);
        for t in &fam {
            direct = direct.add(&t.adjoint().mul(t).unwrap()).unwrap();
        }
        assert!(diff(&avg, &direct) < 1e-12);
        assert!(SignPattern::enumerate(11).is_err());
        assert!(LevelRange::new(&dom, 0, 5).is_err());
    }

    #[test]
    fn l2_constant_is_stable_under_refinement() {
        let a = DyadicDomain::periodic(1, 6).unwrap();
        let b = DyadicDomain::periodic(1, 7).unwrap();
        let ca = square_function_l2_constant(&a, &LevelRange::new(&a, 0, 4).unwrap()).unwrap();
        let cb = square_function_l2_constant(&b, &LevelRange::new(&b, 0, 4).unwrap()).unwrap();
        assert!(ca > 1.0 && ca < 4.0);
        assert!((ca / cb - 1.0).abs() < 0.05, "{ca} vs {cb}");
    }

    #[test]
    fn lanczos_matches_dense_constant() {
        for (d, depth) in [(1, 6), (2, 4)] {
            let dom = DyadicDomain::periodic(d, depth).unwrap();
            let range = LevelRange::new(&dom, 0, depth - 2).unwrap();
            let dense = square_function_l2_constant(&dom, &range).unwrap();
            let iter = square_function_l2_constant_iter(&dom, &range, 1, 200, 1e-13).unwrap();
            assert!((iter / dense - 1.0).abs() < 1e-8, "{iter} vs {dense}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn expectations_and_ball_averages_preserve_trace(seed in any::<u64>(), k in 0u32..=4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dom = DyadicDomain::periodic(1, 6).unwrap();
                let f = random_field(&mut rng, dom, 2);
                let phi = f.trace_integral();
                let scale = f.finest().values().iter().map(|v| crate::algebra::trace(&(v * v)).sqrt()).sum::<f64>() / 64.0;
                prop_assert!((cond_exp(&f, k).unwrap().trace_integral() - phi).abs() <= 1e-12 * scale.max(1.0));
                prop_assert!((ball_avg(&f, k).unwrap().trace_integral() - phi).abs() <= 1e-12 * scale.max(1.0));
            }

            #[test]
            fn single_difference_decay(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dom = DyadicDomain::periodic(1, 8).unwrap();
                let f = random_field(&mut rng, dom, 1);
                let l2 = |g: &OperatorField| g.adjoint().mul(g).unwrap().trace_integral().sqrt();
                for n in 1..=8 {
                    let d = mart_diff(&f, n).unwrap();
                    let norm = l2(&d);
                    for k in 0..=6u32 {
                        let r = l2(&tk(&d, k).unwrap()) / norm;
                        prop_assert!(r <= 2.0 * 0.5f64.powf((n as f64 - k as f64).abs() / 2.0) + 1e-12);
                    }
                }
            }
        }
    }
}
