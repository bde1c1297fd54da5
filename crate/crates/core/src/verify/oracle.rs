//! Scalar reference implementation on plain `f64` arrays.
//!
//! Nothing here goes through the matrix-valued code paths: averages, ball
//! weights, boundary bands, square functions, distributions and stopping
//! times are recomputed by brute force from their definitions.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::field::OperatorField;
use crate::grid::{BoundaryMode, DyadicDomain};
#[allow(unused_imports)]
use num_traits::Float;

/// Sample count per axis when integrating a disk over a cell.
const SUB: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalarGrid {
    pub dim: u32,
    pub depth: u32,
    pub periodic: bool,
}

impl ScalarGrid {
    pub fn of(domain: &DyadicDomain) -> Self {
        Self { dim: domain.dim(), depth: domain.depth(), periodic: domain.mode() == BoundaryMode::Periodic }
    }

    pub fn side(&self) -> usize {
        1 << self.depth
    }

    pub fn cells(&self) -> usize {
        self.side().pow(self.dim)
    }

    pub fn volume(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    fn pos(&self, x: usize) -> (i64, i64) {
        if self.dim == 1 {
            (x as i64, 0)
        } else {
            ((x / self.side()) as i64, (x % self.side()) as i64)
        }
    }

    /// Cell at plane position `(a, b)` after wrapping or clipping.
    fn cell(&self, a: i64, b: i64) -> Option<usize> {
        let s = self.side() as i64;
        let fix = |v: i64| if self.periodic { Some(v.rem_euclid(s)) } else { (0..s).contains(&v).then_some(v) };
        let a = fix(a)?;
        if self.dim == 1 {
            return Some(a as usize);
        }
        Some((a * s + fix(b)?) as usize)
    }
}

/// Real parts of the finest values of a `1 x 1` field.
pub fn scalar_values(f: &OperatorField) -> Result<Vec<f64>> {
    if f.dim() != 1 {
        return Err(invalid!("the scalar oracle needs n = 1, got n = {}", f.dim()));
    }
    diagonal_entry(f, 0)
}

/// Entry `(i, i)` of every finest value.
pub fn diagonal_entry(f: &OperatorField, i: usize) -> Result<Vec<f64>> {
    if i >= f.dim() {
        return Err(invalid!("entry {i} of a {}-dimensional field", f.dim()));
    }
    let cells = f.domain().cell_count(f.domain().depth());
    Ok((0..cells).map(|x| f.at(x)[(i, i)].re).collect())
}

/// `E_k v`, returned on the finest cells.
pub fn cond_exp(g: &ScalarGrid, v: &[f64], k: u32) -> Vec<f64> {
    let span = 1i64 << (g.depth - k);
    let mut sums: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for (x, &val) in v.iter().enumerate() {
        let (a, b) = g.pos(x);
        let e = sums.entry((a / span, b / span)).or_insert((0.0, 0));
        e.0 += val;
        e.1 += 1;
    }
    (0..v.len())
        .map(|x| {
            let (a, b) = g.pos(x);
            let (s, c) = sums[&(a / span, b / span)];
            s / c as f64
        })
        .collect()
}

/// Ball weights in the plane: `(offset, covered fraction of the cell)`.
pub fn ball_weights(g: &ScalarGrid, k: u32) -> Vec<((i64, i64), f64)> {
    let r = (1u64 << (g.depth - k)) as f64;
    let reach = r as i64 + 1;
    let mut out = Vec::new();
    if g.dim == 1 {
        for o in -reach..=reach {
            let lo = (o as f64 - 0.5).max(-r);
            let hi = (o as f64 + 0.5).min(r);
            if hi > lo {
                out.push(((o, 0), hi - lo));
            }
        }
        return out;
    }
    for a in -reach..=reach {
        for b in -reach..=reach {
            let mut hits = 0;
            for i in 0..SUB {
                for j in 0..SUB {
                    let px = a as f64 - 0.5 + (i as f64 + 0.5) / SUB as f64;
                    let py = b as f64 - 0.5 + (j as f64 + 0.5) / SUB as f64;
                    if px * px + py * py < r * r {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                out.push(((a, b), hits as f64 / (SUB * SUB) as f64));
            }
        }
    }
    out
}

/// `M_k v` with the zero extension outside the window in interior mode.
pub fn ball_avg(g: &ScalarGrid, v: &[f64], k: u32) -> Vec<f64> {
    let w = ball_weights(g, k);
    let total: f64 = w.iter().map(|e| e.1).sum();
    (0..v.len())
        .map(|x| {
            let (a, b) = g.pos(x);
            w.iter().filter_map(|&((oa, ob), wt)| g.cell(a + oa, b + ob).map(|y| wt * v[y])).sum::<f64>() / total
        })
        .collect()
}

pub fn tk(g: &ScalarGrid, v: &[f64], k: u32) -> Vec<f64> {
    let m = ball_avg(g, v, k);
    let e = cond_exp(g, v, k);
    m.iter().zip(&e).map(|(a, b)| a - b).collect()
}

/// `M_{k,n} v`: the ball average restricted to level-`n` plane cubes that the
/// ball covers only in part.
pub fn mkn(g: &ScalarGrid, v: &[f64], k: u32, n: u32) -> Vec<f64> {
    let w = ball_weights(g, k);
    let total: f64 = w.iter().map(|e| e.1).sum();
    let span = 1i64 << (g.depth - n);
    let full_count = (span as usize).pow(g.dim);
    (0..v.len())
        .map(|x| {
            let (a, b) = g.pos(x);
            let mut cubes: BTreeMap<(i64, i64), (usize, bool, f64)> = BTreeMap::new();
            for &((oa, ob), wt) in &w {
                let (pa, pb) = (a + oa, b + ob);
                let key = (pa.div_euclid(span), if g.dim == 1 { 0 } else { pb.div_euclid(span) });
                let e = cubes.entry(key).or_insert((0, true, 0.0));
                e.0 += 1;
                e.1 &= wt == 1.0;
                if let Some(y) = g.cell(pa, pb) {
                    e.2 += wt * v[y];
                }
            }
            cubes.values().filter(|(c, all_one, _)| !(*c == full_count && *all_one)).map(|e| e.2).sum::<f64>() / total
        })
        .collect()
}

/// `(Σ_k |T_k v|^2)^{1/2}` pointwise.
pub fn square_function(g: &ScalarGrid, v: &[f64], levels: &[u32]) -> Vec<f64> {
    let mut acc = alloc::vec![0.0; v.len()];
    for &k in levels {
        for (a, t) in acc.iter_mut().zip(tk(g, v, k)) {
            *a += t * t;
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

pub fn lp_norm(g: &ScalarGrid, v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return v.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    (v.iter().map(|x| x.abs().powf(p)).sum::<f64>() * g.volume()).powf(1.0 / p)
}

/// `|{|v| > λ}|`.
pub fn distribution(g: &ScalarGrid, v: &[f64], lam: f64) -> f64 {
    v.iter().filter(|x| x.abs() > lam).count() as f64 * g.volume()
}

/// `sup_λ λ |{|v| > λ}|`, attained as `λ` rises to one of the values.
pub fn weak_norm(g: &ScalarGrid, v: &[f64]) -> f64 {
    weak_of_atoms(v.iter().map(|x| x.abs()).collect(), g.volume())
}

// Sorted descending, λ just below a[i] sees at least i + 1 atoms.
fn weak_of_atoms(mut a: Vec<f64>, mass: f64) -> f64 {
    a.sort_by(|x, y| y.total_cmp(x));
    a.iter().enumerate().fold(0.0, |best, (i, &x)| best.max(x * (i + 1) as f64 * mass))
}

/// `sup_λ λ P ⊗ |·|(|Σ_k ε_k T_k v| > λ)` over all sign choices.
pub fn weak_norm_rademacher(g: &ScalarGrid, v: &[f64], levels: &[u32]) -> f64 {
    let ts: Vec<Vec<f64>> = levels.iter().map(|&k| tk(g, v, k)).collect();
    let m = levels.len();
    let mut values = Vec::with_capacity(v.len() << m);
    for bits in 0..(1u64 << m) {
        for x in 0..v.len() {
            let s: f64 = ts.iter().enumerate().map(|(j, t)| if bits >> j & 1 == 1 { -t[x] } else { t[x] }).sum();
            values.push(s.abs());
        }
    }
    weak_of_atoms(values, g.volume() / (1u64 << m) as f64)
}

/// Classical stopping time: `q_k(x) = 1` while `E_j v(x) <= λ` for all `1 <= j <= k`.
pub fn stopping_times(g: &ScalarGrid, v: &[f64], lam: f64) -> Vec<Vec<bool>> {
    let mut alive = alloc::vec![true; v.len()];
    let mut out = alloc::vec![alive.clone()];
    for k in 1..=g.depth {
        let e = cond_exp(g, v, k);
        for (a, val) in alive.iter_mut().zip(&e) {
            *a &= *val <= lam;
        }
        out.push(alive.clone());
    }
    out
}

/// `sup_k M_k |v|` over the given levels.
pub fn hl_maximal(g: &ScalarGrid, v: &[f64], levels: &[u32]) -> Vec<f64> {
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let mut out = alloc::vec![0.0f64; v.len()];
    for &k in levels {
        for (o, m) in out.iter_mut().zip(ball_avg(g, &abs, k)) {
            *o = o.max(m);
        }
    }
    out
}

/// Dyadic BMO of a scalar sequence: `(sum form, Gram form)`. The sum form is
/// `sup_Q (avg_Q Σ_k |g_k|^2)^{1/2}`; the Gram form replaces the sum by the top
/// eigenvalue of `(avg_Q g_i g_j)_{ij}`, with `g_k = v_k - avg_Q v_k`.
pub fn bmo(g: &ScalarGrid, seq: &[Vec<f64>]) -> (f64, f64) {
    let m = seq.len();
    let mut best = (0.0f64, 0.0f64);
    for level in 0..=g.depth {
        let span = 1i64 << (g.depth - level);
        let mut members: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for x in 0..g.cells() {
            let (a, b) = g.pos(x);
            members.entry((a / span, b / span)).or_default().push(x);
        }
        for cells in members.values() {
            let w = 1.0 / cells.len() as f64;
            let means: Vec<f64> = seq.iter().map(|s| cells.iter().map(|&x| s[x]).sum::<f64>() * w).collect();
            let mut gram = DMatrix::<f64>::zeros(m, m);
            for &x in cells {
                for i in 0..m {
                    for j in 0..m {
                        gram[(i, j)] += (seq[i][x] - means[i]) * (seq[j][x] - means[j]) * w;
                    }
                }
            }
            let trace: f64 = (0..m).map(|i| gram[(i, i)]).sum();
            let top = gram.symmetric_eigenvalues().iter().fold(0.0f64, |a, &b| a.max(b));
            best.0 = best.0.max(trace.max(0.0).sqrt());
            best.1 = best.1.max(top.max(0.0).sqrt());
        }
    }
    best
}
