//! Generators for the test corpus: smooth positive fields, spikes, diagonal
//! embeddings of scalar functions and martingales with prescribed differences.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{op_norm, CMat, ProjMatrix, C64};
use crate::error::{invalid, Result};
use crate::field::{OperatorField, ProjectionField};
use crate::grid::DyadicDomain;
use crate::norms::lp_norm;
use crate::operators::mart_diff;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Random spectral synthesis `Σ_j (1 + cos(2π ω_j·x + θ_j)) B_j B_j^*`.
    Smooth {
        #[serde(default = "default_modes")]
        modes: usize,
    },
    /// Random unit-norm positive matrices on a set of cells of measure
    /// `support`, normalized to `‖f‖_1 = 1`.
    Spike { support: f64 },
    /// `diag(f_1, …, f_n)` with scalar entries drawn from `profile`.
    Diagonal { profile: ScalarProfile },
    /// Martingale `h` whose differences `dh_{k+s}` sit under level-`k`
    /// projections; see [`adversarial`].
    Adversarial { s: u32 },
}

fn default_modes() -> usize {
    3
}

impl GeneratorSpec {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Smooth { .. } => "smooth",
            Self::Spike { .. } => "spike",
            Self::Diagonal { .. } => "diagonal",
            Self::Adversarial { .. } => "adversarial",
        }
    }
}

/// Nonnegative scalar profiles for the diagonal family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarProfile {
    /// `1_{[lo, hi)}` in the first coordinate; the same on every diagonal entry.
    Indicator { lo: f64, hi: f64 },
    /// Scalar spikes on cells of measure `support`, `‖f_i‖_1 = 1/n`.
    Spike { support: f64 },
    /// Random exponential step function constant on level-`level` cubes.
    Steps { level: u32 },
    Smooth {
        #[serde(default = "default_modes")]
        modes: usize,
    },
}

/// A generated field with its descriptor.
#[derive(Clone, Debug)]
pub struct CorpusInstance {
    pub family: String,
    pub seed: u64,
    pub field: OperatorField,
    /// Family parameters, e.g. `height` and `support` for spikes.
    pub params: BTreeMap<String, f64>,
}

/// Seed of the `i`-th instance of a batch (splitmix64 of the pair).
pub fn instance_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// `B B^* / n` for a complex Gaussian `B`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let b = gaussian(rng, n, n);
    (&b * b.adjoint()).scale(1.0 / n as f64)
}

/// Projection onto the span of `r` Gaussian vectors.
pub fn random_projection(rng: &mut ChaCha8Rng, n: usize, r: usize) -> ProjMatrix {
    if r == 0 {
        return ProjMatrix::zero(n);
    }
    let q = gaussian(rng, n, r.min(n)).qr().q();
    ProjMatrix::from_orthonormal_columns(&q)
}

fn center(domain: &DyadicDomain, x: usize) -> [f64; 2] {
    let side = domain.side(domain.depth()) as f64;
    let c = domain.coords(domain.depth(), x);
    [(c[0] as f64 + 0.5) / side, (c[1] as f64 + 0.5) / side]
}

fn wave(rng: &mut ChaCha8Rng, d: u32) -> impl Fn([f64; 2]) -> f64 {
    let w = [rng.random_range(1..=4) as f64, if d == 2 { rng.random_range(0..=4) as f64 } else { 0.0 }];
    let theta: f64 = rng.random::<f64>() * core::f64::consts::TAU;
    move |p| 1.0 + (core::f64::consts::TAU * (w[0] * p[0] + w[1] * p[1]) + theta).cos()
}

fn distinct_cells(rng: &mut ChaCha8Rng, cells: usize, m: usize) -> Vec<usize> {
    let mut chosen = rand::seq::index::sample(rng, cells, m.clamp(1, cells)).into_vec();
    chosen.sort_unstable();
    chosen
}

fn support_count(domain: &DyadicDomain, support: f64) -> Result<usize> {
    if !(support > 0.0 && support <= 1.0) {
        return Err(invalid!("support fraction must lie in (0, 1], got {support}"));
    }
    let cells = domain.cell_count(domain.depth());
    Ok(((support * cells as f64).round() as usize).clamp(1, cells))
}

fn scalar_profile(rng: &mut ChaCha8Rng, domain: &DyadicDomain, profile: &ScalarProfile, n: usize) -> Result<Vec<f64>> {
    let cells = domain.cell_count(domain.depth());
    let vol = domain.cell_volume(domain.depth());
    Ok(match profile {
        ScalarProfile::Indicator { lo, hi } => {
            (0..cells).map(|x| if (*lo..*hi).contains(&center(domain, x)[0]) { 1.0 } else { 0.0 }).collect()
        }
        ScalarProfile::Spike { support } => {
            let chosen = distinct_cells(rng, cells, support_count(domain, *support)?);
            let h = 1.0 / (n as f64 * chosen.len() as f64 * vol);
            let mut v = alloc::vec![0.0; cells];
            for x in chosen {
                v[x] = h;
            }
            v
        }
        ScalarProfile::Steps { level } => {
            if *level > domain.depth() {
                return Err(invalid!("step level {level} exceeds depth {}", domain.depth()));
            }
            let coarse: Vec<f64> = (0..domain.cell_count(*level)).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            (0..cells).map(|x| coarse[domain.ancestor(domain.depth(), x, *level)]).collect()
        }
        ScalarProfile::Smooth { modes } => {
            let waves: Vec<_> = (0..(*modes).max(1)).map(|_| wave(rng, domain.dim())).collect();
            let amps: Vec<f64> = waves.iter().map(|_| rng.random::<f64>()).collect();
            (0..cells)
                .map(|x| waves.iter().zip(&amps).map(|(w, a)| a * w(center(domain, x))).sum())
                .collect()
        }
    })
}

/// One instance of a positive family (or the martingale `h` of the
/// adversarial family).
pub fn generate(spec: &GeneratorSpec, domain: DyadicDomain, n: usize, seed: u64) -> Result<CorpusInstance> {
    if n == 0 {
        return Err(invalid!("matrix size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = domain.cell_count(domain.depth());
    let vol = domain.cell_volume(domain.depth());
    let mut params = BTreeMap::new();
    let field = match spec {
        GeneratorSpec::Smooth { modes } => {
            let terms: Vec<_> = (0..(*modes).max(1)).map(|_| (wave(&mut rng, domain.dim()), random_psd(&mut rng, n))).collect();
            params.insert("modes".into(), terms.len() as f64);
            OperatorField::from_fn(domain, domain.depth(), n, |x| {
                let p = center(&domain, x);
                terms.iter().fold(CMat::zeros(n, n), |acc, (w, b)| acc + b.scale(w(p)))
            })?
        }
        GeneratorSpec::Spike { support } => {
            let chosen = distinct_cells(&mut rng, cells, support_count(&domain, *support)?);
            let mut values = alloc::vec![CMat::zeros(n, n); cells];
            for &x in &chosen {
                let p = random_psd(&mut rng, n);
                values[x] = p.scale(1.0 / op_norm(&p).max(f64::MIN_POSITIVE));
            }
            let raw = OperatorField::new(domain, domain.depth(), values)?;
            let f = raw.scale(1.0 / lp_norm(&raw, 1.0)?);
            params.insert("support".into(), chosen.len() as f64 * vol);
            params.insert("height".into(), f.sup_norm());
            f
        }
        GeneratorSpec::Diagonal { profile } => {
            let deterministic = matches!(profile, ScalarProfile::Indicator { .. });
            let first = scalar_profile(&mut rng, &domain, profile, n)?;
            let mut entries = alloc::vec![first];
            for _ in 1..n {
                let next = if deterministic { entries[0].clone() } else { scalar_profile(&mut rng, &domain, profile, n)? };
                entries.push(next);
            }
            OperatorField::from_fn(domain, domain.depth(), n, |x| {
                CMat::from_fn(n, n, |i, j| if i == j { C64::new(entries[i][x], 0.0) } else { C64::new(0.0, 0.0) })
            })?
        }
        GeneratorSpec::Adversarial { s } => {
            let inst = adversarial(domain, n, *s, seed)?;
            params.insert("s".into(), *s as f64);
            params.insert("levels".into(), inst.active_levels.len() as f64);
            inst.h
        }
    };
    Ok(CorpusInstance { family: spec.family().into(), seed, field, params })
}

/// `count` instances with seeds derived from `seed`.
pub fn generate_many(spec: &GeneratorSpec, domain: DyadicDomain, n: usize, count: usize, seed: u64) -> Result<Vec<CorpusInstance>> {
    (0..count as u64).map(|i| generate(spec, domain, n, instance_seed(seed, i))).collect()
}

/// A martingale `h` with `dh_{k+s} = A_k dh_{k+s}` for projection fields
/// `A_k ∈ N_k`, together with the data needed for the pseudo-localization
/// estimate.
#[derive(Clone, Debug)]
pub struct PseudoLocInstance {
    pub s: u32,
    pub h: OperatorField,
    /// `dh[m]` for `m = 0..=K` (`dh[0] = E_0 h`).
    pub dh: Vec<OperatorField>,
    /// `A_k` at level `k` for `k = 0..=K`.
    pub a: Vec<ProjectionField>,
    pub active_levels: Vec<u32>,
}

/// Lowest level carrying a nonzero `A_k`: below it `5Q` covers the torus.
pub const ADVERSARIAL_MIN_LEVEL: u32 = 3;

/// A random level-3 cube `Q_3` is fixed, and for each `k` in `3..=K-s`, `A_k`
/// is a random projection of rank `⌈n/2⌉` on one random level-`k` cube inside
/// `Q_3` and zero elsewhere; `dh_{k+s} = A_k · D_{k+s}X` for a Gaussian field
/// `X`. Every `5Q_k` then lies in `5Q_3`, so `A_{h,s}^⊥` keeps the complement
/// of `5Q_3` for all `s`.
pub fn adversarial(domain: DyadicDomain, n: usize, s: u32, seed: u64) -> Result<PseudoLocInstance> {
    if s == 0 {
        return Err(invalid!("s must be at least 1"));
    }
    let depth = domain.depth();
    if depth < ADVERSARIAL_MIN_LEVEL + s {
        return Err(invalid!("depth {depth} leaves no level k >= {ADVERSARIAL_MIN_LEVEL} with k + {s} <= K"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = n.div_ceil(2);
    let mut a: Vec<ProjectionField> = Vec::new();
    for k in 0..=depth {
        let zero = ProjectionField::new(ProjectionField::zero(domain, n).field().refine(k)?)?;
        a.push(zero);
    }
    let mut dh: Vec<OperatorField> = (0..=depth).map(|m| OperatorField::zeros(domain, m, n)).collect();
    let mut active = Vec::new();
    let root = domain.coords(ADVERSARIAL_MIN_LEVEL, rng.random_range(0..domain.cell_count(ADVERSARIAL_MIN_LEVEL)));
    for k in ADVERSARIAL_MIN_LEVEL..=(depth - s) {
        let span = 1usize << (k - ADVERSARIAL_MIN_LEVEL);
        let mut c = [root[0] * span + rng.random_range(0..span), 0];
        if domain.dim() == 2 {
            c[1] = root[1] * span + rng.random_range(0..span);
        }
        let picked = domain.index(k, c);
        let ps: Vec<ProjMatrix> = (0..domain.cell_count(k))
            .map(|q| if q == picked { random_projection(&mut rng, n, rank) } else { ProjMatrix::zero(n) })
            .collect();
        let ak = ProjectionField::from_projections(domain, k, ps)?;
        let x = OperatorField::from_fn(domain, depth, n, |_| gaussian(&mut rng, n, n))?;
        let m = k + s;
        dh[m as usize] = ak.field().mul(&mart_diff(&x, m)?)?;
        a[k as usize] = ak;
        active.push(k);
    }
    let h = OperatorField::sum(domain, n, dh.iter())?.finest();
    Ok(PseudoLocInstance { s, h, dh, a, active_levels: active })
}
