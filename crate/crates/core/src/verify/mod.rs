//! Numerical checks of the claims, with a scalar oracle, report lines and
//! decay fits.

pub mod checks;
pub mod oracle;
pub mod report;
pub mod sweep;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::algebra::op_norm;
use crate::corpus::{adversarial, CorpusInstance, ADVERSARIAL_MIN_LEVEL};
use crate::czd::{cuculescu, cz_decompose};
use crate::error::{invalid, Result};
use crate::operators::{cond_exp, LevelRange, MAX_EXHAUSTIVE_LEVELS};

pub use report::{Bound, CheckReport, Instance, SCHEMA_VERSION};
pub use sweep::DecaySweep;

/// What a check reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// An identity checked to a fixed residual.
    Exact,
    /// An inequality with an explicit constant.
    Bounded,
    /// A constant or slope measured and compared with a window.
    Empirical,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckInfo {
    pub id: &'static str,
    pub claim: &'static str,
    pub kind: CheckKind,
}

pub const REGISTRY: &[CheckInfo] = &[
    CheckInfo { id: "cz_reconstruction", claim: "f = g_d + g_off + b_d + b_off and each piece equals the sum of its parts", kind: CheckKind::Exact },
    CheckInfo { id: "cuculescu_properties", claim: "q_k commutes with q_{k-1} f_k q_{k-1}, q_k f_k q_k <= λ, λφ(1 - q) <= ‖f‖_1, p_k disjoint", kind: CheckKind::Bounded },
    CheckInfo { id: "diagonal_estimates", claim: "‖g_d‖_2^2 <= 2^d λ ‖f‖_1 and ‖b_d‖_1 <= 2 ‖f‖_1", kind: CheckKind::Bounded },
    CheckInfo { id: "good_offdiag_structure", claim: "Δ_{k+s} g_s = g_{s,k} and ‖g_s‖_2^2 ≲ λ ‖f‖_1", kind: CheckKind::Exact },
    CheckInfo { id: "zeta_support", claim: "λφ(1 - ζ) <= 5^d ‖f‖_1 and ζ vanishes on 5Q where p_Q does not", kind: CheckKind::Bounded },
    CheckInfo { id: "bad_cancellation", claim: "b_{i,j} has mean zero on Q_{i∨j} and ζ b_{i,j} ζ = 0 near x", kind: CheckKind::Exact },
    CheckInfo { id: "bad_annihilation", claim: "ζ T_k b_n ζ = 0 and ζ T_k b_{n,s} ζ = 0 for k >= n", kind: CheckKind::Exact },
    CheckInfo { id: "boundary_reduction", claim: "M_k b_n = M_{k,n} b_n for k < n", kind: CheckKind::Exact },
    CheckInfo { id: "bad_offdiag_decay", claim: "M_k b_{n,s} = M_{k,n+s} b_{n,s} for k < n and the decay of ‖M_k b_{n,s}‖_1 in (s, n - k)", kind: CheckKind::Empirical },
    CheckInfo { id: "almost_orthogonality", claim: "hypothesis and conclusion of the almost orthogonality principle", kind: CheckKind::Bounded },
    CheckInfo { id: "boundary_decay", claim: "‖M_{k,n} h‖_2 ≲ 2^{-(n-k)} ‖h‖_2", kind: CheckKind::Empirical },
    CheckInfo { id: "square_fn_decay", claim: "‖T_k df_n‖_2 ≲ 2^{-|n-k|/2} ‖df_n‖_2", kind: CheckKind::Empirical },
    CheckInfo { id: "pseudo_localization", claim: "‖A_{h,s}^⊥ T h‖_2 ≲ s 2^{-s/2} ‖h‖_2", kind: CheckKind::Empirical },
    CheckInfo { id: "weak_type_11", claim: "λ φ̃(|Tf| > λ) ≲ ‖f‖_1", kind: CheckKind::Empirical },
    CheckInfo { id: "bmo_bound", claim: "‖Tf‖_BMO ≲ ‖f‖_∞", kind: CheckKind::Empirical },
    CheckInfo { id: "strong_type_pp", claim: "‖Tf‖_{L_p(ℓ_2^{rc})} ≲ ‖f‖_p", kind: CheckKind::Empirical },
    CheckInfo { id: "l2_bound", claim: "Σ_k ‖T_k f‖_2^2 <= C ‖f‖_2^2", kind: CheckKind::Empirical },
    CheckInfo { id: "r_square_fn_weak", claim: "λ φ̃(|Rf| > λ) ≲ ‖f‖_1", kind: CheckKind::Empirical },
    CheckInfo { id: "maximal_projection", claim: "sup_k ‖q M_k f q‖_∞ <= 3λ and λ φ(1 - q) ≲ ‖f‖_1", kind: CheckKind::Bounded },
    CheckInfo { id: "scalar_oracle_match", claim: "entrywise agreement with the scalar reference", kind: CheckKind::Exact },
];

pub fn info(id: &str) -> Option<&'static CheckInfo> {
    REGISTRY.iter().find(|c| c.id == id)
}

/// How `Ω` is realized in Rademacher averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OmegaMode {
    /// All of `{±1}^m`; falls back to sampling beyond the exhaustive limit.
    Exhaustive,
    Sample { count: usize },
}

/// Parameters shared by the checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckContext {
    /// Heights `λ` as multiples of `‖E_0 f‖_∞`.
    pub lambda_factors: Vec<f64>,
    /// Factor giving the `λ` of the single-height checks.
    pub lambda_factor: f64,
    /// Absolute `λ` of the single-height checks, overriding the factor.
    pub lambda: Option<f64>,
    /// Level range; the full admissible range when absent.
    pub range: Option<LevelRange>,
    pub omega: OmegaMode,
    pub p_list: Vec<f64>,
    /// Cubes sampled per level in the BMO locality scan.
    pub bmo_cubes: usize,
    /// Seeds per `s` in the pseudo-localization sweep.
    pub pseudo_loc_seeds: usize,
}

impl Default for CheckContext {
    fn default() -> Self {
        Self {
            lambda_factors: alloc::vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            lambda_factor: 1.25,
            lambda: None,
            range: None,
            omega: OmegaMode::Exhaustive,
            p_list: alloc::vec![1.5, 2.0, 4.0],
            bmo_cubes: 4,
            pseudo_loc_seeds: 2,
        }
    }
}

impl CheckContext {
    pub fn range_for(&self, domain: &crate::grid::DyadicDomain) -> Result<LevelRange> {
        match self.range {
            Some(r) => LevelRange::new(domain, r.k_lo, r.k_hi),
            None => LevelRange::full(domain),
        }
    }

    fn patterns(&self, m: usize, seed: u64) -> Result<Vec<crate::operators::SignPattern>> {
        match self.omega {
            OmegaMode::Exhaustive if m <= MAX_EXHAUSTIVE_LEVELS => checks::sign_space(m, None, seed),
            OmegaMode::Exhaustive => checks::sign_space(m, Some(1 << MAX_EXHAUSTIVE_LEVELS), seed),
            OmegaMode::Sample { count } => checks::sign_space(m, Some(count), seed),
        }
    }
}

/// Level held fixed in both regimes of the square-function decay sweep.
pub const SQUARE_FN_FIXED_LEVEL: u32 = 2;

/// Runs check `id` on one corpus instance.
pub fn run_check(id: &str, ci: &CorpusInstance, ctx: &CheckContext) -> Result<Vec<CheckReport>> {
    let f = &ci.field;
    let dom = *f.domain();
    let range = ctx.range_for(&dom)?;
    let base = op_norm(&cond_exp(f, 0)?.values()[0]);
    let lam = ctx.lambda.unwrap_or(ctx.lambda_factor * base);
    let inst = Instance::of(ci).with_range(range);
    let at = inst.clone().with_lambda(lam);
    let bundle = || {
        if lam <= 0.0 {
            return Err(invalid!("λ must be positive; the field has zero mean"));
        }
        cz_decompose(f, lam)
    };
    match id {
        "cz_reconstruction" => checks::cz_reconstruction(&bundle()?, &at),
        "cuculescu_properties" => checks::cuculescu_properties(f, &cuculescu(f, lam)?, &at),
        "diagonal_estimates" => checks::diagonal_estimates(&bundle()?, &at),
        "good_offdiag_structure" => checks::good_offdiag_structure(&bundle()?, &at),
        "zeta_support" => checks::zeta_support(&bundle()?, &at),
        "bad_cancellation" => checks::bad_cancellation(&bundle()?, &at),
        "bad_annihilation" => checks::bad_annihilation(&bundle()?, &range, &at),
        "boundary_reduction" => checks::boundary_reduction(&bundle()?, &range, &at),
        "bad_offdiag_decay" => checks::bad_offdiag_decay(&bundle()?, &range, &at),
        "almost_orthogonality" => {
            let mut out = checks::orthogonality_martingale(f, &inst)?;
            out.extend(checks::orthogonality_square_fn(f, &range, &inst)?);
            out.extend(checks::orthogonality_bad_diag(&bundle()?, &range, &at)?);
            Ok(out)
        }
        "boundary_decay" => checks::boundary_decay(f, dom.depth() - 1, &range, &inst),
        "square_fn_decay" => {
            let fixed = SQUARE_FN_FIXED_LEVEL.clamp(range.k_lo.max(1), range.k_hi);
            let mut out = checks::square_fn_decay(f, checks::Regime::Fine, fixed, &range, &inst)?;
            out.extend(checks::square_fn_decay(f, checks::Regime::Coarse, fixed, &range, &inst)?);
            Ok(out)
        }
        "pseudo_localization" => {
            let s_max = dom.depth().saturating_sub(ADVERSARIAL_MIN_LEVEL).min(6);
            let mut instances = Vec::new();
            for s in 1..=s_max {
                for i in 0..ctx.pseudo_loc_seeds.max(1) {
                    let seed = crate::corpus::instance_seed(ci.seed, (s as u64) << 32 | i as u64);
                    instances.push(adversarial(dom, f.dim(), s, seed)?);
                }
            }
            let inst = Instance::new("adversarial", &dom, f.dim(), ci.seed).with_range(range);
            checks::pseudo_localization(&instances, &range, &inst)
        }
        "weak_type_11" => {
            let patterns = ctx.patterns(range.len(), ci.seed)?;
            checks::weak_type_11(f, &ctx.lambda_factors, &range, &patterns, &inst)
        }
        "bmo_bound" => checks::bmo_bound(f, &range, ctx.bmo_cubes, &inst),
        "strong_type_pp" => checks::strong_type_pp(f, &ctx.p_list, &range, None, &inst),
        "l2_bound" => checks::l2_bound(&dom, &range, &inst),
        "r_square_fn_weak" => checks::r_square_fn_weak(f, &range, |m| ctx.patterns(m, ci.seed), &inst),
        "maximal_projection" => checks::maximal_projection_check(f, lam, &range, &at),
        "scalar_oracle_match" => checks::scalar_oracle_match(f, lam, &range, &at),
        _ => Err(invalid!("unknown check {id}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, GeneratorSpec};
    use crate::grid::DyadicDomain;

    #[test]
    fn every_check_runs_and_passes_on_a_spike() {
        let dom = DyadicDomain::periodic(1, 9).unwrap();
        let ci = generate(&GeneratorSpec::Spike { support: 0.05 }, dom, 2, 5).unwrap();
        let ctx = CheckContext { lambda_factors: alloc::vec![1.0, 4.0], ..CheckContext::default() };
        for c in REGISTRY {
            let reports = run_check(c.id, &ci, &ctx).unwrap();
            assert!(!reports.is_empty());
            for r in reports {
                assert_eq!(r.check_id, c.id);
                assert!(r.pass, "{} {} measured {} against {:?}", r.check_id, r.part, r.measured, r.bound);
            }
        }
    }

    #[test]
    fn unknown_ids_and_small_grids_are_errors() {
        let dom = DyadicDomain::periodic(1, 5).unwrap();
        let ci = generate(&GeneratorSpec::Smooth { modes: 2 }, dom, 1, 1).unwrap();
        assert!(run_check("no_such_check", &ci, &CheckContext::default()).is_err());
        assert!(run_check("pseudo_localization", &ci, &CheckContext::default()).is_err());
    }

    #[test]
    fn registry_ids_are_unique() {
        for (i, a) in REGISTRY.iter().enumerate() {
            assert!(REGISTRY[i + 1..].iter().all(|b| b.id != a.id));
            assert!(info(a.id).is_some());
        }
    }
}
