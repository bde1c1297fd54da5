//! Acceptance criteria evaluated over run outcomes.
//!
//! Each criterion looks at the reports of every run, whatever run they came
//! from, so the suite layout in the config is free.

use std::collections::BTreeMap;
use std::fmt;

use czlab_core::verify::{self, CheckReport, REGISTRY};

use crate::runner::RunOutcome;

/// Instances per (family, n, K) needed by the reconstruction criterion.
pub const MIN_RECONSTRUCTION_INSTANCES: usize = 100;
/// Largest `K` of the exhaustive `ζ` scan.
pub const ZETA_MAX_DEPTH: u32 = 6;
/// Relative spread allowed between the `L_2` constants at `K = 6` and `K = 8`.
pub const L2_STABILITY: f64 = 0.10;
/// Allowed factor between the spike and scalar-oracle weak constants.
pub const WEAK_AGREEMENT_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Criterion {
    pub index: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:>2} {}: {}", self.index, self.name, self.detail)
    }
}

fn reports<'a>(outcomes: &'a [RunOutcome], check: &str) -> Vec<&'a CheckReport> {
    outcomes.iter().flat_map(|o| &o.reports).filter(|r| r.check_id == check).collect()
}

fn first_failure(rs: &[&CheckReport]) -> Option<String> {
    rs.iter().find(|r| !r.pass).map(|r| {
        let what = match &r.error {
            Some(e) => format!("error {e}"),
            None => format!("measured {:.3e}", r.measured),
        };
        format!("first failure {}/{} on {} seed {}: {what}", r.check_id, r.part, r.instance.family, r.instance.seed)
    })
}

/// All reports of `check` pass, and there is at least one.
fn all_pass(rs: &[&CheckReport], check: &str) -> (bool, String) {
    if rs.is_empty() {
        return (false, format!("no {check} reports"));
    }
    match first_failure(rs) {
        Some(msg) => (false, format!("{} of {} reports pass; {msg}", rs.iter().filter(|r| r.pass).count(), rs.len())),
        None => (true, format!("{} reports pass", rs.len())),
    }
}

fn max_measured<'a>(rs: impl IntoIterator<Item = &'a CheckReport>) -> f64 {
    rs.into_iter().map(|r| r.measured).fold(f64::NEG_INFINITY, f64::max)
}

fn detail_max<'a>(rs: impl IntoIterator<Item = &'a CheckReport>, key: &str) -> Option<f64> {
    rs.into_iter().filter_map(|r| r.details.get(key).copied()).reduce(f64::max)
}

fn simple(index: usize, name: &'static str, outcomes: &[RunOutcome], check: &str) -> Criterion {
    let (pass, detail) = all_pass(&reports(outcomes, check), check);
    Criterion { index, name, pass, detail }
}

fn reconstruction(outcomes: &[RunOutcome]) -> Criterion {
    let rs = reports(outcomes, "cz_reconstruction");
    let (mut pass, mut detail) = all_pass(&rs, "cz_reconstruction");
    // Distinct instances per (family, n, K) at d = 1.
    let mut counts: BTreeMap<(String, usize, u32), std::collections::BTreeSet<u64>> = BTreeMap::new();
    for r in rs.iter().filter(|r| r.instance.d == 1) {
        counts.entry((r.instance.family.clone(), r.instance.n, r.instance.depth)).or_default().insert(r.instance.seed);
    }
    let families: std::collections::BTreeSet<&String> = counts.keys().map(|k| &k.0).collect();
    let mut short = Vec::new();
    for fam in &families {
        for n in [1, 2, 4] {
            for depth in [6, 8] {
                let c = counts.get(&((*fam).clone(), n, depth)).map_or(0, |s| s.len());
                if c < MIN_RECONSTRUCTION_INSTANCES {
                    short.push(format!("{fam} n={n} K={depth}: {c}"));
                }
            }
        }
    }
    if families.is_empty() || !short.is_empty() {
        pass = false;
        detail = format!("{detail}; fewer than {MIN_RECONSTRUCTION_INSTANCES} instances for {}", short.join(", "));
    } else {
        detail = format!("{detail}; {} families x n in {{1,2,4}} x K in {{6,8}}", families.len());
    }
    Criterion { index: 1, name: "cz reconstruction", pass, detail }
}

fn diagonal_estimates(outcomes: &[RunOutcome]) -> Criterion {
    let rs = reports(outcomes, "diagonal_estimates");
    let (mut pass, mut detail) = all_pass(&rs, "diagonal_estimates");
    for d in [1, 2] {
        let sel: Vec<_> = rs.iter().filter(|r| r.instance.d == d).collect();
        if sel.is_empty() {
            pass = false;
            detail.push_str(&format!("; no d={d} reports"));
        } else {
            let ratio = sel.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
            detail.push_str(&format!("; d={d} max ratio {ratio:.3}"));
        }
    }
    Criterion { index: 3, name: "diagonal estimates", pass, detail }
}

fn zeta_support(outcomes: &[RunOutcome]) -> Criterion {
    let rs: Vec<_> = reports(outcomes, "zeta_support").into_iter().filter(|r| r.instance.depth <= ZETA_MAX_DEPTH).collect();
    let (pass, detail) = all_pass(&rs, "zeta_support");
    let mass = rs.iter().filter(|r| r.part == "mass").filter_map(|r| r.ratio).fold(0.0, f64::max);
    Criterion { index: 4, name: "zeta support", pass, detail: format!("{detail}; K <= {ZETA_MAX_DEPTH}; max mass ratio {mass:.3}") }
}

fn per_family_slopes(index: usize, name: &'static str, outcomes: &[RunOutcome], check: &str, parts: &[&str]) -> Criterion {
    let rs = reports(outcomes, check);
    let (mut pass, mut detail) = all_pass(&rs, check);
    let mut worst: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in &rs {
        let e = worst.entry((r.part.clone(), r.instance.family.clone())).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.measured);
    }
    for part in parts {
        if !worst.keys().any(|(p, _)| p == part) {
            pass = false;
            detail.push_str(&format!("; no {part} reports"));
        }
    }
    let slopes: Vec<String> = worst
        .iter()
        .map(|((p, fam), s)| if p.is_empty() { format!("{fam} {s:.2}") } else { format!("{p}/{fam} {s:.2}") })
        .collect();
    Criterion { index, name, pass, detail: format!("{detail}; worst slopes {}", slopes.join(", ")) }
}

fn weak_type(outcomes: &[RunOutcome]) -> Criterion {
    let rs = reports(outcomes, "weak_type_11");
    let (mut pass, mut detail) = all_pass(&rs, "weak_type_11");
    let constants: Vec<_> = rs.iter().copied().filter(|r| r.part == "constant").collect();
    detail.push_str(&format!("; max constant {:.3}", max_measured(constants.iter().copied())));
    // Compared at fixed (d, K, range): the spike family against the scalar
    // oracle constant of the diagonal family.
    let key = |r: &CheckReport| (r.instance.d, r.instance.depth, r.instance.range.as_ref().map(|g| (g.k_lo, g.k_hi)));
    let mut groups = 0;
    let keys: std::collections::BTreeSet<_> = rs.iter().map(|r| key(r)).collect();
    for k in keys {
        let oracle = detail_max(
            rs.iter().copied().filter(|r| key(r) == k && r.part == "scalar_oracle" && r.instance.family == "diagonal"),
            "oracle_constant",
        );
        let spike = detail_max(
            constants.iter().copied().filter(|r| key(r) == k && r.instance.family == "spike" && r.instance.n > 1),
            "sup_over_all_lambda",
        );
        if let (Some(s), Some(o)) = (spike, oracle) {
            let ratio = s / o;
            pass &= o > 0.0 && (1.0 / WEAK_AGREEMENT_FACTOR..=WEAK_AGREEMENT_FACTOR).contains(&ratio);
            groups += 1;
            detail.push_str(&format!("; d={} K={}: spike {s:.3} vs scalar oracle {o:.3} (ratio {ratio:.3})", k.0, k.1));
        }
    }
    if groups == 0 {
        pass = false;
        detail.push_str("; no setting with both a spike constant and a diagonal scalar-oracle constant");
    }
    Criterion { index: 10, name: "weak type (1,1)", pass, detail }
}

fn bmo(outcomes: &[RunOutcome]) -> Criterion {
    let rs = reports(outcomes, "bmo_bound");
    let (pass, detail) = all_pass(&rs, "bmo_bound");
    let frames = max_measured(rs.iter().copied().filter(|r| r.part.starts_with("col_") || r.part.starts_with("row_")));
    let geometry = max_measured(rs.iter().copied().filter(|r| r.part == "geometry"));
    Criterion { index: 11, name: "bmo bound", pass, detail: format!("{detail}; max C {frames:.3}; max geometry C_d {geometry:.3}") }
}

fn l2_stability(outcomes: &[RunOutcome]) -> Criterion {
    let rs = reports(outcomes, "l2_bound");
    let (mut pass, mut detail) = all_pass(&rs, "l2_bound");
    for d in [1, 2] {
        let at = |depth: u32| {
            rs.iter()
                .filter(|r| r.instance.d == d && r.instance.depth == depth)
                .filter(|r| r.instance.range.as_ref().is_some_and(|g| (g.k_lo, g.k_hi) == (0, 4)))
                .map(|r| r.measured)
                .reduce(f64::max)
        };
        match (at(6), at(8)) {
            (Some(a), Some(b)) => {
                let spread = (b / a - 1.0).abs();
                pass &= spread <= L2_STABILITY;
                detail.push_str(&format!("; d={d} C(K=6) {a:.4} C(K=8) {b:.4} spread {:.1}%", 100.0 * spread));
            }
            _ => {
                pass = false;
                detail.push_str(&format!("; d={d} needs K=6 and K=8 over levels 0..=4"));
            }
        }
    }
    Criterion { index: 12, name: "L2 square function", pass, detail }
}

fn maximal_projection(outcomes: &[RunOutcome]) -> Criterion {
    let rs = reports(outcomes, "maximal_projection");
    let (pass, detail) = all_pass(&rs, "maximal_projection");
    let mass = max_measured(rs.iter().copied().filter(|r| r.part == "mass"));
    Criterion { index: 14, name: "maximal projection", pass, detail: format!("{detail}; max C {mass:.3}") }
}

/// Every registered check ran at least once and no report names an
/// unregistered one.
pub fn completeness(outcomes: &[RunOutcome]) -> Criterion {
    let ran: std::collections::BTreeSet<&str> = outcomes.iter().flat_map(|o| &o.reports).map(|r| r.check_id.as_str()).collect();
    let missing: Vec<&str> = REGISTRY.iter().map(|c| c.id).filter(|id| !ran.contains(id)).collect();
    let unknown: Vec<&str> = ran.iter().copied().filter(|id| verify::info(id).is_none()).collect();
    let pass = missing.is_empty() && unknown.is_empty();
    let detail = if pass {
        format!("all {} registered checks ran", REGISTRY.len())
    } else {
        format!("never ran: {missing:?}; unregistered: {unknown:?}")
    };
    Criterion { index: 15, name: "harness completeness", pass, detail }
}

/// The fourteen criteria, in order.
pub fn evaluate(outcomes: &[RunOutcome]) -> Vec<Criterion> {
    vec![
        reconstruction(outcomes),
        simple(2, "cuculescu properties", outcomes, "cuculescu_properties"),
        diagonal_estimates(outcomes),
        zeta_support(outcomes),
        simple(5, "bad cancellation", outcomes, "bad_cancellation"),
        simple(6, "bad annihilation", outcomes, "bad_annihilation"),
        per_family_slopes(7, "boundary decay", outcomes, "boundary_decay", &[""]),
        per_family_slopes(8, "square function decay", outcomes, "square_fn_decay", &["fine", "coarse"]),
        per_family_slopes(9, "pseudo-localization", outcomes, "pseudo_localization", &[""]),
        weak_type(outcomes),
        bmo(outcomes),
        l2_stability(outcomes),
        simple(13, "scalar oracle", outcomes, "scalar_oracle_match"),
        maximal_projection(outcomes),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use czlab_core::grid::DyadicDomain;
    use czlab_core::verify::Instance;

    #[test]
    fn missing_reports_fail_and_failures_are_named() {
        let crit = evaluate(&[]);
        assert_eq!(crit.len(), 14);
        assert!(crit.iter().all(|c| !c.pass));

        let inst = Instance::new("spike", &DyadicDomain::periodic(1, 6).unwrap(), 2, 5);
        let outcome = RunOutcome {
            run: "r".into(),
            reports: vec![
                CheckReport::residual("bad_annihilation", "diagonal", &inst, 1e-14, 1e-10),
                CheckReport::residual("bad_annihilation", "off_diagonal", &inst, 1e-3, 1e-10),
            ],
        };
        let c = &evaluate(std::slice::from_ref(&outcome))[5];
        assert!(!c.pass);
        assert!(c.detail.contains("off_diagonal"), "{}", c.detail);
        assert!(c.to_string().starts_with("FAIL  6 bad annihilation"));
    }
}
