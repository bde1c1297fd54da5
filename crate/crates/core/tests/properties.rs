use proptest::prelude::*;

use czlab_core::corpus::{generate, CorpusInstance, GeneratorSpec, ScalarProfile};
use czlab_core::grid::{cube_of, DyadicDomain};
use czlab_core::norms::{distribution, sq_norm, weak_l1, Side};
use czlab_core::operators::{ball_avg, cond_exp};
use czlab_core::verify::{run_check, CheckContext};

fn spec(family: usize) -> GeneratorSpec {
    match family {
        0 => GeneratorSpec::Smooth { modes: 3 },
        1 => GeneratorSpec::Spike { support: 0.1 },
        _ => GeneratorSpec::Diagonal { profile: ScalarProfile::Steps { level: 3 } },
    }
}

fn instance(d: u32, depth: u32, family: usize, n: usize, seed: u64) -> CorpusInstance {
    generate(&spec(family), DyadicDomain::periodic(d, depth).unwrap(), n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decomposition_identities_hold(family in 0usize..3, n in 1usize..4, seed in any::<u64>(), factor in 1.0f64..8.0) {
        let ci = instance(1, 5, family, n, seed);
        let ctx = CheckContext { lambda_factor: factor, ..CheckContext::default() };
        for id in ["cz_reconstruction", "cuculescu_properties", "diagonal_estimates", "bad_cancellation", "bad_annihilation"] {
            for r in run_check(id, &ci, &ctx).unwrap() {
                prop_assert!(r.pass, "{}/{} measured {}", r.check_id, r.part, r.measured);
            }
        }
    }

    #[test]
    fn cubes_partition_and_nest(d in 1u32..=2, depth in 2u32..=5, x in any::<usize>()) {
        let dom = DyadicDomain::periodic(d, depth).unwrap();
        let x = x % dom.cell_count(depth);
        let mut prev = cube_of(&dom, x, depth).unwrap().fine_cells(&dom);
        prop_assert_eq!(prev.clone(), vec![x]);
        for k in (0..depth).rev() {
            let cells = cube_of(&dom, x, k).unwrap().fine_cells(&dom);
            prop_assert_eq!(cells.len(), 1usize << (d * (depth - k)));
            prop_assert!(prev.iter().all(|c| cells.contains(c)));
            // Every cell of the cube names the cube as its level-k ancestor.
            for &c in &cells {
                prop_assert_eq!(cube_of(&dom, c, k).unwrap(), cube_of(&dom, x, k).unwrap());
            }
            prev = cells;
        }
    }

    #[test]
    fn averages_preserve_the_trace(d in 1u32..=2, family in 0usize..3, seed in any::<u64>(), k in 0u32..3) {
        let ci = instance(d, 5, family, 2, seed);
        let phi = ci.field.trace_integral();
        let tol = 1e-12 * phi.abs().max(1.0);
        prop_assert!((cond_exp(&ci.field, k).unwrap().trace_integral() - phi).abs() <= tol);
        prop_assert!((ball_avg(&ci.field, k).unwrap().trace_integral() - phi).abs() <= tol);
    }

    #[test]
    fn weak_norm_dominates_every_height(family in 0usize..3, seed in any::<u64>(), lam in 1e-3f64..1e3) {
        let ci = instance(1, 6, family, 2, seed);
        prop_assert!(lam * distribution(&ci.field, lam) <= weak_l1(&ci.field) * (1.0 + 1e-12));
    }

    #[test]
    fn column_norm_is_row_norm_of_adjoints(seed in any::<u64>(), p in 1.0f64..4.0) {
        let seq: Vec<_> = (0..3).map(|i| {
            let f = instance(1, 4, i, 2, seed.wrapping_add(i as u64)).field;
            f.mul(&ball_avg(&f, 1).unwrap()).unwrap()
        }).collect();
        let adj: Vec<_> = seq.iter().map(|f| f.adjoint()).collect();
        let col = sq_norm(&seq, p, Side::Col).unwrap();
        let row = sq_norm(&adj, p, Side::Row).unwrap();
        prop_assert!((col - row).abs() <= 1e-10 * col.max(1.0), "{} vs {}", col, row);
    }
}
