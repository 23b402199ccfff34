mod common;

use common::*;
use pwnl_core::data::WeightIndicator;
use pwnl_core::lp::{build_fit_lp, build_joint_lp, solve_lp, LinearProgram, LpSolution, LpStatus, RegionView};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest entry of `c + A_ubᵀy − A_eqᵀv`.
fn stationarity(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    let mut g = lp.c.clone();
    for (r, y) in lp.a_ub.iter().zip(&sol.duals_ub) {
        for (&j, &a) in r.idx.iter().zip(&r.val) {
            g[j] += a * y;
        }
    }
    for (r, v) in lp.a_eq.iter().zip(&sol.duals_eq) {
        for (&j, &a) in r.idx.iter().zip(&r.val) {
            g[j] -= a * v;
        }
    }
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn check_kkt(lp: &LinearProgram, sol: &LpSolution, tol: f64) {
    assert_eq!(sol.status, LpStatus::Optimal);
    let scale = sol.objective.abs().max(1.0);
    assert!(lp.max_violation(&sol.x) <= tol, "primal {}", lp.max_violation(&sol.x));
    assert!(sol.duals_ub.iter().all(|&y| y >= -tol));
    assert!(stationarity(lp, sol) <= tol, "stationarity {}", stationarity(lp, sol));
    assert!(lp.complementarity_gap(sol) <= tol * scale);
    assert!((lp.dual_objective(sol) - sol.objective).abs() <= tol * scale);
}

#[test]
fn fit_lp_satisfies_kkt() {
    for (seed, n_z) in [(1, 1), (2, 3)] {
        let ds = random_dataset(80, n_z, seed);
        let lp = build_fit_lp(&ds, &ds.all_indices(), &WeightIndicator::default(), &basis(4))
            .unwrap()
            .lp;
        check_kkt(&lp, &solve_lp(&lp).unwrap(), 1e-6);
    }
}

#[test]
fn joint_lp_satisfies_kkt() {
    let ds = random_dataset(120, 2, 4);
    let views: Vec<RegionView> = (0..3)
        .map(|id| RegionView {
            id,
            idx: (0..ds.len()).filter(|k| k % 3 == id).collect(),
        })
        .collect();
    let prob = build_joint_lp(&ds, &views, &[0, 2], &WeightIndicator::default(), &basis(3)).unwrap();
    check_kkt(&prob.lp, &solve_lp(&prob.lp).unwrap(), 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn optimum_is_the_best_vertex(seed in 0u64..10_000, n in 1usize..4, m in 0usize..5, m_eq in 0usize..2) {
        let m_eq = m_eq.min(n - 1);
        let lp = random_lp(&mut ChaCha8Rng::seed_from_u64(seed), n, m, m_eq);
        let sol = solve_lp(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let best = vertex_min(&lp).unwrap();
        prop_assert!((sol.objective - best).abs() <= 1e-7, "{} vs {}", sol.objective, best);
    }

    #[test]
    fn inequality_duals_are_sensitivities(seed in 0u64..10_000, n in 2usize..5) {
        let lp = random_lp(&mut ChaCha8Rng::seed_from_u64(seed), n, 4, 1);
        let sol = solve_lp(&lp).unwrap();
        let h = 1e-6;
        for i in 0..lp.b_ub.len() {
            let shifted = |d: f64| {
                let mut p = lp.clone();
                p.b_ub[i] += d;
                solve_lp(&p).unwrap().objective
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            prop_assert!((fd + sol.duals_ub[i]).abs() < 1e-4, "row {}: fd {} vs y {}", i, fd, sol.duals_ub[i]);
        }
    }
}
