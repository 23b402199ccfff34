mod common;

use common::*;
use pwnl_core::basis::CHECK_GRID;
use pwnl_core::data::{gen_synthetic, WeightIndicator};
use pwnl_core::fit::{certify, fit_region, BOUND_TOL};
use pwnl_core::lp::{build_fit_lp, solve_lp, LpStatus};
use proptest::prelude::*;

#[test]
fn residual_bound_on_random_data() {
    let w = WeightIndicator::default();
    for (seed, n_z) in [(1, 1), (2, 2), (3, 13)] {
        let ds = random_dataset(120, n_z, seed);
        let cfg = basis(4);
        let idx = ds.all_indices();
        let (sub, rep) = fit_region(&ds, &idx, &w, &cfg).unwrap();
        assert!(rep.bound_ok, "n_z {n_z}: {rep:?}");
        for &k in &idx {
            let e = (ds.q(k) - sub.predict(&cfg, ds.z(k), ds.range()).unwrap()).abs() / ds.range().span();
            let bound = rep.j / (cfg.epsilon() * w.weight(ds.tags(k)));
            assert!(e <= bound + BOUND_TOL, "sample {k}: {e} > {bound}");
        }
        assert!(sub.refined_slack(&cfg, CHECK_GRID) >= 0.0);
    }
}

#[test]
fn recovers_in_structure_truth() {
    let truth = wiener_truth(3, 2, 11);
    let ds = gen_synthetic(&truth, 300, 0.0, 4).unwrap();
    let (_, rep) = fit_region(&ds, &ds.all_indices(), &WeightIndicator::UNIT, truth.basis()).unwrap();
    assert!(rep.j <= 1e-6, "J = {}", rep.j);
    assert!(rep.gamma <= 1e-6, "gamma = {}", rep.gamma);
}

#[test]
fn degenerate_data_stays_feasible() {
    for kind in 0..4 {
        let ds = degenerate_dataset(kind, 40, 3, kind as u64);
        let lp = build_fit_lp(&ds, &ds.all_indices(), &WeightIndicator::default(), &basis(10))
            .unwrap()
            .lp;
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "kind {kind}");
    }
}

#[test]
fn order_does_not_change_the_fit() {
    let ds = random_dataset(80, 2, 9);
    let cfg = basis(3);
    let w = WeightIndicator::default();
    let idx = ds.all_indices();
    let mut rev = idx.clone();
    rev.reverse();
    let (_, a) = fit_region(&ds, &idx, &w, &cfg).unwrap();
    let (_, b) = fit_region(&ds, &rev, &w, &cfg).unwrap();
    assert!((a.j - b.j).abs() <= 1e-7 * a.j.max(1.0), "{} vs {}", a.j, b.j);
}

#[test]
fn certify_matches_fit_report() {
    let ds = random_dataset(60, 2, 21);
    let cfg = basis(3);
    let w = WeightIndicator::default();
    let idx = ds.all_indices();
    let (sub, rep) = fit_region(&ds, &idx, &w, &cfg).unwrap();
    let again = certify(&sub, &ds, &idx, &w, &cfg);
    assert_eq!(again.gamma, rep.gamma);
    assert!(again.j <= rep.j + 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cost_grows_with_data(seed in 0u64..1000, n in 20usize..60, extra in 1usize..20) {
        let ds = random_dataset(n + extra, 2, seed);
        let cfg = basis(3);
        let w = WeightIndicator::default();
        let all = ds.all_indices();
        let (_, small) = fit_region(&ds, &all[..n], &w, &cfg).unwrap();
        let (_, big) = fit_region(&ds, &all, &w, &cfg).unwrap();
        prop_assert!(big.j >= small.j - 1e-7 * small.j.max(1.0), "{} < {}", big.j, small.j);
    }
}
