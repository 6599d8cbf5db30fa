mod common;

use common::*;
use proptest::prelude::*;
use vecrep_core::analytics::*;
use vecrep_core::harness::{ConditionsSpec, TABLE1};
use vecrep_core::simcore::monte_carlo_sweep;

/// Independent evaluation of `Σ_{k≥1} (1/k)·Poisson(k; m)` with 200 terms.
fn series_oracle(m: f64) -> f64 {
    let mut p = (-m).exp();
    let mut s = 0.0;
    for k in 1..200 {
        p *= m / k as f64;
        s += p / k as f64;
    }
    s
}

#[test]
fn mean_inverse_matches_independent_series() {
    for m in [5.0, 8.0, 12.5, 20.0] {
        let got = mean_inverse_candidates(m, SeriesMode::Exact).unwrap();
        assert!((got - series_oracle(m)).abs() < 1e-12, "{m}");
    }
}

#[test]
fn approximation_quality_on_grid() {
    let mut g = 4.0;
    while g <= 20.0 {
        check_approximation_quality(g).unwrap();
        g += 0.5;
    }
}

#[test]
fn failure_probability_matches_poisson_oracle() {
    let cond = conditions_with(8.0, 2.0, 2.0, 0.02);
    let pmf = |k: i32| (-8f64).exp() * 8f64.powi(k) / (1..=k).map(f64::from).product::<f64>();
    let (p0, p1, p2) = (pmf(0), pmf(1), pmf(2));
    let oracle = p1 * 0.02 + p2 * 4e-4 + (1.0 - p0 - p1 - p2) * 4e-4;
    assert!((failure_probability(&cond, 2).unwrap() - oracle).abs() < 1e-15);
    let limit: f64 = (1..60).map(|k| pmf(k) * 0.02f64.powi(k)).sum();
    assert!((failure_probability(&cond, 60).unwrap() - limit).abs() < 1e-15);
}

#[test]
fn published_cells_for_theory_argmin() {
    let cell = |l0, r| ConditionsSpec::table1(l0, r).resolve().unwrap();
    assert_eq!(
        theoretical_optimum_search(&cell(2.0, 1.0 / 3.0), 16).unwrap(),
        5
    );
    assert_eq!(theoretical_optimum_search(&cell(2.0, 0.25), 16).unwrap(), 7);
    assert_eq!(theoretical_optimum_search(&cell(4.0, 1.0), 16).unwrap(), 1);
    assert_eq!(optimal_replicas(&cell(2.0, 1.0 / 3.0)).unwrap().k_star, 5);
}

#[test]
fn delay_curve_is_unimodal_on_every_table_cell() {
    for row in &TABLE1 {
        let cond = row.conditions();
        let d: Vec<f64> = (1..=16)
            .map(|k| expected_execution_delay(&cond, k).unwrap())
            .collect();
        let best = d
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(
            d[..=best].windows(2).all(|w| w[1] <= w[0]),
            "{row:?}: {d:?}"
        );
        assert!(d[best..].windows(2).all(|w| w[1] >= w[0]), "{row:?}: {d:?}");
    }
}

#[test]
fn upper_bound_exceeds_measured_rate_at_planned_k() {
    for (i, row) in TABLE1.iter().enumerate() {
        let cond = row.conditions();
        let k = optimal_replicas(&cond).unwrap().k_star;
        let point = monte_carlo_sweep(&cond, &[k], 20_000, 10.0, i as u64).unwrap()[0];
        let bound = arrival_rate_upper_bound(&cond, k).unwrap();
        assert!(
            point.measured_arrival_rate < bound,
            "{row:?}: {} vs {bound}",
            point.measured_arrival_rate
        );
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn failure_probability_lower_bound((g, p_e, k) in failure_inputs()) {
        check_failure_lower_bound(g, p_e, k)?;
    }

    #[test]
    fn approximation_quality(g in 4.0f64..=20.0) {
        check_approximation_quality(g)?;
    }

    #[test]
    fn theorem_one_proportionalities(
        g in 1.0f64..30.0, gt in 0.0f64..10.0, l0 in 0.1f64..8.0, c in 0.1f64..10.0,
    ) {
        let base = conditions_with(g, gt, l0, 0.02);
        let k = near_optimal_replicas(&base);
        let mu = NetworkConditions { mu_c: base.mu_c * c, ..base };
        let lam = NetworkConditions { lambda0: base.lambda0 * c, ..base };
        prop_assert!((near_optimal_replicas(&mu) - c * k).abs() <= 1e-9 * c * k);
        prop_assert!((near_optimal_replicas(&lam) - k / c).abs() <= 1e-9 * k / c);
    }

    #[test]
    fn plan_invariants(g in 1.0f64..30.0, gt in 0.0f64..10.0, l0 in 0.1f64..8.0, theta in 1e-6f64..=1.0) {
        let cond = NetworkConditions { theta_f: theta, ..conditions_with(g, gt, l0, 0.02) };
        let plan = optimal_replicas(&cond).unwrap();
        prop_assert_eq!(plan.k_star, plan.k_tilde_round.max(plan.k_min));
        prop_assert!(plan.k_star >= 1 && plan.k_min >= 1);
        prop_assert_eq!(plan.stable, cond.mu_c - plan.lambda_hat_c > 0.0);
    }

    #[test]
    fn wald_rate_never_exceeds_bound(g in 0.5f64..30.0, gt in 0.0f64..10.0, k in 1u32..=16) {
        let cond = conditions_with(g, gt, 2.0, 0.02);
        let exact = mean_arrival_rate(&cond, k).unwrap();
        prop_assert!(exact <= arrival_rate_upper_bound(&cond, k).unwrap() * (1.0 + 1e-12));
    }
}
