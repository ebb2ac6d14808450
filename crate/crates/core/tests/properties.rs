use nalgebra::DMatrix;
use proptest::prelude::*;

use regimefactor::breaks::{objective_for, BreakSearch};
use regimefactor::evaluate::{mcs, BootstrapOptions, LossPanel, McsStatistic};
use regimefactor::msfactor::{ergodic_probs, hamilton_filter, kim_smoother, TransitionMatrix};
use regimefactor::panel::YearMonth;
use regimefactor::Execution;

fn transition(m: usize) -> impl Strategy<Value = TransitionMatrix> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, m), m).prop_map(|rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        TransitionMatrix::from_rows(&rows).unwrap()
    })
}

fn factor_path(t: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, t).prop_map(|v| DMatrix::from_column_slice(v.len(), 1, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_ssne_never_rises_with_more_breaks(f in factor_path(30..=80)) {
        let (obj, _) = objective_for(&f, None).unwrap();
        let search = BreakSearch::new(&obj, 5, Execution::Sequential).unwrap();
        let parts = search.optimal_partitions(4);
        let values: Vec<f64> = parts.iter().flatten().map(|p| p.ssne).collect();
        prop_assert!((obj.ssne0() - values[0]).abs() <= 1e-9 * (1.0 + obj.ssne0()));
        for w in values.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
        }
    }

    #[test]
    fn break_search_ignores_the_factor_sign(f in factor_path(30..=80)) {
        let (obj, _) = objective_for(&f, None).unwrap();
        let (neg, _) = objective_for(&(-f.clone()), None).unwrap();
        let a = BreakSearch::new(&obj, 5, Execution::Sequential).unwrap().optimal(2).unwrap();
        let b = BreakSearch::new(&neg, 5, Execution::Sequential).unwrap().optimal(2).unwrap();
        prop_assert_eq!(a.breaks, b.breaks);
    }

    #[test]
    fn parallel_search_matches_sequential(f in factor_path(30..=80)) {
        let (obj, _) = objective_for(&f, None).unwrap();
        let s = BreakSearch::new(&obj, 5, Execution::Sequential).unwrap().optimal_partitions(3);
        let p = BreakSearch::new(&obj, 5, Execution::Parallel).unwrap().optimal_partitions(3);
        prop_assert_eq!(s, p);
    }

    #[test]
    fn filtered_and_smoothed_rows_are_distributions(
        p in transition(3),
        dens in prop::collection::vec(1e-3f64..5.0, 3 * 40),
    ) {
        let d = DMatrix::from_row_slice(40, 3, &dens);
        let init = ergodic_probs(&p).unwrap();
        let filtered = hamilton_filter(&d, &p, &init).unwrap().filtered;
        let smoothed = kim_smoother(&filtered, &p).unwrap();
        for probs in [&filtered, &smoothed] {
            for row in probs.row_iter() {
                prop_assert!(row.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
        let last = filtered.nrows() - 1;
        for j in 0..3 {
            prop_assert!((filtered[(last, j)] - smoothed[(last, j)]).abs() < 1e-14);
        }
    }

    #[test]
    fn ergodic_vector_is_stationary(p in transition(4)) {
        let pi = ergodic_probs(&p).unwrap();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..4 {
            let next: f64 = (0..4).map(|i| pi[i] * p.get(i, j)).sum();
            prop_assert!((next - pi[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn ergodic_vector_follows_a_relabeling(p in transition(3)) {
        let perm = [2, 0, 1];
        let pi = ergodic_probs(&p).unwrap();
        let q = ergodic_probs(&p.permuted(&perm)).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            prop_assert!((q[k] - pi[old]).abs() < 1e-10);
        }
    }

    #[test]
    fn mcs_sets_nest_as_alpha_grows(
        losses in prop::collection::vec(0.0f64..2.0, 4 * 60),
        seed in 0u64..1000,
    ) {
        let panel = LossPanel::new(
            DMatrix::from_row_slice(60, 4, &losses),
            (0..4).map(|k| format!("m{k}")).collect(),
            1,
        )
        .unwrap();
        let opts = BootstrapOptions { n_boot: 300, seed, ..Default::default() };
        let mut previous: Option<Vec<usize>> = None;
        for alpha in [0.05, 0.1, 0.25, 0.5] {
            let r = mcs(&panel, alpha, McsStatistic::Tmax, &opts, Execution::Sequential).unwrap();
            prop_assert!(!r.survivors.is_empty());
            prop_assert!(r.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
            if let Some(prev) = &previous {
                prop_assert!(r.survivors.iter().all(|k| prev.contains(k)));
            }
            previous = Some(r.survivors);
        }
    }

    #[test]
    fn month_arithmetic_round_trips(year in 1950i32..2050, month in 1u32..=12, k in -600i64..600) {
        let d = YearMonth::new(year, month).unwrap();
        let e = d.add_months(k);
        prop_assert_eq!(e.months_since(d), k);
        prop_assert_eq!(e.to_string().parse::<YearMonth>().unwrap(), e);
    }
}
