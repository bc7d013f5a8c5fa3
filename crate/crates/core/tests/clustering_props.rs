use evmarket_core::clustering::{
    assign, brute_force_assign, cluster_cs, objective, ClusterProblem,
};
use proptest::prelude::*;

fn problem() -> impl Strategy<Value = ClusterProblem> {
    (1usize..8, 1usize..4)
        .prop_flat_map(|(n, k)| {
            let lo_max = n / k;
            (
                prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), n),
                Just(k),
                0..=lo_max,
                n.div_ceil(k)..=n,
            )
        })
        .prop_map(|(pts, k, lo, hi)| {
            let n = pts.len();
            ClusterProblem::new(
                (0..n).map(|i| format!("P{i}")).collect(),
                pts.into_iter().map(|(a, b)| [a, b]).collect(),
                k,
                lo,
                hi,
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn assignment_is_bounded_optimum(p in problem(), centers in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3)) {
        let centers: Vec<[f64; 2]> = centers.into_iter().take(p.k).map(|(a, b)| [a, b]).collect();
        let got = assign(&p, &centers).unwrap();
        let (_, best) = brute_force_assign(&p, &centers).unwrap();
        let obj = objective(&p, &got, &centers);
        prop_assert!((obj - best).abs() <= 1e-12 * best.max(1.0), "{obj} vs {best}");
    }

    #[test]
    fn clustering_respects_bounds_and_descends(p in problem(), seed in any::<u64>()) {
        let sol = cluster_cs(&p, seed).unwrap();
        prop_assert!(sol.converged);
        for s in sol.cluster_sizes(p.k) {
            prop_assert!(s >= p.size_min && s <= p.size_max);
        }
        for w in sol.iterations.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-12);
        }
        prop_assert_eq!(cluster_cs(&p, seed).unwrap(), sol);
    }
}
