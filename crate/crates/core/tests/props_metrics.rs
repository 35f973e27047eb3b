use hnseg::metrics::{aggregate, tally_labels, EvalReport};
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
    prop::collection::vec(
        (1usize..200).prop_flat_map(|n| (prop::collection::vec(0u8..3, n), prop::collection::vec(0u8..3, n))),
        1..12,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_bounded(cases in pairs()) {
        let ab: Vec<_> = cases.iter().map(|(p, g)| tally_labels(p, g)).collect();
        let ba: Vec<_> = cases.iter().map(|(p, g)| tally_labels(g, p)).collect();
        let x = aggregate(&ab);
        let y = aggregate(&ba);
        prop_assert_eq!(x.per_class, y.per_class);
        prop_assert!(x.per_class.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn case_order_is_irrelevant(cases in pairs(), rot in 0usize..12) {
        let tallies: Vec<_> = cases.iter().map(|(p, g)| tally_labels(p, g)).collect();
        let mut rotated = tallies.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        prop_assert_eq!(aggregate(&tallies).mean.to_bits(), aggregate(&rotated).mean.to_bits());
    }

    #[test]
    fn self_comparison_is_perfect(cases in pairs()) {
        let tallies: Vec<_> = cases.iter().map(|(p, _)| tally_labels(p, p)).collect();
        prop_assert_eq!(aggregate(&tallies).mean, 1.0);
    }

    #[test]
    fn report_csv_has_a_row_per_case(cases in pairs()) {
        let named = cases
            .iter()
            .enumerate()
            .map(|(i, (p, g))| (format!("case_{i:03}"), tally_labels(p, g)))
            .collect();
        let report = EvalReport::from_tallies(named);
        let csv = report.to_csv();
        prop_assert_eq!(csv.lines().filter(|l| l.starts_with("case_")).count(), cases.len());
        prop_assert!(csv.lines().any(|l| l.starts_with("aggregated_mean,")));
    }
}
