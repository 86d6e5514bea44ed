use vqprofile_demo::{explore, missingness, parse_ids, roc_demo, synthetic_ids, MAX_RUN_LENGTH_SHOWN};

#[test]
fn explorer_rows_are_distributions() {
    let (ids, changes) = synthetic_ids(3, 150, 12, 40, 0.75);
    assert_eq!(changes, vec![40, 80, 120]);
    let v = explore(ids, changes, 100.0, 0.5, "map_ratio", 7).unwrap();
    assert_eq!(v.map.len(), 150);
    assert_eq!(v.scores.len(), 150);
    for (t, row) in v.posterior.iter().enumerate() {
        assert!(row.len() <= MAX_RUN_LENGTH_SHOWN);
        if t + 2 <= MAX_RUN_LENGTH_SHOWN {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn typed_sequences_parse() {
    assert_eq!(parse_ids("0 1, 2\n3").unwrap(), vec![0, 1, 2, 3]);
    assert!(parse_ids("0 x").is_err());
    assert!(explore(vec![], vec![], 100.0, 1.0, "map_ratio", 7).is_err());
}

#[test]
fn roc_curve_is_monotone_and_informative() {
    let r = roc_demo(1, 6, 120, 100.0, "map_ratio", 7, 3).unwrap();
    assert!(r.fpr.windows(2).all(|w| w[0] <= w[1]));
    assert!(r.sensitivity.windows(2).all(|w| w[0] <= w[1]));
    assert!(r.auc > 0.6, "{}", r.auc);
    assert!(roc_demo(1, 2, 120, 100.0, "nonsense", 7, 3).is_err());
}

#[test]
fn corruption_only_hides_observed_entries() {
    let v = missingness(5, 60, 0.3).unwrap();
    assert_eq!(v.variables.len(), 10);
    for grid in [&v.mcar, &v.mnar] {
        for (a, b) in v.original.iter().zip(grid.iter()) {
            for (&x, &y) in a.iter().zip(b) {
                assert!(x == y || (x == 1 && y == 2));
            }
        }
    }
    assert!(v.mcar.iter().flatten().any(|&c| c == 2));
}
