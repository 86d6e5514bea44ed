use proptest::prelude::*;
use vqprofile::cpd::{
    evaluate_events, roc_sweep, run, trapezoid_auc, Categorical, Direction, Hazard, ModelSpec, ScoredSeries, Sequence,
};
use vqprofile::datagen::preprocess::{partition_patients, RobustScalerState};
use vqprofile::downstream::binary_auc;
use vqprofile::numkernel::loss::softmax_rows;
use vqprofile::seed::derive_seed;
use vqprofile::vqmodel::codebook::softmax;
use vqprofile::vqmodel::profile::profile_sequence;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

fn ids(k: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, len)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-700.0f64..700.0, 1..40)) {
        let p = softmax(&xs);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_each_sum_to_one(k in 1usize..8, rows in 1usize..6, seed in any::<u64>()) {
        let logits: Vec<f64> = (0..k * rows).map(|i| ((derive_seed(seed, &i.to_string()) % 2001) as f64 - 1000.0) / 10.0).collect();
        let p = softmax_rows(&logits, k);
        for r in p.chunks(k) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn run_length_rows_are_distributions(
        data in ids(5, 1..60),
        lambda in 2.0f64..1e6,
        alpha in 0.01f64..10.0,
        prune in prop::option::of(1e-12f64..1e-4),
    ) {
        let spec = ModelSpec::Hierarchical(Categorical::new(5, alpha));
        let post = run(&Sequence::Ids(data.clone()), &spec, Hazard::new(lambda).unwrap(), prune).unwrap();
        prop_assert_eq!(post.len(), data.len());
        for t in 1..=post.len() {
            let row = post.dense_row(t);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row[t + 1..].iter().all(|&v| v == 0.0));
        }
        prop_assert!(post.ln_evidence.is_finite());
    }

    #[test]
    fn change_probability_equals_the_hazard(data in ids(4, 2..40), lambda in 2.0f64..1e4) {
        let spec = ModelSpec::Hierarchical(Categorical::new(4, 1.0));
        let post = run(&Sequence::Ids(data), &spec, Hazard::new(lambda).unwrap(), None).unwrap();
        for t in 1..=post.len() {
            prop_assert!((post.dense_row(t)[0] - 1.0 / lambda).abs() < 1e-9);
        }
    }

    #[test]
    fn confusion_counts_partition_the_days(
        alarms in prop::collection::vec(any::<bool>(), 1..80),
        raw_events in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
        window in 1usize..10,
    ) {
        let len = alarms.len();
        let mut events: Vec<usize> = raw_events.iter().map(|i| i.index(len)).collect();
        events.sort_unstable();
        events.dedup();
        let c = evaluate_events(&alarms, &events, window).unwrap();
        prop_assert_eq!(c.tp + c.fn_, events.len());
        let covered = (0..len).filter(|&d| events.iter().any(|&e| d <= e && d + window > e)).count();
        prop_assert_eq!(c.fp + c.tn, len - covered);
        prop_assert!(c.tp <= alarms.iter().filter(|&&a| a).count());
    }

    #[test]
    fn roc_is_monotone_and_bounded(
        series in prop::collection::vec(
            (prop::collection::vec(-5.0f64..5.0, 20..40), prop::collection::vec(0usize..20, 0..4)),
            1..4,
        ),
        above in any::<bool>(),
        window in 1usize..8,
    ) {
        let series: Vec<ScoredSeries> = series
            .into_iter()
            .enumerate()
            .map(|(i, (scores, mut events))| {
                events.sort_unstable();
                events.dedup();
                ScoredSeries { id: i.to_string(), scores, events }
            })
            .collect();
        let dir = if above { Direction::Above } else { Direction::Below };
        let curve = roc_sweep(&series, dir, None, window).unwrap();
        let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.sensitivity)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for w in pts.windows(2) {
            prop_assert!(w[1].1 >= w[0].1 - 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&curve.auc));
        prop_assert!((trapezoid_auc(&mut pts) - curve.auc).abs() < 1e-12);
    }

    #[test]
    fn profile_ids_stay_inside_the_alphabet(codes in ids(64, 1..120), m in 1usize..30) {
        let seq = profile_sequence("s", &codes, None, m).unwrap();
        prop_assert!(seq.top_codes.len() <= m);
        prop_assert!(seq.ids.iter().all(|&i| i < seq.alphabet()));
        for (p, &i) in seq.probs.iter().zip(&seq.ids) {
            prop_assert_eq!(p.len(), seq.alphabet());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(p[i], 1.0);
        }
        for (&c, &i) in codes.iter().zip(&seq.ids) {
            prop_assert_eq!(i == seq.dummy(), !seq.top_codes.contains(&c));
        }
    }

    #[test]
    fn soft_profiles_pool_mass_onto_the_alphabet(
        codes in ids(8, 1..30),
        m in 1usize..6,
        seed in any::<u64>(),
    ) {
        let pseudo: Vec<Vec<f64>> = (0..codes.len())
            .map(|t| softmax(&(0..8).map(|c| (derive_seed(seed, &format!("{t}/{c}")) % 100) as f64 / 10.0).collect::<Vec<_>>()))
            .collect();
        let seq = profile_sequence("s", &codes, Some(&pseudo), m).unwrap();
        for p in &seq.probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaler_inverse_undoes_forward(v in -1e4f64..1e4, median in -100.0f64..100.0, iqr in 0.01f64..50.0) {
        let s = RobustScalerState {
            variables: vec!["a".into(), "b".into()],
            median: vec![median, 0.0],
            iqr: vec![iqr, 1.0],
            scaled: vec![true, false],
        };
        prop_assert!((s.inverse(0, s.forward(0, v)) - v).abs() <= 1e-9 * (1.0 + v.abs()));
        prop_assert_eq!(s.forward(1, v), v);
    }

    #[test]
    fn partition_is_disjoint_and_complete(n in 3usize..40, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
        let p = partition_patients(&ids, (0.7, 0.15), seed).unwrap();
        let mut all: Vec<String> = p.train.iter().chain(&p.validation).chain(&p.test).cloned().collect();
        all.sort();
        prop_assert_eq!(all, ids);
        prop_assert!(!p.train.is_empty() && !p.validation.is_empty() && !p.test.is_empty());
    }

    #[test]
    fn auc_flips_with_the_scores(scores in prop::collection::vec(-3.0f64..3.0, 4..50), flags in prop::collection::vec(any::<bool>(), 50)) {
        let pos: Vec<bool> = flags[..scores.len()].to_vec();
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let a = binary_auc(&scores, &pos).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = binary_auc(&neg, &pos).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_depend_on_label_and_global(global in any::<u64>(), a in "[a-z/]{1,12}", b in "[a-z/]{1,12}") {
        prop_assert_eq!(derive_seed(global, &a), derive_seed(global, &a));
        if a != b {
            prop_assert_ne!(derive_seed(global, &a), derive_seed(global, &b));
        }
    }
}

#[cfg(feature = "cli")]
mod overrides {
    use proptest::prelude::*;
    use vqprofile::cli::config::{apply_override, from_table};

    proptest! {
        #![proptest_config(super::config())]

        #[test]
        fn numeric_overrides_reach_their_field(epochs in 1usize..10_000, alpha in 1e-3f64..1e3, seed in 0u64..i64::MAX as u64) {
            let mut t = toml::Table::new();
            apply_override(&mut t, &format!("train_vq.train.epochs={epochs}")).unwrap();
            apply_override(&mut t, &format!("cpd.alpha={alpha:?}")).unwrap();
            apply_override(&mut t, &format!("seed={seed}")).unwrap();
            let cfg = from_table(t).unwrap();
            prop_assert_eq!(cfg.train_vq.train.epochs, epochs);
            prop_assert_eq!(cfg.cpd.alpha, alpha);
            prop_assert_eq!(cfg.seed, seed);
        }

        #[test]
        fn later_overrides_win(first in 1usize..100, second in 1usize..100) {
            let mut t = toml::Table::new();
            apply_override(&mut t, &format!("profile.profiles={first}")).unwrap();
            apply_override(&mut t, &format!("profile.profiles={second}")).unwrap();
            prop_assert_eq!(from_table(t).unwrap().profile.profiles, second);
        }
    }
}
