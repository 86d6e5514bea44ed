use vqprofile::datagen::{generate_cohort, prepare, Catalog, CohortConfig, PrepareConfig};
use vqprofile::seed::rng_for;
use vqprofile::vqmodel::{extract_profiles, train, TrainConfig, Variant, VqConfig, VqModel};

fn tiny(variant: Variant) -> (VqModel, Vec<vqprofile::datagen::TimeSeriesSample>) {
    let catalog = Catalog::default_catalog();
    let cfg = CohortConfig {
        n_patients: 4,
        min_length: 64,
        max_length: 64,
        ..CohortConfig::default()
    };
    let (raw, _) = generate_cohort(3, &cfg, &catalog).unwrap();
    let prep = prepare(
        &raw,
        &catalog,
        &PrepareConfig {
            train_fraction: 1.0,
            validation_fraction: 0.0,
            ..PrepareConfig::default()
        },
        3,
    )
    .unwrap();
    let vq = VqConfig {
        variant,
        embedding_dim: 8,
        codebook_size: 16,
        ..VqConfig::default()
    };
    let model = VqModel::new(vq, catalog.binary_flags(), &mut rng_for(3, "test/init")).unwrap();
    (model, prep.train)
}

#[test]
fn loss_halves_on_a_tiny_cohort() {
    let (mut model, samples) = tiny(Variant::Implicit);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &samples, &[], &cfg, 11).unwrap();
    let first = report.epochs.first().unwrap().train_loss;
    let last = report.epochs.last().unwrap().train_loss;
    assert!(last.is_finite());
    assert!(last < 0.5 * first, "first {first} last {last}");
}

#[test]
fn training_is_deterministic_and_profiles_cover_every_day() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (mut a, samples) = tiny(Variant::E2);
    let (mut b, _) = tiny(Variant::E2);
    let ra = train(&mut a, &samples, &[], &cfg, 5).unwrap();
    let rb = train(&mut b, &samples, &[], &cfg, 5).unwrap();
    assert_eq!(ra.epochs, rb.epochs);
    let p = extract_profiles(&a, &samples[0], 20).unwrap();
    assert_eq!(p.len(), samples[0].len());
    assert!(p.ids.iter().all(|&i| i < p.alphabet()));
}
