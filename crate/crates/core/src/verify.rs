//! Oracle suites shared by the `verify` command and the acceptance tests.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cpd::{brute_force_oracle, run, Categorical, Hazard, ModelSpec, Multinomial, NiwPrior, Sequence};
use crate::datagen::{corrupt_mcar, generate_cohort, prepare, Catalog, CohortConfig, McarConfig, PrepareConfig, OBSERVED};
use crate::numkernel::gradcheck::grad_check_scalar;
use crate::numkernel::loss::cross_entropy;
use crate::numkernel::{grad_check, masked_mse, weighted_bce_logits, LayerSpec, Sequential, Shape3, Tensor3};
use crate::seed::rng_for;
use crate::vqmodel::codebook::positions_to_tensor;
use crate::vqmodel::{Batch, Codebook, Variant, VqConfig, VqModel};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> (bool, String)) -> SuiteReport {
    let start = Instant::now();
    let (pass, detail) = f();
    SuiteReport {
        name: name.into(),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_tensor(shape: Shape3, rng: &mut impl Rng) -> Tensor3 {
    let n = shape.batch * shape.channels * shape.len;
    Tensor3::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("matching length")
}

fn layer_cases() -> Vec<(&'static str, Vec<LayerSpec>, Shape3)> {
    let s = Shape3::new(3, 3, 6);
    vec![
        ("conv1d", vec![LayerSpec::conv3(3, 4)], s),
        ("conv1d_strided", vec![LayerSpec::Conv1d { in_channels: 3, out_channels: 2, kernel: 4, stride: 2, padding: 1 }], s),
        ("deconv1d", vec![LayerSpec::deconv3(3, 4)], s),
        ("deconv1d_strided", vec![LayerSpec::Deconv1d { in_channels: 3, out_channels: 2, kernel: 4, stride: 2, padding: 1 }], s),
        ("batchnorm1d", vec![LayerSpec::Batchnorm1d { channels: 3 }], s),
        ("relu", vec![LayerSpec::conv3(3, 3), LayerSpec::Relu], s),
        ("identity", vec![LayerSpec::conv3(3, 3), LayerSpec::Identity], s),
        ("maxpool1d", vec![LayerSpec::conv3(3, 3), LayerSpec::Maxpool1d { kernel: 2 }], s),
        ("dropout", vec![LayerSpec::conv3(3, 3), LayerSpec::Dropout { p: 0.25 }], s),
        ("linear", vec![LayerSpec::Linear { in_features: 18, out_features: 5 }], s),
    ]
}

/// Finite-difference checks of every layer kind and loss for each seed.
pub fn gradient_suite(seeds: std::ops::Range<u64>, tolerance: f64) -> SuiteReport {
    timed("gradient fidelity", || {
        let mut worst = (0.0f64, String::new());
        let mut checked = 0;
        for seed in seeds {
            let mut rng = rng_for(seed, "verify/grad");
            for (name, specs, shape) in layer_cases() {
                let mut net = Sequential::from_specs(name, &specs, &mut rng);
                let x = random_tensor(shape, &mut rng);
                let r = grad_check(&mut net, &x, tolerance, seed);
                checked += 1;
                if !r.pass || r.max_rel_err > worst.0 {
                    worst = (r.max_rel_err.max(if r.pass { 0.0 } else { f64::INFINITY }), format!("{name} seed {seed}: {}", r.worst));
                }
            }
            let n = 12;
            let pred: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let target: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let bits: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
            let mask: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let losses: Vec<(&str, Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>)> = vec![
                ("masked_mse", Box::new(|p: &[f64]| {
                    let l = masked_mse(p, &target, &mask).expect("lengths");
                    (l.value, l.grad)
                })),
                ("weighted_bce_logits", Box::new(|p: &[f64]| {
                    let l = weighted_bce_logits(p, &bits, &mask).expect("lengths");
                    (l.value, l.grad)
                })),
                ("cross_entropy", Box::new(|p: &[f64]| {
                    let l = cross_entropy(p, &labels, 3, None).expect("lengths");
                    (l.value, l.grad)
                })),
            ];
            for (name, f) in losses {
                let r = grad_check_scalar(f, &pred, tolerance);
                checked += 1;
                if !r.pass || r.max_rel_err > worst.0 {
                    worst = (r.max_rel_err.max(if r.pass { 0.0 } else { f64::INFINITY }), format!("{name} seed {seed}: {}", r.worst));
                }
            }
        }
        (
            worst.0 <= tolerance,
            format!("{checked} checks, max relative error {:.2e} at {}", worst.0, worst.1),
        )
    })
}

/// `run` against the enumeration oracle on random short sequences.
pub fn bocpd_oracle_suite(n_sequences: usize, len: usize, lambdas: &[f64], seed: u64) -> SuiteReport {
    timed("BOCPD oracle equivalence", || {
        let mut rng = rng_for(seed, "verify/bocpd");
        let mut max_err = 0.0f64;
        let mut runs = 0;
        let mut failure = None;
        for _ in 0..n_sequences {
            let k = rng.random_range(2..5);
            let ids = Sequence::Ids((0..len).map(|_| rng.random_range(0..k)).collect());
            let s = rng.random_range(1..6u32);
            let counts = Sequence::Counts(
                (0..len)
                    .map(|_| {
                        let mut c = vec![0u32; k];
                        for _ in 0..s {
                            c[rng.random_range(0..k)] += 1;
                        }
                        c
                    })
                    .collect(),
            );
            let dim = rng.random_range(1..4);
            let vectors = Sequence::Vectors((0..len).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect());
            let alpha = rng.random_range(0.2..2.0);
            let cases = [
                (ids, ModelSpec::Hierarchical(Categorical::new(k, alpha))),
                (counts, ModelSpec::Multinomial(Multinomial::new(k, alpha, s))),
                (vectors, ModelSpec::Multivariate { prior: NiwPrior::isotropic(vec![0.0; dim]) }),
            ];
            for (seq, spec) in &cases {
                for &lambda in lambdas {
                    let h = Hazard::new(lambda).expect("valid hazard");
                    match (run(seq, spec, h, None), brute_force_oracle(seq, spec, h)) {
                        (Ok(a), Ok(b)) => {
                            for (x, y) in a.to_dense().iter().zip(b.to_dense()) {
                                max_err = max_err.max((x - y).abs());
                            }
                            runs += 1;
                        }
                        (a, b) => failure = Some(format!("{}: {:?} / {:?}", spec.name(), a.err(), b.err())),
                    }
                }
            }
        }
        match failure {
            Some(f) => (false, f),
            None => (max_err <= 1e-9, format!("{runs} runs, max abs difference {max_err:.2e}")),
        }
    })
}

fn exhaustive_nearest(cb: &Codebook, v: &[f64]) -> usize {
    let mut best = (0usize, f64::INFINITY);
    for j in 0..cb.k {
        let d: f64 = cb.codeword(j).iter().zip(v).map(|(e, x)| (x - e).powi(2)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Batched quantization against a plain scan, and EMA convergence to a
/// planted cluster mean.
pub fn quantizer_suite(n_queries: usize, sizes: &[usize], dim: usize, seed: u64) -> SuiteReport {
    timed("quantizer correctness", || {
        let mut rng = rng_for(seed, "verify/quantizer");
        let mut mismatches = 0;
        for &k in sizes {
            let cb = Codebook::random(k, dim, 1.0, &mut rng);
            let queries: Vec<Vec<f64>> = (0..n_queries).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
            for chunk in queries.chunks(1000) {
                let got = cb.quantize(&positions_to_tensor(chunk)).expect("shape").indices;
                mismatches += chunk.iter().zip(&got).filter(|(q, &g)| exhaustive_nearest(&cb, q) != g).count();
            }
        }
        let mut cb = Codebook::random(8, dim, 1.0, &mut rng);
        cb.decay = 0.99;
        let mean: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        for _ in 0..200 {
            let pts: Vec<Vec<f64>> = (0..64)
                .map(|_| mean.iter().map(|m| m + 1e-4 * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            cb.ema_update(&positions_to_tensor(&pts), &[3; 64]).expect("shape");
        }
        let err = cb.codeword(3).iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        (
            mismatches == 0 && err < 1e-3,
            format!(
                "{mismatches} mismatches over {} queries; EMA error {err:.2e} after 200 steps",
                n_queries * sizes.len()
            ),
        )
    })
}

/// Values at mask 0 and mask 2 are overwritten with noise; loss and every
/// gradient must be bit-identical.
pub fn zero_imputation_suite(seed: u64) -> SuiteReport {
    timed("zero-imputation invariance", || {
        let catalog = Catalog::default_catalog();
        let cfg = CohortConfig {
            n_patients: 3,
            min_length: 40,
            max_length: 40,
            ..CohortConfig::default()
        };
        let (raw, _) = generate_cohort(seed, &cfg, &catalog).expect("valid cohort");
        let prep = prepare(
            &raw,
            &catalog,
            &PrepareConfig {
                train_fraction: 1.0,
                validation_fraction: 0.0,
                ..PrepareConfig::default()
            },
            seed,
        )
        .expect("prepared");
        let mut rng = rng_for(seed, "verify/zero-imputation");
        let clean: Vec<_> = prep.train.iter().map(|s| corrupt_mcar(s, &catalog, &McarConfig::default(), seed).expect("corrupt")).collect();
        let mut noisy = clean.clone();
        for s in &mut noisy {
            for f in 0..s.n_vars() {
                for t in 0..s.len() {
                    if s.mask[f][t] != OBSERVED {
                        s.values[f][t] = 1e3 * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        let windows = |v: &[crate::datagen::TimeSeriesSample]| Batch::from_windows(&v.iter().map(|s| (s, 0..s.len())).collect::<Vec<_>>());
        let (a, b) = (windows(&clean).expect("batch"), windows(&noisy).expect("batch"));
        let mut failures = Vec::new();
        for v in Variant::all() {
            let vq = VqConfig {
                variant: v,
                embedding_dim: 16,
                codebook_size: 32,
                ..VqConfig::default()
            };
            let mut m1 = VqModel::new(vq, catalog.binary_flags(), &mut rng_for(seed, "verify/model")).expect("model");
            let mut m2 = m1.clone();
            let (l1, _) = m1.compute_gradients(&a, &mut rng_for(seed, "verify/dropout")).expect("grad");
            let (l2, _) = m2.compute_gradients(&b, &mut rng_for(seed, "verify/dropout")).expect("grad");
            let same_grads = m1.params().iter().zip(m2.params()).all(|(p, q)| {
                p.grad.iter().zip(&q.grad).all(|(x, y)| x.to_bits() == y.to_bits())
            });
            if l1.total.to_bits() != l2.total.to_bits() || !same_grads {
                failures.push(v.name());
            }
        }
        if failures.is_empty() {
            (true, "loss and gradients bit-identical for implicit, E1, E2".into())
        } else {
            (false, format!("differences for {failures:?}"))
        }
    })
}

/// The default release gate.
pub fn all_suites() -> Vec<SuiteReport> {
    vec![
        gradient_suite(0..20, 1e-4),
        bocpd_oracle_suite(50, 8, &[10.0, 1e3], 0),
        quantizer_suite(100_000, &[256, 512, 1024], 16, 0),
        zero_imputation_suite(0),
    ]
}
