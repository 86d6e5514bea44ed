//! Central finite-difference verification of backward passes.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{KernelError, KernelRng, Layer, Mode, Parameter, Sequential, Tensor3};

const STEP: f64 = 1e-5;
/// Denominator floor, so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

/// Anything with a recorded forward and a matching backward.
pub trait GradFragment {
    fn forward_train(&mut self, x: &Tensor3, rng: &mut KernelRng) -> Result<Tensor3, KernelError>;
    fn backward(&mut self, grad: &Tensor3) -> Result<Tensor3, KernelError>;
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter));
}

impl GradFragment for Layer {
    fn forward_train(&mut self, x: &Tensor3, rng: &mut KernelRng) -> Result<Tensor3, KernelError> {
        self.forward(x, Mode::Train, rng)
    }

    fn backward(&mut self, grad: &Tensor3) -> Result<Tensor3, KernelError> {
        Layer::backward(self, grad)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.params_mut().iter_mut().for_each(f);
    }
}

impl GradFragment for Sequential {
    fn forward_train(&mut self, x: &Tensor3, rng: &mut KernelRng) -> Result<Tensor3, KernelError> {
        self.forward(x, Mode::Train, rng)
    }

    fn backward(&mut self, grad: &Tensor3) -> Result<Tensor3, KernelError> {
        Sequential::backward(self, grad)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.params_mut().for_each(f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Location of the largest error, e.g. `"enc.0.weight[4]"` or `"input[7]"`.
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
    pub pass: bool,
    pub error: Option<String>,
}

impl GradCheckReport {
    fn failed(tolerance: f64, err: KernelError) -> Self {
        Self {
            max_rel_err: f64::INFINITY,
            worst: String::new(),
            checked: 0,
            tolerance,
            pass: false,
            error: Some(err.to_string()),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares labelled analytic and numeric gradients.
pub fn compare_gradients(entries: &[(String, f64, f64)], tolerance: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: entries.len(),
        tolerance,
        pass: true,
        error: None,
    };
    for (label, a, n) in entries {
        let e = relative_error(*a, *n);
        if !(e <= report.max_rel_err) {
            report.max_rel_err = e;
            report.worst = label.clone();
        }
    }
    report.pass = report.max_rel_err < tolerance;
    report
}

/// Checks a fragment's parameter and input gradients for the scalar
/// `sum(output * proj)` with a fixed random projection.
///
/// The rng is reseeded before every forward so dropout masks repeat.
pub fn grad_check<F: GradFragment + ?Sized>(
    fragment: &mut F,
    input: &Tensor3,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport {
    match run_check(fragment, input, tolerance, seed) {
        Ok(r) => r,
        Err(e) => GradCheckReport::failed(tolerance, e),
    }
}

fn run_check<F: GradFragment + ?Sized>(
    fragment: &mut F,
    input: &Tensor3,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, KernelError> {
    let forward = |frag: &mut F, x: &Tensor3| frag.forward_train(x, &mut KernelRng::seed_from_u64(seed));
    let out = forward(fragment, input)?;
    let mut proj_rng = KernelRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = 1.0 / (out.data().len() as f64).sqrt();
    let proj: Vec<f64> = (0..out.data().len())
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut proj_rng))
        .collect();
    let proj = Tensor3::from_vec(out.shape(), proj)?;
    let objective = |o: &Tensor3| o.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();

    fragment.visit_params(&mut |p| p.zero_grad());
    let input_grad = fragment.backward(&proj)?;

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    fragment.visit_params(&mut |p| {
        if p.trainable {
            analytic.push((p.name.clone(), p.grad.clone()));
        }
    });

    let mut entries = Vec::new();
    for (name, grads) in &analytic {
        for (i, &a) in grads.iter().enumerate() {
            let numeric = {
                let mut eval = |delta: f64| -> Result<f64, KernelError> {
                    fragment.visit_params(&mut |p| {
                        if &p.name == name {
                            p.value[i] += delta;
                        }
                    });
                    let o = forward(fragment, input);
                    fragment.visit_params(&mut |p| {
                        if &p.name == name {
                            p.value[i] -= delta;
                        }
                    });
                    Ok(objective(&o?))
                };
                (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP)
            };
            entries.push((format!("{name}[{i}]"), a, numeric));
        }
    }
    let mut x = input.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let lp = objective(&forward(fragment, &x)?);
        x.data_mut()[i] = orig - STEP;
        let lm = objective(&forward(fragment, &x)?);
        x.data_mut()[i] = orig;
        entries.push((format!("input[{i}]"), input_grad.data()[i], (lp - lm) / (2.0 * STEP)));
    }
    Ok(compare_gradients(&entries, tolerance))
}

/// Checks the gradient of a scalar function of a flat vector.
pub fn grad_check_scalar(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    let (_, grad) = f(x);
    let mut probe = x.to_vec();
    let mut entries = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let lp = f(&probe).0;
        probe[i] = x[i] - STEP;
        let lm = f(&probe).0;
        probe[i] = x[i];
        entries.push((format!("x[{i}]"), grad[i], (lp - lm) / (2.0 * STEP)));
    }
    compare_gradients(&entries, tolerance)
}
