use serde::{Deserialize, Serialize};

use super::KernelError;

/// A named array with its gradient and Adam moment accumulators.
///
/// Buffers (e.g. batchnorm running statistics) are parameters with
/// `trainable = false`; optimizers skip them and backward never writes them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, shape, value)
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient (coupled weight decay).
    pub weight_decay: f64,
    /// Maximum global gradient norm; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

/// Global L2 norm over the gradients of trainable parameters.
pub fn global_grad_norm<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> f64 {
    params
        .into_iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Scales all gradients so the global norm is at most `max_norm`.
///
/// Returns `(norm_before, scale_applied)`.
pub fn clip_grad_norm(params: &mut [&mut Parameter], max_norm: f64) -> (f64, f64) {
    let norm = global_grad_norm(params.iter().map(|p| &**p));
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut().filter(|p| p.trainable) {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
        (norm, scale)
    } else {
        (norm, 1.0)
    }
}

/// Adam with optional coupled L2 weight decay and global-norm clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One optimization step over `params` using their accumulated gradients.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<StepReport, KernelError> {
        for p in params.iter().filter(|p| p.trainable) {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(KernelError::NonFiniteGradient {
                    parameter: p.name.clone(),
                    index: i,
                });
            }
        }
        let (grad_norm, clip_scale) = match self.config.clip_norm {
            Some(max) => clip_grad_norm(params, max),
            None => (global_grad_norm(params.iter().map(|p| &**p)), 1.0),
        };
        self.step += 1;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let Parameter {
                value,
                grad,
                first_moment,
                second_moment,
                ..
            } = &mut **p;
            for i in 0..value.len() {
                let g = grad[i] + c.weight_decay * value[i];
                first_moment[i] = c.beta1 * first_moment[i] + (1.0 - c.beta1) * g;
                second_moment[i] = c.beta2 * second_moment[i] + (1.0 - c.beta2) * g * g;
                let m_hat = first_moment[i] / bias1;
                let v_hat = second_moment[i] / bias2;
                value[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(StepReport {
            grad_norm,
            clip_scale,
        })
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without relative improvement of the monitored loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            threshold: 1e-4,
            min_lr: 0.0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's metric; returns the new learning rate when reduced.
    pub fn observe(&mut self, metric: f64, optimizer: &mut Adam) -> Option<f64> {
        if metric < self.best * (1.0 - self.threshold) || self.best.is_infinite() {
            self.best = metric;
            self.bad_epochs = 0;
            return None;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            let lr = (optimizer.lr() * self.factor).max(self.min_lr);
            optimizer.set_lr(lr);
            return Some(lr);
        }
        None
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.1, 10)
    }
}

/// Stops training after `patience` epochs without validation improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Returns `(improved, should_stop)`.
    pub fn observe(&mut self, metric: f64) -> (bool, bool) {
        if metric < self.best {
            self.best = metric;
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Parameter {
        let mut p = Parameter::new("p", vec![values.len()], values.to_vec());
        p.grad = grads.to_vec();
        p
    }

    #[test]
    fn clipping_halves_gradients_at_norm_four() {
        let mut a = param(&[0.0, 0.0], &[0.0, 4.0]);
        let (norm, scale) = clip_grad_norm(&mut [&mut a], 2.0);
        assert_eq!(norm, 4.0);
        assert_eq!(scale, 0.5);
        assert_eq!(a.grad, vec![0.0, 2.0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters_bit_identical() {
        let values = [0.123456789, -3.5, 1e-300, 0.0];
        let mut p = param(&values, &[0.0; 4]);
        let mut adam = Adam::new(AdamConfig {
            clip_norm: Some(2.0),
            ..AdamConfig::default()
        });
        for _ in 0..5 {
            adam.step(&mut [&mut p]).unwrap();
        }
        for (a, b) in p.value.iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = param(&[1.0, 2.0], &[0.0, f64::NAN]);
        p.name = "enc.0.weight".into();
        let mut adam = Adam::new(AdamConfig::default());
        match adam.step(&mut [&mut p]) {
            Err(KernelError::NonFiniteGradient { parameter, index }) => {
                assert_eq!(parameter, "enc.0.weight");
                assert_eq!(index, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.value, vec![1.0, 2.0]);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut b = Parameter::buffer("bn.running_mean", vec![1], vec![0.5]);
        b.grad = vec![1.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut b]).unwrap();
        assert_eq!(b.value, vec![0.5]);
    }

    #[test]
    fn plateau_reduces_after_ten_flat_epochs() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut sched = PlateauScheduler::default();
        assert_eq!(sched.observe(1.0, &mut adam), None);
        for epoch in 1..10 {
            assert_eq!(sched.observe(1.0, &mut adam), None, "epoch {epoch}");
        }
        let lr = sched.observe(1.0, &mut adam).unwrap();
        assert!((lr - 1e-4).abs() < 1e-18);
        assert_eq!(adam.lr(), lr);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = param(&[1.0], &[0.3]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        // bias-corrected m/sqrt(v) = sign(g) on the first step
        assert!((p.value[0] - (1.0 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn early_stopping_fires_after_patience() {
        let mut es = EarlyStopping::new(10);
        assert_eq!(es.observe(1.0), (true, false));
        for _ in 0..9 {
            assert_eq!(es.observe(1.0).1, false);
        }
        assert_eq!(es.observe(1.0), (false, true));
    }
}
