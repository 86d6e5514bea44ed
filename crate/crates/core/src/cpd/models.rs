//! Conjugate observation models: per-run sufficient statistics, log
//! posterior predictives and closed-form segment marginals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CpdError;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ_d(a)`, the multivariate log-gamma function.
pub fn ln_multigamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * std::f64::consts::PI.ln() + (0..d).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

pub fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// An observation model over one day's datum.
pub trait ObservationModel {
    type Obs;
    type Stats: Clone;

    fn prior(&self) -> Self::Stats;
    fn check(&self, obs: &Self::Obs) -> Result<(), CpdError>;
    fn log_predictive(&self, stats: &Self::Stats, obs: &Self::Obs) -> f64;
    fn update(&self, stats: &Self::Stats, obs: &Self::Obs) -> Self::Stats;
    /// `ln p(segment)` computed in one shot from pooled statistics.
    fn log_marginal(&self, segment: &[&Self::Obs]) -> f64;
}

/// Symmetric-Dirichlet pseudo-counts of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletStats {
    pub counts: Vec<f64>,
    pub total: f64,
}

/// Categorical profile ids with a symmetric Dirichlet prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub k: usize,
    pub alpha: f64,
}

impl Categorical {
    pub fn new(k: usize, alpha: f64) -> Self {
        Self { k, alpha }
    }

    /// `(alpha + c_z) / (K alpha + n)` in log form.
    pub fn ln_prob(&self, stats: &DirichletStats, z: usize) -> f64 {
        ((self.alpha + stats.counts[z]) / (self.k as f64 * self.alpha + stats.total)).ln()
    }
}

impl ObservationModel for Categorical {
    type Obs = usize;
    type Stats = DirichletStats;

    fn prior(&self) -> DirichletStats {
        DirichletStats {
            counts: vec![0.0; self.k],
            total: 0.0,
        }
    }

    fn check(&self, z: &usize) -> Result<(), CpdError> {
        if *z >= self.k {
            return Err(CpdError::OutOfAlphabet { id: *z, k: self.k });
        }
        Ok(())
    }

    fn log_predictive(&self, stats: &DirichletStats, z: &usize) -> f64 {
        self.ln_prob(stats, *z)
    }

    fn update(&self, stats: &DirichletStats, z: &usize) -> DirichletStats {
        let mut s = stats.clone();
        s.counts[*z] += 1.0;
        s.total += 1.0;
        s
    }

    fn log_marginal(&self, segment: &[&usize]) -> f64 {
        let mut counts = vec![0.0; self.k];
        for &&z in segment {
            counts[z] += 1.0;
        }
        let a = self.k as f64 * self.alpha;
        ln_gamma(a) - ln_gamma(a + segment.len() as f64)
            + counts.iter().map(|&c| ln_gamma(self.alpha + c) - ln_gamma(self.alpha)).sum::<f64>()
    }
}

/// Count vectors of `s` draws per day with a Dirichlet-multinomial predictive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multinomial {
    pub k: usize,
    pub alpha: f64,
    pub s: u32,
}

impl Multinomial {
    pub fn new(k: usize, alpha: f64, s: u32) -> Self {
        Self { k, alpha, s }
    }

    fn categorical(&self) -> Categorical {
        Categorical::new(self.k, self.alpha)
    }
}

fn ln_multinomial_coefficient(counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    ln_gamma(f64::from(n) + 1.0) - counts.iter().map(|&c| ln_gamma(f64::from(c) + 1.0)).sum::<f64>()
}

impl ObservationModel for Multinomial {
    type Obs = Vec<u32>;
    type Stats = DirichletStats;

    fn prior(&self) -> DirichletStats {
        self.categorical().prior()
    }

    fn check(&self, c: &Vec<u32>) -> Result<(), CpdError> {
        if c.len() != self.k {
            return Err(CpdError::DimensionMismatch {
                expected: self.k,
                got: c.len(),
            });
        }
        let sum: u32 = c.iter().sum();
        if sum != self.s {
            return Err(CpdError::CountSum { expected: self.s, got: sum });
        }
        Ok(())
    }

    fn log_predictive(&self, stats: &DirichletStats, c: &Vec<u32>) -> f64 {
        if self.s == 1 {
            let z = c.iter().position(|&x| x == 1).expect("one draw");
            return self.categorical().ln_prob(stats, z);
        }
        let a_total = self.k as f64 * self.alpha + stats.total;
        ln_multinomial_coefficient(c) + ln_gamma(a_total) - ln_gamma(a_total + f64::from(self.s))
            + c.iter()
                .zip(&stats.counts)
                .filter(|(&x, _)| x > 0)
                .map(|(&x, &n)| ln_gamma(self.alpha + n + f64::from(x)) - ln_gamma(self.alpha + n))
                .sum::<f64>()
    }

    fn update(&self, stats: &DirichletStats, c: &Vec<u32>) -> DirichletStats {
        let mut s = stats.clone();
        for (acc, &x) in s.counts.iter_mut().zip(c) {
            *acc += f64::from(x);
        }
        s.total += f64::from(self.s);
        s
    }

    fn log_marginal(&self, segment: &[&Vec<u32>]) -> f64 {
        let mut pooled = vec![0.0; self.k];
        let mut coef = 0.0;
        for c in segment {
            coef += ln_multinomial_coefficient(c);
            for (p, &x) in pooled.iter_mut().zip(c.iter()) {
                *p += f64::from(x);
            }
        }
        let n: f64 = pooled.iter().sum();
        let a = self.k as f64 * self.alpha;
        coef + ln_gamma(a) - ln_gamma(a + n)
            + pooled.iter().map(|&c| ln_gamma(self.alpha + c) - ln_gamma(self.alpha)).sum::<f64>()
    }
}

/// Normal-Inverse-Wishart hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    pub mu0: Vec<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    /// Row-major `dim x dim` scale matrix.
    pub psi0: Vec<f64>,
}

impl NiwPrior {
    /// Mean of the first `window` observations, `kappa0 = 1`,
    /// `nu0 = dim + 2`, identity scale.
    pub fn from_data(data: &[Vec<f64>], window: usize) -> Result<Self, CpdError> {
        let first = data.first().ok_or(CpdError::EmptySequence)?;
        let dim = first.len();
        let w = window.clamp(1, data.len());
        let mut mu0 = vec![0.0; dim];
        for x in &data[..w] {
            if x.len() != dim {
                return Err(CpdError::DimensionMismatch { expected: dim, got: x.len() });
            }
            for (m, v) in mu0.iter_mut().zip(x) {
                *m += v / w as f64;
            }
        }
        Ok(Self::isotropic(mu0))
    }

    pub fn isotropic(mu0: Vec<f64>) -> Self {
        let dim = mu0.len();
        let mut psi0 = vec![0.0; dim * dim];
        for i in 0..dim {
            psi0[i * dim + i] = 1.0;
        }
        Self {
            mu0,
            kappa0: 1.0,
            nu0: dim as f64 + 2.0,
            psi0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiwStats {
    pub mu: DVector<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub psi: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateNormal {
    pub prior: NiwPrior,
}

impl MultivariateNormal {
    pub fn new(prior: NiwPrior) -> Self {
        Self { prior }
    }

    fn psi0(&self) -> DMatrix<f64> {
        let d = self.prior.dim();
        DMatrix::from_row_slice(d, d, &self.prior.psi0)
    }

    /// Student-t with `nu - d + 1` degrees of freedom, location `mu` and
    /// scale `psi (kappa + 1) / (kappa (nu - d + 1))`.
    pub fn ln_student_t(stats: &NiwStats, x: &[f64]) -> f64 {
        let d = stats.mu.len();
        let df = stats.nu - d as f64 + 1.0;
        let scale = &stats.psi * ((stats.kappa + 1.0) / (stats.kappa * df));
        let Some(chol) = scale.cholesky() else {
            return f64::NAN;
        };
        let diff = DVector::from_column_slice(x) - &stats.mu;
        let sol = chol.solve(&diff);
        let maha = diff.dot(&sol);
        let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let df2 = df + d as f64;
        ln_gamma(df2 / 2.0)
            - ln_gamma(df / 2.0)
            - d as f64 / 2.0 * (df * std::f64::consts::PI).ln()
            - 0.5 * ln_det
            - df2 / 2.0 * (1.0 + maha / df).ln()
    }
}

fn ln_det_spd(m: &DMatrix<f64>) -> f64 {
    match m.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => f64::NAN,
    }
}

impl ObservationModel for MultivariateNormal {
    type Obs = Vec<f64>;
    type Stats = NiwStats;

    fn prior(&self) -> NiwStats {
        NiwStats {
            mu: DVector::from_column_slice(&self.prior.mu0),
            kappa: self.prior.kappa0,
            nu: self.prior.nu0,
            psi: self.psi0(),
        }
    }

    fn check(&self, x: &Vec<f64>) -> Result<(), CpdError> {
        if x.len() != self.prior.dim() {
            return Err(CpdError::DimensionMismatch {
                expected: self.prior.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CpdError::InvalidInput("non-finite observation".into()));
        }
        Ok(())
    }

    fn log_predictive(&self, stats: &NiwStats, x: &Vec<f64>) -> f64 {
        Self::ln_student_t(stats, x)
    }

    fn update(&self, stats: &NiwStats, x: &Vec<f64>) -> NiwStats {
        let xv = DVector::from_column_slice(x);
        let diff = &xv - &stats.mu;
        let kappa = stats.kappa + 1.0;
        NiwStats {
            mu: (&stats.mu * stats.kappa + &xv) / kappa,
            kappa,
            nu: stats.nu + 1.0,
            psi: &stats.psi + &diff * diff.transpose() * (stats.kappa / kappa),
        }
    }

    fn log_marginal(&self, segment: &[&Vec<f64>]) -> f64 {
        let d = self.prior.dim();
        let n = segment.len() as f64;
        let p = &self.prior;
        let mu0 = DVector::from_column_slice(&p.mu0);
        let mut mean = DVector::zeros(d);
        for x in segment {
            mean += DVector::from_column_slice(x);
        }
        mean /= n;
        let mut scatter = DMatrix::zeros(d, d);
        for x in segment {
            let c = DVector::from_column_slice(x) - &mean;
            scatter += &c * c.transpose();
        }
        let dm = &mean - &mu0;
        let kappa_n = p.kappa0 + n;
        let nu_n = p.nu0 + n;
        let psi0 = self.psi0();
        let psi_n = &psi0 + scatter + &dm * dm.transpose() * (p.kappa0 * n / kappa_n);
        -n * d as f64 / 2.0 * std::f64::consts::PI.ln() + ln_multigamma(d, nu_n / 2.0)
            - ln_multigamma(d, p.nu0 / 2.0)
            + p.nu0 / 2.0 * ln_det_spd(&psi0)
            - nu_n / 2.0 * ln_det_spd(&psi_n)
            + d as f64 / 2.0 * (p.kappa0.ln() - kappa_n.ln())
    }
}
