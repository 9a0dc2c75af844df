//! Stationary covariance functions over row-major point sets.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    /// `σ_f² exp(−d² / 2ℓ²)`
    SquaredExponential,
    /// Ornstein–Uhlenbeck, `σ_f² exp(−d / ℓ)`
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub variance: f64,
    pub lengthscale: f64,
    /// Added to the diagonal of every covariance matrix.
    pub jitter: f64,
    pub family: KernelFamily,
}

pub const DEFAULT_JITTER: f64 = 1e-6;

impl KernelSpec {
    pub fn squared_exponential(variance: f64, lengthscale: f64) -> Self {
        Self {
            variance,
            lengthscale,
            jitter: DEFAULT_JITTER,
            family: KernelFamily::SquaredExponential,
        }
    }

    pub fn exponential(variance: f64, lengthscale: f64) -> Self {
        Self {
            family: KernelFamily::Exponential,
            ..Self::squared_exponential(variance, lengthscale)
        }
    }

    pub fn with_jitter(self, jitter: f64) -> Self {
        Self { jitter, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("variance", self.variance),
            ("lengthscale", self.lengthscale),
            ("jitter", self.jitter),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("kernel {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Kernel value between two points, jitter excluded.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        self.eval_sq_dist(d2)
    }

    fn eval_sq_dist(&self, d2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                self.variance * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
            }
            KernelFamily::Exponential => self.variance * (-d2.sqrt() / self.lengthscale).exp(),
        }
    }

    /// `K(X, X) + jitter·I` as an `n × n` row-major buffer.
    pub fn covariance(&self, points: &Tensor) -> Vec<f64> {
        let n = points.rows();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = self.variance + self.jitter;
            for j in 0..i {
                let v = self.eval(points.row(i), points.row(j));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    /// `K(A, B)` as an `|A| × |B|` row-major buffer.
    pub fn cross(&self, a: &Tensor, b: &Tensor) -> Vec<f64> {
        let mut k = Vec::with_capacity(a.rows() * b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                k.push(self.eval(a.row(i), b.row(j)));
            }
        }
        k
    }
}

/// Column tensor `[n, 1]` from scalar inputs.
pub fn column(xs: &[f64]) -> Tensor {
    Tensor::matrix(xs.len(), 1, xs.to_vec()).expect("column shape")
}
