//! Risk functions `theta -> R_n(theta)` that the samplers target.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::net::NetworkArch;
use crate::numeric::pairwise_sum_by;
use crate::risk::Dataset;

/// A differentiable empirical risk on `R^dim`.
pub trait RiskModel {
    fn dim(&self) -> usize;

    fn risk(&self, theta: &[f64]) -> f64;

    /// Risk and gradient in one pass.
    fn risk_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>);
}

impl<M: RiskModel + ?Sized> RiskModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn risk(&self, theta: &[f64]) -> f64 {
        (**self).risk(theta)
    }
    fn risk_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        (**self).risk_and_grad(theta)
    }
}

/// Empirical risk of the clipped network `f_theta` on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct NetworkRisk<'a> {
    arch: &'a NetworkArch,
    data: &'a Dataset,
}

impl<'a> NetworkRisk<'a> {
    /// Validates the architecture against the data once so that the hot
    /// path can skip shape checks.
    pub fn new(arch: &'a NetworkArch, data: &'a Dataset) -> Result<Self> {
        arch.validate()?;
        if data.is_empty() {
            return Err(Error::domain("empty dataset"));
        }
        if data.input_dim() != arch.input_dim {
            return Err(Error::shape(format!(
                "dataset has {} features, architecture needs {}",
                data.input_dim(),
                arch.input_dim
            )));
        }
        Ok(NetworkRisk { arch, data })
    }

    pub fn arch(&self) -> &NetworkArch {
        self.arch
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }
}

impl RiskModel for NetworkRisk<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn risk(&self, theta: &[f64]) -> f64 {
        self.arch
            .empirical_risk(theta, self.data)
            .expect("validated network risk")
    }

    fn risk_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.arch
            .risk_and_grad(theta, self.data)
            .expect("validated network risk")
    }
}

/// `R(theta) = sum_i scale_i * theta_i^2`. With `lambda` this targets a
/// product of centred Gaussians of variance `1 / (2 lambda scale_i)`.
#[derive(Debug, Clone)]
pub struct QuadraticRisk {
    pub scale: Vec<f64>,
}

impl QuadraticRisk {
    pub fn isotropic(dim: usize, scale: f64) -> Self {
        QuadraticRisk {
            scale: vec![scale; dim],
        }
    }
}

impl RiskModel for QuadraticRisk {
    fn dim(&self) -> usize {
        self.scale.len()
    }

    fn risk(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.scale).map(|(t, s)| s * t * t).sum()
    }

    fn risk_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let grad = theta.iter().zip(&self.scale).map(|(t, s)| 2.0 * s * t).collect();
        (self.risk(theta), grad)
    }
}

/// Mean squared error of the clipped linear predictor
/// `x -> clamp(x . theta, -clip, clip)`; the smallest "network" with an
/// arbitrary parameter count, used for brute-force checks.
#[derive(Debug, Clone)]
pub struct ClippedLinearRisk {
    pub data: Dataset,
    pub clip: f64,
}

impl RiskModel for ClippedLinearRisk {
    fn dim(&self) -> usize {
        self.data.input_dim()
    }

    fn risk(&self, theta: &[f64]) -> f64 {
        let n = self.data.len();
        pairwise_sum_by(0, n, &|i| {
            let g: f64 = self.data.x(i).iter().zip(theta).map(|(a, b)| a * b).sum();
            let r = self.data.y()[i] - g.clamp(-self.clip, self.clip);
            r * r
        }) / n as f64
    }

    fn risk_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.data.len();
        let mut grad = vec![0.0; theta.len()];
        let mut sum = 0.0;
        for (x, y) in self.data.rows() {
            let g: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
            let r = y - g.clamp(-self.clip, self.clip);
            sum += r * r;
            if g > -self.clip && g < self.clip {
                for (gr, xi) in grad.iter_mut().zip(x) {
                    *gr += -2.0 * r * xi;
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
        (sum / n as f64, grad)
    }
}

/// Wraps a model and counts gradient evaluations.
#[derive(Debug)]
pub struct CountingRisk<M> {
    inner: M,
    grads: Cell<usize>,
    risks: Cell<usize>,
}

impl<M: RiskModel> CountingRisk<M> {
    pub fn new(inner: M) -> Self {
        CountingRisk {
            inner,
            grads: Cell::new(0),
            risks: Cell::new(0),
        }
    }

    pub fn grad_evals(&self) -> usize {
        self.grads.get()
    }

    /// Risk-only evaluations (no gradient).
    pub fn risk_evals(&self) -> usize {
        self.risks.get()
    }
}

impl<M: RiskModel> RiskModel for CountingRisk<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn risk(&self, theta: &[f64]) -> f64 {
        self.risks.set(self.risks.get() + 1);
        self.inner.risk(theta)
    }

    fn risk_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.grads.set(self.grads.get() + 1);
        self.inner.risk_and_grad(theta)
    }
}
