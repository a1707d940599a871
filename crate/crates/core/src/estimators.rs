//! The single-draw and posterior-mean estimators built from a chain.

use crate::error::{Error, Result};
use crate::net::{Forward, NetworkArch, ParamVector};

/// `f_hat = f_theta` for one posterior draw `theta = theta^(b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub theta: ParamVector,
}

impl PosteriorDraw {
    pub fn new(arch: &NetworkArch, theta: ParamVector) -> Result<Self> {
        Ok(PosteriorDraw {
            theta: ParamVector::for_arch(arch, theta.into_inner())?,
        })
    }

    pub fn predict(&self, arch: &NetworkArch, x: &[f64]) -> Result<f64> {
        arch.forward_clipped(&self.theta, x)
    }
}

/// `f_bar = (1/N) sum_k f_{theta^(b + ck)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMean {
    pub draws: Vec<ParamVector>,
}

impl PosteriorMean {
    pub fn new(arch: &NetworkArch, draws: Vec<ParamVector>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::domain("posterior mean needs at least one draw"));
        }
        let draws = draws
            .into_iter()
            .map(|d| ParamVector::for_arch(arch, d.into_inner()))
            .collect::<Result<_>>()?;
        Ok(PosteriorMean { draws })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn predict(&self, arch: &NetworkArch, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for d in &self.draws {
            total += arch.forward_clipped(d, x)?;
        }
        Ok(total / self.draws.len() as f64)
    }

    /// Unchecked batch prediction for evaluation grids.
    pub fn predictor<'a>(&'a self, arch: &'a NetworkArch) -> impl FnMut(&[f64]) -> f64 + 'a {
        let mut fw = Forward::new(arch);
        let inv = 1.0 / self.draws.len() as f64;
        move |x| self.draws.iter().map(|d| fw.clipped(arch, d, x)).sum::<f64>() * inv
    }
}

/// `n / Xi_0` with `Xi_0 = 16 (C^2 + sigma^2) + 16 C max(Gamma, 2C)`.
pub fn default_lambda(n: usize, clip: f64, sigma: f64, gamma_noise: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if !(clip >= 1.0) || !(sigma > 0.0) || !(gamma_noise > 0.0) {
        return Err(Error::domain(format!(
            "need C >= 1, sigma > 0, Gamma > 0 (got C={clip}, sigma={sigma}, Gamma={gamma_noise})"
        )));
    }
    let xi0 = 16.0 * (clip * clip + sigma * sigma) + 16.0 * clip * gamma_noise.max(2.0 * clip);
    Ok(n as f64 / xi0)
}
