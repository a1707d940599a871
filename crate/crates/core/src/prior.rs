//! Uniform box priors on sparse supports, their geometric mixture, and
//! closed-form divergences used as test oracles.
//!
//! All densities are in log-domain. The density of a mixture component is
//! taken with respect to Lebesgue measure on its active coordinates only.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActiveSet, ParamVector};
use crate::numeric::{ln_binomial, log_sum_exp};

/// Uniform distribution on `S_I = {theta in [-B, B]^P : theta_i = 0, i not in I}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBoxPrior {
    pub dim: usize,
    pub active: ActiveSet,
    pub box_bound: f64,
}

impl SparseBoxPrior {
    pub fn new(dim: usize, active: ActiveSet, box_bound: f64) -> Result<Self> {
        if active.iter().any(|i| i >= dim) {
            return Err(Error::domain("active index outside the parameter dimension"));
        }
        check_box(box_bound)?;
        Ok(SparseBoxPrior { dim, active, box_bound })
    }

    /// `-|I| log(2B)` on the support, `-inf` elsewhere.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim || !self.active.consistent(theta) || !in_box(theta, self.box_bound) {
            return f64::NEG_INFINITY;
        }
        -(self.active.len() as f64) * (2.0 * self.box_bound).ln()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let mut theta = ParamVector::zeros(self.dim);
        for i in self.active.iter() {
            theta[i] = rng.gen_range(-self.box_bound..=self.box_bound);
        }
        theta
    }
}

/// `Pi = sum_{i=1}^P base^{-i} sum_{|I|=i} binom(P, i)^{-1} Pi_I / C_P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub dim: usize,
    pub box_bound: f64,
    /// Base of the geometric sparsity weights (2 by default; larger values
    /// favour sparser networks).
    pub sparsity_base: f64,
}

impl MixturePrior {
    pub fn new(dim: usize, box_bound: f64) -> Result<Self> {
        Self::with_base(dim, box_bound, 2.0)
    }

    pub fn with_base(dim: usize, box_bound: f64, sparsity_base: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("mixture prior needs at least one parameter"));
        }
        check_box(box_bound)?;
        if !(sparsity_base > 1.0) || !sparsity_base.is_finite() {
            return Err(Error::config(format!(
                "sparsity_base must exceed 1, got {sparsity_base}"
            )));
        }
        Ok(MixturePrior {
            dim,
            box_bound,
            sparsity_base,
        })
    }

    /// `log C_P` with `C_P = sum_{i=1}^P base^{-i} = (1 - base^{-P}) / (base - 1)`.
    pub fn log_normalizer(&self) -> f64 {
        let tail = (-(self.dim as f64) * self.sparsity_base.ln()).exp();
        (-tail).ln_1p() - (self.sparsity_base - 1.0).ln()
    }

    /// Log-probability that the drawn sparsity equals `size`.
    pub fn log_sparsity_prob(&self, size: usize) -> Result<f64> {
        if size == 0 || size > self.dim {
            return Err(Error::domain(format!(
                "sparsity {size} outside 1..={} (the mixture has no empty component)",
                self.dim
            )));
        }
        Ok(-(size as f64) * self.sparsity_base.ln() - self.log_normalizer())
    }

    /// Log mixture weight of the component `Pi_I`.
    pub fn log_component_weight(&self, active: &ActiveSet) -> Result<f64> {
        let size = active.len();
        Ok(self.log_sparsity_prob(size)? - ln_binomial(self.dim, size))
    }

    /// Log-density of `theta` under the component `Pi_I` weighted by its
    /// mixture weight; `-inf` when `theta` is off `S_I`.
    pub fn log_density_on_active(&self, active: &ActiveSet, theta: &[f64]) -> f64 {
        if active.is_empty() || theta.len() != self.dim || !active.consistent(theta) || !in_box(theta, self.box_bound) {
            return f64::NEG_INFINITY;
        }
        match self.log_component_weight(active) {
            Ok(w) => w - active.len() as f64 * (2.0 * self.box_bound).ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Hierarchical draw: sparsity, then a uniform active set of that size,
    /// then uniform values on the active coordinates.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (ActiveSet, ParamVector) {
        let size = self.sample_sparsity(rng);
        let mut idx = index::sample(rng, self.dim, size).into_vec();
        idx.sort_unstable();
        let active = ActiveSet::new(idx, self.dim).expect("indices below dim");
        let theta = SparseBoxPrior {
            dim: self.dim,
            active: active.clone(),
            box_bound: self.box_bound,
        }
        .sample(rng);
        (active, theta)
    }

    fn sample_sparsity<R: Rng>(&self, rng: &mut R) -> usize {
        // Inverse CDF of the truncated geometric law on 1..=P.
        let u: f64 = rng.gen();
        let mut cdf = 0.0;
        for size in 1..=self.dim {
            cdf += self.log_sparsity_prob(size).expect("size in range").exp();
            if u < cdf {
                return size;
            }
        }
        self.dim
    }

    /// `log C_I` with `C_I = C_P base^{|I|} binom(P, |I|)`, the gap between
    /// the KL divergence to the mixture and to its component `Pi_I`.
    pub fn kl_correction(&self, active: &ActiveSet) -> Result<f64> {
        Ok(-self.log_component_weight(active)?)
    }
}

fn check_box(box_bound: f64) -> Result<()> {
    if !(box_bound > 0.0) || !box_bound.is_finite() {
        return Err(Error::config(format!("box bound must be positive, got {box_bound}")));
    }
    Ok(())
}

fn in_box(theta: &[f64], bound: f64) -> bool {
    theta.iter().all(|v| v.abs() <= bound)
}

/// Exact `KL(rho_{I,eta} | Pi_I)`, where `rho_{I,eta}` is uniform on the
/// product of `[theta*_i - eta, theta*_i + eta] ∩ [-B, B]` over `i in I`
/// and a point mass at 0 elsewhere.
pub fn kl_rho_pi_active(active: &ActiveSet, eta: f64, box_bound: f64, center: &[f64]) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::domain(format!("eta must be positive, got {eta}")));
    }
    check_box(box_bound)?;
    if !active.consistent(center) || active.iter().any(|i| i >= center.len()) {
        return Err(Error::domain("center is inconsistent with the active set"));
    }
    if !in_box(center, box_bound) {
        return Err(Error::domain("center lies outside the box"));
    }
    Ok(active
        .iter()
        .map(|i| {
            let c = center[i];
            let len = (c + eta).min(box_bound) - (c - eta).max(-box_bound);
            (2.0 * box_bound / len).ln()
        })
        .sum())
}

/// `KL(rho_{I,eta} | Pi) = KL(rho_{I,eta} | Pi_I) + log C_I`.
pub fn kl_rho_pi_mixture(prior: &MixturePrior, active: &ActiveSet, eta: f64, center: &[f64]) -> Result<f64> {
    if center.len() != prior.dim {
        return Err(Error::shape("center dimension differs from the prior"));
    }
    Ok(kl_rho_pi_active(active, eta, prior.box_bound, center)? + prior.kl_correction(active)?)
}

fn check_probability_vector(mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::domain("empty probability vector"));
    }
    if mu.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::domain("probability vector has negative or non-finite entries"));
    }
    let s: f64 = mu.iter().sum();
    if (s - 1.0).abs() > 1e-12 * mu.len() as f64 {
        return Err(Error::domain(format!("probability vector sums to {s}")));
    }
    Ok(())
}

/// Discrete KL divergence `sum nu_j log(nu_j / mu_j)` with `0 log 0 = 0`.
pub fn kl_discrete(nu: &[f64], mu: &[f64]) -> f64 {
    nu.iter()
        .zip(mu)
        .map(|(&n, &m)| {
            if n == 0.0 {
                0.0
            } else if m == 0.0 {
                f64::INFINITY
            } else {
                n * (n / m).ln()
            }
        })
        .sum()
}

/// `int h dnu - KL(nu | mu)` on a finite space, `-inf` when `nu` is not
/// absolutely continuous with respect to `mu`.
pub fn dv_objective(h: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    let kl = kl_discrete(nu, mu);
    if kl == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    let lin: f64 = nu.iter().zip(h).filter(|(n, _)| **n > 0.0).map(|(n, v)| n * v).sum();
    lin - kl
}

/// Gibbs measure `nu_j ∝ mu_j exp(h_j)`.
pub fn gibbs_measure(h: &[f64], mu: &[f64]) -> Vec<f64> {
    let logw: Vec<f64> = h
        .iter()
        .zip(mu)
        .map(|(v, m)| if *m > 0.0 { m.ln() + v } else { f64::NEG_INFINITY })
        .collect();
    let z = log_sum_exp(&logw);
    logw.iter().map(|w| (w - z).exp()).collect()
}

/// Both sides of `log int e^h dmu = sup_nu (int h dnu - KL(nu | mu))`, the
/// right side evaluated at the maximising Gibbs measure.
pub fn donsker_varadhan_check(h: &[f64], mu: &[f64]) -> Result<(f64, f64)> {
    check_probability_vector(mu)?;
    if h.len() != mu.len() {
        return Err(Error::shape("h and mu have different lengths"));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("h must be finite"));
    }
    let logw: Vec<f64> = h
        .iter()
        .zip(mu)
        .map(|(v, m)| if *m > 0.0 { m.ln() + v } else { f64::NEG_INFINITY })
        .collect();
    let lhs = log_sum_exp(&logw);
    let nu = gibbs_measure(h, mu);
    Ok((lhs, dv_objective(h, mu, &nu)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(ix: &[usize], dim: usize) -> ActiveSet {
        ActiveSet::new(ix.to_vec(), dim).unwrap()
    }

    #[test]
    fn component_weights_small_cases() {
        let p1 = MixturePrior::new(1, 1.0).unwrap();
        assert!(p1.log_component_weight(&set(&[0], 1)).unwrap().abs() < 1e-15);
        let p2 = MixturePrior::new(2, 1.0).unwrap();
        let w = p2.log_component_weight(&set(&[1], 2)).unwrap();
        assert!((w - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((p2.log_sparsity_prob(1).unwrap().exp() - 2.0 / 3.0).abs() < 1e-15);
        let p3 = MixturePrior::new(3, 1.0).unwrap();
        let w = p3.log_component_weight(&set(&[0, 2], 3)).unwrap();
        assert!((w.exp() - 2.0 / 21.0).abs() < 1e-15);
        let big = MixturePrior::new(300, 1.0).unwrap();
        let ix: Vec<usize> = (0..150).collect();
        assert!(big.log_component_weight(&set(&ix, 300)).unwrap().is_finite());
        assert!(matches!(
            p3.log_component_weight(&ActiveSet::empty()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn component_weights_sum_to_one() {
        for dim in 1..=12 {
            let prior = MixturePrior::new(dim, 1.0).unwrap();
            let mut total = 0.0;
            for mask in 1u32..(1 << dim) {
                let ix: Vec<usize> = (0..dim).filter(|i| mask >> i & 1 == 1).collect();
                total += prior.log_component_weight(&set(&ix, dim)).unwrap().exp();
            }
            assert!((total - 1.0).abs() < 1e-12, "dim {dim}: {total}");
        }
    }

    #[test]
    fn larger_base_normalizer() {
        let prior = MixturePrior::with_base(4, 1.0, 3.0).unwrap();
        let direct: f64 = (1..=4).map(|i| 3f64.powi(-i)).sum();
        assert!((prior.log_normalizer() - direct.ln()).abs() < 1e-15);
        assert!(MixturePrior::with_base(4, 1.0, 1.0).is_err());
    }

    #[test]
    fn density_on_active() {
        let p = MixturePrior::new(1, 0.5).unwrap();
        assert!(p.log_density_on_active(&set(&[0], 1), &[0.2]).abs() < 1e-15);
        let p = MixturePrior::new(2, 1.0).unwrap();
        let d = p.log_density_on_active(&set(&[0], 2), &[0.3, 0.0]);
        assert!((d - ((1.0f64 / 3.0).ln() - 2f64.ln())).abs() < 1e-15);
        assert_eq!(p.log_density_on_active(&set(&[0], 2), &[0.3, 0.1]), f64::NEG_INFINITY);
        assert_eq!(p.log_density_on_active(&set(&[0], 2), &[1.3, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn samples_lie_on_their_support() {
        let prior = MixturePrior::new(40, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let (active, theta) = prior.sample(&mut rng);
            assert!(!active.is_empty());
            assert!(active.consistent(&theta));
            assert!(theta.in_box(1.5));
        }
    }

    #[test]
    fn kl_closed_forms() {
        let c = [0.0, 0.1, 0.0];
        let kl = kl_rho_pi_active(&set(&[0, 1], 3), 0.5, 1.0, &c).unwrap();
        assert!((kl - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(kl <= 2.0 * 4f64.ln());
        let kl = kl_rho_pi_active(&set(&[0], 1), 0.25, 1.0, &[1.0]).unwrap();
        assert!((kl - (2.0f64 / 0.25).ln()).abs() < 1e-15);
        let kl = kl_rho_pi_active(&set(&[0], 1), 2.0, 1.0, &[0.0]).unwrap();
        assert_eq!(kl, 0.0);
        assert!(kl_rho_pi_active(&set(&[0], 1), 0.0, 1.0, &[0.0]).is_err());
        assert!(kl_rho_pi_active(&set(&[0], 2), 0.5, 1.0, &[0.0, 0.3]).is_err());
    }

    #[test]
    fn mixture_kl_correction() {
        let p1 = MixturePrior::new(1, 1.0).unwrap();
        assert!(p1.kl_correction(&set(&[0], 1)).unwrap().abs() < 1e-15);
        let p2 = MixturePrior::new(2, 1.0).unwrap();
        assert!((p2.kl_correction(&set(&[0], 2)).unwrap() - 3f64.ln()).abs() < 1e-15);
        let c = [0.2, 0.0];
        let a = kl_rho_pi_active(&set(&[0], 2), 0.3, 1.0, &c).unwrap();
        let m = kl_rho_pi_mixture(&p2, &set(&[0], 2), 0.3, &c).unwrap();
        assert!(m >= a);
    }

    #[test]
    fn donsker_varadhan_examples() {
        let (l, r) = donsker_varadhan_check(&[1.5; 4], &[0.25; 4]).unwrap();
        assert!((l - 1.5).abs() < 1e-15 && (r - 1.5).abs() < 1e-15);
        let (l, r) = donsker_varadhan_check(&[0.0, 3f64.ln()], &[0.5, 0.5]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((r - 2f64.ln()).abs() < 1e-15);
        assert!(donsker_varadhan_check(&[0.0, 0.0], &[0.5, 0.6]).is_err());
        assert!(donsker_varadhan_check(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn dv_objective_not_absolutely_continuous() {
        assert_eq!(dv_objective(&[0.0, 1.0], &[1.0, 0.0], &[0.5, 0.5]), f64::NEG_INFINITY);
    }
}
