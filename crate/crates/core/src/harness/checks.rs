//! Self-checks behind `gsn check`: each suite draws random instances and
//! reports the largest deviation from an identity that must hold exactly
//! (up to rounding).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mala::{self, ChainState, MalaConfig};
use crate::net::{ActiveSet, NetworkArch, ParamVector};
use crate::numeric::ln_binomial;
use crate::objective::NetworkRisk;
use crate::prior::{self, MixturePrior};
use crate::risk::Dataset;
use crate::rjmcmc::{self, RjState};

/// Deviations above this fail a suite.
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Kl,
    Dv,
    Lipschitz,
    Balance,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Kl, Suite::Dv, Suite::Lipschitz, Suite::Balance];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Kl => "kl",
            Suite::Dv => "dv",
            Suite::Lipschitz => "lipschitz",
            Suite::Balance => "balance",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown suite '{s}' (expected kl, dv, lipschitz, balance or all)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub cases: usize,
    pub max_deviation: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= TOLERANCE
    }
}

pub fn run_suite(suite: Suite, cases: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_deviation = match suite {
        Suite::Kl => kl_suite(cases, &mut rng)?,
        Suite::Dv => dv_suite(cases, &mut rng)?,
        Suite::Lipschitz => lipschitz_suite(cases, &mut rng)?,
        Suite::Balance => balance_suite(cases, &mut rng)?,
    };
    Ok(CheckReport {
        suite,
        cases,
        max_deviation,
    })
}

/// Composite Gauss-Legendre (5 nodes) on `[a, b]` split into `m` panels.
fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / m as f64;
    (0..m)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            X.iter().zip(W).map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Closed-form KL against per-coordinate quadrature of `rho log(rho / pi)`,
/// and the mixture correction against `log(C_P base^|I| binom(P, |I|))`.
fn kl_suite<R: Rng>(cases: usize, rng: &mut R) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let b = rng.gen_range(1.0..5.0);
        let dim = rng.gen_range(1..=8);
        let eta = rng.gen_range(0.01..2.0 * b);
        let size = rng.gen_range(1..=dim);
        let picked = rand::seq::index::sample(rng, dim, size).into_vec();
        let active = ActiveSet::new(picked, dim)?;
        let mut center = vec![0.0; dim];
        for i in active.iter() {
            center[i] = rng.gen_range(-b..=b);
        }
        let closed = prior::kl_rho_pi_active(&active, eta, b, &center)?;
        let numeric: f64 = active
            .iter()
            .map(|i| {
                let lo = (center[i] - eta).max(-b);
                let hi = (center[i] + eta).min(b);
                let rho = 1.0 / (hi - lo);
                let pi = 1.0 / (2.0 * b);
                gauss_legendre(|_| rho * (rho / pi).ln(), lo, hi, 8)
            })
            .sum();
        worst = worst.max((closed - numeric).abs());

        let mix = MixturePrior::new(dim, b)?;
        let correction = mix.kl_correction(&active)?;
        let c_p = (1.0 - 2f64.powi(-(dim as i32))) / (2.0 - 1.0);
        let expected = c_p.ln() + size as f64 * 2f64.ln() + ln_binomial(dim, size);
        worst = worst.max((correction - expected).abs());
    }
    Ok(worst)
}

/// Equality at the Gibbs measure, and the amount by which any random
/// `nu` exceeds the supremum (0 when the inequality holds).
fn dv_suite<R: Rng>(cases: usize, rng: &mut R) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = rng.gen_range(1..=10);
        let h: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mu = random_simplex(m, rng);
        let (lhs, rhs) = prior::donsker_varadhan_check(&h, &mu)?;
        worst = worst.max((lhs - rhs).abs());
        for _ in 0..20 {
            let nu = random_simplex(m, rng);
            worst = worst.max(prior::dv_objective(&h, &mu, &nu) - lhs);
        }
    }
    Ok(worst)
}

fn random_simplex<R: Rng>(m: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

const CHECK_ARCHS: [(usize, usize, usize); 3] = [(3, 1, 4), (3, 2, 4), (5, 3, 8)];

/// Largest relative excess of `|f_theta(x) - f_theta'(x)|` over the
/// Lipschitz bound; 0 when no triple violates it.
fn lipschitz_suite<R: Rng>(cases: usize, rng: &mut R) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (p, l, r) in CHECK_ARCHS {
        let b = rng.gen_range(1.0..2.0);
        let arch = NetworkArch::new(p, l, r, b, 1.0)?;
        for _ in 0..cases {
            let t1 = random_in_box(arch.param_count(), b, rng);
            let mut t2 = t1.clone();
            let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
            for v in t2.iter_mut() {
                *v = (*v + scale * rng.gen_range(-b..=b)).clamp(-b, b);
            }
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let diff = (arch.forward_clipped(&t1, &x)? - arch.forward_clipped(&t2, &x)?).abs();
            let dist = t1.iter().zip(t2.iter()).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            let bound = arch.lipschitz_bound(&x) * dist;
            if bound > 0.0 {
                worst = worst.max((diff - bound) / bound);
            } else {
                worst = worst.max(diff);
            }
        }
    }
    Ok(worst)
}

fn random_in_box<R: Rng>(dim: usize, b: f64, rng: &mut R) -> ParamVector {
    ParamVector((0..dim).map(|_| rng.gen_range(-b..=b)).collect())
}

fn random_dataset<R: Rng>(arch: &NetworkArch, n: usize, rng: &mut R) -> Result<Dataset> {
    let x: Vec<f64> = (0..n * arch.input_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Dataset::new(arch.input_dim, x, y)
}

/// `log pi(a) + log q(b | a) + log alpha(a -> b)` must be symmetric in
/// `(a, b)`, for MALA pairs and for reversible-jump cross-dimension pairs.
fn balance_suite<R: Rng>(cases: usize, rng: &mut R) -> Result<f64> {
    let arch = NetworkArch::new(2, 1, 3, 1.0, 1.0)?;
    let data = random_dataset(&arch, 30, rng)?;
    let model = NetworkRisk::new(&arch, &data)?;
    let dim = arch.param_count();
    let mut cfg = MalaConfig::new(7.0, arch.box_bound);
    cfg.gamma = 0.02;
    let mut worst: f64 = 0.0;

    for _ in 0..cases {
        let a = ChainState::new(&model, random_in_box(dim, 0.9, rng));
        let b = ChainState::new(&model, random_in_box(dim, 0.9, rng));
        let side = |x: &ChainState, y: &ChainState| {
            -cfg.lambda * x.risk
                + mala::log_proposal_density(&cfg, &x.theta, &y.theta, &x.grad)
                + mala::acceptance_log_prob(&cfg, x, &y.theta, &model)
        };
        worst = worst.max((side(&a, &b) - side(&b, &a)).abs());
    }

    let prior = MixturePrior::new(dim, arch.box_bound)?;
    let mut done = 0;
    while done < cases {
        let size = rng.gen_range(1..=dim);
        let active = ActiveSet::new(rand::seq::index::sample(rng, dim, size).into_vec(), dim)?;
        let mut theta = ParamVector::zeros(dim);
        for i in active.iter() {
            theta[i] = rng.gen_range(-0.9..0.9);
        }
        let a = RjState::new(&model, theta, active);
        let prop = rjmcmc::propose(&cfg, &a, rng);
        if prop.active == a.active || !prop.theta.in_box(arch.box_bound) {
            continue;
        }
        let b = RjState::new(&model, prop.theta.clone(), prop.active.clone());
        let back = rjmcmc::Proposal {
            theta: a.theta.clone(),
            active: a.active.clone(),
            mv: prop.mv,
            log_q_forward: rjmcmc::log_q(&cfg, &b, &a.theta, &a.active),
        };
        let forward = rjmcmc::log_target(&cfg, &prior, &a.theta, &a.active, a.risk)
            + prop.log_q_forward
            + rjmcmc::rj_acceptance_log_prob(&cfg, &prior, &a, &prop, &model);
        let backward = rjmcmc::log_target(&cfg, &prior, &b.theta, &b.active, b.risk)
            + back.log_q_forward
            + rjmcmc::rj_acceptance_log_prob(&cfg, &prior, &b, &back, &model);
        worst = worst.max((forward - backward).abs());
        done += 1;
    }
    Ok(worst)
}
