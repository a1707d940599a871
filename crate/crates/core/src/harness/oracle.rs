//! Approximate oracle `theta*_I = argmin_{theta in S_I} R(theta)`.
//!
//! The true oracle is not computable; this multi-start projected gradient
//! descent on a Monte-Carlo risk only finds an upper bound on its excess
//! risk.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::TeacherSpec;
use crate::error::{Error, Result};
use crate::net::{ActiveSet, NetworkArch, ParamVector};
use crate::risk::{Dataset, EvalGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Gradient iterations per restart.
    pub iterations: usize,
    pub restarts: usize,
    /// Monte-Carlo points in the optimised risk.
    pub fit_points: usize,
    /// Fresh points for the reported excess risk.
    pub eval_points: usize,
    pub seed: u64,
}

impl OracleBudget {
    pub fn new(iterations: usize) -> Self {
        OracleBudget {
            iterations,
            restarts: 20,
            fit_points: 4096,
            eval_points: 50_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBenchmark {
    pub active: ActiveSet,
    pub theta: ParamVector,
    pub excess_risk: f64,
    pub excess_risk_stderr: f64,
}

/// Starting point of restart `k`: uniform on `[-B/2, B/2]` over `active`.
pub fn restart_init(arch: &NetworkArch, active: &ActiveSet, seed: u64, k: usize) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1)));
    let mut theta = ParamVector::zeros(arch.param_count());
    let h = arch.box_bound / 2.0;
    for i in active.iter() {
        theta[i] = rng.gen_range(-h..=h);
    }
    theta
}

/// Best of `budget.restarts` projected-gradient runs on `S_I`. With zero
/// iterations the first initialisation is returned unchanged.
pub fn approximate_oracle(
    arch: &NetworkArch,
    active: &ActiveSet,
    truth: &TeacherSpec,
    budget: &OracleBudget,
) -> Result<OracleBenchmark> {
    if active.is_empty() {
        return Err(Error::domain("oracle needs a nonempty active set"));
    }
    if truth.input_dim != arch.input_dim {
        return Err(Error::shape("teacher and architecture input dimensions differ"));
    }
    if budget.restarts == 0 || budget.fit_points == 0 || budget.eval_points < 2 {
        return Err(Error::config(
            "oracle budget needs restarts, fit points and eval points",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let fit = noise_free_sample(truth, budget.fit_points, &mut rng)?;

    let mut best: Option<(f64, ParamVector)> = None;
    let restarts = if budget.iterations == 0 { 1 } else { budget.restarts };
    for k in 0..restarts {
        let init = restart_init(arch, active, budget.seed, k);
        let (risk, theta) = descend(arch, active, &fit, init, budget.iterations)?;
        if best.as_ref().is_none_or(|(r, _)| risk < *r) {
            best = Some((risk, theta));
        }
    }
    let (_, theta) = best.expect("at least one restart");

    let mut x = vec![0.0; budget.eval_points * arch.input_dim];
    for row in x.chunks_exact_mut(arch.input_dim) {
        truth.input.sample(&mut rng, row);
    }
    let grid = EvalGrid::new(arch.input_dim, x, truth.truth())?;
    let mut fw = crate::net::Forward::new(arch);
    let (excess, stderr) = grid.excess_risk(|x| fw.clipped(arch, &theta, x))?;
    Ok(OracleBenchmark {
        active: active.clone(),
        theta,
        excess_risk: excess,
        excess_risk_stderr: stderr,
    })
}

fn noise_free_sample<R: Rng>(truth: &TeacherSpec, m: usize, rng: &mut R) -> Result<Dataset> {
    let p = truth.input_dim;
    let mut x = vec![0.0; m * p];
    let mut f = truth.truth();
    let mut y = Vec::with_capacity(m);
    for row in x.chunks_exact_mut(p) {
        truth.input.sample(rng, row);
        y.push(f(row));
    }
    Dataset::new(p, x, y)
}

/// Projected gradient descent with Armijo backtracking; returns the final
/// fitted risk and parameters.
fn descend(
    arch: &NetworkArch,
    active: &ActiveSet,
    fit: &Dataset,
    mut theta: ParamVector,
    iterations: usize,
) -> Result<(f64, ParamVector)> {
    let b = arch.box_bound;
    let project = |v: &mut ParamVector| {
        for (i, x) in v.iter_mut().enumerate() {
            *x = if active.contains(i) { x.clamp(-b, b) } else { 0.0 };
        }
    };
    let (mut risk, mut grad) = arch.risk_and_grad(&theta, fit)?;
    let mut step = 1.0;
    for _ in 0..iterations {
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = theta.clone();
            for i in active.iter() {
                cand[i] -= step * grad[i];
            }
            project(&mut cand);
            let moved: f64 = cand.iter().zip(theta.iter()).map(|(a, c)| (a - c) * (a - c)).sum();
            if moved == 0.0 {
                break;
            }
            let (r, g) = arch.risk_and_grad(&cand, fit)?;
            // Sufficient decrease relative to the projected step.
            if r <= risk - 1e-4 * moved / step {
                theta = cand;
                risk = r;
                grad = g;
                accepted = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((risk, theta))
}
