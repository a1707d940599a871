//! Metropolis-adjusted Langevin chain for the Gibbs posterior
//! `exp(-lambda R_n(theta))` under the uniform prior on `[-B, B]^P`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamVector;
use crate::objective::RiskModel;

/// Step-size adaptation run before the chain proper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotTuning {
    pub rounds: usize,
    pub steps_per_round: usize,
    pub target_low: f64,
    pub target_high: f64,
}

impl Default for PilotTuning {
    fn default() -> Self {
        PilotTuning {
            rounds: 20,
            steps_per_round: 200,
            target_low: 0.4,
            target_high: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalaConfig {
    /// Inverse temperature.
    pub lambda: f64,
    /// Gradient step (learning rate) in the proposal mean.
    pub gamma: f64,
    /// Proposal standard deviation; `None` means `sqrt(2 gamma / lambda)`.
    #[serde(default)]
    pub proposal_std: Option<f64>,
    /// Half-width of the parameter box.
    pub box_bound: f64,
    pub burn_in: usize,
    pub gap: usize,
    pub n_keep: usize,
    pub seed: u64,
    /// Adapt `gamma` before burn-in; `None` keeps it fixed.
    #[serde(default)]
    pub pilot: Option<PilotTuning>,
}

impl MalaConfig {
    pub fn new(lambda: f64, box_bound: f64) -> Self {
        MalaConfig {
            lambda,
            gamma: 1e-2,
            proposal_std: None,
            box_bound,
            burn_in: 1000,
            gap: 10,
            n_keep: 100,
            seed: 0,
            pilot: Some(PilotTuning::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("gamma", self.gamma)?;
        positive("box_bound", self.box_bound)?;
        if let Some(s) = self.proposal_std {
            positive("proposal_std", s)?;
        }
        if self.gap == 0 || self.n_keep == 0 {
            return Err(Error::config("gap and n_keep must be at least 1"));
        }
        if let Some(p) = &self.pilot {
            if p.rounds > 0 && p.steps_per_round == 0 {
                return Err(Error::config("pilot rounds need at least one step"));
            }
            if !(0.0..=1.0).contains(&p.target_low) || p.target_low > p.target_high || p.target_high > 1.0 {
                return Err(Error::config(
                    "pilot acceptance band must satisfy 0 <= low <= high <= 1",
                ));
            }
        }
        Ok(())
    }

    /// Effective proposal standard deviation.
    pub fn std(&self) -> f64 {
        self.proposal_std
            .unwrap_or_else(|| (2.0 * self.gamma / self.lambda).sqrt())
    }

    /// Total chain length after tuning, `b + c N`.
    pub fn chain_len(&self) -> usize {
        self.burn_in + self.gap * self.n_keep
    }
}

/// One chain state with cached risk and gradient at `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: ParamVector,
    pub risk: f64,
    pub grad: Vec<f64>,
    pub step: usize,
}

impl ChainState {
    pub fn new<M: RiskModel>(model: &M, theta: ParamVector) -> Self {
        let (risk, grad) = model.risk_and_grad(&theta);
        ChainState {
            theta,
            risk,
            grad,
            step: 0,
        }
    }
}

/// `log q(to | from)` for the Gaussian proposal centred at
/// `from - gamma * grad_at_from` with covariance `s^2 I`.
pub fn log_proposal_density(cfg: &MalaConfig, from: &[f64], to: &[f64], grad_at_from: &[f64]) -> f64 {
    let s = cfg.std();
    let sq: f64 = to
        .iter()
        .zip(from)
        .zip(grad_at_from)
        .map(|((t, f), g)| {
            let d = t - f + cfg.gamma * g;
            d * d
        })
        .sum();
    -0.5 * from.len() as f64 * (2.0 * PI * s * s).ln() - sq / (2.0 * s * s)
}

/// Log acceptance probability together with the risk and gradient computed
/// at the proposal (absent when the proposal leaves the box).
#[derive(Debug, Clone)]
pub struct ProposalEval {
    pub log_alpha: f64,
    pub at_proposal: Option<(f64, Vec<f64>)>,
}

pub fn evaluate_proposal<M: RiskModel>(
    cfg: &MalaConfig,
    current: &ChainState,
    proposal: &[f64],
    model: &M,
) -> ProposalEval {
    if proposal.iter().any(|v| !(v.abs() <= cfg.box_bound)) {
        return ProposalEval {
            log_alpha: f64::NEG_INFINITY,
            at_proposal: None,
        };
    }
    let (risk, grad) = model.risk_and_grad(proposal);
    let log_ratio =
        -cfg.lambda * risk + cfg.lambda * current.risk + log_proposal_density(cfg, proposal, &current.theta, &grad)
            - log_proposal_density(cfg, &current.theta, proposal, &current.grad);
    ProposalEval {
        log_alpha: log_ratio.min(0.0),
        at_proposal: Some((risk, grad)),
    }
}

/// `log alpha(proposal | current)`; `-inf` outside the box.
pub fn acceptance_log_prob<M: RiskModel>(cfg: &MalaConfig, current: &ChainState, proposal: &[f64], model: &M) -> f64 {
    evaluate_proposal(cfg, current, proposal, model).log_alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub out_of_box: bool,
}

/// One Metropolis-Hastings transition. Evaluates the gradient once, at the
/// proposal, unless the proposal leaves the box.
pub fn step<M: RiskModel, R: Rng>(
    cfg: &MalaConfig,
    state: ChainState,
    model: &M,
    rng: &mut R,
) -> (ChainState, StepOutcome) {
    let s = cfg.std();
    let proposal: Vec<f64> = state
        .theta
        .iter()
        .zip(&state.grad)
        .map(|(t, g)| t - cfg.gamma * g + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let eval = evaluate_proposal(cfg, &state, &proposal, model);
    let u: f64 = rng.gen();
    let next_step = state.step + 1;
    match eval.at_proposal {
        Some((risk, grad)) if u.ln() < eval.log_alpha => (
            ChainState {
                theta: ParamVector(proposal),
                risk,
                grad,
                step: next_step,
            },
            StepOutcome {
                accepted: true,
                out_of_box: false,
            },
        ),
        other => (
            ChainState {
                step: next_step,
                ..state
            },
            StepOutcome {
                accepted: false,
                out_of_box: other.is_none(),
            },
        ),
    }
}

/// One row of the chain trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub risk: f64,
    pub accepted: u8,
    pub sup_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Acceptance rate over the post-tuning chain.
    pub acceptance_rate: f64,
    pub steps: usize,
    pub pilot_steps: usize,
    /// Gradient evaluations, including the initial state and pilot phase.
    pub grad_evals: usize,
    pub out_of_box: usize,
    pub gamma: f64,
    pub proposal_std: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct MalaRun {
    /// `theta^(b)`.
    pub draw: ParamVector,
    /// `theta^(b + c k)`, `k = 1..N`.
    pub kept: Vec<ParamVector>,
    pub diagnostics: Diagnostics,
}

/// Initial point drawn uniformly from `[-B/10, B/10]^dim`.
pub fn default_init<R: Rng>(dim: usize, box_bound: f64, rng: &mut R) -> ParamVector {
    let h = box_bound / 10.0;
    ParamVector((0..dim).map(|_| rng.gen_range(-h..=h)).collect())
}

/// Multiplicative step-size rule of the pilot phase: halve `gamma` below
/// the band, grow it by 1.25 above, keep it inside.
pub fn adapt_gamma(gamma: f64, rate: f64, tuning: &PilotTuning) -> f64 {
    if rate < tuning.target_low {
        gamma * 0.5
    } else if rate > tuning.target_high {
        gamma * 1.25
    } else {
        gamma
    }
}

/// Runs pilot tuning (if configured), then `b + cN` steps, and returns the
/// draw at `b` and the kept draws at `b + ck`.
pub fn run<M: RiskModel>(cfg: &MalaConfig, model: &M, init: ParamVector) -> Result<MalaRun> {
    cfg.validate()?;
    if init.len() != model.dim() {
        return Err(Error::shape(format!(
            "initial point has dimension {}, model needs {}",
            init.len(),
            model.dim()
        )));
    }
    if !init.in_box(cfg.box_bound) {
        return Err(Error::domain("initial point lies outside the box"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cfg = cfg.clone();
    let mut state = ChainState::new(model, init);
    let mut grad_evals = 1;
    let mut out_of_box = 0;

    let mut pilot_steps = 0;
    if let Some(tuning) = cfg.pilot {
        for _ in 0..tuning.rounds {
            let mut accepted = 0;
            for _ in 0..tuning.steps_per_round {
                let (next, outcome) = step(&cfg, state, model, &mut rng);
                state = next;
                accepted += outcome.accepted as usize;
                grad_evals += !outcome.out_of_box as usize;
            }
            pilot_steps += tuning.steps_per_round;
            let rate = accepted as f64 / tuning.steps_per_round as f64;
            let next_gamma = adapt_gamma(cfg.gamma, rate, &tuning);
            if next_gamma == cfg.gamma {
                break;
            }
            cfg.gamma = next_gamma;
            // The cached gradient does not depend on gamma; only the
            // proposal changes.
        }
        state.step = 0;
    }

    let total = cfg.chain_len();
    let mut trace = Vec::with_capacity(total);
    let mut kept = Vec::with_capacity(cfg.n_keep);
    let mut draw = if cfg.burn_in == 0 {
        Some(state.theta.clone())
    } else {
        None
    };
    let mut accepted = 0;
    for k in 1..=total {
        let (next, outcome) = step(&cfg, state, model, &mut rng);
        state = next;
        accepted += outcome.accepted as usize;
        grad_evals += !outcome.out_of_box as usize;
        out_of_box += outcome.out_of_box as usize;
        trace.push(TraceRow {
            step: k,
            risk: state.risk,
            accepted: outcome.accepted as u8,
            sup_norm: state.theta.sup_norm(),
        });
        if k == cfg.burn_in {
            draw = Some(state.theta.clone());
        }
        if k > cfg.burn_in && (k - cfg.burn_in).is_multiple_of(cfg.gap) {
            kept.push(state.theta.clone());
        }
    }
    Ok(MalaRun {
        draw: draw.expect("burn-in reached"),
        kept,
        diagnostics: Diagnostics {
            acceptance_rate: if total == 0 {
                0.0
            } else {
                accepted as f64 / total as f64
            },
            steps: total,
            pilot_steps,
            grad_evals,
            out_of_box,
            gamma: cfg.gamma,
            proposal_std: cfg.std(),
            trace,
        },
    })
}

/// Writes the trace as CSV with columns `step,risk,accepted,sup_norm`.
pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(rows: &[TraceRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(rows, std::io::BufWriter::new(f)).map_err(|e| Error::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{CountingRisk, QuadraticRisk};

    fn cfg(lambda: f64, gamma: f64, s: f64) -> MalaConfig {
        MalaConfig {
            proposal_std: Some(s),
            gamma,
            pilot: None,
            ..MalaConfig::new(lambda, 2.0)
        }
    }

    #[test]
    fn proposal_density_at_mean() {
        let c = cfg(1.0, 0.3, 1.0);
        let from = [0.5, -0.2, 0.1];
        let g = [1.0, 2.0, -1.0];
        let to: Vec<f64> = from.iter().zip(&g).map(|(f, g)| f - 0.3 * g).collect();
        let want = -1.5 * (2.0 * PI).ln();
        assert!((log_proposal_density(&c, &from, &to, &g) - want).abs() < 1e-14);
    }

    #[test]
    fn proposal_density_scalar() {
        let c = cfg(1.0, 0.7, 2.0);
        let want = -(2.0 * (2.0 * PI).sqrt()).ln() - 0.5;
        assert!((log_proposal_density(&c, &[0.0], &[2.0], &[0.0]) - want).abs() < 1e-14);
    }

    #[test]
    fn acceptance_edge_cases() {
        let model = QuadraticRisk::isotropic(2, 1.0);
        let c = cfg(3.0, 0.1, 0.5);
        let state = ChainState::new(&model, ParamVector(vec![0.4, -0.3]));
        assert_eq!(acceptance_log_prob(&c, &state, &state.theta.clone(), &model), 0.0);
        assert_eq!(acceptance_log_prob(&c, &state, &[2.5, 0.0], &model), f64::NEG_INFINITY);
    }

    #[test]
    fn acceptance_matches_hand_computation() {
        // R(t) = t^2, lambda = 2, gamma = 0.1, s = 0.5, theta = 0.3, tau = 0.1.
        let model = QuadraticRisk::isotropic(1, 1.0);
        let c = cfg(2.0, 0.1, 0.5);
        let state = ChainState::new(&model, ParamVector(vec![0.3]));
        let (th, tau) = (0.3f64, 0.1f64);
        let fwd_mean = th - 0.1 * 2.0 * th;
        let rev_mean = tau - 0.1 * 2.0 * tau;
        let log_q = |x: f64, m: f64| -0.5 * (2.0 * PI * 0.25).ln() - (x - m).powi(2) / 0.5;
        let ratio = -2.0 * tau * tau + 2.0 * th * th + log_q(th, rev_mean) - log_q(tau, fwd_mean);
        let got = acceptance_log_prob(&c, &state, &[tau], &model);
        assert!((got - ratio.min(0.0)).abs() < 1e-14, "{got} vs {ratio}");
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(1.0, 0.1, 0.1);
        assert!(c.validate().is_ok());
        c.proposal_std = Some(0.0);
        assert!(c.validate().is_err());
        c.proposal_std = None;
        c.n_keep = 0;
        assert!(c.validate().is_err());
        assert!((MalaConfig::new(4.0, 1.0).std() - (2.0f64 * 0.01 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn run_bookkeeping() {
        let model = CountingRisk::new(QuadraticRisk::isotropic(2, 1.0));
        let mut c = cfg(5.0, 0.05, 0.2);
        c.burn_in = 7;
        c.gap = 3;
        c.n_keep = 1;
        let out = run(&c, &model, ParamVector(vec![0.1, 0.1])).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.diagnostics.steps, 10);
        assert_eq!(out.diagnostics.trace.len(), 10);
        assert!((0.0..=1.0).contains(&out.diagnostics.acceptance_rate));
        assert_eq!(model.grad_evals(), out.diagnostics.grad_evals);
        assert_eq!(out.diagnostics.grad_evals + out.diagnostics.out_of_box, 11);
        assert_eq!(model.risk_evals(), 0);
    }

    #[test]
    fn init_outside_box_is_rejected() {
        let model = QuadraticRisk::isotropic(1, 1.0);
        let c = cfg(1.0, 0.1, 0.1);
        assert!(matches!(run(&c, &model, ParamVector(vec![2.5])), Err(Error::Domain(_))));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let model = QuadraticRisk::isotropic(3, 1.0);
        let mut c = cfg(5.0, 0.05, 0.3);
        c.burn_in = 5;
        c.gap = 1;
        c.n_keep = 5;
        c.seed = 11;
        let a = run(&c, &model, ParamVector(vec![0.1; 3])).unwrap();
        let b = run(&c, &model, ParamVector(vec![0.1; 3])).unwrap();
        assert_eq!(a.kept, b.kept);
        assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn pilot_adapts_gamma_into_band() {
        let model = QuadraticRisk::isotropic(1, 1.0);
        let mut c = MalaConfig::new(10.0, 2.0);
        c.gamma = 1e-3;
        c.burn_in = 10;
        c.n_keep = 10;
        c.gap = 1;
        let out = run(&c, &model, ParamVector(vec![0.0])).unwrap();
        assert!(out.diagnostics.gamma > 1e-3);
        assert!(out.diagnostics.pilot_steps > 0);
    }

    #[test]
    fn trace_csv_columns() {
        let rows = [TraceRow {
            step: 1,
            risk: 0.5,
            accepted: 1,
            sup_norm: 0.25,
        }];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,risk,accepted,sup_norm\n1,0.5,1,0.25\n"
        );
    }
}
