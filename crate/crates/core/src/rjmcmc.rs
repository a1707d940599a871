//! Reversible-jump Metropolis-Hastings over `(active set, theta)` for the
//! Gibbs posterior under the sparsity mixture prior.
//!
//! Each step proposes to remove one active coordinate, keep the active set,
//! or add one inactive coordinate, and then draws the active values from a
//! Langevin-type Gaussian `psi_J` over the new active set `J`. The forward
//! and reverse proposal densities are evaluated as full mixtures over every
//! move that can connect the two states.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mala::{adapt_gamma, MalaConfig};
use crate::net::{ActiveSet, ParamVector};
use crate::objective::RiskModel;
use crate::prior::MixturePrior;

/// Same knobs as MALA; the move probabilities are fixed.
pub type RjmcmcConfig = MalaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Remove,
    Keep,
    Add,
}

impl MoveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MoveKind::Remove => "remove",
            MoveKind::Keep => "keep",
            MoveKind::Add => "add",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub kind: MoveKind,
    /// Coordinate removed or added.
    pub index: Option<usize>,
}

/// Probabilities of (remove, keep, add) from an active set of size `size`
/// in dimension `dim`: `(1/4, 1/2, 1/4)` in the interior, `(0, 2/3, 1/3)`
/// at `|I| = 1` and `(1/3, 2/3, 0)` at `|I| = P`. With `P = 1` only the
/// keep move exists.
pub fn move_probabilities(size: usize, dim: usize) -> [f64; 3] {
    if dim == 1 {
        [0.0, 1.0, 0.0]
    } else if size <= 1 {
        [0.0, 2.0 / 3.0, 1.0 / 3.0]
    } else if size >= dim {
        [1.0 / 3.0, 2.0 / 3.0, 0.0]
    } else {
        [0.25, 0.5, 0.25]
    }
}

/// `w_i^- ∝ exp(-|theta_i|)` over the active coordinates, in the order of
/// `active`. Small entries are the likeliest to be removed.
pub fn removal_weights(theta: &[f64], active: &ActiveSet) -> Vec<f64> {
    let min_abs = active.iter().map(|i| theta[i].abs()).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = active.iter().map(|i| (min_abs - theta[i].abs()).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// `w_i^+ ∝ |{j in I^c : |g_j| <= |g_i|}|^2` over the inactive coordinates,
/// in ascending index order. Ties share the same (larger) count.
pub fn addition_weights(grad: &[f64], active: &ActiveSet) -> Vec<f64> {
    let comp = active.complement(grad.len());
    let mut sorted: Vec<f64> = comp.iter().map(|&i| grad[i].abs()).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let w: Vec<f64> = comp
        .iter()
        .map(|&i| {
            let g = grad[i].abs();
            let count = sorted.partition_point(|v| *v <= g) as f64;
            count * count
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// `log psi_J(tau | theta)`: Gaussian density of the coordinates in `J`
/// around `theta_i - gamma * grad_i`; `-inf` if `tau` is nonzero off `J`.
pub fn psi_log_density(cfg: &RjmcmcConfig, active: &ActiveSet, from: &[f64], to: &[f64], grad_at_from: &[f64]) -> f64 {
    if !active.consistent(to) {
        return f64::NEG_INFINITY;
    }
    let s = cfg.std();
    let sq: f64 = active
        .iter()
        .map(|i| {
            let d = to[i] - from[i] + cfg.gamma * grad_at_from[i];
            d * d
        })
        .sum();
    -0.5 * active.len() as f64 * (2.0 * PI * s * s).ln() - sq / (2.0 * s * s)
}

/// A chain state: parameters, their explicitly tracked active set, and the
/// cached risk and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RjState {
    pub theta: ParamVector,
    pub active: ActiveSet,
    pub risk: f64,
    pub grad: Vec<f64>,
    pub step: usize,
}

impl RjState {
    pub fn new<M: RiskModel>(model: &M, theta: ParamVector, active: ActiveSet) -> Self {
        let (risk, grad) = model.risk_and_grad(&theta);
        RjState {
            theta,
            active,
            risk,
            grad,
            step: 0,
        }
    }
}

/// Full mixture proposal density `log q(to | from)` where `to` carries the
/// active set `to_active`. Only one move kind can connect two active sets,
/// so the mixture reduces to that branch (or `-inf`).
pub fn log_q(cfg: &RjmcmcConfig, from: &RjState, to: &[f64], to_active: &ActiveSet) -> f64 {
    let dim = from.theta.len();
    let [p_remove, p_keep, p_add] = move_probabilities(from.active.len(), dim);
    let size = from.active.len();
    let branch = if *to_active == from.active {
        p_keep.ln()
    } else if to_active.len() + 1 == size {
        let Some(idx) = from.active.iter().find(|&i| !to_active.contains(i)) else {
            return f64::NEG_INFINITY;
        };
        if from.active.without(idx) != *to_active {
            return f64::NEG_INFINITY;
        }
        let pos = from.active.indices().binary_search(&idx).expect("index is active");
        p_remove.ln() + removal_weights(&from.theta, &from.active)[pos].ln()
    } else if to_active.len() == size + 1 {
        let Some(idx) = to_active.iter().find(|&i| !from.active.contains(i)) else {
            return f64::NEG_INFINITY;
        };
        if from.active.with(idx) != *to_active {
            return f64::NEG_INFINITY;
        }
        let comp = from.active.complement(dim);
        let pos = comp.binary_search(&idx).expect("index is inactive");
        p_add.ln() + addition_weights(&from.grad, &from.active)[pos].ln()
    } else {
        return f64::NEG_INFINITY;
    };
    if branch == f64::NEG_INFINITY {
        return branch;
    }
    branch + psi_log_density(cfg, to_active, &from.theta, to, &from.grad)
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub theta: ParamVector,
    pub active: ActiveSet,
    pub mv: Move,
    /// Full mixture density `log q(tau | theta)`.
    pub log_q_forward: f64,
}

/// Draws a move and the new active values. Needs no gradient beyond the
/// one cached in `state`.
pub fn propose<R: Rng>(cfg: &RjmcmcConfig, state: &RjState, rng: &mut R) -> Proposal {
    let dim = state.theta.len();
    let probs = move_probabilities(state.active.len(), dim);
    let kind = match WeightedIndex::new(probs).expect("valid move probabilities").sample(rng) {
        0 => MoveKind::Remove,
        1 => MoveKind::Keep,
        _ => MoveKind::Add,
    };
    let (active, index) = match kind {
        MoveKind::Keep => (state.active.clone(), None),
        MoveKind::Remove => {
            let w = removal_weights(&state.theta, &state.active);
            let pos = WeightedIndex::new(&w).expect("removal weights").sample(rng);
            let idx = state.active.indices()[pos];
            (state.active.without(idx), Some(idx))
        }
        MoveKind::Add => {
            let w = addition_weights(&state.grad, &state.active);
            let comp = state.active.complement(dim);
            let idx = comp[WeightedIndex::new(&w).expect("addition weights").sample(rng)];
            (state.active.with(idx), Some(idx))
        }
    };
    let s = cfg.std();
    let mut tau = ParamVector::zeros(dim);
    for i in active.iter() {
        tau[i] = state.theta[i] - cfg.gamma * state.grad[i] + s * rng.sample::<f64, _>(StandardNormal);
    }
    let log_q_forward = log_q(cfg, state, &tau, &active);
    Proposal {
        theta: tau,
        active,
        mv: Move { kind, index },
        log_q_forward,
    }
}

/// Unnormalised log posterior `-lambda R_n(theta) + log Pi(theta)`.
pub fn log_target(cfg: &RjmcmcConfig, prior: &MixturePrior, theta: &[f64], active: &ActiveSet, risk: f64) -> f64 {
    let lp = prior.log_density_on_active(active, theta);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    -cfg.lambda * risk + lp
}

/// Log acceptance probability plus the state at the proposal (absent when
/// the proposal has zero prior density, e.g. outside the box).
#[derive(Debug, Clone)]
pub struct RjEval {
    pub log_alpha: f64,
    pub at_proposal: Option<RjState>,
}

pub fn evaluate<M: RiskModel>(
    cfg: &RjmcmcConfig,
    prior: &MixturePrior,
    state: &RjState,
    proposal: &Proposal,
    model: &M,
) -> RjEval {
    if prior.log_density_on_active(&proposal.active, &proposal.theta) == f64::NEG_INFINITY {
        return RjEval {
            log_alpha: f64::NEG_INFINITY,
            at_proposal: None,
        };
    }
    let next = RjState {
        step: state.step + 1,
        ..RjState::new(model, proposal.theta.clone(), proposal.active.clone())
    };
    let log_q_reverse = log_q(cfg, &next, &state.theta, &state.active);
    let log_ratio = log_target(cfg, prior, &next.theta, &next.active, next.risk)
        - log_target(cfg, prior, &state.theta, &state.active, state.risk)
        + log_q_reverse
        - proposal.log_q_forward;
    RjEval {
        log_alpha: if log_ratio.is_nan() {
            f64::NEG_INFINITY
        } else {
            log_ratio.min(0.0)
        },
        at_proposal: Some(next),
    }
}

/// `log alpha(proposal | state)`.
pub fn rj_acceptance_log_prob<M: RiskModel>(
    cfg: &RjmcmcConfig,
    prior: &MixturePrior,
    state: &RjState,
    proposal: &Proposal,
    model: &M,
) -> f64 {
    evaluate(cfg, prior, state, proposal, model).log_alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RjOutcome {
    pub accepted: bool,
    pub kind: MoveKind,
    pub out_of_support: bool,
}

pub fn step<M: RiskModel, R: Rng>(
    cfg: &RjmcmcConfig,
    prior: &MixturePrior,
    state: RjState,
    model: &M,
    rng: &mut R,
) -> (RjState, RjOutcome) {
    let proposal = propose(cfg, &state, rng);
    let eval = evaluate(cfg, prior, &state, &proposal, model);
    let u: f64 = rng.gen();
    let kind = proposal.mv.kind;
    match eval.at_proposal {
        Some(next) if u.ln() < eval.log_alpha => (
            next,
            RjOutcome {
                accepted: true,
                kind,
                out_of_support: false,
            },
        ),
        other => {
            let out_of_support = other.is_none();
            (
                RjState {
                    step: state.step + 1,
                    ..state
                },
                RjOutcome {
                    accepted: false,
                    kind,
                    out_of_support,
                },
            )
        }
    }
}

/// Row of the sparsity trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub step: usize,
    pub cardinality: usize,
    pub risk: f64,
    pub accepted: u8,
    pub move_kind: MoveKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RjDiagnostics {
    pub acceptance_rate: f64,
    /// Acceptance rate of keep moves only.
    pub keep_acceptance_rate: f64,
    pub steps: usize,
    pub pilot_steps: usize,
    pub grad_evals: usize,
    pub out_of_support: usize,
    pub gamma: f64,
    pub proposal_std: f64,
}

#[derive(Debug, Clone)]
pub struct RjRun {
    /// `(theta^(b), I^(b))`.
    pub draw: (ParamVector, ActiveSet),
    pub kept: Vec<(ParamVector, ActiveSet)>,
    pub sparsity_trace: Vec<SparsityRow>,
    pub diagnostics: RjDiagnostics,
}

/// Where the reversible-jump chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitSupport {
    /// Every coordinate active. Sequential births rarely assemble a
    /// connected input-output path from scratch, so pruning down tends to
    /// mix better than growing up.
    #[default]
    Full,
    /// Active set drawn from the mixture prior.
    Prior,
}

/// Values uniform on `[-B/10, B/10]` over the chosen starting support.
pub fn default_init<R: Rng>(prior: &MixturePrior, support: InitSupport, rng: &mut R) -> (ParamVector, ActiveSet) {
    let active = match support {
        InitSupport::Full => ActiveSet::full(prior.dim),
        InitSupport::Prior => prior.sample(rng).0,
    };
    let h = prior.box_bound / 10.0;
    let mut theta = ParamVector::zeros(prior.dim);
    for i in active.iter() {
        theta[i] = rng.gen_range(-h..=h);
    }
    (theta, active)
}

pub fn run<M: RiskModel>(
    cfg: &RjmcmcConfig,
    prior: &MixturePrior,
    model: &M,
    init: ParamVector,
    init_active: ActiveSet,
) -> Result<RjRun> {
    cfg.validate()?;
    if prior.dim != model.dim() || init.len() != model.dim() {
        return Err(Error::shape("prior, model and initial point disagree on the dimension"));
    }
    if prior.box_bound != cfg.box_bound {
        return Err(Error::config("prior and sampler use different box bounds"));
    }
    if init_active.is_empty() {
        return Err(Error::domain("initial active set is empty"));
    }
    if prior.log_density_on_active(&init_active, &init) == f64::NEG_INFINITY {
        return Err(Error::domain(
            "initial point is off its active support or outside the box",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cfg = cfg.clone();
    let mut state = RjState::new(model, init, init_active);
    let mut grad_evals = 1;

    let mut pilot_steps = 0;
    if let Some(tuning) = cfg.pilot {
        for _ in 0..tuning.rounds {
            let (mut keeps, mut keep_acc) = (0usize, 0usize);
            for _ in 0..tuning.steps_per_round {
                let (next, outcome) = step(&cfg, prior, state, model, &mut rng);
                state = next;
                grad_evals += !outcome.out_of_support as usize;
                if outcome.kind == MoveKind::Keep {
                    keeps += 1;
                    keep_acc += outcome.accepted as usize;
                }
            }
            pilot_steps += tuning.steps_per_round;
            let rate = if keeps == 0 {
                0.0
            } else {
                keep_acc as f64 / keeps as f64
            };
            let next_gamma = adapt_gamma(cfg.gamma, rate, &tuning);
            if next_gamma == cfg.gamma {
                break;
            }
            cfg.gamma = next_gamma;
        }
        state.step = 0;
    }

    let total = cfg.chain_len();
    let mut trace = Vec::with_capacity(total);
    let mut kept = Vec::with_capacity(cfg.n_keep);
    let mut draw = (cfg.burn_in == 0).then(|| (state.theta.clone(), state.active.clone()));
    let (mut accepted, mut keeps, mut keep_acc, mut out_of_support) = (0usize, 0usize, 0usize, 0usize);
    for k in 1..=total {
        let (next, outcome) = step(&cfg, prior, state, model, &mut rng);
        state = next;
        accepted += outcome.accepted as usize;
        grad_evals += !outcome.out_of_support as usize;
        out_of_support += outcome.out_of_support as usize;
        if outcome.kind == MoveKind::Keep {
            keeps += 1;
            keep_acc += outcome.accepted as usize;
        }
        trace.push(SparsityRow {
            step: k,
            cardinality: state.active.len(),
            risk: state.risk,
            accepted: outcome.accepted as u8,
            move_kind: outcome.kind,
        });
        if k == cfg.burn_in {
            draw = Some((state.theta.clone(), state.active.clone()));
        }
        if k > cfg.burn_in && (k - cfg.burn_in).is_multiple_of(cfg.gap) {
            kept.push((state.theta.clone(), state.active.clone()));
        }
    }
    Ok(RjRun {
        draw: draw.expect("burn-in reached"),
        kept,
        sparsity_trace: trace,
        diagnostics: RjDiagnostics {
            acceptance_rate: accepted as f64 / total.max(1) as f64,
            keep_acceptance_rate: if keeps == 0 {
                0.0
            } else {
                keep_acc as f64 / keeps as f64
            },
            steps: total,
            pilot_steps,
            grad_evals,
            out_of_support,
            gamma: cfg.gamma,
            proposal_std: cfg.std(),
        },
    })
}

/// CSV with columns `step,cardinality,risk,accepted,move_kind`.
pub fn write_sparsity_trace<W: Write>(rows: &[SparsityRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sparsity_trace_file(rows: &[SparsityRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sparsity_trace(rows, std::io::BufWriter::new(f)).map_err(|e| Error::csv(path, e))
}
