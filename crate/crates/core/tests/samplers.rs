use gsn_core::mala::{self, ChainState, MalaConfig, PilotTuning};
use gsn_core::objective::{ClippedLinearRisk, QuadraticRisk};
use gsn_core::rjmcmc::{self, InitSupport, RjState};
use gsn_core::{ActiveSet, Dataset, Error, MixturePrior, ParamVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Composite midpoint rule with `m` panels per axis on a box.
fn grid_integral(lo: &[f64], hi: &[f64], m: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = lo.len();
    let h: Vec<f64> = (0..d).map(|j| (hi[j] - lo[j]) / m as f64).collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    'outer: loop {
        for j in 0..d {
            x[j] = lo[j] + (idx[j] as f64 + 0.5) * h[j];
        }
        total += f(&x);
        for i in idx.iter_mut() {
            *i += 1;
            if *i < m {
                continue 'outer;
            }
            *i = 0;
        }
        break;
    }
    total * h.iter().product::<f64>()
}

fn small_linear_model(seed: u64) -> ClippedLinearRisk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.5..0.5)).collect();
    ClippedLinearRisk {
        data: Dataset::new(3, x, y).unwrap(),
        clip: 1.0,
    }
}

#[test]
fn mala_proposal_density_integrates_to_one() {
    let mut cfg = MalaConfig::new(5.0, 1.0);
    cfg.gamma = 0.05;
    let from = [0.2, -0.4];
    let grad = [1.0, -3.0];
    let s = cfg.std();
    let lo: Vec<f64> = (0..2).map(|j| from[j] - cfg.gamma * grad[j] - 8.0 * s).collect();
    let hi: Vec<f64> = (0..2).map(|j| from[j] - cfg.gamma * grad[j] + 8.0 * s).collect();
    let total = grid_integral(&lo, &hi, 200, &|t| {
        mala::log_proposal_density(&cfg, &from, t, &grad).exp()
    });
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}

/// Summing the proposal mixture over every reachable active set and
/// integrating its values gives 1.
#[test]
fn reversible_jump_proposal_is_a_probability_kernel() {
    let model = small_linear_model(1);
    let mut cfg = MalaConfig::new(4.0, 1.0);
    cfg.proposal_std = Some(0.3);
    cfg.gamma = 0.05;
    for start in [vec![1], vec![0, 2], vec![0, 1, 2]] {
        let active = ActiveSet::new(start, 3).unwrap();
        let mut theta = ParamVector::zeros(3);
        for i in active.iter() {
            theta[i] = 0.1 * (i as f64 + 1.0);
        }
        let state = RjState::new(&model, theta, active.clone());
        let mut targets = vec![active.clone()];
        for i in 0..3 {
            if active.contains(i) && active.len() > 1 {
                targets.push(active.without(i));
            } else if !active.contains(i) {
                targets.push(active.with(i));
            }
        }
        let total: f64 = targets
            .iter()
            .map(|to| {
                let coords: Vec<usize> = to.iter().collect();
                let centre: Vec<f64> = coords
                    .iter()
                    .map(|&i| state.theta[i] - cfg.gamma * state.grad[i])
                    .collect();
                let lo: Vec<f64> = centre.iter().map(|c| c - 2.4).collect();
                let hi: Vec<f64> = centre.iter().map(|c| c + 2.4).collect();
                grid_integral(&lo, &hi, 60, &|t| {
                    let mut tau = vec![0.0; 3];
                    for (k, &i) in coords.iter().enumerate() {
                        tau[i] = t[k];
                    }
                    rjmcmc::log_q(&cfg, &state, &tau, to).exp()
                })
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-4, "start {:?}: {total}", active.indices());
    }
}

proptest! {
    #[test]
    fn move_probabilities_are_distributions(dim in 1usize..50, size in 1usize..50) {
        prop_assume!(size <= dim);
        let p = rjmcmc::move_probabilities(size, dim);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        if size == 1 { prop_assert_eq!(p[0], 0.0); }
        if size == dim { prop_assert_eq!(p[2], 0.0); }
    }

    #[test]
    fn move_weights_are_normalised_and_ordered(
        theta in proptest::collection::vec(-1.0f64..1.0, 8),
        grad in proptest::collection::vec(-5.0f64..5.0, 8),
        mask in 1u32..255,
    ) {
        let active = ActiveSet::new((0..8).filter(|i| mask >> i & 1 == 1).collect(), 8).unwrap();
        let rm = rjmcmc::removal_weights(&theta, &active);
        prop_assert!((rm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, &i) in rm.iter().zip(active.indices()) {
            for (b, &j) in rm.iter().zip(active.indices()) {
                if theta[i].abs() < theta[j].abs() { prop_assert!(a >= b); }
            }
        }
        let comp = active.complement(8);
        prop_assume!(!comp.is_empty());
        let add = rjmcmc::addition_weights(&grad, &active);
        prop_assert_eq!(add.len(), comp.len());
        prop_assert!((add.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, &i) in add.iter().zip(&comp) {
            for (b, &j) in add.iter().zip(&comp) {
                if grad[i].abs() <= grad[j].abs() { prop_assert!(a <= b); }
            }
        }
    }

    #[test]
    fn proposals_carry_their_own_density(seed in 0u64..500, mask in 1u32..8) {
        let model = small_linear_model(seed);
        let mut cfg = MalaConfig::new(3.0, 1.0);
        cfg.proposal_std = Some(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let active = ActiveSet::new((0..3).filter(|i| mask >> i & 1 == 1).collect(), 3).unwrap();
        let mut theta = ParamVector::zeros(3);
        for i in active.iter() { theta[i] = rng.gen_range(-0.9..0.9); }
        let state = RjState::new(&model, theta, active);
        let prop = rjmcmc::propose(&cfg, &state, &mut rng);
        prop_assert!(prop.active.consistent(&prop.theta));
        let again = rjmcmc::log_q(&cfg, &state, &prop.theta, &prop.active);
        prop_assert!((prop.log_q_forward - again).abs() <= 1e-12 * (1.0 + again.abs()));
    }

    #[test]
    fn mala_balance_identity(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0) {
        let model = small_linear_model(9);
        let mut cfg = MalaConfig::new(6.0, 1.0);
        cfg.gamma = 0.03;
        let x = ChainState::new(&model, ParamVector(vec![a, b, 0.1]));
        let y = ChainState::new(&model, ParamVector(vec![c, d, -0.2]));
        let side = |s: &ChainState, t: &ChainState| {
            -cfg.lambda * s.risk
                + mala::log_proposal_density(&cfg, &s.theta, &t.theta, &s.grad)
                + mala::acceptance_log_prob(&cfg, s, &t.theta, &model)
        };
        prop_assert!((side(&x, &y) - side(&y, &x)).abs() < 1e-10);
    }
}

#[test]
fn proposals_outside_the_box_are_rejected() {
    let model = QuadraticRisk::isotropic(2, 1.0);
    let cfg = MalaConfig::new(1.0, 1.0);
    let state = ChainState::new(&model, ParamVector(vec![0.9, 0.0]));
    assert_eq!(
        mala::acceptance_log_prob(&cfg, &state, &[1.01, 0.0], &model),
        f64::NEG_INFINITY
    );
    assert!(mala::acceptance_log_prob(&cfg, &state, &[1.0, 0.0], &model).is_finite());
}

#[test]
fn samplers_reject_bad_initial_states() {
    let model = QuadraticRisk::isotropic(2, 1.0);
    let cfg = MalaConfig::new(1.0, 1.0);
    assert!(matches!(
        mala::run(&cfg, &model, ParamVector(vec![1.5, 0.0])),
        Err(Error::Domain(_))
    ));
    let prior = MixturePrior::new(2, 1.0).unwrap();
    let err = rjmcmc::run(&cfg, &prior, &model, ParamVector::zeros(2), ActiveSet::empty());
    assert!(matches!(err, Err(Error::Domain(_))));
}

#[test]
fn pilot_tuning_lands_near_the_target_band() {
    let model = QuadraticRisk::isotropic(20, 1.0);
    let mut cfg = MalaConfig::new(50.0, 1.0);
    cfg.gamma = 1.0;
    cfg.burn_in = 4000;
    cfg.pilot = Some(PilotTuning::default());
    let run = mala::run(&cfg, &model, ParamVector::zeros(20)).unwrap();
    let rate = run.diagnostics.acceptance_rate;
    assert!((0.3..=0.8).contains(&rate), "rate {rate}");
    assert!(run.diagnostics.gamma < 1.0);
}

#[test]
fn reversible_jump_states_stay_consistent() {
    let model = small_linear_model(4);
    let prior = MixturePrior::new(3, 1.0).unwrap();
    let mut cfg = MalaConfig::new(30.0, 1.0);
    cfg.burn_in = 500;
    cfg.gap = 7;
    cfg.n_keep = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for support in [InitSupport::Full, InitSupport::Prior] {
        let (init, active) = rjmcmc::default_init(&prior, support, &mut rng);
        let run = rjmcmc::run(&cfg, &prior, &model, init, active).unwrap();
        assert_eq!(run.kept.len(), 200);
        for (theta, set) in &run.kept {
            assert!(!set.is_empty() && set.consistent(theta) && theta.in_box(1.0));
        }
        let moved = run
            .sparsity_trace
            .windows(2)
            .all(|w| w[0].cardinality.abs_diff(w[1].cardinality) <= 1);
        assert!(moved);
    }
}
