//! Empirical risk, Monte-Carlo excess risk against a known regression
//! function, and the per-run risk record.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean_and_stderr, pairwise_sum_by};

/// Training sample `(X_i, Y_i)`, `i = 1..n`, with `X` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    input_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// `x` holds `y.len()` rows of `input_dim` features. An empty dataset is
    /// representable; operations that need data reject it.
    pub fn new(input_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::shape("input dimension must be positive"));
        }
        if x.len() != y.len() * input_dim {
            return Err(Error::shape(format!(
                "{} feature values do not form {} rows of {}",
                x.len(),
                y.len(),
                input_dim
            )));
        }
        Ok(Dataset { input_dim, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Row `i` of `X`.
    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.x.chunks_exact(self.input_dim).zip(self.y.iter().copied())
    }
}

/// `(1/n) sum_i (Y_i - predictor(X_i))^2`.
pub fn empirical_risk<F: Fn(&[f64]) -> f64>(predictor: F, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("empirical risk of an empty dataset"));
    }
    let sum = pairwise_sum_by(0, data.len(), &|i| {
        let r = data.y[i] - predictor(data.x(i));
        r * r
    });
    Ok(sum / data.len() as f64)
}

/// Monte-Carlo estimate of `E_X[(predictor(X) - truth(X))^2]` over `m`
/// fresh `input_dim`-dimensional inputs drawn by `sample_input`, with its
/// standard error.
pub fn excess_risk_mc<F, T, S, R>(
    predictor: F,
    truth: T,
    input_dim: usize,
    mut sample_input: S,
    m: usize,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> f64,
    S: FnMut(&mut R, &mut [f64]),
    R: Rng,
{
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 evaluation points, got {m}")));
    }
    let mut x = vec![0.0; input_dim];
    let sq: Vec<f64> = (0..m)
        .map(|_| {
            sample_input(rng, &mut x);
            let e = predictor(&x) - truth(&x);
            e * e
        })
        .collect();
    Ok(mean_and_stderr(&sq))
}

/// Fixed evaluation inputs with precomputed truth values, so that several
/// predictors are compared on common points.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    input_dim: usize,
    x: Vec<f64>,
    truth: Vec<f64>,
}

impl EvalGrid {
    pub fn new<T: FnMut(&[f64]) -> f64>(input_dim: usize, x: Vec<f64>, mut truth: T) -> Result<Self> {
        if input_dim == 0 || !x.len().is_multiple_of(input_dim) {
            return Err(Error::shape("evaluation inputs do not form whole rows"));
        }
        let truth = x.chunks_exact(input_dim).map(&mut truth).collect();
        Ok(EvalGrid { input_dim, x, truth })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    /// Predictions of `predictor` at every grid point.
    pub fn predict<F: FnMut(&[f64]) -> f64>(&self, predictor: F) -> Vec<f64> {
        self.x.chunks_exact(self.input_dim).map(predictor).collect()
    }

    /// Excess risk estimate and standard error for precomputed predictions.
    pub fn excess_risk_of(&self, predictions: &[f64]) -> Result<(f64, f64)> {
        if self.len() < 2 {
            return Err(Error::domain("need at least 2 evaluation points"));
        }
        if predictions.len() != self.len() {
            return Err(Error::shape("prediction count differs from grid size"));
        }
        let sq: Vec<f64> = predictions
            .iter()
            .zip(&self.truth)
            .map(|(p, t)| (p - t) * (p - t))
            .collect();
        Ok(mean_and_stderr(&sq))
    }

    pub fn excess_risk<F: FnMut(&[f64]) -> f64>(&self, predictor: F) -> Result<(f64, f64)> {
        self.excess_risk_of(&self.predict(predictor))
    }
}

/// Risk summary of one fitted predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub empirical_risk: f64,
    pub excess_risk: f64,
    pub excess_risk_stderr: f64,
    pub n_eval: usize,
}

impl RiskReport {
    /// Excess risk is a mean of squares, so only MC noise can push it
    /// below zero; allow three standard errors.
    pub fn is_consistent(&self) -> bool {
        self.empirical_risk >= 0.0
            && self.excess_risk_stderr >= 0.0
            && self.excess_risk >= -3.0 * self.excess_risk_stderr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform1(rng: &mut ChaCha8Rng, x: &mut [f64]) {
        x[0] = rng.gen::<f64>();
    }

    #[test]
    fn dataset_shape_checks() {
        assert!(Dataset::new(2, vec![1.0, 2.0, 3.0], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(0, vec![], vec![]).is_err());
        let d = Dataset::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0]).unwrap();
        assert_eq!(d.x(1), &[3.0, 4.0]);
        assert_eq!(d.rows().count(), 2);
    }

    #[test]
    fn empirical_risk_examples() {
        let d = Dataset::new(1, vec![0.1, 0.2], vec![1.0, -1.0]).unwrap();
        assert_eq!(empirical_risk(|_| 0.0, &d).unwrap(), 1.0);
        let y = d.y().to_vec();
        assert_eq!(
            empirical_risk(|x| if x[0] < 0.15 { y[0] } else { y[1] }, &d).unwrap(),
            0.0
        );
        let single = Dataset::new(1, vec![0.0], vec![3.0]).unwrap();
        assert_eq!(empirical_risk(|_| 1.0, &single).unwrap(), 4.0);
        let empty = Dataset::new(1, vec![], vec![]).unwrap();
        assert!(matches!(empirical_risk(|_| 0.0, &empty), Err(Error::Domain(_))));
    }

    #[test]
    fn excess_risk_exact_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (e, s) = excess_risk_mc(|x| x[0], |x| x[0], 1, uniform1, 100, &mut rng).unwrap();
        assert_eq!((e, s), (0.0, 0.0));
        let (e, s) = excess_risk_mc(|_| 0.7, |_| 0.0, 1, uniform1, 100, &mut rng).unwrap();
        assert!((e - 0.49).abs() < 1e-15);
        assert!(s < 1e-15);
        assert!(excess_risk_mc(|_| 0.0, |_| 0.0, 1, uniform1, 1, &mut rng).is_err());
    }

    #[test]
    fn excess_risk_of_identity_against_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (e, s) = excess_risk_mc(|_| 0.0, |x| x[0], 1, uniform1, 1_000_000, &mut rng).unwrap();
        assert!((e - 1.0 / 3.0).abs() <= 3.0 * s, "{e} +- {s}");
    }

    #[test]
    fn excess_risk_is_seed_deterministic() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            excess_risk_mc(|x| x[0] * x[0], |x| x[0], 1, uniform1, 1000, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn eval_grid_matches_direct_mc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5000).map(|_| rng.gen()).collect();
        let grid = EvalGrid::new(1, x, |x| x[0]).unwrap();
        let (e, _) = grid.excess_risk(|_| 0.0).unwrap();
        let direct: f64 = grid.truth().iter().map(|t| t * t).sum::<f64>() / 5000.0;
        assert!((e - direct).abs() < 1e-12);
    }

    #[test]
    fn report_json_field_names() {
        let r = RiskReport {
            empirical_risk: 0.5,
            excess_risk: 0.25,
            excess_risk_stderr: 0.01,
            n_eval: 10,
        };
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["empirical_risk", "excess_risk", "excess_risk_stderr", "n_eval"]);
        assert!(r.is_consistent());
    }
}
