use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrast::{Polarity, RepresentationSet};
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Settings for the L2-regularized hinge-loss solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperplaneConfig {
    /// Soft-margin penalty.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread drops below this.
    pub tolerance: f64,
    /// Seeds the per-epoch visiting order.
    pub seed: u64,
}

impl Default for HyperplaneConfig {
    fn default() -> Self {
        HyperplaneConfig {
            c: 10.0,
            max_epochs: 1000,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// Linear decision rule `w·e + b > 0` (positive side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    /// Set when the fit does no better than predicting the majority class.
    pub degenerate: bool,
}

impl Hyperplane {
    pub fn margin(&self, e: &[f64]) -> f64 {
        dot(&self.weights, e) + self.bias
    }

    pub fn classify(&self, e: &[f64]) -> bool {
        self.margin(e) > 0.0
    }
}

const DEGENERATE_TOL: f64 = 1e-6;

/// Fits a soft-margin linear SVM separating positive from negative rows.
///
/// Dual coordinate descent with the bias folded in as a constant feature.
/// Deterministic for a fixed config.
pub fn fit_hyperplane(reps: &RepresentationSet, config: &HyperplaneConfig) -> Result<Hyperplane> {
    let n = reps.len();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    for p in [Polarity::Positive, Polarity::Negative] {
        if reps.count(p) == 0 {
            return Err(Error::EmptyClass(p));
        }
    }
    if config.c <= 0.0 {
        return Err(Error::InvalidConfig("hyperplane C must be positive".into()));
    }
    let d = reps.dim();
    let labels: Vec<f64> = reps
        .polarities
        .iter()
        .map(|p| if *p == Polarity::Positive { 1.0 } else { -1.0 })
        .collect();
    // squared norm of the augmented row [x, 1]
    let q_diag: Vec<f64> = reps.vectors.iter().map(|x| dot(x, x) + 1.0).collect();

    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let x = &reps.vectors[i];
            let y = labels[i];
            let g = y * (dot(&w, x) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == config.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, config.c);
                let step = (alpha[i] - old) * y;
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += step * xj;
                }
                b += step;
            }
        }
        if pg_max - pg_min < config.tolerance {
            break;
        }
    }

    let correct = reps
        .vectors
        .iter()
        .zip(&reps.polarities)
        .filter(|(x, p)| (dot(&w, x) + b > 0.0) == (**p == Polarity::Positive))
        .count();
    let train_accuracy = correct as f64 / n as f64;
    let majority = reps.count(Polarity::Positive).max(reps.count(Polarity::Negative)) as f64 / n as f64;
    Ok(Hyperplane {
        weights: w,
        bias: b,
        train_accuracy,
        degenerate: train_accuracy <= majority + DEGENERATE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn set(pos: Vec<Vec<f64>>, neg: Vec<Vec<f64>>) -> RepresentationSet {
        let pol = [vec![Polarity::Positive; pos.len()], vec![Polarity::Negative; neg.len()]].concat();
        RepresentationSet::new(1, 2, [pos, neg].concat(), pol).unwrap()
    }

    #[test]
    fn separable_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut row = |sign: f64, k: usize| {
            let mut v: Vec<f64> = (0..6).map(|_| noise.sample(&mut rng)).collect();
            v[0] = sign * (1.0 + k as f64 * 0.1);
            v
        };
        let pos: Vec<_> = (0..40).map(|k| row(1.0, k)).collect();
        let neg: Vec<_> = (0..40).map(|k| row(-1.0, k)).collect();
        let h = fit_hyperplane(&set(pos.clone(), neg), &HyperplaneConfig::default()).unwrap();
        assert_eq!(h.train_accuracy, 1.0);
        assert!(!h.degenerate);
        assert!(pos.iter().all(|e| h.margin(e) > 0.0));
    }

    #[test]
    fn identical_classes_are_degenerate() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0 - i as f64 * 0.3]).collect();
        let h = fit_hyperplane(&set(rows.clone(), rows.clone()), &HyperplaneConfig::default()).unwrap();
        assert!(h.train_accuracy <= 0.5 + 1e-6);
        assert!(h.degenerate);
        // any rule labels both copies of a point the same way, so exactly one is right
        assert_eq!(h.train_accuracy, 0.5);
    }

    #[test]
    fn needs_two_classes() {
        let r = set(vec![vec![1.0]], vec![]);
        assert!(matches!(
            fit_hyperplane(&r, &HyperplaneConfig::default()),
            Err(Error::TooFewRows(1))
        ));
        let r = set(vec![vec![1.0], vec![2.0]], vec![]);
        assert!(matches!(
            fit_hyperplane(&r, &HyperplaneConfig::default()),
            Err(Error::EmptyClass(Polarity::Negative))
        ));
    }

    #[test]
    fn deterministic() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        let pol = (0..30)
            .map(|i| {
                if i % 3 == 0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                }
            })
            .collect();
        let r = RepresentationSet::new(1, 2, rows, pol).unwrap();
        let cfg = HyperplaneConfig::default();
        assert_eq!(fit_hyperplane(&r, &cfg).unwrap(), fit_hyperplane(&r, &cfg).unwrap());
    }
}
