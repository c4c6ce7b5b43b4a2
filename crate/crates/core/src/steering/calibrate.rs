use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{constrained_argmax, InterventionSpec, LanguageModel, TokenSequence};

use super::{Hyperplane, SteeringVector, MIN_STEERING_NORM};

/// Evenly spaced strengths `min, min + step, ..., <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            min: 0.0,
            max: 5.0,
            step: 0.05,
        }
    }
}

impl LambdaGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if self.step.is_nan() || self.step <= 0.0 || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid lambda grid {self:?}")));
        }
        if self.min > self.max {
            return Err(Error::InvalidConfig(format!(
                "lambda_min {} exceeds lambda_max {}",
                self.min, self.max
            )));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        // snap to 12 decimals so 11 * 0.05 prints as 0.55
        Ok((0..=n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    #[default]
    HyperplaneProxy,
    FullModel,
}

impl CalibrationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMode::HyperplaneProxy => "hyperplane_proxy",
            CalibrationMode::FullModel => "full_model",
        }
    }
}

/// A validation prompt (ending at the answer cue) and its gold option index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPrompt {
    pub prompt: TokenSequence,
    pub options: Vec<u32>,
    pub gold_index: usize,
}

/// What "accuracy at strength λ" is measured against.
pub enum ValidationSurface<'a> {
    /// Positive validation representations classified by the hyperplane after
    /// shifting each by `λ v`.
    Hyperplane {
        surface: &'a Hyperplane,
        positives: &'a [Vec<f64>],
    },
    /// Steered constrained decoding of the validation prompts.
    FullModel {
        model: &'a dyn LanguageModel,
        prompts: &'a [ValidationPrompt],
    },
}

impl ValidationSurface<'_> {
    fn mode(&self) -> CalibrationMode {
        match self {
            ValidationSurface::Hyperplane { .. } => CalibrationMode::HyperplaneProxy,
            ValidationSurface::FullModel { .. } => CalibrationMode::FullModel,
        }
    }

    fn len(&self) -> usize {
        match self {
            ValidationSurface::Hyperplane { positives, .. } => positives.len(),
            ValidationSurface::FullModel { prompts, .. } => prompts.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub item_id: u8,
    pub lambda_star: f64,
    pub achieved_accuracy: f64,
    pub alpha: f64,
    /// `(λ, accuracy)` in increasing λ order.
    pub grid: Vec<(f64, f64)>,
    pub mode: CalibrationMode,
    pub target_unreached: bool,
}

/// Denominator used to read `alpha` as an exact rational.
const ALPHA_SCALE: i128 = 1_000_000_000;

/// `|k/n - (1 - alpha)|` scaled by `n * ALPHA_SCALE`, computed in integers.
fn scaled_distance(correct: usize, n: usize, alpha_units: i128) -> i128 {
    (correct as i128 * ALPHA_SCALE - n as i128 * (ALPHA_SCALE - alpha_units)).abs()
}

/// Picks the grid strength whose validation accuracy is closest to
/// `1 - alpha`, preferring the smallest such strength.
///
/// `alpha` is read at 1e-9 resolution so that the objective and its ties are
/// evaluated exactly.
pub fn calibrate_strength(
    v: &SteeringVector,
    surface: ValidationSurface<'_>,
    alpha: f64,
    grid: &LambdaGrid,
) -> Result<CalibrationResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1)")));
    }
    if v.norm < MIN_STEERING_NORM {
        return Err(Error::DegenerateSteering {
            item_id: v.item_id,
            norm: v.norm,
        });
    }
    let lambdas = grid.points()?;
    let n = surface.len();
    if n == 0 {
        return Err(Error::EmptyValidation);
    }

    let counts: Vec<usize> = match &surface {
        ValidationSurface::Hyperplane { surface, positives } => {
            if surface.weights.len() != v.vector.len() {
                return Err(Error::DimensionMismatch {
                    expected: v.vector.len(),
                    got: surface.weights.len(),
                });
            }
            let base: Vec<f64> = positives.iter().map(|e| surface.margin(e)).collect();
            let wv = dot(&surface.weights, &v.vector);
            lambdas
                .par_iter()
                .map(|&lam| base.iter().filter(|&&m| m + lam * wv > 0.0).count())
                .collect()
        }
        ValidationSurface::FullModel { model, prompts } => lambdas
            .par_iter()
            .map(|&lam| {
                let hook = InterventionSpec::final_token(v.layer, v.vector.clone(), lam);
                let mut correct = 0;
                for p in prompts.iter() {
                    if constrained_argmax(*model, &p.prompt, &p.options, Some(&hook))? == p.gold_index {
                        correct += 1;
                    }
                }
                Ok(correct)
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let alpha_units = (alpha * ALPHA_SCALE as f64).round() as i128;
    let mut best = 0;
    for i in 1..counts.len() {
        if scaled_distance(counts[i], n, alpha_units) < scaled_distance(counts[best], n, alpha_units) {
            best = i;
        }
    }
    let target_unreached = scaled_distance(counts[best], n, alpha_units) > n as i128 * alpha_units;
    Ok(CalibrationResult {
        item_id: v.item_id,
        lambda_star: lambdas[best],
        achieved_accuracy: counts[best] as f64 / n as f64,
        alpha,
        grid: lambdas
            .iter()
            .zip(&counts)
            .map(|(&l, &c)| (l, c as f64 / n as f64))
            .collect(),
        mode: surface.mode(),
        target_unreached,
    })
}
