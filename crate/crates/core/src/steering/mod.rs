//! Steering vectors, the hyperplane decision proxy and strength calibration.

mod calibrate;
mod hyperplane;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrast::{Polarity, RepresentationSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

pub use calibrate::{
    calibrate_strength, CalibrationMode, CalibrationResult, LambdaGrid, ValidationPrompt, ValidationSurface,
};
pub use hyperplane::{fit_hyperplane, Hyperplane, HyperplaneConfig};

/// Vectors shorter than this carry no usable direction.
pub const MIN_STEERING_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub item_id: u8,
    pub layer: usize,
    pub vector: Vec<f64>,
    pub norm: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

impl SteeringVector {
    pub fn new(item_id: u8, layer: usize, vector: Vec<f64>, n_positive: usize, n_negative: usize) -> Self {
        let norm = norm(&vector);
        SteeringVector {
            item_id,
            layer,
            vector,
            norm,
            n_positive,
            n_negative,
        }
    }
}

/// Mean of the positive rows minus mean of the negative rows.
pub fn compute_steering_vector(reps: &RepresentationSet) -> Result<SteeringVector> {
    let d = reps.dim();
    let mut pos = vec![0.0; d];
    let mut neg = vec![0.0; d];
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (row, pol) in reps.vectors.iter().zip(&reps.polarities) {
        let (acc, n) = match pol {
            Polarity::Positive => (&mut pos, &mut n_pos),
            Polarity::Negative => (&mut neg, &mut n_neg),
        };
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
        *n += 1;
    }
    if n_pos == 0 {
        return Err(Error::EmptyClass(Polarity::Positive));
    }
    if n_neg == 0 {
        return Err(Error::EmptyClass(Polarity::Negative));
    }
    let vector = pos
        .iter()
        .zip(&neg)
        .map(|(p, q)| p / n_pos as f64 - q / n_neg as f64)
        .collect();
    Ok(SteeringVector::new(reps.item_id, reps.layer, vector, n_pos, n_neg))
}

/// Hyperplane margins `w·(e + λv) + b` for every row and every λ.
///
/// Computed as `margin(e) + λ (w·v)` so that margins are exactly affine in λ.
pub fn margin_distribution(
    surface: &Hyperplane,
    rows: &[Vec<f64>],
    v: &SteeringVector,
    lambdas: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let d = surface.weights.len();
    if v.vector.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.vector.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let base: Vec<f64> = rows.iter().map(|e| surface.margin(e)).collect();
    let wv = dot(&surface.weights, &v.vector);
    Ok(lambdas
        .iter()
        .map(|&lam| base.iter().map(|m| m + lam * wv).collect())
        .collect())
}

/// Bookkeeping stored next to each persisted vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_relevant_records: usize,
    pub n_non_relevant_records: usize,
    pub norm: f64,
    pub hyperplane_train_accuracy: f64,
    pub hyperplane_degenerate: bool,
    pub achieved_accuracy: f64,
    pub target_unreached: bool,
    pub grid: LambdaGrid,
}

/// On-disk form of one calibrated item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringFile {
    pub item_id: u8,
    pub layer: usize,
    pub vector: Vec<f64>,
    pub lambda_star: f64,
    pub alpha: f64,
    pub mode: String,
    pub provenance: Provenance,
}

impl SteeringFile {
    pub fn steering_vector(&self) -> SteeringVector {
        SteeringVector::new(
            self.item_id,
            self.layer,
            self.vector.clone(),
            self.provenance.n_positive,
            self.provenance.n_negative,
        )
    }

    pub fn file_name(item_id: u8) -> String {
        format!("item_{item_id:02}.json")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
