//! In-memory building blocks of the experiment runner.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{build_contrast_pairs, extract_representations, Polarity};
use crate::datasets::{RelevanceRecord, UserHistory};
use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::model::LanguageModel;
use crate::steering::{
    calibrate_strength, compute_steering_vector, fit_hyperplane, CalibrationMode, CalibrationResult, Hyperplane,
    HyperplaneConfig, LambdaGrid, Provenance, SteeringFile, ValidationPrompt, ValidationSurface,
};
use crate::tasks::{
    complete_questionnaire, relevance_logits, relevance_prompt, AnswerSheet, BdiItem, ItemSteering, Retriever,
    SteeringSet, TaskSettings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub alpha: f64,
    pub grid: LambdaGrid,
    pub mode: CalibrationMode,
    pub hyperplane: HyperplaneConfig,
    /// Intervention layer; `None` means `L / 2`.
    pub layer: Option<usize>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            alpha: 0.01,
            grid: LambdaGrid::default(),
            mode: CalibrationMode::HyperplaneProxy,
            hyperplane: HyperplaneConfig::default(),
            layer: None,
        }
    }
}

/// Everything produced while calibrating one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCalibration {
    pub file: SteeringFile,
    pub result: CalibrationResult,
    pub hyperplane: Hyperplane,
}

impl ItemCalibration {
    pub fn steering(&self) -> ItemSteering {
        ItemSteering {
            vector: self.file.steering_vector(),
            strength: self.file.lambda_star,
        }
    }
}

fn for_item(records: &[RelevanceRecord], item_id: u8) -> Vec<RelevanceRecord> {
    records.iter().filter(|r| r.item_id == item_id).cloned().collect()
}

/// Steering vector from the training records, hyperplane proxy, and the
/// strength calibrated on the validation records.
pub fn calibrate_item(
    model: &dyn LanguageModel,
    task: &TaskSettings,
    train: &[RelevanceRecord],
    val: &[RelevanceRecord],
    item: &BdiItem,
    settings: &CalibrationSettings,
) -> Result<ItemCalibration> {
    let layer = settings.layer.unwrap_or_else(|| model.shape().steering_layer());
    let train = for_item(train, item.item_id);
    let val = for_item(val, item.item_id);
    let pairs = build_contrast_pairs(model, task, &train, item)?;
    let reps = extract_representations(model, &pairs, layer)?;
    let mut reps = reps;
    reps.item_id = item.item_id;
    let vector = compute_steering_vector(&reps)?;
    let hyperplane = fit_hyperplane(&reps, &settings.hyperplane)?;
    if hyperplane.degenerate {
        log::warn!(
            "item {}: hyperplane no better than the majority class (train accuracy {:.3})",
            item.item_id,
            hyperplane.train_accuracy
        );
    }

    let result = match settings.mode {
        CalibrationMode::HyperplaneProxy => {
            let val_pairs = build_contrast_pairs(model, task, &val, item)?;
            let positives: Vec<_> = val_pairs
                .into_iter()
                .filter(|p| p.polarity == Polarity::Positive)
                .collect();
            let val_reps = extract_representations(model, &positives, layer)?;
            calibrate_strength(
                &vector,
                ValidationSurface::Hyperplane {
                    surface: &hyperplane,
                    positives: &val_reps.vectors,
                },
                settings.alpha,
                &settings.grid,
            )?
        }
        CalibrationMode::FullModel => {
            let prompts = val
                .iter()
                .map(|r| {
                    Ok(ValidationPrompt {
                        prompt: relevance_prompt(model, task, &r.text, item)?,
                        options: item.binary_tokens().to_vec(),
                        gold_index: r.label as usize,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            calibrate_strength(
                &vector,
                ValidationSurface::FullModel {
                    model,
                    prompts: &prompts,
                },
                settings.alpha,
                &settings.grid,
            )?
        }
    };
    if result.target_unreached {
        log::warn!(
            "item {}: target accuracy {:.3} not reached on the grid (best {:.3} at lambda {})",
            item.item_id,
            1.0 - settings.alpha,
            result.achieved_accuracy,
            result.lambda_star
        );
    }

    let n_rel = train.iter().filter(|r| r.label == 1).count();
    let file = SteeringFile {
        item_id: item.item_id,
        layer,
        vector: vector.vector.clone(),
        lambda_star: result.lambda_star,
        alpha: settings.alpha,
        mode: settings.mode.as_str().to_string(),
        provenance: Provenance {
            n_positive: vector.n_positive,
            n_negative: vector.n_negative,
            n_relevant_records: n_rel,
            n_non_relevant_records: train.len() - n_rel,
            norm: vector.norm,
            hyperplane_train_accuracy: hyperplane.train_accuracy,
            hyperplane_degenerate: hyperplane.degenerate,
            achieved_accuracy: result.achieved_accuracy,
            target_unreached: result.target_unreached,
            grid: settings.grid,
        },
    };
    Ok(ItemCalibration {
        file,
        result,
        hyperplane,
    })
}

/// Calibrates every item in `items`, in item order.
pub fn calibrate_items(
    model: &dyn LanguageModel,
    task: &TaskSettings,
    train: &[RelevanceRecord],
    val: &[RelevanceRecord],
    items: &[BdiItem],
    settings: &CalibrationSettings,
) -> Result<Vec<ItemCalibration>> {
    items
        .par_iter()
        .map(|item| calibrate_item(model, task, train, val, item, settings).map_err(|e| e.with_item(item.item_id)))
        .collect()
}

/// Strength used for one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strength {
    /// Each item at its own calibrated strength.
    Calibrated,
    /// The same strength for every item.
    Fixed(f64),
}

impl Strength {
    /// Label used in file names: `lambda_star` or the number, e.g. `-2`, `0.5`.
    pub fn label(&self) -> String {
        match self {
            Strength::Calibrated => "lambda_star".into(),
            Strength::Fixed(x) => format!("{x}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t, "*" | "star" | "lambda_star" | "λ*") {
            return Ok(Strength::Calibrated);
        }
        t.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Strength::Fixed)
            .ok_or_else(|| Error::InvalidConfig(format!("bad strength `{s}`")))
    }
}

/// One evaluated test record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRow {
    pub post_id: String,
    pub item_id: u8,
    pub label: u8,
    pub strength: f64,
    pub logit_0: f64,
    pub logit_1: f64,
    pub predicted: u8,
}

impl LogitRow {
    pub const HEADER: &'static str = "post_id,item_id,label,strength,logit_0,logit_1,margin,predicted";

    pub fn margin(&self) -> f64 {
        self.logit_1 - self.logit_0
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.9},{:.9},{:.9},{}",
            self.post_id,
            self.item_id,
            self.label,
            self.strength,
            self.logit_0,
            self.logit_1,
            self.margin(),
            self.predicted
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceEval {
    pub strength: Strength,
    pub confusion: ConfusionMatrix,
    pub rows: Vec<LogitRow>,
}

/// Predicts relevance for every record at the given strength, using the
/// item's vector. `Fixed(0.0)` needs no vectors.
pub fn evaluate_relevance(
    model: &dyn LanguageModel,
    task: &TaskSettings,
    records: &[RelevanceRecord],
    items: &[BdiItem],
    vectors: &BTreeMap<u8, ItemSteering>,
    strength: Strength,
) -> Result<RelevanceEval> {
    let by_id: BTreeMap<u8, &BdiItem> = items.iter().map(|i| (i.item_id, i)).collect();
    let rows = records
        .par_iter()
        .map(|r| {
            let item = by_id.get(&r.item_id).ok_or(Error::UnknownItem(r.item_id))?;
            let steer = match strength {
                Strength::Fixed(0.0) => None,
                _ => {
                    let base = vectors
                        .get(&r.item_id)
                        .ok_or_else(|| Error::MissingArtifact(format!("no steering vector for item {}", r.item_id)))?;
                    let lambda = match strength {
                        Strength::Calibrated => base.strength,
                        Strength::Fixed(x) => x,
                    };
                    Some(ItemSteering {
                        vector: base.vector.clone(),
                        strength: lambda,
                    })
                }
            };
            let l = relevance_logits(model, task, &r.text, item, steer.as_ref()).map_err(|e| e.with_item(r.item_id))?;
            Ok(LogitRow {
                post_id: r.post_id.clone(),
                item_id: r.item_id,
                label: r.label,
                strength: steer.as_ref().map_or(0.0, |s| s.strength),
                logit_0: l[0],
                logit_1: l[1],
                predicted: task.tie_break.argmax(&l) as u8,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<u8> = rows.iter().map(|r| r.predicted).collect();
    let truths: Vec<u8> = rows.iter().map(|r| r.label).collect();
    Ok(RelevanceEval {
        strength,
        confusion: confusion(&preds, &truths)?,
        rows,
    })
}

/// Completes the questionnaire for every user, in input order.
pub fn evaluate_questionnaires(
    model: &dyn LanguageModel,
    task: &TaskSettings,
    users: &[UserHistory],
    items: &[BdiItem],
    steering: Option<&SteeringSet>,
    retriever: &Retriever<'_>,
) -> Result<Vec<AnswerSheet>> {
    users
        .par_iter()
        .map(|u| {
            if u.posts.is_empty() {
                return Err(Error::Data(format!("user {} has no posts", u.user_id)));
            }
            complete_questionnaire(model, task, u, items, steering, retriever)
        })
        .collect()
}
