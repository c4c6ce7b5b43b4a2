//! Contrast pairs and answer-token representations.
//!
//! Every labeled post yields two prompts with the same body: one ending in
//! the correct answer token (positive) and one ending in the wrong one
//! (negative).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::RelevanceRecord;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, TokenSequence};
use crate::tasks::{relevance_prompt, BdiItem, TaskSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrompt {
    pub item_id: u8,
    pub post_id: String,
    /// Prompt text including the appended answer digit.
    pub text: String,
    /// Tokens with `answer_position` on the appended answer.
    pub prompt: TokenSequence,
    pub gold_label: u8,
    pub answer_label: u8,
    pub polarity: Polarity,
}

/// Builds the positive and negative prompt for every record of `item`.
pub fn build_contrast_pairs(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    records: &[RelevanceRecord],
    item: &BdiItem,
) -> Result<Vec<LabeledPrompt>> {
    crate::tasks::check_item_id(item.item_id)?;
    let mut out = Vec::new();
    for rec in records.iter().filter(|r| r.item_id == item.item_id) {
        let body = relevance_prompt(model, settings, &rec.text, item)?;
        let text = settings.templates.relevance_text(item, &rec.text);
        for answer in [rec.label, 1 - rec.label] {
            let polarity = if answer == rec.label {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            let token = item.option_tokens[answer as usize];
            let prompt = body.clone().with_answer(token);
            if prompt.len() > model.shape().max_seq_len {
                return Err(Error::SequenceTooLong {
                    len: prompt.len(),
                    max: model.shape().max_seq_len,
                });
            }
            out.push(LabeledPrompt {
                item_id: item.item_id,
                post_id: rec.post_id.clone(),
                text: format!("{text} {answer}"),
                prompt,
                gold_label: rec.label,
                answer_label: answer,
                polarity,
            });
        }
    }
    Ok(out)
}

/// Answer-token hidden states at one layer, with their polarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSet {
    pub item_id: u8,
    pub layer: usize,
    pub vectors: Vec<Vec<f64>>,
    pub polarities: Vec<Polarity>,
    /// Gold label of the record each row came from.
    pub gold_labels: Vec<u8>,
}

impl RepresentationSet {
    pub fn new(item_id: u8, layer: usize, vectors: Vec<Vec<f64>>, polarities: Vec<Polarity>) -> Result<Self> {
        if vectors.len() != polarities.len() {
            return Err(Error::LengthMismatch {
                left: vectors.len(),
                right: polarities.len(),
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        let gold_labels = vec![0; vectors.len()];
        Ok(RepresentationSet {
            item_id,
            layer,
            vectors,
            polarities,
            gold_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn rows(&self, polarity: Polarity) -> impl Iterator<Item = &Vec<f64>> {
        self.vectors
            .iter()
            .zip(&self.polarities)
            .filter(move |(_, p)| **p == polarity)
            .map(|(v, _)| v)
    }

    pub fn count(&self, polarity: Polarity) -> usize {
        self.polarities.iter().filter(|p| **p == polarity).count()
    }

    pub fn positives(&self) -> Vec<Vec<f64>> {
        self.rows(Polarity::Positive).cloned().collect()
    }
}

/// Runs each prompt without any intervention and keeps the layer-`layer`
/// state at its answer position.
pub fn extract_representations(
    model: &dyn LanguageModel,
    pairs: &[LabeledPrompt],
    layer: usize,
) -> Result<RepresentationSet> {
    model.shape().check_layer(layer)?;
    let vectors = pairs
        .par_iter()
        .map(|p| {
            let pos = p.prompt.answer_position.ok_or(Error::MissingAnswerPosition)?;
            let out = model.forward(&p.prompt, None, &[layer])?;
            let states = &out.layer(layer).expect("captured layer").states;
            Ok(states[pos].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let item_id = pairs.first().map_or(0, |p| p.item_id);
    Ok(RepresentationSet {
        item_id,
        layer,
        vectors,
        polarities: pairs.iter().map(|p| p.polarity).collect(),
        gold_labels: pairs.iter().map(|p| p.gold_label).collect(),
    })
}
