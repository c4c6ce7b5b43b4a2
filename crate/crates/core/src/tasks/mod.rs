//! Zero-shot relevance prediction and item scoring with constrained
//! next-token decoding, plus questionnaire assembly.

mod items;
mod prompts;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::UserHistory;
use crate::error::{Error, Result};
use crate::metrics::{category_of, SeverityCategory};
use crate::model::{option_logits, InterventionSpec, LanguageModel, TokenSequence};
use crate::retrieval::{retrieve_cached, EmbeddingProvider, PostEmbeddings, RetrievalConfig};
use crate::steering::SteeringVector;

pub use items::{check_item_id, item_cues, item_name, BdiItem, NUM_ITEMS};
pub(crate) use items::{CATALOG, LEVEL_WORDS};
pub use prompts::{encode_prompt, PromptTemplates, QUESTIONNAIRE_TEMPLATE, RELEVANCE_TEMPLATE};

/// Which label wins when option logits tie exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    Lower,
    Higher,
}

impl TieBreak {
    pub fn argmax(self, values: &[f64]) -> usize {
        let mut best = match self {
            TieBreak::Lower => 0,
            TieBreak::Higher => values.len() - 1,
        };
        for (i, v) in values.iter().enumerate() {
            let better = match self {
                TieBreak::Lower => *v > values[best],
                TieBreak::Higher => *v >= values[best],
            };
            if better {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSettings {
    pub templates: PromptTemplates,
    pub tie_break: TieBreak,
}

/// A steering vector paired with the strength to apply it at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSteering {
    pub vector: SteeringVector,
    pub strength: f64,
}

impl ItemSteering {
    pub fn intervention(&self) -> InterventionSpec {
        InterventionSpec::final_token(self.vector.layer, self.vector.vector.clone(), self.strength)
    }
}

/// Per-item steering for a whole questionnaire, keyed by item id.
pub type SteeringSet = BTreeMap<u8, ItemSteering>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub user_id: String,
    pub scores: Vec<u8>,
    pub total: u32,
    pub category: SeverityCategory,
}

impl AnswerSheet {
    pub fn new(user_id: impl Into<String>, scores: Vec<u8>) -> Result<Self> {
        if scores.len() != NUM_ITEMS {
            return Err(Error::Data(format!(
                "answer sheet needs {NUM_ITEMS} scores, got {}",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|&&s| s > 3) {
            return Err(Error::Data(format!("item score {bad} outside 0..=3")));
        }
        let total = scores.iter().map(|&s| s as u32).sum();
        Ok(AnswerSheet {
            user_id: user_id.into(),
            scores,
            total,
            category: category_of(total)?,
        })
    }

    /// True when the stored total and category agree with the scores.
    pub fn is_consistent(&self) -> bool {
        let total: u32 = self.scores.iter().map(|&s| s as u32).sum();
        total == self.total && category_of(total).ok() == Some(self.category)
    }
}

fn checked_prompt(model: &dyn LanguageModel, text: &str, overflow_hint: bool) -> Result<TokenSequence> {
    let seq = encode_prompt(model.vocabulary(), text);
    let max = model.shape().max_seq_len;
    if seq.len() > max {
        return Err(if overflow_hint {
            Error::PromptOverflow { len: seq.len(), max }
        } else {
            Error::SequenceTooLong { len: seq.len(), max }
        });
    }
    Ok(seq)
}

/// Tokenized relevance prompt for `post`, ending at the answer cue.
pub fn relevance_prompt(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    post: &str,
    item: &BdiItem,
) -> Result<TokenSequence> {
    if post.trim().is_empty() {
        return Err(Error::Data("empty post".into()));
    }
    checked_prompt(model, &settings.templates.relevance_text(item, post), false)
}

/// `[logit("0"), logit("1")]` for the relevance prompt.
pub fn relevance_logits(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    post: &str,
    item: &BdiItem,
    steering: Option<&ItemSteering>,
) -> Result<[f64; 2]> {
    let prompt = relevance_prompt(model, settings, post, item)?;
    let hook = steering.map(ItemSteering::intervention);
    let l = option_logits(model, &prompt, &item.binary_tokens(), hook.as_ref())?;
    Ok([l[0], l[1]])
}

/// Predicts 1 (relevant) or 0 by constrained decoding over {"0", "1"}.
pub fn predict_relevance(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    post: &str,
    item: &BdiItem,
    steering: Option<&ItemSteering>,
) -> Result<u8> {
    let logits = relevance_logits(model, settings, post, item, steering)?;
    Ok(settings.tie_break.argmax(&logits) as u8)
}

/// Logits of the four score options for an evidence set.
pub fn item_logits(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    evidence_posts: &[&str],
    item: &BdiItem,
    steering: Option<&ItemSteering>,
) -> Result<[f64; 4]> {
    let text = settings.templates.questionnaire_text(item, evidence_posts);
    let prompt = checked_prompt(model, &text, true)?;
    let hook = steering.map(ItemSteering::intervention);
    let l = option_logits(model, &prompt, &item.option_tokens, hook.as_ref())?;
    Ok([l[0], l[1], l[2], l[3]])
}

/// Scores one item 0..=3 from the evidence posts (which may be empty).
pub fn score_item(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    evidence_posts: &[&str],
    item: &BdiItem,
    steering: Option<&ItemSteering>,
) -> Result<u8> {
    let logits = item_logits(model, settings, evidence_posts, item, steering)?;
    Ok(settings.tie_break.argmax(&logits) as u8)
}

/// Retrieval settings plus the embedding model they run on.
pub struct Retriever<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub config: RetrievalConfig,
}

/// Fills the full questionnaire for one user.
///
/// With `steering` set it must cover every item; `None` runs the unsteered
/// baseline.
pub fn complete_questionnaire(
    model: &dyn LanguageModel,
    settings: &TaskSettings,
    user: &UserHistory,
    items: &[BdiItem],
    steering: Option<&SteeringSet>,
    retriever: &Retriever<'_>,
) -> Result<AnswerSheet> {
    if items.len() != NUM_ITEMS {
        return Err(Error::InvalidConfig(format!(
            "questionnaire needs {NUM_ITEMS} items, got {}",
            items.len()
        )));
    }
    if let Some(set) = steering {
        if let Some(missing) = items.iter().find(|i| !set.contains_key(&i.item_id)) {
            return Err(Error::MissingArtifact(format!(
                "no steering vector for item {}",
                missing.item_id
            )));
        }
    }
    let cache = PostEmbeddings::build(user, retriever.provider)?;
    let scores = items
        .par_iter()
        .map(|item| {
            let run = || -> Result<u8> {
                let hit = retrieve_cached(user, item, &cache, retriever.provider, &retriever.config)?;
                let evidence: Vec<&str> = hit.selected.iter().map(|(idx, _)| user.posts[*idx].as_str()).collect();
                let steer = steering.and_then(|s| s.get(&item.item_id));
                score_item(model, settings, &evidence, item, steer)
            };
            run().map_err(|e| e.with_item(item.item_id))
        })
        .collect::<Result<Vec<u8>>>()?;
    AnswerSheet::new(user.user_id.clone(), scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_policies() {
        assert_eq!(TieBreak::Lower.argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(TieBreak::Higher.argmax(&[1.0, 1.0, 0.0]), 1);
        assert_eq!(TieBreak::Lower.argmax(&[0.0, 2.0, 1.0]), 1);
        assert_eq!(TieBreak::Higher.argmax(&[0.0, 2.0, 1.0]), 1);
    }

    #[test]
    fn sheet_totals_and_categories() {
        let zero = AnswerSheet::new("u", vec![0; 21]).unwrap();
        assert_eq!(zero.total, 0);
        assert_eq!(zero.category, SeverityCategory::Minimal);
        let max = AnswerSheet::new("u", vec![3; 21]).unwrap();
        assert_eq!(max.total, 63);
        assert_eq!(max.category, SeverityCategory::Severe);
        assert!(max.is_consistent());
        assert!(AnswerSheet::new("u", vec![4; 21]).is_err());
        assert!(AnswerSheet::new("u", vec![0; 20]).is_err());
    }
}
