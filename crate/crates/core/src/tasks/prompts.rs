use serde::{Deserialize, Serialize};

use crate::model::TokenSequence;
use crate::vocab::Vocabulary;

use super::BdiItem;

/// Relevance prompt. Slots: `{item_name}`, `{post}`.
pub const RELEVANCE_TEMPLATE: &str = "Question: Is this Reddit post relevant to answer the specific BDI-II item? \
Answer 1 if the post is topically-relevant to describe the writer's state, feelings, or experience \
and answer the BDI-II item {item_name}, and 0 otherwise (i.e., it is not helpful to answer the item). \
Do not give any explanation, return only 0 or 1. Reddit Post: {post} Answer:";

/// Questionnaire prompt. Slots: `{item_name}`, `{posts}`, `{options}`.
pub const QUESTIONNAIRE_TEMPLATE: &str = "Question: Based on the following Reddit posts written by a user, \
answer the BDI-II item {item_name}. Reddit Posts: {posts} Options: {options} \
Do not give any explanation, return only 0, 1, 2 or 3. Answer:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub relevance: String,
    pub questionnaire: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            relevance: RELEVANCE_TEMPLATE.to_string(),
            questionnaire: QUESTIONNAIRE_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn relevance_text(&self, item: &BdiItem, post: &str) -> String {
        self.relevance
            .replace("{item_name}", &item.name)
            .replace("{post}", post.trim())
    }

    /// Evidence posts are joined one per line, in the given order.
    pub fn questionnaire_text(&self, item: &BdiItem, posts: &[&str]) -> String {
        let block = posts.iter().map(|p| p.trim()).collect::<Vec<_>>().join("\n");
        self.questionnaire
            .replace("{item_name}", &item.name)
            .replace("{options}", &item.options_block())
            .replace("{posts}", &block)
    }

    /// Every text a vocabulary must cover to tokenize these templates.
    pub fn static_texts(&self) -> Vec<String> {
        [&self.relevance, &self.questionnaire]
            .iter()
            .map(|t| {
                t.replace("{item_name}", "")
                    .replace("{post}", "")
                    .replace("{posts}", "")
                    .replace("{options}", "")
            })
            .collect()
    }
}

/// `<bos>` followed by the tokens of `text`.
pub fn encode_prompt(vocab: &Vocabulary, text: &str) -> TokenSequence {
    let mut tokens = vec![vocab.bos()];
    tokens.extend(vocab.encode(text));
    TokenSequence::new(tokens)
}
