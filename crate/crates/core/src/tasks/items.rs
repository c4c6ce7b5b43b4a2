use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const NUM_ITEMS: usize = 21;

/// Item names paired with two topical cue words used by the synthetic
/// corpus and the item query text.
pub(crate) const CATALOG: [(&str, [&str; 2]); NUM_ITEMS] = [
    ("Sadness", ["sad", "unhappy"]),
    ("Pessimism", ["hopeless", "discouraged"]),
    ("Past Failure", ["failure", "failed"]),
    ("Loss of Pleasure", ["pleasure", "enjoy"]),
    ("Guilty Feelings", ["guilty", "guilt"]),
    ("Punishment Feelings", ["punished", "punishment"]),
    ("Self-Dislike", ["dislike", "disappointed"]),
    ("Self-Criticalness", ["criticize", "blame"]),
    ("Suicidal Thoughts or Wishes", ["suicide", "die"]),
    ("Crying", ["cry", "tears"]),
    ("Agitation", ["restless", "agitated"]),
    ("Loss of Interest", ["bored", "indifferent"]),
    ("Indecisiveness", ["decisions", "decide"]),
    ("Worthlessness", ["worthless", "useless"]),
    ("Loss of Energy", ["energy", "drained"]),
    ("Changes in Sleeping Pattern", ["sleep", "insomnia"]),
    ("Irritability", ["irritable", "annoyed"]),
    ("Changes in Appetite", ["appetite", "eating"]),
    ("Concentration Difficulty", ["concentrate", "focus"]),
    ("Tiredness or Fatigue", ["tired", "fatigue"]),
    ("Loss of Interest in Sex", ["sex", "libido"]),
];

pub(crate) const LEVEL_WORDS: [&str; 4] = ["no", "some", "frequent", "constant"];

/// One questionnaire item with its four answer options (scores 0..=3).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BdiItem {
    pub item_id: u8,
    pub name: String,
    pub option_texts: [String; 4],
    pub option_tokens: [u32; 4],
}

impl BdiItem {
    pub fn new(
        item_id: u8,
        name: impl Into<String>,
        option_texts: [String; 4],
        option_tokens: [u32; 4],
    ) -> Result<Self> {
        check_item_id(item_id)?;
        for i in 0..4 {
            if option_tokens[..i].contains(&option_tokens[i]) {
                return Err(Error::DuplicateOption(option_tokens[i]));
            }
        }
        Ok(BdiItem {
            item_id,
            name: name.into(),
            option_texts,
            option_tokens,
        })
    }

    /// The standard item `item_id` with option tokens from `vocab`.
    pub fn standard(item_id: u8, vocab: &Vocabulary) -> Result<Self> {
        check_item_id(item_id)?;
        let (name, cues) = CATALOG[item_id as usize - 1];
        let option_texts = LEVEL_WORDS.map(|level| format!("{level} {} {}", cues[0], cues[1]));
        BdiItem::new(item_id, name, option_texts, vocab.option_tokens())
    }

    /// All 21 standard items in id order.
    pub fn standard_set(vocab: &Vocabulary) -> Vec<BdiItem> {
        (1..=NUM_ITEMS as u8)
            .map(|id| BdiItem::standard(id, vocab).expect("catalog ids are valid"))
            .collect()
    }

    /// Relevance options `[no, yes]`.
    pub fn binary_tokens(&self) -> [u32; 2] {
        [self.option_tokens[0], self.option_tokens[1]]
    }

    /// Text used as the retrieval query for this item.
    pub fn query_text(&self) -> String {
        let mut q = self.name.clone();
        for t in &self.option_texts {
            q.push(' ');
            q.push_str(t);
        }
        q
    }

    /// Options rendered as "0: ... 1: ..." for the questionnaire prompt.
    pub fn options_block(&self) -> String {
        self.option_texts
            .iter()
            .enumerate()
            .map(|(k, t)| format!("{k}: {t}."))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn check_item_id(item_id: u8) -> Result<()> {
    if item_id == 0 || item_id as usize > NUM_ITEMS {
        return Err(Error::UnknownItem(item_id));
    }
    Ok(())
}

/// Topic cue words of an item.
pub fn item_cues(item_id: u8) -> Result<[&'static str; 2]> {
    check_item_id(item_id)?;
    Ok(CATALOG[item_id as usize - 1].1)
}

pub fn item_name(item_id: u8) -> Result<&'static str> {
    check_item_id(item_id)?;
    Ok(CATALOG[item_id as usize - 1].0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_set_has_21_distinct_items() {
        let vocab = Vocabulary::build(Vec::<&str>::new());
        let items = BdiItem::standard_set(&vocab);
        assert_eq!(items.len(), 21);
        assert_eq!(items[0].name, "Sadness");
        assert_eq!(items[20].item_id, 21);
        assert_eq!(
            items[0].options_block(),
            "0: no sad unhappy. 1: some sad unhappy. 2: frequent sad unhappy. 3: constant sad unhappy."
        );
    }

    #[test]
    fn rejects_bad_ids_and_duplicate_options() {
        let vocab = Vocabulary::build(Vec::<&str>::new());
        assert!(matches!(BdiItem::standard(0, &vocab), Err(Error::UnknownItem(0))));
        assert!(matches!(BdiItem::standard(22, &vocab), Err(Error::UnknownItem(22))));
        let texts = ["a", "b", "c", "d"].map(String::from);
        assert!(matches!(
            BdiItem::new(1, "x", texts, [2, 3, 3, 4]),
            Err(Error::DuplicateOption(3))
        ));
    }
}
