//! Corpus schemas, NDJSON loaders and writers, stratified splitting and the
//! synthetic generator.

mod records;
mod split;
mod synthetic;

pub use records::{
    load_relevance_corpus, load_users, write_relevance_corpus, write_relevance_lines, write_users, RelevanceFieldMap,
    RelevanceRecord, UserFieldMap, UserHistory, RELEVANCE_SCHEMA, SCHEMA_VERSION, USERS_SCHEMA,
};
pub use split::{apportion, split, Split, SplitSpec};
pub use synthetic::{generate_synthetic, severity_word, SyntheticConfig, SyntheticWorld, SEVERITY_STEPS};
