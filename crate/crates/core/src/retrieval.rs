//! Dense retrieval of per-item evidence with adaptive top-k selection.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::UserHistory;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::tasks::BdiItem;
use crate::vocab::split_words;

/// Maps text to a deterministic unit-norm vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Seeded random projection of word-count vectors.
///
/// Each distinct word gets a Gaussian column derived from `(seed, word)`, so
/// the projection never has to be materialized for an open vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashProjectionEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashProjectionEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashProjectionEmbedder { dim, seed }
    }

    fn column(&self, word: &str) -> Vec<f64> {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(word.as_bytes())
            .finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl EmbeddingProvider for HashProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for w in split_words(text) {
            if w.chars().any(char::is_alphanumeric) {
                *counts.entry(w).or_default() += 1.0;
            }
        }
        let mut v = vec![0.0; self.dim];
        for (w, c) in &counts {
            for (vi, ci) in v.iter_mut().zip(self.column(w)) {
                *vi += c * ci;
            }
        }
        let n = norm(&v);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }
}

/// Cosine similarity.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum RetrievalConfig {
    /// Cut at the largest drop between consecutive scores inside `[k_min, k_max]`.
    LargestGap {
        k_min: usize,
        k_max: usize,
    },
    FixedK {
        k: usize,
    },
    /// Keep everything at or above `min_similarity`, at most `k_max`.
    Threshold {
        min_similarity: f64,
        k_max: usize,
    },
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig::LargestGap { k_min: 1, k_max: 10 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RetrievalConfig::LargestGap { k_min, k_max } if k_min == 0 || k_min > k_max => Err(Error::InvalidConfig(
                format!("need 1 <= k_min <= k_max, got [{k_min}, {k_max}]"),
            )),
            RetrievalConfig::FixedK { k: 0 } | RetrievalConfig::Threshold { k_max: 0, .. } => {
                Err(Error::InvalidConfig("k must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Number of leading entries to keep from `scores`, which must be sorted
/// in descending order.
pub fn adaptive_top_k(scores: &[f64], config: &RetrievalConfig) -> usize {
    let n = scores.len();
    if n == 0 {
        return 0;
    }
    match *config {
        RetrievalConfig::LargestGap { k_min, k_max } => {
            if n <= k_min {
                return n;
            }
            let hi = k_max.min(n);
            let gap = |k: usize| if k < n { scores[k - 1] - scores[k] } else { 0.0 };
            let mut best = k_min;
            for k in k_min + 1..=hi {
                if gap(k) > gap(best) {
                    best = k;
                }
            }
            best
        }
        RetrievalConfig::FixedK { k } => k.min(n),
        RetrievalConfig::Threshold { min_similarity, k_max } => {
            scores.iter().take(k_max).take_while(|&&s| s >= min_similarity).count()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub item_id: u8,
    pub user_id: String,
    pub k_star: usize,
    /// `(post index, similarity)`, highest similarity first.
    pub selected: Vec<(usize, f64)>,
}

/// Embeddings of every post of one user, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct PostEmbeddings {
    vectors: Vec<Vec<f64>>,
}

impl PostEmbeddings {
    pub fn build(user: &UserHistory, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let vectors = user
            .posts
            .par_iter()
            .enumerate()
            .map(|(index, p)| {
                let v = provider.embed(p).map_err(|e| Error::Embedding {
                    index,
                    message: e.to_string(),
                })?;
                if v.len() != provider.dim() {
                    return Err(Error::Embedding {
                        index,
                        message: format!("expected dim {}, got {}", provider.dim(), v.len()),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PostEmbeddings { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Ranks a user's posts against one item and keeps the adaptive top-k.
pub fn retrieve(
    user: &UserHistory,
    item: &BdiItem,
    provider: &dyn EmbeddingProvider,
    config: &RetrievalConfig,
) -> Result<RetrievalResult> {
    let cache = PostEmbeddings::build(user, provider)?;
    retrieve_cached(user, item, &cache, provider, config)
}

pub fn retrieve_cached(
    user: &UserHistory,
    item: &BdiItem,
    cache: &PostEmbeddings,
    provider: &dyn EmbeddingProvider,
    config: &RetrievalConfig,
) -> Result<RetrievalResult> {
    config.validate()?;
    if cache.len() != user.posts.len() {
        return Err(Error::Data(format!(
            "embedding cache holds {} posts, user {} has {}",
            cache.len(),
            user.user_id,
            user.posts.len()
        )));
    }
    let query = provider.embed(&item.query_text())?;
    let mut ranked = cache
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((i, similarity(v, &query)?)))
        .collect::<Result<Vec<_>>>()?;
    // stable: equal similarities keep post order
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let scores: Vec<f64> = ranked.iter().map(|r| r.1).collect();
    let k_star = adaptive_top_k(&scores, config);
    ranked.truncate(k_star);
    Ok(RetrievalResult {
        item_id: item.item_id,
        user_id: user.user_id.clone(),
        k_star,
        selected: ranked,
    })
}
