#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer_core::model::{ModelConfig, ToyModel};
use steer_core::vocab::Vocabulary;

pub const WORDS: [&str; 10] = [
    "the", "cat", "sat", "on", "mat", "sad", "happy", "tired", "post", "answer",
];

/// Small random model over a ten-word vocabulary.
pub fn tiny_model(seed: u64) -> ToyModel {
    let vocab = Vocabulary::build(WORDS);
    let config = ModelConfig {
        num_layers: 4,
        hidden_dim: 16,
        vocab_size: vocab.len(),
        num_heads: 4,
        max_seq_len: 64,
        seed,
    };
    ToyModel::random(config, vocab).unwrap()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab_size: usize, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..vocab_size as u32)).collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
