//! Decoder model abstraction: forward passes with activation capture and an
//! additive hook at one layer.
//!
//! Layers are numbered `1..=L`. The hidden state "at layer l" is the residual
//! stream after the full block `l` (attention + feed-forward), which is also
//! where the intervention hook fires, before block `l + 1` sees it.

mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax_first, softmax};
use crate::vocab::Vocabulary;

pub use toy::{Block, LayerNorm, ToyModel, ToyWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_layers == 0 || !self.num_layers.is_multiple_of(2) {
            return bad("num_layers must be a positive even integer");
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || self.max_seq_len == 0 {
            return bad("hidden_dim, num_heads and max_seq_len must be positive");
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad("num_heads must divide hidden_dim");
        }
        if self.vocab_size < crate::vocab::OPTION_WORDS.len() {
            return bad("vocab_size smaller than the reserved option tokens");
        }
        Ok(())
    }

    /// The intervention layer `L / 2`.
    pub fn steering_layer(&self) -> usize {
        self.num_layers / 2
    }
}

/// The dimensions any model (toy or remote) reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelShape {
    pub fn steering_layer(&self) -> usize {
        self.num_layers / 2
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.num_layers,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub answer_position: Option<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSequence {
            tokens,
            answer_position: None,
        }
    }

    /// Appends `answer` and records its index as the answer position.
    pub fn with_answer(mut self, answer: u32) -> Self {
        self.tokens.push(answer);
        self.answer_position = Some(self.tokens.len() - 1);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        if self.tokens.len() > shape.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.tokens.len(),
                max: shape.max_seq_len,
            });
        }
        if let Some(&bad) = self.tokens.iter().find(|&&t| t as usize >= shape.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: shape.vocab_size,
            });
        }
        if let Some(p) = self.answer_position {
            if p >= self.tokens.len() {
                return Err(Error::AnswerPositionOutOfRange {
                    position: p,
                    len: self.tokens.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerActivations {
    pub layer: usize,
    /// One row per position.
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    #[default]
    FinalTokenOnly,
    AllPositions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub layer: usize,
    pub vector: Vec<f64>,
    pub strength: f64,
    #[serde(default)]
    pub position_policy: PositionPolicy,
}

impl InterventionSpec {
    pub fn final_token(layer: usize, vector: Vec<f64>, strength: f64) -> Self {
        InterventionSpec {
            layer,
            vector,
            strength,
            position_policy: PositionPolicy::FinalTokenOnly,
        }
    }

    pub fn validate(&self, shape: &ModelShape) -> Result<()> {
        shape.check_layer(self.layer)?;
        if self.vector.len() != shape.hidden_dim {
            return Err(Error::DimensionMismatch {
                expected: shape.hidden_dim,
                got: self.vector.len(),
            });
        }
        Ok(())
    }

    /// Applies the hook in place to the hidden states of one layer.
    pub(crate) fn apply(&self, states: &mut [Vec<f64>]) {
        if self.strength == 0.0 {
            return;
        }
        let rows = match self.position_policy {
            PositionPolicy::FinalTokenOnly => states.len() - 1..states.len(),
            PositionPolicy::AllPositions => 0..states.len(),
        };
        for row in &mut states[rows] {
            for (h, v) in row.iter_mut().zip(&self.vector) {
                *h += self.strength * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    /// Next-token logits for the position after the last input token.
    pub logits: Vec<f64>,
    pub captured: Vec<LayerActivations>,
}

impl ForwardOutput {
    pub fn layer(&self, layer: usize) -> Option<&LayerActivations> {
        self.captured.iter().find(|a| a.layer == layer)
    }
}

/// A decoder that can run a teacher-forced pass with an optional additive hook.
///
/// Implementations must be deterministic and safe to call from many threads.
pub trait LanguageModel: Send + Sync {
    fn shape(&self) -> ModelShape;

    fn vocabulary(&self) -> &Vocabulary;

    fn forward(
        &self,
        seq: &TokenSequence,
        intervention: Option<&InterventionSpec>,
        capture_layers: &[usize],
    ) -> Result<ForwardOutput>;
}

/// `h + strength * v`, elementwise.
pub fn steer_hidden(h: &[f64], v: &[f64], strength: f64) -> Result<Vec<f64>> {
    if h.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: v.len(),
        });
    }
    if strength == 0.0 {
        return Ok(h.to_vec());
    }
    Ok(h.iter().zip(v).map(|(x, d)| x + strength * d).collect())
}

fn check_options(options: &[u32], vocab_size: usize) -> Result<()> {
    if options.is_empty() {
        return Err(Error::EmptyOptions);
    }
    for (i, &o) in options.iter().enumerate() {
        if o as usize >= vocab_size {
            return Err(Error::TokenOutOfRange { token: o, vocab_size });
        }
        if options[..i].contains(&o) {
            return Err(Error::DuplicateOption(o));
        }
    }
    Ok(())
}

/// Next-token logits restricted to `options`, in option order.
pub fn option_logits(
    model: &dyn LanguageModel,
    prompt: &TokenSequence,
    options: &[u32],
    intervention: Option<&InterventionSpec>,
) -> Result<Vec<f64>> {
    check_options(options, model.shape().vocab_size)?;
    let out = model.forward(prompt, intervention, &[])?;
    Ok(options.iter().map(|&o| out.logits[o as usize]).collect())
}

/// Constrained next-token distribution: softmax over the option logits only.
pub fn option_distribution(
    model: &dyn LanguageModel,
    prompt: &TokenSequence,
    options: &[u32],
    intervention: Option<&InterventionSpec>,
) -> Result<Vec<f64>> {
    Ok(softmax(&option_logits(model, prompt, options, intervention)?))
}

/// Index of the most likely option; ties go to the earliest option.
pub fn constrained_argmax(
    model: &dyn LanguageModel,
    prompt: &TokenSequence,
    options: &[u32],
    intervention: Option<&InterventionSpec>,
) -> Result<usize> {
    Ok(argmax_first(&option_logits(model, prompt, options, intervention)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steer_identity_and_arithmetic() {
        assert_eq!(steer_hidden(&[1.0, 2.0], &[1.0, -1.0], 0.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(steer_hidden(&[1.0, 2.0], &[1.0, -1.0], 2.0).unwrap(), vec![3.0, 0.0]);
        assert!(matches!(
            steer_hidden(&[1.0], &[1.0, 2.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_invariants() {
        let mut c = ModelConfig {
            num_layers: 4,
            hidden_dim: 32,
            vocab_size: 10,
            num_heads: 4,
            max_seq_len: 64,
            seed: 0,
        };
        assert!(c.validate().is_ok());
        assert_eq!(c.steering_layer(), 2);
        c.num_layers = 3;
        assert!(c.validate().is_err());
        c.num_layers = 4;
        c.num_heads = 5;
        assert!(c.validate().is_err());
        c.num_heads = 4;
        c.vocab_size = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sequence_validation() {
        let shape = ModelShape {
            num_layers: 2,
            hidden_dim: 4,
            vocab_size: 5,
            max_seq_len: 3,
        };
        assert!(matches!(
            TokenSequence::new(vec![]).validate(&shape),
            Err(Error::EmptySequence)
        ));
        assert!(matches!(
            TokenSequence::new(vec![1, 2, 3, 4]).validate(&shape),
            Err(Error::SequenceTooLong { .. })
        ));
        assert!(matches!(
            TokenSequence::new(vec![7]).validate(&shape),
            Err(Error::TokenOutOfRange { .. })
        ));
        let s = TokenSequence::new(vec![1, 2]).with_answer(3);
        assert_eq!(s.answer_position, Some(2));
        assert!(s.validate(&shape).is_ok());
    }
}
