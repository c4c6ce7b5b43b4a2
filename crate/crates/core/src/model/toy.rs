use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ForwardOutput, InterventionSpec, LanguageModel, LayerActivations, ModelConfig, ModelShape, TokenSequence};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::vocab::Vocabulary;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn identity(d: usize) -> Self {
        LayerNorm {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

/// One pre-norm decoder block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln_attn: LayerNorm,
    /// Projections map a row vector: `q = x · w_q`.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln_mlp: LayerNorm,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWeights {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    /// `vocab × hidden`; logits are `unembedding · ln_final(h)`.
    pub unembedding: Matrix,
    pub head_bias: Vec<f64>,
}

/// Small deterministic decoder-only transformer.
///
/// Weights are drawn from a seeded generator and can be edited afterwards to
/// plant structure. The handle is immutable during inference, so forward
/// passes may run concurrently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyModel {
    config: ModelConfig,
    weights: ToyWeights,
    vocab: Vocabulary,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

impl ToyModel {
    pub fn ffn_dim(hidden_dim: usize) -> usize {
        4 * hidden_dim
    }

    /// Seeded random initialization. `config.vocab_size` must equal `vocab.len()`.
    pub fn random(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} does not match vocabulary of {} words",
                config.vocab_size,
                vocab.len()
            )));
        }
        let d = config.hidden_dim;
        let f = Self::ffn_dim(d);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let small = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut draw = |rows, cols, dist: &Normal<f64>| Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng));

        let token_embedding = draw(config.vocab_size, d, &unit);
        let position_embedding = draw(config.max_seq_len, d, &small);
        let mut blocks = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            blocks.push(Block {
                ln_attn: LayerNorm::identity(d),
                w_q: draw(d, d, &small),
                w_k: draw(d, d, &small),
                w_v: draw(d, d, &small),
                w_o: draw(d, d, &small),
                ln_mlp: LayerNorm::identity(d),
                w_in: draw(d, f, &small),
                b_in: vec![0.0; f],
                w_out: draw(f, d, &small),
                b_out: vec![0.0; d],
            });
        }
        let unembedding = draw(config.vocab_size, d, &small);
        let weights = ToyWeights {
            token_embedding,
            position_embedding,
            blocks,
            ln_final: LayerNorm::identity(d),
            unembedding,
            head_bias: vec![0.0; config.vocab_size],
        };
        Ok(ToyModel { config, weights, vocab })
    }

    /// Reads a model written by [`ToyModel::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: ToyModel = serde_json::from_str(text)?;
        model.vocab.reindex();
        model.config.validate()?;
        let w = &model.weights;
        let d = model.config.hidden_dim;
        let consistent = model.vocab.len() == model.config.vocab_size
            && w.token_embedding.rows() == model.config.vocab_size
            && w.token_embedding.cols() == d
            && w.unembedding.rows() == model.config.vocab_size
            && w.head_bias.len() == model.config.vocab_size
            && w.position_embedding.rows() == model.config.max_seq_len
            && w.blocks.len() == model.config.num_layers;
        if !consistent {
            return Err(Error::InvalidConfig("model weights do not match its config".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ToyWeights {
        &mut self.weights
    }

    fn attention(&self, block: &Block, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let normed: Vec<Vec<f64>> = x.iter().map(|r| block.ln_attn.apply(r)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|r| block.w_q.left_mul(r)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| block.w_k.left_mul(r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| block.w_v.left_mul(r)).collect();

        let n = x.len();
        let mut out = Vec::with_capacity(n);
        let mut scores = vec![0.0; n];
        for i in 0..n {
            let mut mixed = vec![0.0; d];
            for h in 0..heads {
                let span = h * hd..(h + 1) * hd;
                let qi = &q[i][span.clone()];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let s = dot(qi, &k[j][span.clone()]) * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                let mut total = 0.0;
                for s in &mut scores[..=i] {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for j in 0..=i {
                    let w = scores[j] / total;
                    for (m, vv) in mixed[span.clone()].iter_mut().zip(&v[j][span.clone()]) {
                        *m += w * vv;
                    }
                }
            }
            out.push(block.w_o.left_mul(&mixed));
        }
        out
    }

    fn mlp(&self, block: &Block, x: &[f64]) -> Vec<f64> {
        let normed = block.ln_mlp.apply(x);
        let mut hidden = block.w_in.left_mul(&normed);
        for (h, b) in hidden.iter_mut().zip(&block.b_in) {
            *h = gelu(*h + b);
        }
        let mut out = block.w_out.left_mul(&hidden);
        for (o, b) in out.iter_mut().zip(&block.b_out) {
            *o += b;
        }
        out
    }
}

impl LanguageModel for ToyModel {
    fn shape(&self) -> ModelShape {
        ModelShape {
            num_layers: self.config.num_layers,
            hidden_dim: self.config.hidden_dim,
            vocab_size: self.config.vocab_size,
            max_seq_len: self.config.max_seq_len,
        }
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(
        &self,
        seq: &TokenSequence,
        intervention: Option<&InterventionSpec>,
        capture_layers: &[usize],
    ) -> Result<ForwardOutput> {
        let shape = self.shape();
        seq.validate(&shape)?;
        for &l in capture_layers {
            shape.check_layer(l)?;
        }
        if let Some(spec) = intervention {
            spec.validate(&shape)?;
        }

        let w = &self.weights;
        let mut x: Vec<Vec<f64>> = seq
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                w.token_embedding
                    .row(t as usize)
                    .iter()
                    .zip(w.position_embedding.row(i))
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();

        let mut captured = Vec::new();
        for (idx, block) in w.blocks.iter().enumerate() {
            let layer = idx + 1;
            let attn = self.attention(block, &x);
            for (row, a) in x.iter_mut().zip(&attn) {
                for (h, v) in row.iter_mut().zip(a) {
                    *h += v;
                }
            }
            for row in x.iter_mut() {
                let m = self.mlp(block, row);
                for (h, v) in row.iter_mut().zip(&m) {
                    *h += v;
                }
            }
            if let Some(spec) = intervention.filter(|s| s.layer == layer) {
                spec.apply(&mut x);
            }
            if capture_layers.contains(&layer) {
                captured.push(LayerActivations {
                    layer,
                    states: x.clone(),
                });
            }
        }

        let last = w.ln_final.apply(x.last().expect("non-empty sequence"));
        let mut logits = w.unembedding.mul_vec(&last);
        for (l, b) in logits.iter_mut().zip(&w.head_bias) {
            *l += b;
        }
        Ok(ForwardOutput { logits, captured })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyModel {
        let vocab = Vocabulary::build(["alpha", "beta", "gamma"]);
        let config = ModelConfig {
            num_layers: 4,
            hidden_dim: 8,
            vocab_size: vocab.len(),
            num_heads: 2,
            max_seq_len: 16,
            seed: 7,
        };
        ToyModel::random(config, vocab).unwrap()
    }

    #[test]
    fn layer_norm_normalizes() {
        let ln = LayerNorm::identity(4);
        let y = ln.apply(&[1.0, 2.0, 3.0, 4.0]);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        assert_eq!(model().weights(), model().weights());
    }

    #[test]
    fn capture_shapes_and_range() {
        let m = model();
        let seq = TokenSequence::new(vec![1, 6, 7, 8]);
        let out = m.forward(&seq, None, &[1, 4]).unwrap();
        assert_eq!(out.logits.len(), m.shape().vocab_size);
        assert_eq!(out.captured.len(), 2);
        assert_eq!(out.captured[0].states.len(), 4);
        assert_eq!(out.captured[0].states[0].len(), 8);
        assert!(matches!(
            m.forward(&seq, None, &[5]),
            Err(Error::LayerOutOfRange { .. })
        ));
        assert!(matches!(
            m.forward(&seq, None, &[0]),
            Err(Error::LayerOutOfRange { .. })
        ));
    }

    #[test]
    fn json_round_trip_restores_vocab_index() {
        let m = model();
        let back = ToyModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.vocabulary().id("beta"), m.vocabulary().id("beta"));
        let seq = TokenSequence::new(vec![1, 6, 7]);
        assert_eq!(
            back.forward(&seq, None, &[]).unwrap().logits,
            m.forward(&seq, None, &[]).unwrap().logits
        );
    }

    #[test]
    fn causal_prefix_states_unchanged_by_suffix() {
        let m = model();
        let a = m.forward(&TokenSequence::new(vec![1, 6, 7]), None, &[2]).unwrap();
        let b = m.forward(&TokenSequence::new(vec![1, 6, 7, 8]), None, &[2]).unwrap();
        assert_eq!(a.captured[0].states[..3], b.captured[0].states[..3]);
    }
}
