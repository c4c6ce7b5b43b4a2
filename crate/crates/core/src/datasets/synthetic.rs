//! Planted-truth testbed.
//!
//! The generated toy model is random except for a handful of weights written
//! into mutually orthogonal directions of the residual stream:
//!
//! * every token embedding carries a constant component; severity words also
//!   carry a salience flag and their numeric value, and the answer digits
//!   "0"/"1" carry a signed answer component;
//! * block 1, head 0 attends from every position to the salient words and
//!   writes their mean value (the content reading `c`);
//! * the MLP of block `L/2` writes an agreement feature, positive when an
//!   appended answer digit matches the model's biased belief (`c + b > 1/2`
//!   for "1");
//! * the MLP of block `L/2 + 1` holds the cautious bias `b` in a clamped
//!   channel that reads the answer direction, so pushing the final state
//!   toward the "0" answer drains it and pushing toward "1" doubles it;
//! * the output head scores option `k` as `k (c + channel) - k^2 / 2`, which
//!   picks `round(c + channel)`.
//!
//! All other attention and MLP outputs are projected off the planted
//! directions so that random weights cannot leak into them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::linalg::{dot, norm};
use crate::model::{ModelConfig, ToyModel};
use crate::tasks::{AnswerSheet, PromptTemplates, CATALOG, LEVEL_WORDS, NUM_ITEMS};
use crate::vocab::Vocabulary;

use super::{RelevanceRecord, UserHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Relevance records in total, spread evenly over the 21 items.
    pub n_records: usize,
    pub relevant_fraction: f64,
    /// Distance between relevant and non-relevant severity levels.
    pub signal_strength: f64,
    /// Head offset toward "1" and higher scores, in score units.
    pub cautious_bias: f64,
    /// Spread of the severity words around their planted level.
    pub noise_std: f64,
    /// Answer-direction reading at which the bias channel is fully drained.
    pub bias_gate: f64,
    pub n_users: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_records: 2000,
            relevant_fraction: 0.15,
            signal_strength: 1.0,
            cautious_bias: 0.4,
            noise_std: 0.25,
            bias_gate: 0.15,
            n_users: 40,
            hidden_dim: 32,
            num_layers: 4,
            num_heads: 4,
            max_seq_len: 512,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_records < NUM_ITEMS * 10 {
            return bad(format!("n_records must be at least {}", NUM_ITEMS * 10));
        }
        if !(self.relevant_fraction > 0.0 && self.relevant_fraction < 1.0) {
            return bad("relevant_fraction must lie in (0, 1)".into());
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("cautious_bias", self.cautious_bias),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.cautious_bias >= 0.5 {
            return bad("cautious_bias must stay below 0.5".into());
        }
        if self.bias_gate.is_nan() || self.bias_gate <= 0.0 {
            return bad("bias_gate must be positive".into());
        }
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if self.num_layers < 2 {
            return bad("the planted circuit needs at least 2 layers".into());
        }
        if self.hidden_dim < 16 {
            return bad("hidden_dim must be at least 16".into());
        }
        self.model_config(0).validate()
    }

    fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            vocab_size: vocab_size.max(4),
            num_heads: self.num_heads,
            max_seq_len: self.max_seq_len,
            seed: derive_seed(self.seed, "model", 0),
        }
    }

    pub fn relevant_level(&self) -> f64 {
        (0.5 + self.signal_strength).min(3.0)
    }

    pub fn non_relevant_level(&self) -> f64 {
        (0.5 - self.signal_strength / 4.0).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SyntheticConfig,
    pub model: ToyModel,
    pub records: Vec<RelevanceRecord>,
    pub users: Vec<UserHistory>,
}

/// Severity words `sev00..=sev24` stand for the values `0, 1/8, ..., 3`.
pub const SEVERITY_STEPS: usize = 24;

pub fn severity_word(step: usize) -> String {
    format!("sev{step:02}")
}

const FIRST_PERSON: [&str; 6] = ["i feel", "i am", "i have been", "lately i", "honestly i", "my days"];
const THIRD_PERSON: [&str; 6] = ["my friend", "she", "he said", "my brother", "a coworker", "they"];
const FILLER: [&str; 16] = [
    "today", "weather", "game", "coffee", "movie", "work", "music", "weekend", "dinner", "walk", "book", "train",
    "city", "garden", "news", "phone",
];

// Planted magnitudes, in layer-norm units.
const K_ONE: f64 = 2.0;
const ANSWER: f64 = 1.5;
const SALIENCE: f64 = 2.0;
const ATTN_SCORE: f64 = 12.0;
/// Planted writes are scaled down by this factor and read back up, which
/// keeps them from changing the layer-norm scale noticeably.
const WRITE: f64 = 0.25;
const SHARP: f64 = 16.0;
const AGREE: f64 = 1.0;
/// Beliefs further than this from the threshold give a saturated agreement.
const AGREE_WIDTH: f64 = 0.05;
const HEAD_GAIN: f64 = 4.0;

struct Basis {
    one: Vec<f64>,
    answer: Vec<f64>,
    salience: Vec<f64>,
    value: Vec<f64>,
    content: Vec<f64>,
    agree: Vec<f64>,
    bias: Vec<f64>,
}

impl Basis {
    fn all(&self) -> [&Vec<f64>; 7] {
        [
            &self.one,
            &self.answer,
            &self.salience,
            &self.value,
            &self.content,
            &self.agree,
            &self.bias,
        ]
    }
}

fn project_off(x: &mut [f64], dirs: &[&Vec<f64>]) {
    for u in dirs {
        let p = dot(x, u);
        for (xi, ui) in x.iter_mut().zip(u.iter()) {
            *xi -= p * ui;
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    (0..d).map(|_| n.sample(rng)).collect()
}

fn build_basis(d: usize, rng: &mut ChaCha8Rng) -> Basis {
    let ones: Vec<f64> = vec![1.0 / (d as f64).sqrt(); d];
    let mut found: Vec<Vec<f64>> = vec![ones];
    while found.len() < 8 {
        let mut x = gaussian(rng, d);
        project_off(&mut x, &found.iter().collect::<Vec<_>>());
        let n = norm(&x);
        if n > 1e-6 {
            found.push(x.into_iter().map(|v| v / n).collect());
        }
    }
    let mut it = found.into_iter().skip(1);
    let mut next = || it.next().expect("seven planted directions");
    Basis {
        one: next(),
        answer: next(),
        salience: next(),
        value: next(),
        content: next(),
        agree: next(),
        bias: next(),
    }
}

/// Planted part plus a random remainder off the planted span, scaled to
/// norm `sqrt(d)` so that layer norm leaves the embedding almost unchanged.
fn embed(planted: &[f64], fill: &[f64], basis: &Basis) -> Vec<f64> {
    let d = planted.len() as f64;
    let rest = (d - dot(planted, planted)).max(0.0).sqrt();
    let mut z = fill.to_vec();
    let mut dirs: Vec<&Vec<f64>> = basis.all().to_vec();
    let ones = vec![1.0 / d.sqrt(); planted.len()];
    dirs.push(&ones);
    project_off(&mut z, &dirs);
    let zn = norm(&z).max(1e-12);
    planted.iter().zip(&z).map(|(p, r)| p + r * rest / zn).collect()
}

fn vocabulary(templates: &PromptTemplates) -> Vocabulary {
    let mut texts: Vec<String> = templates.static_texts();
    for (name, cues) in CATALOG {
        texts.push(name.to_string());
        for level in LEVEL_WORDS {
            texts.push(format!("{level} {} {}.", cues[0], cues[1]));
        }
    }
    texts.extend(
        FIRST_PERSON
            .iter()
            .chain(&THIRD_PERSON)
            .chain(&FILLER)
            .map(|s| s.to_string()),
    );
    texts.extend((0..=SEVERITY_STEPS).map(severity_word));
    Vocabulary::from_texts(texts.iter().map(String::as_str))
}

fn plant(config: &SyntheticConfig, vocab: Vocabulary) -> Result<ToyModel> {
    let d = config.hidden_dim;
    let mcfg = config.model_config(vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "plant", 0));
    let basis = build_basis(d, &mut rng);
    let dirs = basis.all();

    let severity: Vec<Option<f64>> = vocab
        .words()
        .iter()
        .map(|w| {
            w.strip_prefix("sev")
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&s| s <= SEVERITY_STEPS)
                .map(|s| s as f64 / 8.0)
        })
        .collect();
    let zero_tok = vocab.option_token(0) as usize;
    let one_tok = vocab.option_token(1) as usize;
    let option_fill = gaussian(&mut rng, d);

    let mut model = ToyModel::random(mcfg, vocab)?;
    let vocab_size = model.config().vocab_size;
    let heads = config.num_heads;
    let hd = d / heads;
    let w = model.weights_mut();

    for (t, sev) in severity.iter().enumerate().take(vocab_size) {
        let mut planted: Vec<f64> = basis.one.iter().map(|x| K_ONE * x).collect();
        let sign = match t {
            _ if t == zero_tok => -1.0,
            _ if t == one_tok => 1.0,
            _ => 0.0,
        };
        for (p, u) in planted.iter_mut().zip(&basis.answer) {
            *p += sign * ANSWER * u;
        }
        if let Some(v) = *sev {
            for ((p, s), val) in planted.iter_mut().zip(&basis.salience).zip(&basis.value) {
                *p += SALIENCE * s + v * val;
            }
        }
        let fill = if (2..6).contains(&t) {
            option_fill.clone()
        } else {
            gaussian(&mut rng, d)
        };
        w.token_embedding
            .row_mut(t)
            .copy_from_slice(&embed(&planted, &fill, &basis));
    }
    for p in 0..w.position_embedding.rows() {
        project_off(w.position_embedding.row_mut(p), &dirs);
    }

    for block in w.blocks.iter_mut() {
        for r in 0..block.w_o.rows() {
            project_off(block.w_o.row_mut(r), &dirs);
        }
        for r in 0..block.w_out.rows() {
            project_off(block.w_out.row_mut(r), &dirs);
        }
    }

    // Content head: block 1, head 0, first head dimension.
    let qk = (ATTN_SCORE * (hd as f64).sqrt() / (K_ONE * SALIENCE)).sqrt();
    let b0 = &mut w.blocks[0];
    for c in 0..hd {
        let zeros = vec![0.0; d];
        b0.w_q.set_col(c, &zeros);
        b0.w_k.set_col(c, &zeros);
        b0.w_v.set_col(c, &zeros);
        b0.w_o.row_mut(c).fill(0.0);
    }
    b0.w_q.set_col(0, &basis.one.iter().map(|x| qk * x).collect::<Vec<_>>());
    b0.w_k
        .set_col(0, &basis.salience.iter().map(|x| qk * x).collect::<Vec<_>>());
    b0.w_v.set_col(0, &basis.value);
    b0.w_o
        .row_mut(0)
        .copy_from_slice(&basis.content.iter().map(|x| WRITE * x).collect::<Vec<_>>());

    // Agreement: |x + y| - |x - y| with y the answer sign and x = c + b - 1/2,
    // the model's own (biased) belief that the content is relevant.
    let mid = config.num_layers / 2;
    let b = config.cautious_bias;
    let x_read: Vec<f64> = (0..d)
        .map(|i| (basis.content[i] / WRITE - (0.5 - b) * basis.one[i] / K_ONE) / AGREE_WIDTH)
        .collect();
    let y_read: Vec<f64> = basis.answer.iter().map(|x| x / ANSWER).collect();
    let agree = &mut w.blocks[mid - 1];
    for (j, (sy, sign_in)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
        .into_iter()
        .enumerate()
    {
        let col: Vec<f64> = (0..d).map(|i| sign_in * SHARP * (x_read[i] + sy * y_read[i])).collect();
        agree.w_in.set_col(j, &col);
        agree.b_in[j] = 0.0;
        let out_sign = if sy > 0.0 { 1.0 } else { -1.0 };
        let row: Vec<f64> = basis
            .agree
            .iter()
            .map(|u| out_sign * AGREE * WRITE / SHARP * u)
            .collect();
        agree.w_out.row_mut(j).copy_from_slice(&row);
    }

    // Bias channel: clamp(b + g * answer, 0, 2b).
    let gain = b / config.bias_gate;
    let channel = &mut w.blocks[mid];
    let col: Vec<f64> = y_read.iter().map(|y| SHARP * gain * y).collect();
    for (j, (offset, sign)) in [(b, 1.0), (-b, -1.0)].into_iter().enumerate() {
        channel.w_in.set_col(j, &col);
        channel.b_in[j] = SHARP * offset;
        let row: Vec<f64> = basis.bias.iter().map(|u| sign * WRITE / SHARP * u).collect();
        channel.w_out.row_mut(j).copy_from_slice(&row);
    }

    // Head: option k scores k (c + channel) - k^2 / 2.
    for k in 0..4 {
        let t = 2 + k;
        let row: Vec<f64> = (0..d)
            .map(|i| HEAD_GAIN * k as f64 * (basis.content[i] + basis.bias[i]) / WRITE)
            .collect();
        w.unembedding.row_mut(t).copy_from_slice(&row);
        w.head_bias[t] = -HEAD_GAIN * (k * k) as f64 / 2.0;
    }
    Ok(model)
}

fn severity_words(rng: &mut ChaCha8Rng, level: f64, noise: f64, count: usize) -> Vec<String> {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    (0..count)
        .map(|_| {
            let v = (level + noise * n.sample(rng)).clamp(0.0, 3.0);
            severity_word((v * 8.0).round() as usize)
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn item_records(config: &SyntheticConfig, item_id: u8, n: usize) -> Vec<RelevanceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "records", item_id as u64));
    let cues = CATALOG[item_id as usize - 1].1;
    let n_rel = ((n as f64 * config.relevant_fraction).round() as usize).clamp(3, n - 3);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_rel)).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let (opener, level) = if label == 1 {
                (pick(&mut rng, &FIRST_PERSON), config.relevant_level())
            } else {
                (pick(&mut rng, &THIRD_PERSON), config.non_relevant_level())
            };
            let mut words = vec![opener.to_string(), pick(&mut rng, &cues).to_string()];
            let count = rng.random_range(2..=3);
            words.extend(severity_words(&mut rng, level, config.noise_std, count));
            for _ in 0..rng.random_range(1..=2) {
                words.push(pick(&mut rng, &FILLER).to_string());
            }
            RelevanceRecord {
                post_id: format!("p{item_id:02}-{i:04}"),
                item_id,
                text: words.join(" "),
                label,
            }
        })
        .collect()
}

fn user(config: &SyntheticConfig, index: usize) -> Result<UserHistory> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "users", index as u64));
    let spread = Normal::new(0.0, 0.6).expect("valid normal");
    let theta: f64 = rng.random_range(0.0..3.0);
    let mut scores = Vec::with_capacity(NUM_ITEMS);
    let mut posts = Vec::new();
    for (_, cues) in CATALOG {
        let score = (theta + spread.sample(&mut rng)).round().clamp(0.0, 3.0) as u8;
        scores.push(score);
        for _ in 0..rng.random_range(1..=3) {
            let mut words = vec![
                pick(&mut rng, &FIRST_PERSON).to_string(),
                cues[0].into(),
                cues[1].into(),
            ];
            let count = rng.random_range(2..=3);
            words.extend(severity_words(&mut rng, score as f64, config.noise_std, count));
            posts.push(words.join(" "));
        }
    }
    for _ in 0..rng.random_range(5..=10) {
        let mut words = vec![pick(&mut rng, &THIRD_PERSON).to_string()];
        for _ in 0..rng.random_range(3..=5) {
            words.push(pick(&mut rng, &FILLER).to_string());
        }
        posts.push(words.join(" "));
    }
    posts.shuffle(&mut rng);
    let user_id = format!("u{index:03}");
    Ok(UserHistory {
        true_sheet: Some(AnswerSheet::new(user_id.clone(), scores)?),
        user_id,
        posts,
    })
}

/// Builds the planted model, a labeled relevance corpus and a user cohort
/// with true answer sheets. Fully determined by `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let vocab = vocabulary(&PromptTemplates::default());
    let model = plant(config, vocab)?;

    let base = config.n_records / NUM_ITEMS;
    let extra = config.n_records % NUM_ITEMS;
    let records = (1..=NUM_ITEMS as u8)
        .into_par_iter()
        .map(|item| item_records(config, item, base + usize::from((item as usize) <= extra)))
        .collect::<Vec<_>>()
        .concat();
    let users = (0..config.n_users)
        .into_par_iter()
        .map(|u| user(config, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticWorld {
        config: config.clone(),
        model,
        records,
        users,
    })
}
