use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{RelevanceFieldMap, SplitSpec, UserFieldMap};
use crate::error::{Error, Result};
use crate::model::{LanguageModel, ToyModel};
use crate::protocol::{ChildTransport, RemoteEmbedder, RemoteModel};
use crate::retrieval::{EmbeddingProvider, HashProjectionEmbedder, RetrievalConfig};
use crate::tasks::TaskSettings;
use crate::vocab::Vocabulary;

use super::{CalibrationSettings, Strength};

/// Where the decoder comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// A toy model saved as JSON, e.g. by `gen-synthetic`.
    Toy { path: PathBuf },
    /// A protocol server started as a child process. `vocab` is a saved
    /// vocabulary (`{"words": [...]}`) used to tokenize prompts on this side.
    Bridge { command: Vec<String>, vocab: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSource {
    Hash { dim: usize, seed: u64 },
    Bridge { command: Vec<String> },
}

impl Default for EmbedderSource {
    fn default() -> Self {
        EmbedderSource::Hash { dim: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataPaths {
    pub relevance: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub relevance_fields: RelevanceFieldMap,
    pub user_fields: UserFieldMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceEvalSettings {
    /// Strengths to evaluate; `"*"` is each item's calibrated strength.
    pub lambdas: Vec<String>,
}

impl Default for RelevanceEvalSettings {
    fn default() -> Self {
        RelevanceEvalSettings {
            lambdas: ["-2", "-1", "*", "0", "1", "2"].map(String::from).to_vec(),
        }
    }
}

impl RelevanceEvalSettings {
    pub fn strengths(&self) -> Result<Vec<Strength>> {
        if self.lambdas.is_empty() {
            return Err(Error::InvalidConfig("relevance_eval.lambdas is empty".into()));
        }
        self.lambdas.iter().map(|s| Strength::parse(s)).collect()
    }
}

/// Full description of one experiment. Serialized into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds the split and the hyperplane solver; overrides their own seeds.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: Option<ModelSource>,
    pub data: DataPaths,
    pub split: SplitSpec,
    pub calibration: CalibrationSettings,
    pub retrieval: RetrievalConfig,
    pub embedder: EmbedderSource,
    pub task: TaskSettings,
    pub relevance_eval: RelevanceEvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: None,
            data: DataPaths::default(),
            split: SplitSpec::default(),
            calibration: CalibrationSettings::default(),
            retrieval: RetrievalConfig::default(),
            embedder: EmbedderSource::default(),
            task: TaskSettings::default(),
            relevance_eval: RelevanceEvalSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Copies the top-level seed into the nested seeds.
    pub fn normalized(mut self) -> Self {
        self.split.seed = self.seed;
        self.calibration.hyperplane.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.retrieval.validate()?;
        let c = &self.calibration;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", c.alpha)));
        }
        c.grid.points()?;
        if c.hyperplane.c.is_nan() || c.hyperplane.c <= 0.0 || c.hyperplane.max_epochs == 0 {
            return Err(Error::InvalidConfig("hyperplane needs C > 0 and max_epochs > 0".into()));
        }
        if let EmbedderSource::Hash { dim: 0, .. } = self.embedder {
            return Err(Error::InvalidConfig("embedder dim must be positive".into()));
        }
        self.relevance_eval.strengths()?;
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("output_dir is empty".into()));
        }
        Ok(())
    }

    pub fn relevance_path(&self) -> Result<&Path> {
        self.data
            .relevance
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("data.relevance is not set".into()))
    }

    pub fn users_path(&self) -> Result<&Path> {
        self.data
            .users
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("data.users is not set".into()))
    }

    pub fn load_model(&self) -> Result<Box<dyn LanguageModel>> {
        match self.model.as_ref() {
            None => Err(Error::InvalidConfig("model is not set".into())),
            Some(ModelSource::Toy { path }) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidConfig(format!("cannot read model {}: {e}", path.display())))?;
                Ok(Box::new(ToyModel::from_json(&text)?))
            }
            Some(ModelSource::Bridge { command, vocab }) => {
                let (program, args) = split_command(command)?;
                let mut vocab: Vocabulary = serde_json::from_str(&std::fs::read_to_string(vocab)?)?;
                vocab.reindex();
                let transport = ChildTransport::spawn(program, args)?;
                Ok(Box::new(RemoteModel::connect(Box::new(transport), vocab)?))
            }
        }
    }

    pub fn load_embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match &self.embedder {
            EmbedderSource::Hash { dim, seed } => Ok(Box::new(HashProjectionEmbedder::new(*dim, *seed))),
            EmbedderSource::Bridge { command } => {
                let (program, args) = split_command(command)?;
                let transport = ChildTransport::spawn(program, args)?;
                Ok(Box::new(RemoteEmbedder::connect(Box::new(transport))?))
            }
        }
    }
}

fn split_command(command: &[String]) -> Result<(&str, &[String])> {
    command
        .split_first()
        .map(|(p, a)| (p.as_str(), a))
        .ok_or_else(|| Error::InvalidConfig("bridge command is empty".into()))
}
