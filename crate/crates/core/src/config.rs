//! Run configuration: everything that determines a training run, serialized
//! as JSON and hashed into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, FreezePolicy};
use crate::error::{Error, Result};
use crate::multiscale::{MultiScaleConfig, MultiScaleModel};
use crate::trainer::{config_hash, TrainingConfig};

/// Dataset locations. Relative paths resolve against the data root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// ASAP-style TSV (`essay_id, essay_set, essay, domain1_score`).
    pub asap_tsv: Option<PathBuf>,
    /// Commonlit-style CSV (`id, excerpt, target`).
    pub crp_csv: Option<PathBuf>,
    /// Prompt table JSON; the built-in ASAP and CRP table when absent.
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub prompt: i64,
    pub model: MultiScaleConfig,
    /// `vocab_size` here is the cap for the vocabulary built from the corpus.
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
    pub freeze: FreezePolicy,
    pub out_dir: PathBuf,
    /// Master seed; copied into `training.seed` by [`RunConfig::normalize`].
    pub seed: u64,
    pub transfer: bool,
    /// Worker threads for folds and scale evaluations; 0 uses every core.
    pub jobs: usize,
    /// Fold indices to run; all folds when empty.
    pub folds: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            prompt: 1,
            model: MultiScaleConfig::default(),
            encoder: EncoderConfig::default(),
            training: TrainingConfig::default(),
            freeze: FreezePolicy::default(),
            out_dir: PathBuf::from("runs"),
            seed: 42,
            transfer: false,
            jobs: 0,
            folds: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    /// Propagates shared settings: the master seed and the dropout rate.
    pub fn normalize(&mut self) {
        self.training.seed = self.seed;
        self.encoder.dropout = self.training.dropout;
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.training.validate()?;
        if self.model.doc_len + 2 > self.encoder.max_positions {
            return Err(Error::InvalidArgument(format!(
                "doc_len {} does not fit max_positions {}",
                self.model.doc_len, self.encoder.max_positions
            )));
        }
        if self.training.seed != self.seed || self.encoder.dropout != self.training.dropout {
            return Err(Error::InvalidArgument("config was not normalized".into()));
        }
        if let Some(&f) = self.folds.iter().find(|&&f| f >= crate::corpus::N_FOLDS) {
            return Err(Error::InvalidArgument(format!("fold index {f} out of range")));
        }
        Ok(())
    }

    /// The config with run-local settings (output directory, thread count)
    /// reset, so that they do not affect the hash.
    pub fn identity(&self) -> RunConfig {
        RunConfig {
            out_dir: RunConfig::default().out_dir,
            jobs: 0,
            ..self.clone()
        }
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(&self.identity())
    }

    /// Builds a freshly initialized model for a vocabulary of `vocab_len` tokens.
    pub fn build_model(&self, vocab_len: usize) -> Result<MultiScaleModel> {
        let enc = EncoderConfig {
            vocab_size: vocab_len,
            dropout: self.training.dropout,
            ..self.encoder.clone()
        };
        MultiScaleModel::new(enc, self.model.clone(), self.freeze, self.seed)
    }

    /// Resolves a dataset path against `root` unless it is absolute.
    pub fn resolve(path: &Path, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if path.is_relative() => r.join(path),
            _ => path.to_path_buf(),
        }
    }
}
