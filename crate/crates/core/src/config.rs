//! Run configuration: hyperparameters, profiles, and ablation switches.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::default_punctuation;

/// Which model component to disable, mirroring the ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Topic vector forced to zero; the graph is never queried.
    NoTgg,
    /// Latent path replaced by a deterministic affine map of h_x:
    /// no noise, no posterior, no KL term.
    NoCvae,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub vocab_size: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub latent_size: usize,
    pub layers: usize,
    /// Neighbors fed to the decoder (top-K topic words).
    pub top_k: usize,
    /// Topic words extracted per utterance.
    pub topic_words: usize,
    /// Corpus-side truncation length.
    pub max_len: usize,
    /// Decoding budget per generated segment.
    pub max_gen: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Epochs of stagnant validation loss before a decay step.
    pub lr_patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Write checkpoints/epoch-N.ckpt every this many epochs (the final
    /// epoch is always written).
    pub checkpoint_every: usize,
    pub warmup_steps: usize,
    pub kl_floor: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub punctuation: Vec<String>,
    pub weight_direct: f64,
    pub weight_kl: f64,
    pub weight_bow: f64,
    pub ablation: Ablation,
    /// Debugging aid: train the mediator first, then the CVAE alone.
    pub two_phase: bool,
}

impl RunConfig {
    /// Minutes-scale settings for tests and small corpora.
    pub fn desk() -> Self {
        RunConfig {
            profile: "desk".into(),
            vocab_size: 2000,
            embedding_size: 32,
            hidden_size: 64,
            latent_size: 32,
            layers: 2,
            top_k: 5,
            topic_words: 3,
            max_len: 50,
            max_gen: 30,
            learning_rate: 5e-3,
            lr_decay: 0.99,
            lr_patience: 3,
            batch_size: 1,
            epochs: 50,
            checkpoint_every: 1,
            warmup_steps: 500,
            kl_floor: 0.0,
            grad_clip: 5.0,
            seed: 1,
            val_fraction: 0.1,
            punctuation: default_punctuation().into_iter().collect(),
            weight_direct: 1.0,
            weight_kl: 1.0,
            weight_bow: 1.0,
            ablation: Ablation::None,
            two_phase: false,
        }
    }

    /// Full-scale hyperparameters: hidden 256, embedding 200, vocabulary
    /// 40000, batch 128, top-5 neighbors.
    pub fn paper() -> Self {
        RunConfig {
            profile: "paper".into(),
            vocab_size: 40_000,
            embedding_size: 200,
            hidden_size: 256,
            latent_size: 32,
            layers: 2,
            top_k: 5,
            topic_words: 3,
            max_len: 50,
            max_gen: 50,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            lr_patience: 3,
            batch_size: 128,
            epochs: 20,
            checkpoint_every: 1,
            warmup_steps: 2000,
            kl_floor: 0.0,
            grad_clip: 5.0,
            seed: 1,
            val_fraction: 0.1,
            punctuation: default_punctuation().into_iter().collect(),
            weight_direct: 1.0,
            weight_kl: 1.0,
            weight_bow: 1.0,
            ablation: Ablation::None,
            two_phase: false,
        }
    }

    pub fn from_profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}; expected \"desk\" or \"paper\""
            ))),
        }
    }

    pub fn punctuation_set(&self) -> BTreeSet<String> {
        self.punctuation.iter().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("latent_size", self.latent_size),
            ("layers", self.layers),
            ("top_k", self.top_k),
            ("topic_words", self.topic_words),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 6 {
            return Err(Error::Config("vocab_size must be at least 6".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_floor) {
            return Err(Error::Config("kl_floor must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.profile == "paper"
            && (self.hidden_size != 256
                || self.embedding_size != 200
                || self.vocab_size != 40_000
                || self.batch_size != 128
                || self.top_k != 5)
        {
            return Err(Error::Config(
                "paper profile pins hidden 256, embedding 200, vocab 40000, batch 128, top_k 5"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}
