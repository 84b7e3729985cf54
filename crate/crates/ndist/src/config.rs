//! Run configuration: one TOML document wiring together corpus, codec,
//! LM, speaker, TTT, and training settings, with a content hash that is
//! embedded into every artifact the run produces.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ar_lm::LmConfig;
use crate::checkpoint;
use crate::corpus::CorpusConfig;
use crate::error::{NdistError, Result};
use crate::flow_vae::CodecConfig;
use crate::speaker::SpeakerConfig;
use crate::ttt::TttConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub vae_steps: usize,
    pub lm_steps: usize,
    pub batch_size: usize,
    pub vae_lr: f64,
    pub lm_lr: f64,
    /// Length of the random waveform crops used for codec training, in
    /// latent frames (crop = frames × hop samples).
    pub vae_crop_frames: usize,
    /// Serializes everything that affects numerics; slower but bit-stable.
    pub deterministic: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vae_steps: 3000,
            lm_steps: 3000,
            batch_size: 8,
            vae_lr: 2e-3,
            lm_lr: 1e-3,
            vae_crop_frames: 8,
            deterministic: true,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub codec: CodecConfig,
    pub lm: LmConfig,
    pub speaker: SpeakerConfig,
    pub ttt: TttConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| NdistError::invalid("RunConfig", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| NdistError::invalid("RunConfig", e.to_string()))
    }

    /// Section validity plus cross-section wiring checks.
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.lm.validate()?;
        self.ttt.validate()?;
        if self.codec.latent_dim != self.lm.latent_dim {
            return Err(NdistError::invalid(
                "RunConfig",
                format!(
                    "codec.latent_dim {} != lm.latent_dim {}",
                    self.codec.latent_dim, self.lm.latent_dim
                ),
            ));
        }
        if self.speaker.latent_dim != self.lm.speaker_dim {
            return Err(NdistError::invalid(
                "RunConfig",
                format!(
                    "speaker.latent_dim {} != lm.speaker_dim {}",
                    self.speaker.latent_dim, self.lm.speaker_dim
                ),
            ));
        }
        if self.corpus.sample_rate != self.codec.sample_rate {
            return Err(NdistError::invalid(
                "RunConfig",
                format!(
                    "corpus.sample_rate {} != codec.sample_rate {}",
                    self.corpus.sample_rate, self.codec.sample_rate
                ),
            ));
        }
        if self.train.batch_size == 0 || self.train.log_every == 0 || self.train.vae_crop_frames == 0
        {
            return Err(NdistError::invalid(
                "RunConfig",
                "train.batch_size, train.log_every, and train.vae_crop_frames must be positive",
            ));
        }
        if !(self.train.vae_lr > 0.0) || !(self.train.lm_lr > 0.0) {
            return Err(NdistError::invalid(
                "RunConfig",
                "learning rates must be positive",
            ));
        }
        Ok(())
    }

    /// Content hash over the fully resolved config.
    pub fn hash(&self) -> Result<String> {
        checkpoint::fingerprint(self)
    }

    /// Deterministic mode, with the environment override applied.
    pub fn deterministic(&self) -> bool {
        match std::env::var("NDIST_DETERMINISTIC") {
            Ok(v) if v == "1" => true,
            Ok(v) if v == "0" => false,
            _ => self.train.deterministic,
        }
    }
}
