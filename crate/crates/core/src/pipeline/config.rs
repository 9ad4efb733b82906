//! Plain-text `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! (and command-line overrides applied with [`ExperimentConfig::set`]) win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::base_model::BaseModelConfig;
use crate::error::{Error, Result};
use crate::pipeline::data::LabelSet;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(path, i + 1, "empty key"));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidInput(format!("config `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Path under `key`, which must be set and exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p = self
            .path(key)
            .ok_or_else(|| Error::InvalidInput(format!("missing required setting `{key}`")))?;
        if !p.exists() {
            return Err(Error::InvalidInput(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Comma-separated list of numbers.
    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("config `{key}`: bad number `{x}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// First 16 hex digits of the SHA-256 of the canonical `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n"));
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    /// Training settings; unset keys keep [`TrainConfig::default`] values.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            max_epochs: self.parse_or("max_epochs", d.max_epochs)?,
            patience: self.parse_or("patience", d.patience)?,
            batch_size: self.parse_or("batch_size", d.batch_size)?,
            learning_rate: self.parse_or("learning_rate", d.learning_rate)?,
            dropout: self.parse_or("dropout", d.dropout)?,
            clip_norm: self.parse_or("clip_norm", d.clip_norm)?,
            seed: self.parse_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Base model geometry over `labels` with word vectors of size `word_emb_dim`.
    pub fn base_model_config(&self, labels: LabelSet, word_emb_dim: usize) -> Result<BaseModelConfig> {
        let d = BaseModelConfig::new(labels);
        let cfg = BaseModelConfig {
            char_emb_dim: self.parse_or("char_emb_dim", d.char_emb_dim)?,
            char_hidden: self.parse_or("char_hidden", d.char_hidden)?,
            word_emb_dim,
            word_hidden: self.parse_or("word_hidden", d.word_hidden)?,
            label_set: d.label_set,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
