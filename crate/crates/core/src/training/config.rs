use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::LabelPolicy;
use crate::error::{Error, Result};
use crate::model::loss::LossWeights;
use crate::model::Variant;

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub learning_rate: f64,
    pub alpha_weight: f64,
    pub beta_norm: f64,
    pub batch_size: usize,
    pub policy: LabelPolicy,
    pub seed: u64,
    /// Global gradient norm above which gradients are rescaled.
    pub clip_norm: f64,
    /// Feed true one-hot labels to the decoder for labeled rows.
    pub teacher_forcing: bool,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::SemiSupervised,
            epochs: 10,
            learning_rate: 0.0005,
            alpha_weight: 30.0,
            beta_norm: 1.0,
            batch_size: 128,
            policy: LabelPolicy::Balanced,
            seed: 0,
            clip_norm: 100.0,
            teacher_forcing: false,
            checkpoint_path: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Argument(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Argument(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_weight: self.alpha_weight,
            beta_norm: self.beta_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Argument(what));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.beta_norm >= 0.0 && self.beta_norm.is_finite()) {
            return bad(format!("beta_norm {} must be nonnegative", self.beta_norm));
        }
        if !(self.alpha_weight >= 0.0 && self.alpha_weight.is_finite()) {
            return bad(format!("alpha_weight {} must be nonnegative", self.alpha_weight));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is too small", self.batch_size));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "variant" => self.variant = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse_num(key, value)?,
            "alpha_weight" | "alpha" => self.alpha_weight = parse_num(key, value)?,
            "beta_norm" => self.beta_norm = parse_num(key, value)?,
            "batch_size" | "batch" => self.batch_size = parse_num(key, value)?,
            "policy" => {
                self.policy = match value {
                    "balanced" | "balanced_1_to_1" => LabelPolicy::Balanced,
                    "natural" => LabelPolicy::Natural,
                    _ => return Err(Error::Argument(format!("unknown policy {value:?}"))),
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "teacher_forcing" => self.teacher_forcing = parse_bool(key, value)?,
            "checkpoint" | "checkpoint_path" => self.checkpoint_path = Some(value.into()),
            other => return Err(Error::Argument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("config line {}: expected key=value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_kv(&text)
    }

    /// Canonical `key=value` rendering, one per line, output paths excluded.
    pub fn canonical(&self) -> String {
        let policy = match self.policy {
            LabelPolicy::Balanced => "balanced",
            LabelPolicy::Natural => "natural",
        };
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "alpha_weight={}", self.alpha_weight);
        let _ = writeln!(s, "beta_norm={}", self.beta_norm);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "policy={policy}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm);
        let _ = writeln!(s, "teacher_forcing={}", self.teacher_forcing);
        s
    }

    /// First 16 hex digits of the SHA-256 of [`TrainConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv("# comment\nepochs = 3\nvariant=ES\nlr=0.01  # inline\npolicy=natural\n")
            .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.variant, Variant::Supervised);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.policy, LabelPolicy::Natural);
        let mut again = TrainConfig::default();
        again.apply_kv(&cfg.canonical()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn hash_tracks_content_only() {
        let a = TrainConfig::default();
        let mut b = TrainConfig::default();
        b.checkpoint_path = Some("x.ckpt".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply_kv("epochs=zero").is_err());
        assert!(cfg.apply_kv("nonsense=1").is_err());
        assert!(cfg.apply_kv("no equals sign").is_err());
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            beta_norm: -1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
