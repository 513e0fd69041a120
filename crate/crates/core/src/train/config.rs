use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_MAX_TOKENS, DEFAULT_MAX_TURNS};
use crate::error::{Error, Result};
use crate::model::{AttentionScale, Components, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset {other:?} (expected paper or desk)")),
        }
    }
}

impl Preset {
    pub fn learning_rate(self) -> f64 {
        match self {
            Preset::Paper => 2e-5,
            Preset::Desk => 1e-3,
        }
    }

    pub fn model(self, vocab_size: usize) -> ModelConfig {
        match self {
            Preset::Paper => ModelConfig::paper(vocab_size),
            Preset::Desk => ModelConfig::desk(vocab_size),
        }
    }
}

/// Everything a training run depends on. Missing JSON fields take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    /// Preset rate when absent.
    pub learning_rate: Option<f64>,
    pub seed: u64,
    pub use_self_attentive_pooler: bool,
    pub use_context_fusion: bool,
    pub use_global_lstm: bool,
    pub attention_scale: AttentionScale,
    /// Train on the act loss alone.
    pub intent_only: bool,
    pub max_tokens: usize,
    pub max_turns: usize,
    pub grad_clip: f64,
    pub min_freq: usize,
    /// Explicit dimensions replacing the preset's. Vocabulary size, token
    /// budget, components and attention scale still come from this config.
    pub dims: Option<ModelConfig>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::Desk,
            epochs: 20,
            batch_size: 4,
            learning_rate: None,
            seed: 0,
            use_self_attentive_pooler: true,
            use_context_fusion: true,
            use_global_lstm: true,
            attention_scale: AttentionScale::Paper,
            intent_only: false,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_turns: DEFAULT_MAX_TURNS,
            grad_clip: 5.0,
            min_freq: 1,
            dims: None,
            data: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::contract(format!("learning rate {lr} must be positive")));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::contract("grad_clip must be positive"));
        }
        if self.max_tokens < 3 || self.max_turns == 0 {
            return Err(Error::contract("max_tokens must be at least 3 and max_turns at least 1"));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.preset.learning_rate())
    }

    pub fn components(&self) -> Components {
        Components {
            self_attentive_pooler: self.use_self_attentive_pooler,
            context_fusion: self.use_context_fusion,
            global_lstm: self.use_global_lstm,
        }
    }

    pub fn set_components(&mut self, c: Components) {
        self.use_self_attentive_pooler = c.self_attentive_pooler;
        self.use_context_fusion = c.context_fusion;
        self.use_global_lstm = c.global_lstm;
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut m = self.dims.clone().unwrap_or_else(|| self.preset.model(vocab_size));
        m.encoder.vocab_size = vocab_size;
        m.encoder.max_tokens = self.max_tokens;
        m.components = self.components();
        m.attention_scale = self.attention_scale;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_takes_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"epochs": 3, "use_context_fusion": false}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert!(!c.use_context_fusion && c.use_global_lstm);
        assert_eq!(c.learning_rate(), 1e-3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"epoch": 3}"#).is_err());
        let paper = RunConfig {
            preset: Preset::Paper,
            ..RunConfig::default()
        };
        assert_eq!(paper.learning_rate(), 2e-5);
        assert_eq!(paper.model_config(50).encoder.n_layers, 12);
    }

    #[test]
    fn zero_epochs_rejected() {
        let c = RunConfig {
            epochs: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
