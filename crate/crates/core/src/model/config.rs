use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token encoder dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
}

/// Divisor applied to query-key scores in the context fusion stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(H_b)`, the model width.
    Paper,
    /// `sqrt(H_a / heads)`, the per-head width.
    PerHead,
}

impl std::str::FromStr for AttentionScale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(AttentionScale::Paper),
            "per_head" | "per-head" => Ok(AttentionScale::PerHead),
            other => Err(format!("unknown attention scale {other:?}")),
        }
    }
}

/// Which components are active. All three on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub self_attentive_pooler: bool,
    pub context_fusion: bool,
    pub global_lstm: bool,
}

impl Components {
    pub const FULL: Components = Components {
        self_attentive_pooler: true,
        context_fusion: true,
        global_lstm: true,
    };

    /// Parses a comma list of enabled components, e.g. `sa,cf,lstm`.
    /// `none` or an empty string disables everything.
    pub fn parse_enabled(list: &str) -> Result<Components> {
        let mut c = Components {
            self_attentive_pooler: false,
            context_fusion: false,
            global_lstm: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "sa" => c.self_attentive_pooler = true,
                "cf" => c.context_fusion = true,
                "lstm" => c.global_lstm = true,
                "none" => {}
                other => {
                    return Err(Error::contract(format!(
                        "unknown component {other:?} (expected sa, cf, lstm)"
                    )))
                }
            }
        }
        Ok(c)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.self_attentive_pooler {
            parts.push("sa");
        }
        if self.context_fusion {
            parts.push("cf");
        }
        if self.global_lstm {
            parts.push("lstm");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join(",")
        }
    }
}

impl Default for Components {
    fn default() -> Self {
        Components::FULL
    }
}

/// Every dimension of the joint model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Number of learnable context vectors in the sentence pooler.
    pub pool_heads: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    /// Attention width `H_a` of the fusion stack.
    pub fusion_hidden: usize,
    pub fusion_ff_dim: usize,
    pub attention_scale: AttentionScale,
    /// Hidden size of the global LSTM.
    pub act_hidden: usize,
    /// Hidden size per direction of the slot BiLSTM.
    pub slot_hidden: usize,
    pub components: Components,
    pub act_threshold: f64,
}

impl ModelConfig {
    /// Full-size dimensions: 12-layer 768-wide encoder, 4 pooling heads,
    /// 6 fusion layers and 256-unit LSTMs.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                n_layers: 12,
                hidden: 768,
                n_heads: 12,
                ff_dim: 3072,
                vocab_size,
                max_tokens: 60,
            },
            pool_heads: 4,
            fusion_layers: 6,
            fusion_heads: 12,
            fusion_hidden: 768,
            fusion_ff_dim: 3072,
            attention_scale: AttentionScale::Paper,
            act_hidden: 256,
            slot_hidden: 256,
            components: Components::FULL,
            act_threshold: 0.5,
        }
    }

    /// Laptop-scale dimensions used for everything that actually trains here.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                n_layers: 2,
                hidden: 64,
                n_heads: 4,
                ff_dim: 128,
                vocab_size,
                max_tokens: 60,
            },
            pool_heads: 4,
            fusion_layers: 2,
            fusion_heads: 4,
            fusion_hidden: 64,
            fusion_ff_dim: 128,
            attention_scale: AttentionScale::Paper,
            act_hidden: 64,
            slot_hidden: 64,
            components: Components::FULL,
            act_threshold: 0.5,
        }
    }

    /// Smallest sensible configuration, for gradient checks and quick tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                n_layers: 1,
                hidden: 8,
                n_heads: 2,
                ff_dim: 8,
                vocab_size,
                max_tokens: 60,
            },
            pool_heads: 2,
            fusion_layers: 2,
            fusion_heads: 2,
            fusion_hidden: 8,
            fusion_ff_dim: 8,
            attention_scale: AttentionScale::Paper,
            act_hidden: 6,
            slot_hidden: 5,
            components: Components::FULL,
            act_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let positive = [
            e.n_layers.max(1),
            e.hidden,
            e.n_heads,
            e.ff_dim,
            e.vocab_size,
            self.pool_heads,
            self.fusion_heads,
            self.fusion_hidden,
            self.fusion_ff_dim,
            self.act_hidden,
            self.slot_hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::contract("model dimensions must be positive"));
        }
        if e.hidden % e.n_heads != 0 {
            return Err(Error::contract(format!(
                "encoder width {} is not divisible by {} heads",
                e.hidden, e.n_heads
            )));
        }
        if self.fusion_hidden % self.fusion_heads != 0 {
            return Err(Error::contract(format!(
                "fusion width {} is not divisible by {} heads",
                self.fusion_hidden, self.fusion_heads
            )));
        }
        if e.hidden % 2 != 0 {
            return Err(Error::contract("positional encoding needs an even width"));
        }
        if e.max_tokens < 2 {
            return Err(Error::contract("max_tokens must leave room for CLS and SEP"));
        }
        if !(self.act_threshold > 0.0 && self.act_threshold < 1.0) {
            return Err(Error::contract("act threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}
