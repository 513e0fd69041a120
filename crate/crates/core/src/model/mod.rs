pub mod act_head;
pub mod cabert;
pub mod config;
pub mod encoder;
pub mod fusion;
pub mod layers;
pub mod slot_tagger;

pub use act_head::{bce_loss, decode_acts, ActHead, LossPair};
pub use cabert::{CabertSlu, DialogPrediction, Forward, Losses, TurnPrediction};
pub use config::{AttentionScale, Components, EncoderConfig, ModelConfig};
pub use encoder::{pool_sentence, Pooled, SentencePooler, UtteranceEncoder};
pub use fusion::{causal_mask, ContextFusion, Fused};
pub use layers::{positional_encoding, AttentionBlock, LayerNorm, Linear, Lstm};
pub use slot_tagger::{ce_loss, concat_act_context, decode_tags, SlotTagger};
