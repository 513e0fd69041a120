mod checkpoint;
mod config;
mod run;

pub use checkpoint::Checkpoint;
pub use config::{Preset, RunConfig};
pub use run::{
    annotate, attention_csv, evaluate, export_attention, parse_attention_csv, predict, train, train_with, EpochRecord,
    TrainOutcome,
};
