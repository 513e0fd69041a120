//! Canonical dialog corpus, vocabularies, padded batches and a synthetic
//! dialog generator.

mod batch;
mod corpus;
pub mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{make_batches, Batch, DEFAULT_MAX_TOKENS, IGNORE_TAG};
pub use corpus::{
    load_corpus, load_corpus_with, load_unlabeled, parse_tag, split_dialogs, write_corpus,
    write_jsonl, Corpus, Dialog, Speaker, Split, Turn, DEFAULT_MAX_TURNS,
};
pub use synthetic::{generate_synthetic, Dependency};
pub use tokenize::tokenize;
pub use vocab::{LabelSets, Vocab, CLS, PAD, SEP, UNK};
