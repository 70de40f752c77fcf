//! Experiment harness: synthetic corpus, label ingestion, checkpoints, run
//! configuration, manifests and the command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod labels;
pub mod manifest;

pub use checkpoint::{Checkpoint, ModelKind};
pub use config::RunConfig;
pub use corpus::{
    generate_corpus, speaker_voice, toy_inventory, toy_phonemes, ContourFamily, Corpus, CorpusConfig, PhonemeSound,
    Split, Utterance, Voice, CONFUSABLE_PAIR,
};
pub use labels::{format_labels, frame_labels, load_corpus, load_corpus_dir, parse_labels, save_corpus, Segment};
pub use manifest::{sha256_file, sha256_hex, Manifest, MANIFEST_FILE};
