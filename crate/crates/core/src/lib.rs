//! Many-to-one voice conversion with diverse intonation.
//!
//! A frame-level phoneme classifier ([`phoneme`]) supplies a speaker-independent
//! condition; a conditional VAE ([`synth`]), optionally with an inverse
//! autoregressive flow posterior ([`flow`]), decodes target-speaker magnitudes
//! from that condition and a latent draw; [`signal`] turns them back into audio.
//! [`pipeline`] chains the stages and [`harness`] provides the corpus,
//! checkpoints, configuration and CLI.

pub mod error;
pub mod flow;
pub mod harness;
pub mod neural;
pub mod phoneme;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/signal.md")]
    struct Signal;
    #[doc = include_str!("../../../book/src/classifier.md")]
    struct Classifier;
    #[doc = include_str!("../../../book/src/cvae.md")]
    struct Cvae;
    #[doc = include_str!("../../../book/src/flow.md")]
    struct Flow;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    struct Pipeline;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
