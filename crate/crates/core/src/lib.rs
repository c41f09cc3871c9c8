//! Novel-word learning experiments for masked language models.
//!
//! A novel token is added to a pretrained model, its new rows alone are
//! fine-tuned on one or two stimulus sentences, and the learned token is then
//! probed for grammatical generalization.

pub mod adam;
pub mod config;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod probe;
pub mod refmodel;
pub mod report;
pub mod runner;
pub mod stats;
pub mod stimuli;
pub mod synthcorpus;
pub mod vocab;

pub use error::{Error, Result};
