//! Cue-based retrieval recurrent language model (CBR-RNN).
//!
//! An Elman-style recurrent cell that, at every word, performs exactly one
//! retrieval from an append-only key/value memory of its own past states via a
//! single attention head. The crate bundles the model and its baselines, a
//! dual next-word / CCG supertagging trainer, and two evaluation protocols:
//! subject-verb attention tracking and agreement/semantic attraction.

pub mod attraction;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod trainer;

pub use autodiff::{Graph, ParamStore, Tensor};
pub use corpus::{DependencyRecord, TagSequence, TagVocabulary, TokenSequence, Vocabulary};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, StepOutput, Variant};

pub use trainer::{TrainConfig, TrainLog};
