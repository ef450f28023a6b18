//! Curriculum construction, training schedules and data artifacts for
//! masked-LM pretraining.
//!
//! The pipeline runs registry → tokenizer → complexity scores → curriculum
//! plan → schedule → masking → shards, with a toy trainer and layer-stacking
//! checkpoint surgery to exercise it end to end. All randomness flows from one
//! seed through named [`rng`] streams.

pub mod blocks;
pub mod cli;
pub mod complexity;
pub mod curriculum;
pub mod error;
pub mod layer_stack;
pub mod masking;
pub mod registry;
pub mod rng;
pub mod schedule;
pub mod shard;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use registry::{Modality, Registry, SeqId};
pub use rng::SplitMix64;
