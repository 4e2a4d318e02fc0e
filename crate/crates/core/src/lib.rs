//! Episodic prototypical-network engine for cross-prompt essay trait scoring.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece of
//! the pipeline: the in-memory corpus model, episode samplers, the gated
//! fusion head with its exact backward pass, prototype mechanics, Adam, the
//! meta-training loop, and meta-testing with quadratic weighted kappa.
//! File formats, the CLI and anything touching the filesystem live in the
//! `maple` companion crate.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

pub mod corpus;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod optim;
pub mod proto;
pub mod split;
pub mod synth;
pub mod trainer;

mod math;

pub use corpus::{level_of, Corpus, FeatureNormalizer, PoolIndex, PromptFilter, ScoreScale, ShiftPolicy};
pub use episodes::{Classification, Episode, EpisodeConfig, EpisodeSampler, MetaTestTask, Regime, SupportSource};
pub use error::{Error, Result};
pub use eval::{qwk, run_cv, run_fold, EvalReport, ExperimentConfig, FoldAudit, TaskScore};
pub use fusion::{HeadConfig, HeadInput, HeadParams, Mode};
pub use optim::{AdamConfig, AdamState};
pub use proto::{EpisodeLossResult, PrototypeSet};
pub use split::{DevSource, Split, SplitSpec};
pub use synth::SyntheticSpec;
pub use trainer::{train, Checkpoint, InputTable, LogRow, TrainConfig, TrainOutcome};
