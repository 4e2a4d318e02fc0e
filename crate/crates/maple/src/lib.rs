//! Filesystem side of maple: corpus manifests, `EMB1` embeddings, `MHD1`
//! checkpoints, run configuration, reports and the fold runner behind the
//! `maple` binary.

pub mod checkpoint;
pub mod config;
pub mod emb;
pub mod error;
pub mod manifest;
pub mod metric;
pub mod report;
pub mod runner;
pub mod sample;

pub use error::{MapleError, Result};
