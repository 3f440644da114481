//! Library surface of the pipeline CLI, split out so integration tests can
//! drive configuration, checkpointing, and the HTTP service directly.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod jsonl;
pub mod serve;
