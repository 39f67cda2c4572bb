//! Std companion to `ear-core`: dataset and checkpoint files, the TOML run
//! configuration, the experiment pipeline, and the interactive session
//! service.

pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod harness;
pub mod service;
pub mod stats;

pub use ear_core;
