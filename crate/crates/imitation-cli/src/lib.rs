//! IO, configuration and experiment orchestration around `imitation-core`:
//! banana CSV and IDX loaders, model checkpoints, the flat config format
//! with its presets, and the run/boundary/validate commands.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod reports;
