//! Cross-domain molecular transformer with mixture-of-experts attention.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encode;
pub mod model;
pub mod molgraph;
pub mod numcore;
pub mod pretrain;
pub mod tasks;
