//! Command orchestration over a dataset manifest.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod toy;
