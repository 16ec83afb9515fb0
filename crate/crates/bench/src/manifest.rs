//! A JSON record of how a run was produced.

use std::path::Path;

use anyhow::Result;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub config: &'a C,
    pub outputs: Vec<String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, seed: u64, workers: usize, config: &'a C) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            workers,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
