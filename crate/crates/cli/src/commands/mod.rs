pub mod cost;
pub mod eval;
pub mod search;
pub mod selftest;
pub mod train;

use std::path::{Path, PathBuf};

use crate::Failure;

/// Resolves the output directory (default `bnas-out`) and creates it.
pub fn out_dir(requested: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = requested.clone().unwrap_or_else(|| PathBuf::from("bnas-out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)?;
    Ok(())
}
