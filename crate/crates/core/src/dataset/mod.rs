//! Dataset files, external import and subsampling.

mod format;
mod import;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rpm::Puzzle;

pub use format::{
    from_bytes, load, load_one, save, to_bytes, DatasetHeader, CONFIG_EXTERNAL, HEADER_LEN, MAGIC, PROVENANCE_LEN,
    VERSION,
};
pub use import::{import_external, resize_area, ImportReport};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated dataset: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("{0}")]
    Invalid(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.display().to_string(), source }
    }
}

/// Sorted indices of a uniform sample without replacement of
/// `floor(n * fraction)` out of `n`.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::Invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    let k = (n as f64 * fraction).floor() as usize;
    if k == 0 {
        return Err(DatasetError::Invalid(format!("fraction {fraction} of {n} puzzles is empty")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Random subset keeping the original order.
pub fn subsample(puzzles: &[Puzzle], fraction: f64, seed: u64) -> Result<Vec<Puzzle>, DatasetError> {
    Ok(subsample_indices(puzzles.len(), fraction, seed)?.into_iter().map(|i| puzzles[i].clone()).collect())
}
