//! Latent-plane sampling, structural screening and montages.

mod grid;
mod montage;
mod screen;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, ImageError};
use crate::nn::{CheckpointError, ModelError, LATENT_DIM};

pub use grid::{
    decode_grid, decode_grid_with, decode_points, grid_points, GridPoint, GridSpec, SampleEntry,
    SampleManifest, SAMPLES_FILE, SAMPLES_VERSION,
};
pub use montage::{montage, montage_dir, EMPTY, SEPARATOR};
pub use screen::{screen, Evidence, FeasibilityReport, ScreenThresholds, Verdict};

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("montage: {0}")]
    Montage(String),
    #[error("{path}: malformed sample manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot load checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

impl ExploreError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        ExploreError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }
}

/// One row of a screening report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub filename: String,
    pub z: [f32; LATENT_DIM],
    #[serde(flatten)]
    pub report: FeasibilityReport,
}

/// Screens every sample of a decoded grid, in grid order. Thresholds default
/// to the values scaled for the sample width.
pub fn screen_dir(dir: &Path, intensity: Option<u8>) -> Result<Vec<ScreenEntry>, ExploreError> {
    let manifest = SampleManifest::load(dir)?;
    let mut thresholds = ScreenThresholds::for_width(manifest.width);
    if let Some(v) = intensity {
        thresholds = thresholds.with_intensity(v);
    }
    let mut entries = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let img = GrayImage::load_png(&dir.join(&s.file))?;
        entries.push(ScreenEntry {
            filename: s.file.clone(),
            z: s.z,
            report: screen(&img, &thresholds),
        });
    }
    Ok(entries)
}
