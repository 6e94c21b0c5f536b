use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::splitmix64;

use super::{render, sample_spec, BridgeSubtype, Canvas, GeometryError, ParamKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: &str = "bridge-corpus/1";

/// Corpus generation parameters.
#[derive(Debug, Clone)]
pub struct CorpusRequest {
    pub root: PathBuf,
    pub per_subtype: usize,
    pub seed: u64,
    pub canvas: Canvas,
    pub overwrite: bool,
}

impl CorpusRequest {
    /// 1200 images per subtype at 512x128.
    pub fn new(root: impl Into<PathBuf>, seed: u64) -> Self {
        CorpusRequest {
            root: root.into(),
            per_subtype: 1200,
            seed,
            canvas: Canvas::default(),
            overwrite: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRangeEntry {
    pub kind: ParamKind,
    pub min: f64,
    pub max: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format_version: String,
    pub root: String,
    pub canvas: Canvas,
    pub global_seed: u64,
    pub filename_pattern: String,
    pub per_subtype: BTreeMap<BridgeSubtype, usize>,
    pub total: usize,
    pub param_ranges: BTreeMap<BridgeSubtype, Vec<ParamRangeEntry>>,
}

impl CorpusManifest {
    pub fn load(root: &Path) -> Result<Self, GeometryError> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(&path, e))
    }

    /// Image paths in generation order (subtype, then index).
    pub fn image_paths(&self, root: &Path) -> Vec<PathBuf> {
        self.per_subtype
            .iter()
            .flat_map(|(&t, &n)| (0..n).map(move |i| root.join(image_filename(t, i))))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOutcome {
    pub manifest: CorpusManifest,
    /// Images whose pixel buffer repeated an earlier one.
    pub duplicate_images: usize,
}

pub fn image_filename(subtype: BridgeSubtype, index: usize) -> String {
    format!("{}_{index:05}.png", subtype.slug())
}

/// Counter-based per-image seed; no generator state is shared between images.
pub fn image_seed(global: u64, subtype: BridgeSubtype, index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(global) ^ subtype.index() as u64) ^ index as u64)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GeometryError {
    GeometryError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn prepare_root(req: &CorpusRequest) -> Result<(), GeometryError> {
    let root = &req.root;
    if root.exists() {
        let occupied = fs::read_dir(root)
            .map_err(|e| io_err(root, e))?
            .next()
            .is_some();
        if occupied && !req.overwrite {
            return Err(GeometryError::OutputExists(root.display().to_string()));
        }
        if occupied {
            for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
                let path = entry.map_err(|e| io_err(root, e))?.path();
                let ours = path.extension().is_some_and(|e| e == "png")
                    || path.file_name().is_some_and(|n| n == MANIFEST_FILE);
                if ours && path.is_file() {
                    fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
                }
            }
        }
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))
}

/// Renders `per_subtype` images for each of the eight subtypes, writes them as
/// PNGs plus a `manifest.json`, and reports how many pixel buffers repeated.
pub fn generate_corpus(req: &CorpusRequest) -> Result<CorpusOutcome, GeometryError> {
    if req.per_subtype == 0 {
        return Err(GeometryError::EmptyCorpus);
    }
    let canvas = Canvas::new(req.canvas.width, req.canvas.height)?;
    prepare_root(req)?;

    let mut seen = HashSet::new();
    let mut duplicates = 0;
    for subtype in BridgeSubtype::ALL {
        for index in 0..req.per_subtype {
            let spec = sample_spec(subtype, image_seed(req.seed, subtype, index));
            let img = render(&spec, canvas)?;
            let digest: [u8; 32] = Sha256::digest(img.pixels()).into();
            if !seen.insert(digest) {
                duplicates += 1;
            }
            let path = req.root.join(image_filename(subtype, index));
            let bytes = img.to_png().map_err(|e| io_err(&path, e))?;
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
    }
    if duplicates > 0 {
        log::warn!("{duplicates} rendered images repeat an earlier pixel buffer");
    }

    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION.to_string(),
        root: req.root.display().to_string(),
        canvas,
        global_seed: req.seed,
        filename_pattern: "<subtype>_<index:05>.png".to_string(),
        per_subtype: BridgeSubtype::ALL
            .iter()
            .map(|&t| (t, req.per_subtype))
            .collect(),
        total: 8 * req.per_subtype,
        param_ranges: BridgeSubtype::ALL
            .iter()
            .map(|&t| {
                let entries = t
                    .param_kinds()
                    .iter()
                    .map(|&kind| {
                        let (min, max) = kind.range();
                        ParamRangeEntry {
                            kind,
                            min,
                            max,
                            unit: kind.unit().to_string(),
                        }
                    })
                    .collect();
                (t, entries)
            })
            .collect(),
    };
    let path = req.root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(CorpusOutcome {
        manifest,
        duplicate_images: duplicates,
    })
}
