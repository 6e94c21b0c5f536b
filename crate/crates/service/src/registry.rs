use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use bridge_gan::nn::checkpoint::{manifest_digest, MANIFEST_FILE};
use bridge_gan::nn::{Checkpoint, Network, Role, Shape};
use bridge_gan::train::STATE_DIR;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Hex characters of the manifest digest kept as the model id.
pub const ID_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSize {
    pub width: usize,
    pub height: usize,
}

/// What `GET /api/models` reports per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    /// Manifest modification time, RFC 3339.
    pub created: String,
    pub step: u64,
    pub epoch: Option<u32>,
    pub canvas: CanvasSize,
    pub path: PathBuf,
}

#[derive(Debug)]
pub struct LoadedModel {
    pub info: ModelInfo,
    pub network: Arc<Network>,
}

/// A checkpoint that was found but not registered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub reason: String,
}

/// Loaded generators keyed by id. Immutable once built.
#[derive(Debug, Default)]
pub struct Registry {
    models: BTreeMap<String, LoadedModel>,
}

fn checkpoint_dirs(root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if root.join(MANIFEST_FILE).is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        let name = child.file_name().and_then(|n| n.to_str()).unwrap_or("");
        // Resumable training state duplicates the latest snapshot.
        if name.starts_with('.') || name == STATE_DIR {
            continue;
        }
        checkpoint_dirs(&child, out)?;
    }
    Ok(())
}

fn load_one(dir: &Path) -> Result<LoadedModel, String> {
    let ckpt = Checkpoint::load(dir).map_err(|e| e.to_string())?;
    if ckpt.manifest.config.role != Role::Generator {
        return Err("not a generator checkpoint".into());
    }
    let Shape::Image([height, width, _]) = ckpt.network.output_shape() else {
        return Err("generator does not produce images".into());
    };
    let digest = manifest_digest(dir).map_err(|e| e.to_string())?;
    let created = fs::metadata(dir.join(MANIFEST_FILE))
        .and_then(|m| m.modified())
        .unwrap_or(SystemTime::UNIX_EPOCH);
    Ok(LoadedModel {
        info: ModelInfo {
            id: digest[..ID_LEN].to_string(),
            created: humantime::format_rfc3339_seconds(created).to_string(),
            step: ckpt.manifest.step,
            epoch: ckpt.manifest.epoch,
            canvas: CanvasSize { width, height },
            path: dir.to_path_buf(),
        },
        network: Arc::new(ckpt.network),
    })
}

impl Registry {
    /// Registers every generator checkpoint at or below `root`. Checkpoints
    /// that fail to load are skipped and reported. Fails when none loads.
    pub fn load(root: &Path) -> Result<(Registry, Vec<Diagnostic>), ServiceError> {
        let mut dirs = Vec::new();
        checkpoint_dirs(root, &mut dirs).map_err(|e| ServiceError::Io {
            path: root.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut registry = Registry::default();
        let mut diagnostics = Vec::new();
        for dir in dirs {
            match load_one(&dir) {
                Ok(model) => {
                    if let Some(prev) = registry.models.get(&model.info.id) {
                        diagnostics.push(Diagnostic {
                            path: dir,
                            reason: format!("same manifest as {}", prev.info.path.display()),
                        });
                    } else {
                        registry.models.insert(model.info.id.clone(), model);
                    }
                }
                Err(reason) => diagnostics.push(Diagnostic { path: dir, reason }),
            }
        }
        for d in &diagnostics {
            log::warn!("skipped {}: {}", d.path.display(), d.reason);
        }
        if registry.models.is_empty() {
            return Err(ServiceError::NoModels {
                root: root.to_path_buf(),
                diagnostics,
            });
        }
        Ok((registry, diagnostics))
    }

    pub fn get(&self, id: &str) -> Option<&LoadedModel> {
        self.models.get(id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn infos(&self) -> Vec<ModelInfo> {
        self.models.values().map(|m| m.info.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}
