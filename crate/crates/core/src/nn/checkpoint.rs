//! On-disk weights: a directory holding `manifest.json` plus one raw
//! little-endian `f32` blob per layer (`<layer>.bin`, tensors concatenated
//! in manifest order, each row-major).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelError, Network, NetworkConfig, ParamStore, ParamTensor, TensorRole};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: &str = "bridge-gan-checkpoint/1";
pub const DTYPE: &str = "f32-le";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Blob { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where the weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedLineage {
    /// Seed of the training run (or of initialization for untrained weights).
    pub global_seed: u64,
    /// Seed the weights were initialized from.
    pub init_seed: u64,
    /// Checkpoint the run was resumed from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub file: String,
    /// Hex SHA-256 of the blob.
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub dtype: String,
    pub config: NetworkConfig,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub seed: SeedLineage,
    pub layers: Vec<LayerEntry>,
    /// Free-form echo of the settings that produced the weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
}

/// Metadata written alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: Option<u32>,
    pub seed: SeedLineage,
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub network: Network,
}

fn blob_name(layer: &str) -> String {
    format!("{layer}.bin")
}

fn to_le_bytes(tensors: &[&ParamTensor]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tensors.iter().map(|t| t.data.len() * 4).sum());
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Fills a fresh sibling temporary directory through `fill`, then renames it
/// onto `dir`, replacing any previous contents. Readers never observe a
/// partially written directory.
pub fn write_dir_atomically<T, E>(
    dir: &Path,
    fill: impl FnOnce(&Path) -> Result<T, E>,
) -> Result<T, E>
where
    E: From<CheckpointError>,
{
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io(parent))?;
    let leaf = dir
        .file_name()
        .ok_or_else(|| CheckpointError::Manifest {
            path: dir.to_path_buf(),
            reason: "path has no final component".into(),
        })?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{leaf}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(io(&tmp))?;
    let value = match fill(&tmp) {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    if dir.exists() {
        let old = parent.join(format!(".{leaf}.old-{}", std::process::id()));
        fs::rename(dir, &old).map_err(io(dir))?;
        fs::rename(&tmp, dir).map_err(io(dir))?;
        fs::remove_dir_all(&old).map_err(io(&old))?;
    } else {
        fs::rename(&tmp, dir).map_err(io(dir))?;
    }
    Ok(value)
}

/// Writes `network` into the existing directory `dir` (not atomic on its own).
pub fn write_into(
    dir: &Path,
    network: &Network,
    meta: CheckpointMeta,
) -> Result<CheckpointManifest, CheckpointError> {
    let mut layers = Vec::new();
    for spec in &network.config().layers {
        let owned: Vec<&ParamTensor> = network
            .params()
            .tensors
            .iter()
            .filter(|t| t.layer == spec.name)
            .collect();
        if owned.is_empty() {
            continue;
        }
        let bytes = to_le_bytes(&owned);
        let file = blob_name(&spec.name);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io(&path))?;
        layers.push(LayerEntry {
            name: spec.name.clone(),
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
            tensors: owned
                .iter()
                .map(|t| TensorEntry {
                    role: t.role,
                    shape: t.shape.clone(),
                    trainable: t.trainable(),
                })
                .collect(),
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION.into(),
        dtype: DTYPE.into(),
        config: network.config().clone(),
        step: meta.step,
        epoch: meta.epoch,
        seed: meta.seed,
        layers,
        train_config: meta.train_config,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json).map_err(io(&mpath))?;
    Ok(manifest)
}

/// Writes `network` to `dir` atomically, replacing an existing checkpoint.
pub fn save(
    dir: &Path,
    network: &Network,
    meta: CheckpointMeta,
) -> Result<CheckpointManifest, CheckpointError> {
    write_dir_atomically(dir, |tmp| write_into(tmp, network, meta))
}

pub fn read_manifest(dir: &Path) -> Result<(CheckpointManifest, Vec<u8>), CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io(&path))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Manifest {
            path,
            reason: format!("unsupported format `{}`", manifest.format_version),
        });
    }
    if manifest.dtype != DTYPE {
        return Err(CheckpointError::Manifest {
            path,
            reason: format!("unsupported dtype `{}`", manifest.dtype),
        });
    }
    Ok((manifest, bytes))
}

/// Hex SHA-256 of a checkpoint's manifest file.
pub fn manifest_digest(dir: &Path) -> Result<String, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io(&path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Checkpoint {
    pub fn save(
        dir: &Path,
        network: &Network,
        meta: CheckpointMeta,
    ) -> Result<CheckpointManifest, CheckpointError> {
        save(dir, network, meta)
    }

    /// Loads and validates a checkpoint: manifest format, blob sizes and
    /// digests, and agreement of every tensor with the echoed config.
    pub fn load(dir: &Path) -> Result<Checkpoint, CheckpointError> {
        let (manifest, _) = read_manifest(dir)?;
        let mut tensors = Vec::new();
        for layer in &manifest.layers {
            if layer.file != blob_name(&layer.name) || layer.file.contains(['/', '\\']) {
                return Err(CheckpointError::Manifest {
                    path: dir.join(MANIFEST_FILE),
                    reason: format!("unexpected blob name `{}`", layer.file),
                });
            }
            let path = dir.join(&layer.file);
            let bytes = fs::read(&path).map_err(io(&path))?;
            let expected: usize = layer
                .tensors
                .iter()
                .map(|t| t.shape.iter().product::<usize>() * 4)
                .sum();
            if bytes.len() != expected {
                return Err(CheckpointError::Blob {
                    path,
                    reason: format!("holds {} bytes, manifest implies {expected}", bytes.len()),
                });
            }
            if hex::encode(Sha256::digest(&bytes)) != layer.sha256 {
                return Err(CheckpointError::Blob {
                    path,
                    reason: "digest mismatch".into(),
                });
            }
            let mut values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            for t in &layer.tensors {
                if t.trainable != t.role.trainable() {
                    return Err(CheckpointError::Manifest {
                        path: dir.join(MANIFEST_FILE),
                        reason: format!(
                            "{}/{} has the wrong trainable flag",
                            layer.name,
                            t.role.name()
                        ),
                    });
                }
                let len = t.shape.iter().product();
                tensors.push(ParamTensor {
                    layer: layer.name.clone(),
                    role: t.role,
                    shape: t.shape.clone(),
                    data: values.by_ref().take(len).collect(),
                });
            }
        }
        let network = Network::from_parts(manifest.config.clone(), ParamStore { tensors })
            .map_err(|source| CheckpointError::Model {
                path: dir.to_path_buf(),
                source,
            })?;
        Ok(Checkpoint { manifest, network })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BlockOptions, Profile};

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            step: 7,
            epoch: Some(2),
            seed: SeedLineage {
                global_seed: 1,
                init_seed: 2,
                resumed_from: None,
            },
            train_config: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetworkConfig::generator(Profile::Reduced, BlockOptions::default());
        let mut net = Network::build(cfg, 3).unwrap();
        // Exercise awkward bit patterns.
        net.params_mut().tensors[0].data[0] = f32::from_bits(1);
        net.params_mut().tensors[0].data[1] = -0.0;
        let path = dir.path().join("g");
        save(&path, &net, meta()).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.manifest.step, 7);
        for (a, b) in net
            .params()
            .tensors
            .iter()
            .zip(&back.network.params().tensors)
        {
            assert_eq!(a.name(), b.name());
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        // Replacing in place leaves no temporaries behind.
        save(&path, &net, meta()).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("g")]);
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetworkConfig::critic(Profile::Reduced, BlockOptions::default());
        let net = Network::build(cfg, 3).unwrap();
        let path = dir.path().join("c");
        let manifest = save(&path, &net, meta()).unwrap();
        let blob = path.join(&manifest.layers[0].file);
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] ^= 1;
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Blob { .. })
        ));
        bytes.pop();
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Blob { .. })
        ));
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetworkConfig::critic(Profile::Reduced, BlockOptions::default());
        let net = Network::build(cfg, 3).unwrap();
        let path = dir.path().join("c");
        save(&path, &net, meta()).unwrap();
        let mpath = path.join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
        v["surprise"] = 1.into();
        fs::write(&mpath, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Manifest { .. })
        ));
    }
}
