use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::nn::checkpoint::{self, write_dir_atomically};
use crate::nn::{latent_batch, tensor_to_images, Checkpoint, Network, LATENT_DIM};

use super::ExploreError;

pub const SAMPLES_FILE: &str = "samples.json";
pub const SAMPLES_VERSION: &str = "bridge-samples/1";
const DECODE_BATCH: usize = 25;

/// A square lattice over the latent plane with inclusive endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Points per dimension.
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n: 50,
            min: -10.0,
            max: 10.0,
        }
    }
}

impl GridSpec {
    pub fn new(n: usize, min: f64, max: f64) -> Result<Self, ExploreError> {
        let spec = GridSpec { n, min, max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.n < 2 {
            return Err(ExploreError::Grid(
                "at least 2 points per dimension are needed".into(),
            ));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(ExploreError::Grid(format!(
                "range [{}, {}] must be finite and increasing",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    /// The `k`-th of `n` coordinates. Written as a weighted mean of the two
    /// endpoints so both are hit exactly and a symmetric range yields exactly
    /// symmetric coordinates.
    pub fn coordinate(&self, k: usize) -> f64 {
        let last = (self.n - 1) as f64;
        (self.min * (last - k as f64) + self.max * k as f64) / last
    }

    /// Coordinates as fed to the generator.
    pub fn coordinates(&self) -> Vec<f32> {
        (0..self.n).map(|k| self.coordinate(k) as f32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub i: usize,
    pub j: usize,
    pub z: [f32; LATENT_DIM],
}

impl GridPoint {
    /// `i{i:03}_j{j:03}_z1_{z1:+}_z2_{z2:+}.png`; the shortest round-trip
    /// decimal form keeps the coordinates exact.
    pub fn filename(&self) -> String {
        format!(
            "i{:03}_j{:03}_z1_{:+}_z2_{:+}.png",
            self.i, self.j, self.z[0], self.z[1]
        )
    }

    /// Inverse of [`GridPoint::filename`].
    pub fn parse_filename(name: &str) -> Option<GridPoint> {
        let stem = name.strip_suffix(".png")?;
        let parts: Vec<&str> = stem.split('_').collect();
        let [i, j, "z1", z1, "z2", z2] = parts.as_slice() else {
            return None;
        };
        let index = |s: &str, tag: char| -> Option<usize> {
            let digits = s.strip_prefix(tag)?;
            (digits.len() >= 3 && digits.bytes().all(|b| b.is_ascii_digit()))
                .then(|| digits.parse().ok())?
        };
        let coord = |s: &str| -> Option<f32> {
            let v: f32 = s.parse().ok()?;
            (s.starts_with(['+', '-']) && v.is_finite()).then_some(v)
        };
        let point = GridPoint {
            i: index(i, 'i')?,
            j: index(j, 'j')?,
            z: [coord(z1)?, coord(z2)?],
        };
        (point.filename() == name).then_some(point)
    }
}

/// Row-major grid: point `i * n + j` sits at `(coordinate(i), coordinate(j))`.
pub fn grid_points(spec: &GridSpec) -> Result<Vec<GridPoint>, ExploreError> {
    spec.validate()?;
    let c = spec.coordinates();
    Ok((0..spec.n)
        .flat_map(|i| (0..spec.n).map(move |j| (i, j)))
        .map(|(i, j)| GridPoint {
            i,
            j,
            z: [c[i], c[j]],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub i: usize,
    pub j: usize,
    pub z: [f32; LATENT_DIM],
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub format_version: String,
    /// Checkpoint the samples were decoded from.
    pub checkpoint: String,
    /// Hex SHA-256 of that checkpoint's manifest.
    pub checkpoint_digest: String,
    pub grid: GridSpec,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<SampleEntry>,
}

impl SampleManifest {
    pub fn load(dir: &Path) -> Result<Self, ExploreError> {
        let path = dir.join(SAMPLES_FILE);
        let bytes = fs::read(&path).map_err(|e| ExploreError::io(&path, e))?;
        let m: SampleManifest =
            serde_json::from_slice(&bytes).map_err(|e| ExploreError::Manifest {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        if m.format_version != SAMPLES_VERSION {
            return Err(ExploreError::Manifest {
                path,
                reason: format!("unsupported format `{}`", m.format_version),
            });
        }
        Ok(m)
    }

    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.samples.iter().map(|s| dir.join(&s.file)).collect()
    }
}

/// Decodes `points` in eval mode. Batching does not change the result: every
/// sample is computed independently with identical arithmetic.
pub fn decode_points(
    generator: &Network,
    points: &[[f32; LATENT_DIM]],
) -> Result<Vec<GrayImage>, ExploreError> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(DECODE_BATCH) {
        let z = latent_batch(chunk.iter().map(|p| p.as_slice()), generator.input_shape())?;
        out.extend(tensor_to_images(&generator.predict(&z)?));
    }
    Ok(out)
}

/// Loads a generator checkpoint and writes one PNG per grid point plus a
/// `samples.json` manifest into `out` (created atomically; an existing
/// directory is replaced).
pub fn decode_grid(
    checkpoint_dir: &Path,
    spec: &GridSpec,
    out: &Path,
) -> Result<SampleManifest, ExploreError> {
    let ckpt = Checkpoint::load(checkpoint_dir)?;
    let digest = checkpoint::manifest_digest(checkpoint_dir)?;
    decode_grid_with(
        &ckpt.network,
        &checkpoint_dir.display().to_string(),
        &digest,
        spec,
        out,
    )
}

pub fn decode_grid_with(
    generator: &Network,
    label: &str,
    digest: &str,
    spec: &GridSpec,
    out: &Path,
) -> Result<SampleManifest, ExploreError> {
    let points = grid_points(spec)?;
    let zs: Vec<[f32; LATENT_DIM]> = points.iter().map(|p| p.z).collect();
    let images = decode_points(generator, &zs)?;
    let (width, height) = images
        .first()
        .map(|img| (img.width(), img.height()))
        .expect("grid has at least four points");
    let samples: Vec<SampleEntry> = points
        .iter()
        .enumerate()
        .map(|(index, p)| SampleEntry {
            index,
            i: p.i,
            j: p.j,
            z: p.z,
            file: p.filename(),
        })
        .collect();
    let manifest = SampleManifest {
        format_version: SAMPLES_VERSION.into(),
        checkpoint: label.into(),
        checkpoint_digest: digest.into(),
        grid: *spec,
        width,
        height,
        samples,
    };
    write_dir_atomically(out, |tmp| -> Result<(), ExploreError> {
        for (entry, img) in manifest.samples.iter().zip(&images) {
            img.save_png(&tmp.join(&entry.file))?;
        }
        let path = tmp.join(SAMPLES_FILE);
        fs::write(
            &path,
            serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| ExploreError::io(&path, e))
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let spec = GridSpec::default();
        let pts = grid_points(&spec).unwrap();
        assert_eq!(pts.len(), 2500);
        assert_eq!(pts[0].z, [-10.0, -10.0]);
        assert_eq!(pts[2499].z, [10.0, 10.0]);
        assert_eq!(spec.spacing(), 20.0 / 49.0);
        let c = spec.coordinates();
        for k in 1..50 {
            assert!(((c[k] - c[k - 1]) as f64 - 20.0 / 49.0).abs() < 1e-5);
        }
        assert_eq!(pts[1].z, [-10.0, c[1]]);
        assert_eq!(pts[50].z, [c[1], -10.0]);
    }

    #[test]
    fn two_by_two() {
        let pts = grid_points(&GridSpec::new(2, -1.0, 1.0).unwrap()).unwrap();
        let zs: Vec<_> = pts.iter().map(|p| p.z).collect();
        assert_eq!(zs, vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn invalid_specs() {
        assert!(GridSpec::new(1, -1.0, 1.0).is_err());
        assert!(GridSpec::new(5, 1.0, 1.0).is_err());
        assert!(GridSpec::new(5, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn filenames_round_trip() {
        for p in grid_points(&GridSpec::default()).unwrap() {
            assert_eq!(GridPoint::parse_filename(&p.filename()), Some(p));
        }
        assert_eq!(
            GridPoint::parse_filename("i000_j000_z1_-10_z2_-10.png")
                .unwrap()
                .z,
            [-10.0, -10.0]
        );
        for bad in [
            "i0_j0_z1_+1_z2_+1.png",
            "i000_j000_z1_1_z2_+1.png",
            "i000_j000_z1_+1_z2_+1",
            "x.png",
        ] {
            assert_eq!(GridPoint::parse_filename(bad), None, "{bad}");
        }
    }
}
