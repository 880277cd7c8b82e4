//! On-disk frames and split manifests.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/<frame_id>/cube.bin       interleaved re,im f64 LE, Doppler fastest
//! <root>/<split>/<frame_id>/labels.json
//! <root>/<split>/<frame_id>/geometry.json
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, read_json, write_atomic, write_json_atomic};
use crate::sim::{ComplexRadCube, FrameLabels, RadarGeometry};

pub const MANIFEST_VERSION: u32 = 1;
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub geometry_sha: String,
    pub geometry: RadarGeometry,
    /// Split name to ordered frame ids.
    pub splits: BTreeMap<String, Vec<String>>,
    /// Scene and noise seed of every frame.
    pub seeds: BTreeMap<String, FrameSeeds>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSeeds {
    pub world: u32,
    pub scene: u64,
    pub noise: u64,
}

impl DatasetManifest {
    pub fn new(geometry: &RadarGeometry) -> Self {
        Self {
            version: MANIFEST_VERSION,
            geometry_sha: geometry.fingerprint(),
            geometry: geometry.clone(),
            splits: SPLITS.iter().map(|s| (s.to_string(), Vec::new())).collect(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn path(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = Self::path(root);
        let m: Self = read_json(&path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest version {}", m.version)));
        }
        if m.geometry.fingerprint() != m.geometry_sha {
            return Err(Error::format(&path, "geometry does not match geometry_sha"));
        }
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        self.check_disjoint()?;
        create_dir_all(root)?;
        write_json_atomic(&Self::path(root), self)
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (split, ids) in &self.splits {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Validation(format!("frame {id} listed twice (again in {split})")));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits.get(name).map(Vec::as_slice).ok_or_else(|| {
            let known: Vec<&str> = self.splits.keys().map(String::as_str).collect();
            Error::Validation(format!("unknown split {name:?}; available: {}", known.join(", ")))
        })
    }

    pub fn split_of(&self, frame_id: &str) -> Option<&str> {
        self.splits
            .iter()
            .find(|(_, ids)| ids.iter().any(|i| i == frame_id))
            .map(|(s, _)| s.as_str())
    }

    pub fn frame_count(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    /// Loads a listed frame and checks it against the manifest geometry.
    pub fn load_frame(&self, root: &Path, frame_id: &str) -> Result<(ComplexRadCube, FrameLabels)> {
        let split = self
            .split_of(frame_id)
            .ok_or_else(|| Error::Validation(format!("frame {frame_id} is not in the manifest")))?;
        load_frame(root, split, frame_id, Some(&self.geometry_sha))
    }
}

pub fn frame_dir(root: &Path, split: &str, frame_id: &str) -> PathBuf {
    root.join(split).join(frame_id)
}

pub fn save_frame(
    root: &Path,
    split: &str,
    frame_id: &str,
    cube: &ComplexRadCube,
    labels: &FrameLabels,
) -> Result<()> {
    let dir = frame_dir(root, split, frame_id);
    create_dir_all(&dir)?;
    let mut bytes = Vec::with_capacity(cube.values.len() * 16);
    for v in &cube.values {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    write_atomic(&dir.join("cube.bin"), &bytes)?;
    write_json_atomic(&dir.join("labels.json"), labels)?;
    write_json_atomic(&dir.join("geometry.json"), &cube.geometry)
}

/// Reads a frame, validating payload length, labels and (optionally) the
/// geometry fingerprint.
pub fn load_frame(
    root: &Path,
    split: &str,
    frame_id: &str,
    expected_geometry_sha: Option<&str>,
) -> Result<(ComplexRadCube, FrameLabels)> {
    let dir = frame_dir(root, split, frame_id);
    let gpath = dir.join("geometry.json");
    let geometry: RadarGeometry = read_json(&gpath)?;
    geometry.validate()?;
    if let Some(sha) = expected_geometry_sha {
        if geometry.fingerprint() != sha {
            return Err(Error::format(&gpath, "geometry differs from the dataset manifest"));
        }
    }
    let cpath = dir.join("cube.bin");
    let bytes = std::fs::read(&cpath).map_err(|e| Error::io(&cpath, e))?;
    let want = geometry.n_cells() * 16;
    if bytes.len() != want {
        return Err(Error::format(
            &cpath,
            format!("cube payload is {} bytes, expected {want}", bytes.len()),
        ));
    }
    let values: Vec<Complex64> = bytes
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    let cube = ComplexRadCube::from_values(&geometry, values)?;
    if !cube.all_finite() {
        return Err(Error::format(&cpath, "cube holds non-finite values"));
    }
    let labels: FrameLabels = read_json(&dir.join("labels.json"))?;
    labels
        .validate(&geometry)
        .map_err(|e| Error::Validation(format!("{}: {e}", dir.display())))?;
    Ok((cube, labels))
}

/// Frame ids of a split, in manifest order or Fisher-Yates shuffled by seed.
pub fn iterate_split(manifest: &DatasetManifest, split: &str, shuffle_seed: Option<u64>) -> Result<Vec<String>> {
    let mut ids = manifest.split(split)?.to_vec();
    if let Some(seed) = shuffle_seed {
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(ids)
}
