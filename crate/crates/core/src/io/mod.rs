//! File formats and dataset persistence.
//!
//! Volumes are stored as a JSON header `X.json` next to a raw payload
//! `X.raw` of little-endian `f32` values, x fastest. All writes go through a
//! temporary file that is renamed into place.

mod dataset;
mod nifti;
pub mod svg;
mod tables;

pub use dataset::{
    read_calibration, read_dataset, read_design, write_calibration, write_dataset, Dataset, DatasetInfo,
    GroundTruth, ManifestRow, DATASET_SCHEMA,
};
pub use nifti::read_nifti_subset;
pub use tables::{read_trajectory, write_trajectory, CsvTable, TrajectoryRow};

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub intensity_units: String,
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedHeader { path: path.into(), reason: e.to_string() })
}

/// Raw payload path belonging to a volume header.
pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 4 {
        return Err(Error::SizeMismatch { path: path.into(), expected, found: bytes.len() / 4 });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

/// Writes `X.json` and `X.raw`; `path` names the header.
pub fn write_volume(path: &Path, v: &Volume, intensity_units: &str) -> Result<()> {
    let header = VolumeHeader {
        dims: v.dims(),
        voxel_size_mm: v.voxel_size(),
        origin_mm: v.origin(),
        intensity_units: intensity_units.to_string(),
    };
    write_atomic(&raw_path(path), &encode_f32(v.data()))?;
    write_json(path, &header)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let h: VolumeHeader = read_json(path)?;
    let bad = |reason: String| Error::MalformedHeader { path: path.into(), reason };
    if h.dims.contains(&0) {
        return Err(bad(format!("zero dimension in {:?}", h.dims)));
    }
    if h.voxel_size_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(bad(format!("non-positive voxel size {:?}", h.voxel_size_mm)));
    }
    let raw = raw_path(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let data = decode_f32(&raw, &bytes, h.dims.iter().product())?;
    Volume::new(h.dims, h.voxel_size_mm, h.origin_mm, data)
}

/// Directory written under a temporary name and renamed when complete, so a
/// failed command leaves nothing behind.
pub struct StagedDir {
    target: PathBuf,
    staging: Option<tempfile::TempDir>,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        Ok(StagedDir { target: target.to_path_buf(), staging: Some(staging) })
    }

    pub fn path(&self) -> &Path {
        self.staging.as_ref().expect("not committed").path()
    }

    /// Replaces any existing target directory with the staged contents.
    pub fn commit(mut self) -> Result<PathBuf> {
        let staging = self.staging.take().expect("not committed").keep();
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target.clone())
    }
}
