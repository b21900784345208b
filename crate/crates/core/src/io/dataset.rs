//! On-disk dataset layout.
//!
//! ```text
//! dataset.json            schema version, series shape, EPI reference grid
//! anatomy.json/.raw       anatomical reference volume
//! manifest.csv            one row per slice in acquisition order
//! design.csv              stim/control label per volume
//! slices/slice_NNNNN.raw  f32 pixels, u fastest
//! truth/                  optional: trajectory.csv, calibration.json,
//!                         activation_mask.json/.raw, source.json/.raw
//! ```

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{euler_to_matrix, matrix_to_euler, Calibration, RigidParams};
use crate::imaging::{AcquisitionOrder, Slice, SliceGeometry, Volume};
use crate::phantom::{DesignLabel, PhantomDataset};

use super::tables::{read_rows, write_rows};
use super::{
    decode_f32, encode_f32, read_json, read_trajectory, read_volume, write_atomic, write_json, write_trajectory,
    write_volume, StagedDir, TrajectoryRow,
};

pub const DATASET_SCHEMA: u32 = 1;
const CALIBRATION_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub schema_version: u32,
    pub volumes: usize,
    pub slices_per_volume: usize,
    pub acquisition: AcquisitionOrder,
    /// Grid of a naively stacked EPI volume; reconstructions use it.
    pub epi_grid: GridSpec,
    pub intensity_units: String,
}

impl DatasetInfo {
    pub fn reference_grid(&self) -> Result<Volume> {
        Volume::zeros(self.epi_grid.dims, self.epi_grid.voxel_size_mm, self.epi_grid.origin_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub t: usize,
    pub m: usize,
    pub n: usize,
    pub file: String,
    pub origin_x: f64,
    pub origin_y: f64,
    pub origin_z: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub u_z: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub v_z: f64,
    pub spacing_u: f64,
    pub spacing_v: f64,
    pub grid_u: usize,
    pub grid_v: usize,
}

impl ManifestRow {
    fn from_slice(s: &Slice) -> Self {
        let g = &s.geometry;
        ManifestRow {
            t: s.time_index,
            m: s.volume_index,
            n: g.slice_index,
            file: slice_file(s.time_index),
            origin_x: g.plane_origin[0],
            origin_y: g.plane_origin[1],
            origin_z: g.plane_origin[2],
            u_x: g.axis_u[0],
            u_y: g.axis_u[1],
            u_z: g.axis_u[2],
            v_x: g.axis_v[0],
            v_y: g.axis_v[1],
            v_z: g.axis_v[2],
            spacing_u: g.pixel_spacing[0],
            spacing_v: g.pixel_spacing[1],
            grid_u: g.grid[0],
            grid_v: g.grid[1],
        }
    }

    fn geometry(&self) -> SliceGeometry {
        SliceGeometry {
            slice_index: self.n,
            plane_origin: [self.origin_x, self.origin_y, self.origin_z],
            axis_u: [self.u_x, self.u_y, self.u_z],
            axis_v: [self.v_x, self.v_y, self.v_z],
            pixel_spacing: [self.spacing_u, self.spacing_v],
            grid: [self.grid_u, self.grid_v],
        }
    }
}

fn slice_file(t: usize) -> String {
    format!("slices/slice_{t:05}.raw")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DesignRow {
    m: usize,
    label: DesignLabel,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub trajectory: Vec<RigidParams>,
    pub calibration: Calibration,
    pub activation_mask: Volume,
    pub source: Volume,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub info: DatasetInfo,
    pub v_anat: Volume,
    /// Slices in acquisition order.
    pub slices: Vec<Slice>,
    pub design: Vec<DesignLabel>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn truth(&self) -> Result<&GroundTruth> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no ground truth", self.root.display())))
    }
}

/// Serialized calibration. Angles in degrees, `sigma_d` in deg / mm units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    schema_version: u32,
    static_rotation_deg: [f64; 3],
    static_translation_mm: [f64; 3],
    rotation_center_mm: [f64; 3],
    sigma_d: [[f64; 6]; 6],
}

fn unit_scale(i: usize) -> f64 {
    if i < 3 {
        180.0 / std::f64::consts::PI
    } else {
        1.0
    }
}

pub fn write_calibration(path: &Path, cal: &Calibration) -> Result<()> {
    let e = matrix_to_euler(&cal.r_s);
    let file = CalibrationFile {
        schema_version: CALIBRATION_SCHEMA,
        static_rotation_deg: [e.alpha.to_degrees(), e.beta.to_degrees(), e.gamma.to_degrees()],
        static_translation_mm: cal.q_s.into(),
        rotation_center_mm: cal.c.into(),
        sigma_d: std::array::from_fn(|i| std::array::from_fn(|j| cal.sigma_d[(i, j)] * unit_scale(i) * unit_scale(j))),
    };
    write_json(path, &file)
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let f: CalibrationFile = read_json(path)?;
    if f.schema_version != CALIBRATION_SCHEMA {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: format!("schema_version {} (expected {CALIBRATION_SCHEMA})", f.schema_version),
        });
    }
    let [a, b, g] = f.static_rotation_deg;
    let cal = Calibration {
        r_s: euler_to_matrix(&RigidParams::from_degrees_mm([a, b, g, 0.0, 0.0, 0.0])),
        q_s: Vector3::from(f.static_translation_mm),
        c: Vector3::from(f.rotation_center_mm),
        sigma_d: Matrix6::from_fn(|i, j| f.sigma_d[i][j] / (unit_scale(i) * unit_scale(j))),
    };
    cal.validate().map_err(|e| Error::MalformedHeader { path: path.into(), reason: e.to_string() })?;
    Ok(cal)
}

/// Writes a simulated series with its ground truth to `dir`, replacing any
/// previous contents only once everything has been written.
pub fn write_dataset(dir: &Path, ds: &PhantomDataset) -> Result<()> {
    let stage = StagedDir::new(dir)?;
    let root = stage.path();
    let cfg = &ds.config;
    let grid = cfg.epi_volume_grid()?;
    let info = DatasetInfo {
        schema_version: DATASET_SCHEMA,
        volumes: cfg.volumes,
        slices_per_volume: cfg.slices_per_volume,
        acquisition: cfg.acquisition,
        epi_grid: GridSpec { dims: grid.dims(), voxel_size_mm: grid.voxel_size(), origin_mm: grid.origin() },
        intensity_units: "a.u.".into(),
    };
    write_json(&root.join("dataset.json"), &info)?;
    write_volume(&root.join("anatomy.json"), &ds.v_anat, "a.u.")?;
    for s in &ds.slices {
        write_atomic(&root.join(slice_file(s.time_index)), &encode_f32(&s.data))?;
    }
    let manifest: Vec<ManifestRow> = ds.slices.iter().map(ManifestRow::from_slice).collect();
    write_rows(&root.join("manifest.csv"), &manifest)?;
    let design: Vec<DesignRow> = ds.design.iter().enumerate().map(|(m, &label)| DesignRow { m, label }).collect();
    write_rows(&root.join("design.csv"), &design)?;

    let truth = root.join("truth");
    let traj: Vec<TrajectoryRow> = ds
        .slices
        .iter()
        .map(|s| TrajectoryRow::new(s.time_index, s.volume_index, s.geometry.slice_index, &ds.true_traj[s.time_index], "truth", None))
        .collect();
    write_trajectory(&truth.join("trajectory.csv"), &traj)?;
    write_calibration(&truth.join("calibration.json"), &ds.calibration)?;
    write_volume(&truth.join("activation_mask.json"), &ds.activation_mask, "mask")?;
    write_volume(&truth.join("source.json"), &ds.source, "a.u.")?;
    write_json(&truth.join("phantom.json"), cfg)?;
    stage.commit()?;
    Ok(())
}

pub fn read_design(path: &Path) -> Result<Vec<DesignLabel>> {
    let rows: Vec<DesignRow> = read_rows(path)?;
    for (i, r) in rows.iter().enumerate() {
        if r.m != i {
            return Err(Error::MalformedData { path: path.into(), reason: format!("row {i} has m = {}", r.m) });
        }
    }
    Ok(rows.into_iter().map(|r| r.label).collect())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let info_path = dir.join("dataset.json");
    let info: DatasetInfo = read_json(&info_path)?;
    if info.schema_version != DATASET_SCHEMA {
        return Err(Error::MalformedHeader {
            path: info_path,
            reason: format!("schema_version {} (expected {DATASET_SCHEMA})", info.schema_version),
        });
    }
    let v_anat = read_volume(&dir.join("anatomy.json"))?;
    let manifest_path = dir.join("manifest.csv");
    let manifest: Vec<ManifestRow> = read_rows(&manifest_path)?;
    let expected = info.volumes * info.slices_per_volume;
    if manifest.len() != expected {
        return Err(Error::MalformedData {
            path: manifest_path,
            reason: format!("{} rows for {} volumes of {} slices", manifest.len(), info.volumes, info.slices_per_volume),
        });
    }
    let mut slices = Vec::with_capacity(manifest.len());
    for (i, row) in manifest.iter().enumerate() {
        if row.t != i || row.m >= info.volumes || row.n >= info.slices_per_volume {
            return Err(Error::MalformedData {
                path: manifest_path,
                reason: format!("row {i}: t = {}, m = {}, n = {}", row.t, row.m, row.n),
            });
        }
        let g = row.geometry();
        g.validate()?;
        let path = dir.join(&row.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let data = decode_f32(&path, &bytes, g.pixel_count())?;
        slices.push(Slice::new(g, data, row.m, row.t)?);
    }
    let design = read_design(&dir.join("design.csv"))?;
    if design.len() != info.volumes {
        return Err(Error::MalformedData {
            path: dir.join("design.csv"),
            reason: format!("{} labels for {} volumes", design.len(), info.volumes),
        });
    }

    let truth_dir = dir.join("truth");
    let truth = if truth_dir.is_dir() {
        let traj_path = truth_dir.join("trajectory.csv");
        let trajectory: Vec<RigidParams> = read_trajectory(&traj_path)?.iter().map(TrajectoryRow::params).collect();
        if trajectory.len() != slices.len() {
            return Err(Error::MalformedData {
                path: traj_path,
                reason: format!("{} poses for {} slices", trajectory.len(), slices.len()),
            });
        }
        Some(GroundTruth {
            trajectory,
            calibration: read_calibration(&truth_dir.join("calibration.json"))?,
            activation_mask: read_volume(&truth_dir.join("activation_mask.json"))?,
            source: read_volume(&truth_dir.join("source.json"))?,
        })
    } else {
        None
    };
    Ok(Dataset { root: dir.to_path_buf(), info, v_anat, slices, design, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomConfig};

    fn tiny() -> PhantomConfig {
        PhantomConfig {
            anat_dims: [24, 24, 12],
            anat_voxel_mm: [5.0, 5.0, 7.0],
            anat_origin_mm: [-57.5, -57.5, -38.5],
            epi_grid: [16, 16],
            epi_pixel_mm: [7.0, 7.0],
            epi_origin_mm: [-52.5, -52.5, -30.0],
            slices_per_volume: 4,
            slice_spacing_mm: 12.0,
            volumes: 4,
            volumes_per_cycle: 4,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn dataset_round_trip() {
        let ds = generate(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("d");
        write_dataset(&root, &ds).unwrap();
        let back = read_dataset(&root).unwrap();
        assert_eq!(back.slices.len(), ds.slices.len());
        for (a, b) in back.slices.iter().zip(&ds.slices) {
            assert_eq!(a.geometry, b.geometry);
            assert_eq!((a.volume_index, a.time_index), (b.volume_index, b.time_index));
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| *x == *y as f32 as f64));
        }
        assert_eq!(back.design, ds.design);
        let truth = back.truth.unwrap();
        for (a, b) in truth.trajectory.iter().zip(&ds.true_traj) {
            assert!((a.to_vector() - b.to_vector()).abs().max() < 1e-12);
        }
        assert!((truth.calibration.sigma_d - ds.calibration.sigma_d).abs().max() < 1e-15);
        assert!((truth.calibration.r_s.matrix() - ds.calibration.r_s.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn missing_slice_file() {
        let ds = generate(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        fs::remove_file(dir.path().join(slice_file(5))).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().kind(), "Io");
    }

    #[test]
    fn calibration_units() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut cal = Calibration::identity();
        cal.sigma_d[(0, 0)] = 1f64.to_radians().powi(2);
        cal.sigma_d[(3, 3)] = 0.25;
        write_calibration(&p, &cal).unwrap();
        let f: CalibrationFile = read_json(&p).unwrap();
        assert!((f.sigma_d[0][0] - 1.0).abs() < 1e-12);
        assert_eq!(f.sigma_d[3][3], 0.25);
        assert!((read_calibration(&p).unwrap().sigma_d - cal.sigma_d).abs().max() < 1e-18);
    }
}
