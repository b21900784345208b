//! The pipeline commands behind the `hmt` binary.
//!
//! Each command reads its inputs from disk, writes its outputs atomically and
//! returns a one-line summary. Outputs depend only on the input bytes, the
//! configuration and the seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    atr_fit, mean, permutation_test, reconstruct_volumes, resample_mask, roc_auc, split_replications,
    trajectory_distances, PermutationOptions, Reconstruction,
};
use crate::error::{Error, Result};
use crate::geometry::{Calibration, RigidParams};
use crate::imaging::{Slice, Volume};
use crate::io::svg::{box_plot, line_chart, BoxStats, Series};
use crate::io::{
    read_calibration, read_dataset, read_trajectory, read_volume, write_atomic, write_calibration, write_dataset,
    write_trajectory, write_volume, CsvTable, StagedDir, TrajectoryRow,
};
use crate::phantom::{generate, DesignLabel, PhantomConfig};
use crate::registration::{register_slice, register_volume, RegistrationOptions};
use crate::rng::{self, Domain};
use crate::tracking::{hmt_track, run_calibration, stack_all_volumes, CalibrationOptions, TrackConfig};

pub const CONFIG_SCHEMA: u32 = 1;

/// Desk-scale particle count.
const DESK_PARTICLES: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub permutations: usize,
    pub threshold: f64,
    /// Number of disjoint volume sets for test-retest reliability.
    pub replications: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { permutations: 2000, threshold: 0.005, replications: 4 }
    }
}

/// Settings for every command. Missing keys take their defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub phantom: PhantomConfig,
    pub calibration: CalibrationOptions,
    pub track: TrackConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let track = TrackConfig { particles: DESK_PARTICLES, ..TrackConfig::default() };
        PipelineConfig {
            schema_version: CONFIG_SCHEMA,
            phantom: PhantomConfig::default(),
            calibration: CalibrationOptions { track: track.clone(), ..CalibrationOptions::default() },
            track,
            analysis: AnalysisConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config file, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
            None => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hmt,
    S2v,
    V2v,
    None,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Hmt, Method::S2v, Method::V2v, Method::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hmt => "hmt",
            Method::S2v => "s2v",
            Method::V2v => "v2v",
            Method::None => "none",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?} (expected hmt, s2v, v2v or none)")))
    }
}

fn row(s: &Slice, p: &RigidParams, status: &str, objective: Option<f64>) -> TrajectoryRow {
    TrajectoryRow::new(s.time_index, s.volume_index, s.geometry.slice_index, p, status, objective)
}

/// One rigid registration per naively stacked volume, each from zero motion.
fn volume_registrations(slices: &[Slice], v_anat: &Volume, cal: &Calibration, opt: &RegistrationOptions) -> Result<Vec<(RigidParams, f64)>> {
    let volumes = stack_all_volumes(slices)?;
    volumes
        .par_iter()
        .map(|v| register_volume(v, v_anat, &RigidParams::ZERO, cal, opt).map(|r| (r.params, r.objective)))
        .collect()
}

/// Per-slice motion estimates by the chosen method.
///
/// `v2v` assigns each slice the pose of its volume. `s2v` registers every
/// slice on its own, starting from the `v2v` pose of its volume, and keeps
/// that pose (status `fallback`) when the slice cannot be registered.
pub fn estimate_trajectory(
    method: Method,
    slices: &[Slice],
    v_anat: &Volume,
    cal: &Calibration,
    cfg: &TrackConfig,
) -> Result<Vec<TrajectoryRow>> {
    let opt = cfg.registration();
    match method {
        Method::None => Ok(slices.iter().map(|s| row(s, &RigidParams::ZERO, "none", None)).collect()),
        Method::V2v => {
            let vols = volume_registrations(slices, v_anat, cal, &opt)?;
            Ok(slices.iter().map(|s| row(s, &vols[s.volume_index].0, "volume", Some(vols[s.volume_index].1))).collect())
        }
        Method::S2v => {
            let vols = volume_registrations(slices, v_anat, cal, &opt)?;
            slices
                .par_iter()
                .map(|s| {
                    let p0 = vols[s.volume_index].0;
                    match register_slice(s, v_anat, &p0, cal, &opt) {
                        Ok(r) => Ok(row(s, &r.params, "optimized", Some(r.objective))),
                        Err(Error::EmptyOverlap { .. }) | Err(Error::AllInvalid) => Ok(row(s, &p0, "fallback", None)),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        }
        Method::Hmt => {
            let track = hmt_track(slices, v_anat, cal, cfg)?;
            Ok(slices
                .iter()
                .zip(&track.entries)
                .map(|(s, e)| row(s, &e.params, e.status.as_str(), e.objective))
                .collect())
        }
    }
}

fn params_of(rows: &[TrajectoryRow]) -> Vec<RigidParams> {
    rows.iter().map(TrajectoryRow::params).collect()
}

fn check_len(path: &Path, rows: usize, slices: usize) -> Result<()> {
    if rows != slices {
        return Err(Error::MalformedData { path: path.into(), reason: format!("{rows} rows for {slices} slices") });
    }
    Ok(())
}

/// Renders a phantom series with ground truth into `out`.
pub fn simulate(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<String> {
    let phantom = PhantomConfig { seed, ..cfg.phantom.clone() };
    let ds = generate(&phantom)?;
    write_dataset(out, &ds)?;
    Ok(format!("simulated {} slices in {} volumes into {}", ds.slices.len(), phantom.volumes, out.display()))
}

/// Estimates the static offset, rotation center and random-walk covariance.
pub fn calibrate(cfg: &PipelineConfig, dataset: &Path, out: &Path, seed: u64) -> Result<String> {
    let ds = read_dataset(dataset)?;
    let mut opt = cfg.calibration.clone();
    opt.track.seed = seed;
    let (cal, center) = run_calibration(&ds.slices, &ds.v_anat, &opt)?;
    write_calibration(out, &cal)?;
    let c = cal.c;
    let note = if center.degenerate { " (unidentifiable: no rotation observed)" } else { "" };
    Ok(format!("rotation center ({:.2}, {:.2}, {:.2}) mm{note}", c.x, c.y, c.z))
}

pub fn track(cfg: &PipelineConfig, dataset: &Path, calibration: &Path, method: Method, out: &Path, seed: u64) -> Result<String> {
    let ds = read_dataset(dataset)?;
    let cal = read_calibration(calibration)?;
    let tc = TrackConfig { seed, ..cfg.track.clone() };
    let rows = estimate_trajectory(method, &ds.slices, &ds.v_anat, &cal, &tc)?;
    write_trajectory(out, &rows)?;
    Ok(format!("{} trajectory of {} slices written to {}", method.as_str(), rows.len(), out.display()))
}

fn volume_name(m: usize) -> String {
    format!("volume_{m:03}.json")
}

fn weight_name(m: usize) -> String {
    format!("weight_{m:03}.json")
}

/// Motion-corrected volumes on the EPI grid with their splat weights.
pub fn reconstruct(dataset: &Path, calibration: &Path, trajectory: &Path, out: &Path) -> Result<String> {
    let ds = read_dataset(dataset)?;
    let cal = read_calibration(calibration)?;
    let rows = read_trajectory(trajectory)?;
    check_len(trajectory, rows.len(), ds.slices.len())?;
    let grid = ds.info.reference_grid()?;
    let recons = reconstruct_volumes(&ds.slices, &params_of(&rows), &cal, &grid)?;
    let stage = StagedDir::new(out)?;
    for (m, r) in recons.iter().enumerate() {
        write_volume(&stage.path().join(volume_name(m)), &r.volume, &ds.info.intensity_units)?;
        write_volume(&stage.path().join(weight_name(m)), &r.weight, "weight")?;
    }
    stage.commit()?;
    Ok(format!("reconstructed {} volumes into {}", recons.len(), out.display()))
}

fn read_reconstructions(dir: &Path, volumes: usize) -> Result<Vec<Reconstruction>> {
    (0..volumes)
        .map(|m| {
            Ok(Reconstruction {
                volume: read_volume(&dir.join(volume_name(m)))?,
                weight: read_volume(&dir.join(weight_name(m)))?,
            })
        })
        .collect()
}

fn number(v: f64) -> String {
    format!("{v}")
}

fn optional(v: Option<f64>) -> String {
    v.map(number).unwrap_or_default()
}

/// Voxelwise permutation test of stimulation against control volumes.
///
/// Writes `pvalues.json` (untested voxels are 1), `active.json` (0 or 1)
/// and `pvalues.csv`.
pub fn activate(cfg: &PipelineConfig, dataset: &Path, recon: &Path, out: &Path, seed: u64) -> Result<String> {
    let ds = read_dataset(dataset)?;
    let recons = read_reconstructions(recon, ds.design.len())?;
    let a = &cfg.analysis;
    let opt = PermutationOptions { permutations: a.permutations, threshold: a.threshold, seed };
    let map = permutation_test(&recons, &ds.design, &opt)?;
    let grid = &recons[0].volume;

    let stage = StagedDir::new(out)?;
    let p_data: Vec<f64> = map.p_values.iter().map(|p| p.unwrap_or(1.0)).collect();
    write_volume(&stage.path().join("pvalues.json"), &grid.with_data(p_data)?, "p")?;
    let active: Vec<f64> = (0..map.p_values.len()).map(|i| if map.is_active(i) { 1.0 } else { 0.0 }).collect();
    write_volume(&stage.path().join("active.json"), &grid.with_data(active)?, "mask")?;
    let mut table = CsvTable::new(&["voxel", "p_value", "t_value", "active"]);
    for (i, (p, t)) in map.p_values.iter().zip(&map.t_values).enumerate() {
        table.push([i.to_string(), optional(*p), optional(*t), u8::from(map.is_active(i)).to_string()]);
    }
    table.write(&stage.path().join("pvalues.csv"))?;
    stage.commit()?;
    Ok(format!("{} active voxels at p <= {}", map.active_count(), a.threshold))
}

fn parse_cell(path: &Path, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::MalformedData { path: path.into(), reason: format!("not a number: {cell:?}") })
}

fn read_p_values(path: &Path) -> Result<Vec<Option<f64>>> {
    let table = CsvTable::read(path)?;
    let col = table
        .column("p_value")
        .ok_or_else(|| Error::MalformedData { path: path.into(), reason: "no p_value column".into() })?;
    table.rows.iter().map(|r| parse_cell(path, r.get(col).map_or("", String::as_str))).collect()
}

/// Inputs to [`evaluate`]; metrics whose inputs are absent are skipped.
#[derive(Debug, Clone)]
pub struct EvaluateInputs {
    pub dataset: PathBuf,
    pub calibration: PathBuf,
    pub trajectory: PathBuf,
    pub activation: Option<PathBuf>,
    pub recon: Option<PathBuf>,
}

/// Detection counts per voxel over `l` disjoint volume sets, keeping only
/// voxels tested in every set.
fn replication_counts(recons: &[Reconstruction], design: &[DesignLabel], a: &AnalysisConfig, seed: u64) -> Result<Vec<usize>> {
    let sets = split_replications(design, a.replications, seed)?;
    let mut counts: Vec<Option<usize>> = vec![Some(0); recons[0].volume.len()];
    for (k, set) in sets.iter().enumerate() {
        let sub: Vec<Reconstruction> = set.iter().map(|&m| recons[m].clone()).collect();
        let labels: Vec<DesignLabel> = set.iter().map(|&m| design[m]).collect();
        let set_seed = rng::stream(seed, Domain::Split, k as u64 + 1, 0).next_u64();
        let opt = PermutationOptions { permutations: a.permutations, threshold: a.threshold, seed: set_seed };
        let map = permutation_test(&sub, &labels, &opt)?;
        for (c, p) in counts.iter_mut().zip(&map.p_values) {
            *c = match (*c, p) {
                (Some(c), Some(p)) => Some(c + usize::from(*p <= a.threshold)),
                _ => None,
            };
        }
    }
    Ok(counts.into_iter().flatten().collect())
}

/// Writes one CSV per metric: `distances.csv`, `mean_distance.csv`,
/// `auc.csv` with `roc.csv`, and `atr.csv`, plus copies of the estimated
/// and true trajectories for `report`.
pub fn evaluate(cfg: &PipelineConfig, inputs: &EvaluateInputs, out: &Path, seed: u64) -> Result<String> {
    let ds = read_dataset(&inputs.dataset)?;
    let truth = ds.truth()?;
    let cal = read_calibration(&inputs.calibration)?;
    let rows = read_trajectory(&inputs.trajectory)?;
    check_len(&inputs.trajectory, rows.len(), ds.slices.len())?;
    let stage = StagedDir::new(out)?;
    let dir = stage.path();

    let geoms: Vec<_> = ds.slices.iter().map(|s| &s.geometry).collect();
    let d = trajectory_distances(&params_of(&rows), &cal, &truth.trajectory, &truth.calibration, &geoms);
    let mut table = CsvTable::new(&["t", "m", "n", "distance_mm"]);
    for (r, v) in rows.iter().zip(&d) {
        table.push([r.t.to_string(), r.m.to_string(), r.n.to_string(), number(*v)]);
    }
    table.write(&dir.join("distances.csv"))?;
    let mean_d = mean(&d);
    let mut table = CsvTable::new(&["mean_distance_mm"]);
    table.push([number(mean_d)]);
    table.write(&dir.join("mean_distance.csv"))?;
    let mut summary = format!("mean D {mean_d:.3} mm");

    write_trajectory(&dir.join("trajectory.csv"), &rows)?;
    let truth_rows: Vec<TrajectoryRow> =
        ds.slices.iter().zip(&truth.trajectory).map(|(s, p)| row(s, p, "truth", None)).collect();
    write_trajectory(&dir.join("truth_trajectory.csv"), &truth_rows)?;

    if let Some(act) = &inputs.activation {
        let p = read_p_values(&act.join("pvalues.csv"))?;
        let mask = resample_mask(&truth.activation_mask, &ds.info.reference_grid()?)?;
        if p.len() != mask.len() {
            return Err(Error::ShapeMismatch(format!("{} p-values for {} voxels", p.len(), mask.len())));
        }
        let roc = roc_auc(&p, &mask)?;
        let mut table = CsvTable::new(&["auc"]);
        table.push([number(roc.auc)]);
        table.write(&dir.join("auc.csv"))?;
        let mut table = CsvTable::new(&["fpr", "tpr"]);
        for (x, y) in &roc.points {
            table.push([number(*x), number(*y)]);
        }
        table.write(&dir.join("roc.csv"))?;
        summary += &format!(", AUC {:.3}", roc.auc);
    }

    if let Some(recon) = &inputs.recon {
        let recons = read_reconstructions(recon, ds.design.len())?;
        let r = replication_counts(&recons, &ds.design, &cfg.analysis, seed)?;
        let fit = atr_fit(&r, cfg.analysis.replications)?;
        let mut table = CsvTable::new(&["lambda", "p_active", "p_inactive", "log_likelihood", "voxels"]);
        table.push([number(fit.lambda), number(fit.p_a), number(fit.p_i), number(fit.log_likelihood), r.len().to_string()]);
        table.write(&dir.join("atr.csv"))?;
        summary += &format!(", ATR p_A {:.3} p_I {:.3}", fit.p_a, fit.p_i);
    }
    stage.commit()?;
    Ok(summary)
}

const PARAM_LABELS: [(&str, &str); 6] = [
    ("alpha", "alpha (deg)"),
    ("beta", "beta (deg)"),
    ("gamma", "gamma (deg)"),
    ("dx", "dx (mm)"),
    ("dy", "dy (mm)"),
    ("dz", "dz (mm)"),
];

fn trajectory_series(name: &str, rows: &[TrajectoryRow], k: usize) -> Series {
    Series::new(name, rows.iter().map(|r| (r.t as f64, r.params().to_degrees_mm()[k])).collect())
}

fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let table = CsvTable::read(path)?;
    let col = table
        .column(name)
        .ok_or_else(|| Error::MalformedData { path: path.into(), reason: format!("no {name} column") })?;
    table
        .rows
        .iter()
        .map(|r| parse_cell(path, r.get(col).map_or("", String::as_str))?.ok_or_else(|| Error::MalformedData {
            path: path.into(),
            reason: format!("empty {name} cell"),
        }))
        .collect()
}

/// SVG plots from `evaluate` outputs, one run per `(name, directory)`:
/// trajectories against the truth, a `D_t` box plot with its data, and ROC
/// curves when available.
pub fn report(runs: &[(String, PathBuf)], out: &Path) -> Result<String> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::InvalidArgument("report needs at least one run".into()));
    };
    let truth = read_trajectory(&first.join("truth_trajectory.csv"))?;
    let trajectories =
        runs.iter().map(|(_, dir)| read_trajectory(&dir.join("trajectory.csv"))).collect::<Result<Vec<_>>>()?;
    let stage = StagedDir::new(out)?;
    let dir = stage.path();
    let mut files = 0;

    for (k, (key, label)) in PARAM_LABELS.iter().enumerate() {
        let mut series = vec![trajectory_series("truth", &truth, k).dashed()];
        series.extend(runs.iter().zip(&trajectories).map(|((name, _), rows)| trajectory_series(name, rows, k)));
        let svg = line_chart(&format!("{key}: estimated and true"), "slice time t", label, &series);
        write_atomic(&dir.join(format!("trajectory_{key}.svg")), svg.as_bytes())?;
        files += 1;
    }

    let mut groups = Vec::new();
    let mut table = CsvTable::new(&["method", "min", "q1", "median", "q3", "max"]);
    for (name, run) in runs {
        let d = read_column(&run.join("distances.csv"), "distance_mm")?;
        if let Some(b) = BoxStats::from_values(&d) {
            table.push([name.clone(), number(b.min), number(b.q1), number(b.median), number(b.q3), number(b.max)]);
            groups.push((name.clone(), b));
        }
    }
    table.write(&dir.join("distance_boxplot.csv"))?;
    write_atomic(&dir.join("distance_boxplot.svg"), box_plot("average voxel distance", "D_t (mm)", &groups).as_bytes())?;
    files += 2;

    let mut curves = Vec::new();
    for (name, run) in runs {
        let path = run.join("roc.csv");
        if path.exists() {
            let x = read_column(&path, "fpr")?;
            let y = read_column(&path, "tpr")?;
            curves.push(Series::new(name, x.into_iter().zip(y).collect()));
        }
    }
    if !curves.is_empty() {
        let svg = line_chart("ROC", "false positive rate", "true positive rate", &curves);
        write_atomic(&dir.join("roc.svg"), svg.as_bytes())?;
        files += 1;
    }
    stage.commit()?;
    Ok(format!("{files} report files written to {}", out.display()))
}
