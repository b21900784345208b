//! Average voxel distance between estimated and true poses.

use crate::geometry::{Calibration, RigidParams};
use crate::imaging::SliceGeometry;

/// Mean distance between the reference-frame positions of the slice pixel
/// centers under `est` and under `truth`.
pub fn average_voxel_distance(est: &RigidParams, truth: &RigidParams, g: &SliceGeometry, cal: &Calibration) -> f64 {
    average_voxel_distance_with(est, cal, truth, cal, g)
}

/// Like [`average_voxel_distance`], with separate calibrations for the
/// estimate and the ground truth.
pub fn average_voxel_distance_with(
    est: &RigidParams,
    est_cal: &Calibration,
    truth: &RigidParams,
    true_cal: &Calibration,
    g: &SliceGeometry,
) -> f64 {
    let a = est_cal.chain(est);
    let b = true_cal.chain(truth);
    let n = g.pixel_count();
    if n == 0 {
        return 0.0;
    }
    g.pixel_centers().map(|x| (a.apply(&x) - b.apply(&x)).norm()).sum::<f64>() / n as f64
}

/// `D_t` for every slice time.
pub fn trajectory_distances(
    est: &[RigidParams],
    est_cal: &Calibration,
    truth: &[RigidParams],
    true_cal: &Calibration,
    geometries: &[&SliceGeometry],
) -> Vec<f64> {
    est.iter()
        .zip(truth)
        .zip(geometries)
        .map(|((e, t), g)| average_voxel_distance_with(e, est_cal, t, true_cal, g))
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
