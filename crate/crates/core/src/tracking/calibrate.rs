//! Estimators for the static scanner offset, the rotation center and the
//! random-walk covariance.

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{estimate_rotation_center, Calibration, CenterEstimate, RigidParams};
use crate::imaging::{mean_volume, Slice, Volume};
use crate::registration::{register_volume, RegistrationOptions};

use super::{hmt_track, stack_all_volumes, TrackConfig};

/// Registers the temporal mean of the EPI volumes to the anatomy.
pub fn calibrate_static(epi_volumes: &[Volume], v_anat: &Volume, opt: &RegistrationOptions) -> Result<Calibration> {
    let mean = mean_volume(epi_volumes)?;
    let reg = register_volume(&mean, v_anat, &RigidParams::ZERO, &Calibration::identity(), opt)?;
    Ok(Calibration::with_static(reg.params.rotation(), reg.params.translation()))
}

/// Tracks the first `k` slices with the rotation center at the origin and
/// solves for the center that best explains the resulting motion.
pub fn calibrate_center(
    slices: &[Slice],
    v_anat: &Volume,
    cal_partial: &Calibration,
    k: usize,
    cfg: &TrackConfig,
) -> Result<CenterEstimate> {
    let k = k.min(slices.len());
    let cal = Calibration { c: Vector3::zeros(), ..cal_partial.clone() };
    let track = hmt_track(&slices[..k], v_anat, &cal, cfg)?;
    let pairs: Vec<_> = track.entries.iter().map(|e| (e.params.rotation(), e.params.translation())).collect();
    estimate_rotation_center(&pairs)
}

/// Uncentered second moment of consecutive parameter differences,
/// normalized by `K - 1`.
pub fn calibrate_motion_covariance(traj: &[RigidParams]) -> Result<Matrix6<f64>> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 poses, got {}", traj.len())));
    }
    let mut acc = Matrix6::zeros();
    for w in traj.windows(2) {
        let d = w[1].to_vector() - w[0].to_vector();
        acc += d * d.transpose();
    }
    Ok(acc / (traj.len() - 1) as f64)
}

/// Random-walk covariance used before one has been estimated:
/// 1 deg^2 and 1 mm^2 per slice on the diagonal.
pub fn initial_motion_covariance() -> Matrix6<f64> {
    let r = 1f64.to_radians().powi(2);
    Matrix6::from_diagonal(&Vector6::new(r, r, r, 1.0, 1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    /// Slices used to estimate the rotation center.
    pub center_slices: usize,
    pub track: TrackConfig,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { center_slices: 70, track: TrackConfig::default() }
    }
}

/// Full calibration: static offset, then rotation center, then the
/// random-walk covariance from a tracking run over the same `K` slices.
pub fn run_calibration(slices: &[Slice], v_anat: &Volume, opt: &CalibrationOptions) -> Result<(Calibration, CenterEstimate)> {
    let volumes = stack_all_volumes(slices)?;
    let mut cal = calibrate_static(&volumes, v_anat, &opt.track.registration())?;
    cal.sigma_d = initial_motion_covariance();
    let center = calibrate_center(slices, v_anat, &cal, opt.center_slices, &opt.track)?;
    cal.c = center.center;
    let k = opt.center_slices.min(slices.len());
    let track = hmt_track(&slices[..k], v_anat, &cal, &opt.track)?;
    cal.sigma_d = calibrate_motion_covariance(&track.params())?;
    Ok((cal, center))
}
