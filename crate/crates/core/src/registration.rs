//! Volume-to-volume and slice-to-volume registration baselines.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{Calibration, RigidParams};
use crate::imaging::{volume_planes, Slice, SliceStack, Volume};
use crate::similarity::{MutualInformation, StackObjective, DEFAULT_BINS};
use crate::simplex::{nelder_mead_maximize, SimplexOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationOptions {
    pub bins: usize,
    pub simplex: SimplexOptions,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions { bins: DEFAULT_BINS, simplex: SimplexOptions::rigid() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub params: RigidParams,
    pub objective: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    /// Set by callers that registered a slice which failed screening.
    pub low_confidence: bool,
}

/// Maximizes `objective` over rigid parameters starting at `p0`.
pub(crate) fn maximize_rigid<F>(objective: F, p0: &RigidParams, opt: &SimplexOptions) -> Result<Registration>
where
    F: Fn(&RigidParams) -> f64,
{
    let r = nelder_mead_maximize(
        |x| objective(&RigidParams::new(x[0], x[1], x[2], x[3], x[4], x[5])),
        &p0.to_array(),
        opt,
    )?;
    Ok(Registration {
        params: RigidParams::new(r.x[0], r.x[1], r.x[2], r.x[3], r.x[4], r.x[5]),
        objective: r.value,
        evaluations: r.evaluations,
        budget_exhausted: r.budget_exhausted,
        low_confidence: false,
    })
}

/// Registers a naively stacked EPI volume to the anatomy.
///
/// The anatomy is resampled at every EPI voxel, so the joint histogram is
/// always over the same EPI samples.
pub fn register_volume(
    v_m: &Volume,
    v_anat: &Volume,
    p0: &RigidParams,
    cal: &Calibration,
    opt: &RegistrationOptions,
) -> Result<Registration> {
    let planes = volume_planes(v_m);
    let objective = StackObjective::from_parts(
        planes.iter().collect(),
        v_m.data().to_vec(),
        v_anat,
        cal,
        MutualInformation { bins: opt.bins },
    );
    maximize_rigid(|p| objective.value(p), p0, &opt.simplex)
}

/// Registers one slice to the anatomy by single-slice mutual information.
pub fn register_slice(
    s: &Slice,
    v_anat: &Volume,
    p0: &RigidParams,
    cal: &Calibration,
    opt: &RegistrationOptions,
) -> Result<Registration> {
    let stack = SliceStack::single(s);
    let objective = StackObjective::new(&stack, v_anat, cal, opt.bins);
    maximize_rigid(|p| objective.value(p), p0, &opt.simplex)
}
