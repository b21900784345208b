//! Reconstruction and evaluation measures: voxel distance, activation
//! detection, ROC and test-retest reliability.

mod atr;
mod distance;
mod recon;
mod stats;

pub use atr::{atr_fit, mixture_log_likelihood, MixtureFit};
pub use distance::{average_voxel_distance, average_voxel_distance_with, mean, trajectory_distances};
pub use recon::{reconstruct_volumes, splat_slice, Reconstruction};
pub use stats::{
    permutation_p_value, permutation_test, roc_auc, split_replications, two_sample_t, ActivationMap,
    PermutationOptions, RocCurve,
};

use crate::error::Result;
use crate::imaging::{trilinear_sample, Volume};

/// Samples a 0/1 mask volume at the voxel centers of `grid`; a voxel is
/// true when the interpolated mask value is at least 0.5.
pub fn resample_mask(mask: &Volume, grid: &Volume) -> Result<Vec<bool>> {
    let [nx, ny, nz] = grid.dims();
    let mut out = Vec::with_capacity(grid.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(trilinear_sample(mask, &grid.voxel_center(x, y, z)).is_some_and(|v| v >= 0.5));
            }
        }
    }
    Ok(out)
}
