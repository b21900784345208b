//! Motion-corrected volume reconstruction by trilinear splatting.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Calibration, RigidParams};
use crate::imaging::{Slice, Volume};

/// One corrected volume with its accumulated splat weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub volume: Volume,
    pub weight: Volume,
}

impl Reconstruction {
    pub fn is_missing(&self, i: usize) -> bool {
        self.weight.data()[i] <= 0.0
    }
}

/// Deposits every slice pixel at its reference-frame position under the
/// estimated pose and normalizes by the accumulated weight.
///
/// Pixels whose position falls outside the voxel-center box of `grid` are
/// dropped. Voxels that receive no weight are zero and marked missing.
pub fn reconstruct_volumes(
    slices: &[Slice],
    estimates: &[RigidParams],
    cal: &Calibration,
    grid: &Volume,
) -> Result<Vec<Reconstruction>> {
    if slices.len() != estimates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} slices but {} pose estimates",
            slices.len(),
            estimates.len()
        )));
    }
    let volumes = slices.iter().map(|s| s.volume_index).max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); volumes];
    for (t, s) in slices.iter().enumerate() {
        groups[s.volume_index].push(t);
    }
    groups
        .par_iter()
        .map(|ts| {
            let mut acc = vec![0.0; grid.len()];
            let mut wsum = vec![0.0; grid.len()];
            for &t in ts {
                splat_slice(&slices[t], &estimates[t], cal, grid, &mut acc, &mut wsum);
            }
            let data = acc.iter().zip(&wsum).map(|(&a, &w)| if w > 0.0 { a / w } else { 0.0 }).collect();
            Ok(Reconstruction { volume: grid.with_data(data)?, weight: grid.with_data(wsum)? })
        })
        .collect()
}

/// Adds the trilinear splat of one slice into `acc` (weighted intensity)
/// and `wsum` (weight). Returns the deposited intensity.
pub fn splat_slice(
    s: &Slice,
    est: &RigidParams,
    cal: &Calibration,
    grid: &Volume,
    acc: &mut [f64],
    wsum: &mut [f64],
) -> f64 {
    let map = cal.chain(est);
    let dims = grid.dims();
    let mut deposited = 0.0;
    'pixels: for (x, &val) in s.geometry.pixel_centers().zip(&s.data) {
        let f = grid.continuous_index(&map.apply(&x));
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let hi = (dims[a] - 1) as f64;
            if !(f[a] >= 0.0 && f[a] <= hi) {
                continue 'pixels;
            }
            let i0 = if dims[a] >= 2 { (f[a].floor() as usize).min(dims[a] - 2) } else { 0 };
            base[a] = i0;
            frac[a] = if dims[a] >= 2 { f[a] - i0 as f64 } else { 0.0 };
        }
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                idx[a] = base[a] + usize::from(up);
            }
            if w == 0.0 {
                continue;
            }
            let i = grid.index(idx[0], idx[1], idx[2]);
            acc[i] += w * val;
            wsum[i] += w;
        }
        deposited += val;
    }
    deposited
}
