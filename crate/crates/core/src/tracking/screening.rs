//! Slice screening and quadratic fallback interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidParams;
use crate::imaging::{mean_volume, stack_slices_to_volume, Slice, Volume};

/// Accept a slice when at least `min_fraction` of its pixels exceed
/// `relative_threshold` times the `percentile`-th percentile of the mean
/// EPI volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningRule {
    pub min_fraction: f64,
    pub relative_threshold: f64,
    pub percentile: f64,
}

impl Default for ScreeningRule {
    fn default() -> Self {
        ScreeningRule { min_fraction: 0.15, relative_threshold: 0.10, percentile: 98.0 }
    }
}

impl ScreeningRule {
    /// Intensity threshold derived from the mean EPI volume.
    pub fn threshold(&self, mean_epi: &Volume) -> f64 {
        self.relative_threshold * percentile(mean_epi.data(), self.percentile)
    }
}

/// Linear-interpolated percentile (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Mean of the naively stacked EPI volumes of a slice series.
pub fn mean_epi_volume(slices: &[Slice]) -> Result<Volume> {
    Ok(mean_volume(&stack_all_volumes(slices)?)?)
}

/// Naive stacks of every volume in a slice series, by volume index.
pub fn stack_all_volumes(slices: &[Slice]) -> Result<Vec<Volume>> {
    let volumes = slices.iter().map(|s| s.volume_index).max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<&Slice>> = vec![Vec::new(); volumes];
    for s in slices {
        groups[s.volume_index].push(s);
    }
    groups.iter().map(|g| stack_slices_to_volume(g)).collect()
}

/// True if the slice carries enough supra-threshold signal.
///
/// The comparison is inclusive: exactly `min_fraction` passes.
pub fn screen_slice(s: &Slice, threshold: f64, rule: &ScreeningRule) -> bool {
    if s.data.is_empty() {
        return false;
    }
    let above = s.data.iter().filter(|&&v| v > threshold).count();
    above as f64 >= rule.min_fraction * s.data.len() as f64
}

fn lagrange(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..ts.len() {
        let mut basis = 1.0;
        for j in 0..ts.len() {
            if i != j {
                basis *= (t - ts[j]) / (ts[i] - ts[j]);
            }
        }
        acc += basis * ys[i];
    }
    acc
}

/// Quadratic (Lagrange) interpolation through the three accepted estimates
/// nearest to `t_query`; linear with two, constant with one.
pub fn interpolate_params(accepted: &[(f64, RigidParams)], t_query: f64) -> Result<RigidParams> {
    if accepted.is_empty() {
        return Err(Error::NoAcceptedSlices);
    }
    let mut idx: Vec<usize> = (0..accepted.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (accepted[a].0 - t_query).abs();
        let db = (accepted[b].0 - t_query).abs();
        da.total_cmp(&db).then(accepted[a].0.total_cmp(&accepted[b].0))
    });
    idx.truncate(3);
    let ts: Vec<f64> = idx.iter().map(|&i| accepted[i].0).collect();
    let mut out = [0.0; 6];
    for (c, o) in out.iter_mut().enumerate() {
        let ys: Vec<f64> = idx.iter().map(|&i| accepted[i].1.to_array()[c]).collect();
        *o = lagrange(&ts, &ys, t_query);
    }
    Ok(RigidParams::from_array(out))
}
