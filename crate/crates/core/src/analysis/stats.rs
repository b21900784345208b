//! Voxelwise activation statistics and ROC analysis.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::DesignLabel;
use crate::rng::{self, Domain};

use super::recon::Reconstruction;

fn mean_ss(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum())
}

/// Pooled-variance two-sample t statistic.
///
/// With zero pooled variance the result is 0 for equal means and an
/// infinity carrying the sign of the mean difference otherwise.
pub fn two_sample_t(stim: &[f64], control: &[f64]) -> Result<f64> {
    if stim.len() < 2 || control.len() < 2 {
        return Err(Error::InvalidArgument("t test needs at least 2 values per group".into()));
    }
    let (ma, ssa) = mean_ss(stim);
    let (mb, ssb) = mean_ss(control);
    let (na, nb) = (stim.len() as f64, control.len() as f64);
    let sp2 = (ssa + ssb) / (na + nb - 2.0);
    let diff = ma - mb;
    if sp2 == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY });
    }
    Ok(diff / (sp2 * (1.0 / na + 1.0 / nb)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationOptions {
    pub permutations: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        PermutationOptions { permutations: 2000, threshold: 0.005, seed: 0 }
    }
}

/// Per-voxel permutation test result; `None` marks a missing voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub p_values: Vec<Option<f64>>,
    pub t_values: Vec<Option<f64>>,
    pub threshold: f64,
}

impl ActivationMap {
    pub fn is_active(&self, i: usize) -> bool {
        self.p_values[i].is_some_and(|p| p <= self.threshold)
    }

    pub fn active_count(&self) -> usize {
        (0..self.p_values.len()).filter(|&i| self.is_active(i)).count()
    }
}

/// Permutation p-value for one voxel.
///
/// The pooled t statistic is a strictly increasing function of the squared
/// difference of group means when the pooled sample is fixed, so the
/// permutations compare `|mean(stim) - mean(control)|` directly.
pub fn permutation_p_value<R: Rng>(values: &[f64], stim: &[bool], permutations: usize, rng: &mut R) -> Option<f64> {
    let na = stim.iter().filter(|&&s| s).count();
    let n = values.len();
    if na < 2 || n - na < 2 {
        return None;
    }
    let total: f64 = values.iter().sum();
    let diff = |sum_a: f64| sum_a / na as f64 - (total - sum_a) / (n - na) as f64;
    let observed = diff(values.iter().zip(stim).filter(|(_, &s)| s).map(|(v, _)| v).sum()).abs();
    let cut = observed - 1e-12 * observed.max(total.abs() / n as f64);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    for _ in 0..permutations {
        let (chosen, _) = idx.partial_shuffle(rng, na);
        let s: f64 = chosen.iter().map(|&i| values[i]).sum();
        if diff(s).abs() >= cut {
            count += 1;
        }
    }
    Some((1 + count) as f64 / (permutations + 1) as f64)
}

/// Voxelwise permutation test over reconstructed volumes, excluding each
/// voxel's missing volumes. Voxel `i` uses the random stream `(seed, i)`.
pub fn permutation_test(recons: &[Reconstruction], design: &[DesignLabel], opt: &PermutationOptions) -> Result<ActivationMap> {
    if recons.len() != design.len() {
        return Err(Error::InvalidArgument(format!("{} volumes but {} design labels", recons.len(), design.len())));
    }
    if !design.contains(&DesignLabel::Stim) || !design.contains(&DesignLabel::Control) {
        return Err(Error::InvalidArgument("design needs both stim and control volumes".into()));
    }
    let voxels = recons.first().map_or(0, |r| r.volume.len());
    let results: Vec<(Option<f64>, Option<f64>)> = (0..voxels)
        .into_par_iter()
        .map(|i| {
            let mut values = Vec::with_capacity(recons.len());
            let mut labels = Vec::with_capacity(recons.len());
            for (r, &l) in recons.iter().zip(design) {
                if !r.is_missing(i) {
                    values.push(r.volume.data()[i]);
                    labels.push(l == DesignLabel::Stim);
                }
            }
            let mut rng = rng::stream(opt.seed, Domain::Permutation, i as u64, 0);
            let p = permutation_p_value(&values, &labels, opt.permutations, &mut rng);
            let t = p.and_then(|_| {
                let a: Vec<f64> = values.iter().zip(&labels).filter(|(_, &s)| s).map(|(v, _)| *v).collect();
                let b: Vec<f64> = values.iter().zip(&labels).filter(|(_, &s)| !s).map(|(v, _)| *v).collect();
                two_sample_t(&a, &b).ok()
            });
            (p, t)
        })
        .collect();
    let (p_values, t_values) = results.into_iter().unzip();
    Ok(ActivationMap { p_values, t_values, threshold: opt.threshold })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of calling voxels active when `p <= threshold`, swept over every
/// distinct p-value, with the trapezoid area. Missing voxels are skipped.
pub fn roc_auc(p_values: &[Option<f64>], truth: &[bool]) -> Result<RocCurve> {
    if p_values.len() != truth.len() {
        return Err(Error::InvalidArgument("p-values and truth mask differ in length".into()));
    }
    let mut pairs: Vec<(f64, bool)> = p_values.iter().zip(truth).filter_map(|(p, &t)| p.map(|p| (p, t))).collect();
    let pos = pairs.iter().filter(|(_, t)| *t).count();
    let neg = pairs.len() - pos;
    if pos == 0 {
        return Err(Error::DegenerateTruth("no active voxels"));
    }
    if neg == 0 {
        return Err(Error::DegenerateTruth("no inactive voxels"));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let p = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == p {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("non-empty");
        let (x1, y1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// Random disjoint split of the volumes into `l` sets, stratified so each
/// set receives an even share of stimulation and control volumes.
pub fn split_replications(design: &[DesignLabel], l: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let stim: Vec<usize> = (0..design.len()).filter(|&m| design[m] == DesignLabel::Stim).collect();
    let ctrl: Vec<usize> = (0..design.len()).filter(|&m| design[m] == DesignLabel::Control).collect();
    if l == 0 || stim.len() < 2 * l || ctrl.len() < 2 * l {
        return Err(Error::TooFewVolumes(format!(
            "{} stim and {} control volumes cannot fill {l} sets with 2 of each",
            stim.len(),
            ctrl.len()
        )));
    }
    let mut r = rng::stream(seed, Domain::Split, 0, 0);
    let mut sets = vec![Vec::new(); l];
    for mut group in [stim, ctrl] {
        group.shuffle(&mut r);
        for (k, m) in group.into_iter().enumerate() {
            sets[k % l].push(m);
        }
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    Ok(sets)
}
