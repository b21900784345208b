//! Head motion tracking: a Gaussian particle filter over slice-stack
//! mutual information, with histogram-equalized weights, slice screening
//! and the calibration estimators that feed it.

mod calibrate;
mod gaussian;
mod screening;
mod weights;

pub use calibrate::{
    calibrate_center, calibrate_motion_covariance, calibrate_static, initial_motion_covariance, run_calibration,
    CalibrationOptions,
};
pub use gaussian::{
    psd_sqrt, weighted_moments, GaussianFilter, RandomWalk, StateTransition, COVARIANCE_JITTER,
};
pub use screening::{
    interpolate_params, mean_epi_volume, percentile, screen_slice, stack_all_volumes, ScreeningRule,
};
pub use weights::{equalize_weights, gz_cdf, gz_cdf_inverse, gz_density, gz_max, GzTable, RankWeights, STATE_DIM};

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Calibration, RigidParams};
use crate::imaging::{Slice, SliceStack, Volume};
use crate::registration::{maximize_rigid, register_slice, RegistrationOptions};
use crate::similarity::{StackObjective, DEFAULT_BINS};
use crate::simplex::SimplexOptions;

/// Tracker settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub particles: usize,
    /// Stack half-width `h`: each measurement uses slices `t-h ..= t+h`.
    pub half_width: usize,
    pub bins: usize,
    pub simplex: SimplexOptions,
    pub screening: ScreeningRule,
    pub seed: u64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            particles: 4000,
            half_width: 1,
            bins: DEFAULT_BINS,
            simplex: SimplexOptions::rigid(),
            screening: ScreeningRule::default(),
            seed: 0,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 100 {
            return Err(Error::InvalidArgument(format!("need at least 100 particles, got {}", self.particles)));
        }
        self.simplex.validate(STATE_DIM)
    }

    pub fn registration(&self) -> RegistrationOptions {
        RegistrationOptions { bins: self.bins, simplex: self.simplex.clone() }
    }
}

/// Weighted particle approximation of the filtering posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub params: Vec<RigidParams>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn uniform(params: Vec<RigidParams>) -> Self {
        let w = 1.0 / params.len() as f64;
        let weights = vec![w; params.len()];
        ParticleEnsemble { params, weights }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn vectors(&self) -> Vec<Vector6<f64>> {
        self.params.iter().map(|p| p.to_vector()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Optimized,
    Interpolated,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Optimized => "optimized",
            TrackStatus::Interpolated => "interpolated",
        }
    }
}

/// Gaussian fitted to the weighted particles at one slice time.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vector6<f64>,
    pub cov: Matrix6<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub t: usize,
    pub params: RigidParams,
    pub status: TrackStatus,
    pub objective: Option<f64>,
    pub posterior: Option<Posterior>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub entries: Vec<TrackEntry>,
}

impl TrackResult {
    pub fn params(&self) -> Vec<RigidParams> {
        self.entries.iter().map(|e| e.params).collect()
    }
}

/// Outcome of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOutcome {
    pub weights: Vec<f64>,
    pub posterior: Posterior,
    pub estimate: RigidParams,
    pub objective: f64,
    /// Objective at the posterior mean, where the optimizer starts.
    pub objective_at_mean: f64,
}

/// Weights the ensemble by equalized `objective` scores, fits the posterior
/// Gaussian and maximizes the objective from the posterior mean.
pub fn measurement_update_with<F>(
    ens: &ParticleEnsemble,
    objective: F,
    ranks: &RankWeights,
    simplex: &SimplexOptions,
) -> Result<MeasurementOutcome>
where
    F: Fn(&RigidParams) -> f64 + Sync,
{
    let scores: Vec<f64> = ens.params.par_iter().map(&objective).collect();
    let weights = ranks.assign(&scores)?;
    let (mean, cov) = weighted_moments(&ens.vectors(), &weights)?;
    let start = RigidParams::from_vector(&mean);
    let reg = maximize_rigid(&objective, &start, simplex)?;
    let objective_at_mean = objective(&start);
    Ok(MeasurementOutcome {
        weights,
        posterior: Posterior { mean, cov },
        estimate: reg.params,
        objective: reg.objective,
        objective_at_mean,
    })
}

/// Measurement update against the mutual information of a slice stack.
pub fn measurement_update(
    ens: &ParticleEnsemble,
    stack: &SliceStack<'_>,
    v_anat: &Volume,
    cal: &Calibration,
    cfg: &TrackConfig,
    ranks: &RankWeights,
) -> Result<MeasurementOutcome> {
    let objective = StackObjective::new(stack, v_anat, cal, cfg.bins);
    measurement_update_with(ens, |p| objective.value(p), ranks, &cfg.simplex)
}

/// Draws `count` particles from `N(estimate, posterior_cov + jitter)` and
/// moves each one step along the random walk with covariance `sigma_d`.
///
/// Particle `j` uses the random stream `(seed, step, j)`.
pub fn time_update(
    estimate: &RigidParams,
    posterior_cov: &Matrix6<f64>,
    sigma_d: &Matrix6<f64>,
    count: usize,
    seed: u64,
    step: u64,
) -> ParticleEnsemble {
    let center = estimate.to_vector();
    let mut filter = GaussianFilter::<6>::from_gaussian(&center, &Matrix6::zeros(), count, seed);
    filter.set_step(step);
    filter.resample_and_propagate(&center, posterior_cov, &RandomWalk::new(sigma_d));
    ParticleEnsemble::uniform(filter.particles().iter().map(RigidParams::from_vector).collect())
}

/// Screening decision for every slice of a series.
pub fn screen_series(slices: &[Slice], rule: &ScreeningRule) -> Result<Vec<bool>> {
    let threshold = rule.threshold(&mean_epi_volume(slices)?);
    Ok(slices.iter().map(|s| screen_slice(s, threshold, rule)).collect())
}

/// Tracks rigid head motion over a time-ordered slice series.
///
/// The first accepted slice is registered from zero motion to seed the
/// particle cloud. Every accepted slice then gets a measurement update and
/// the cloud is redrawn around the optimized estimate; rejected slices only
/// advance the random walk and are filled in afterwards by quadratic
/// interpolation of the accepted estimates.
pub fn hmt_track(slices: &[Slice], v_anat: &Volume, cal: &Calibration, cfg: &TrackConfig) -> Result<TrackResult> {
    cfg.validate()?;
    cal.validate()?;
    if cal.sigma_d == Matrix6::zeros() {
        return Err(Error::CalibrationMissing("random-walk covariance is zero".into()));
    }
    if slices.is_empty() {
        return Err(Error::InvalidArgument("no slices to track".into()));
    }
    let accepted = screen_series(slices, &cfg.screening)?;
    let first = accepted.iter().position(|&a| a).ok_or(Error::NoAcceptedSlices)?;
    let init = register_slice(&slices[first], v_anat, &RigidParams::ZERO, cal, &cfg.registration())?;

    let ranks = RankWeights::new(cfg.particles, STATE_DIM as u32)?;
    let walk = RandomWalk::new(&cal.sigma_d);
    let mut filter = GaussianFilter::<6>::from_gaussian(&init.params.to_vector(), &cal.sigma_d, cfg.particles, cfg.seed);

    let mut entries = Vec::with_capacity(slices.len());
    for (t, ok) in accepted.iter().enumerate() {
        let outcome = if *ok {
            let ens = ParticleEnsemble::uniform(filter.particles().iter().map(RigidParams::from_vector).collect());
            let stack = SliceStack::centered(slices, t, cfg.half_width);
            match measurement_update(&ens, &stack, v_anat, cal, cfg, &ranks) {
                Ok(o) => Some(o),
                Err(Error::AllInvalid) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        match outcome {
            Some(o) => {
                filter.resample_and_propagate(&o.estimate.to_vector(), &o.posterior.cov, &walk);
                entries.push(TrackEntry {
                    t,
                    params: o.estimate,
                    status: TrackStatus::Optimized,
                    objective: Some(o.objective),
                    posterior: Some(o.posterior),
                });
            }
            None => {
                filter.predict(&walk);
                entries.push(TrackEntry {
                    t,
                    params: RigidParams::ZERO,
                    status: TrackStatus::Interpolated,
                    objective: None,
                    posterior: None,
                });
            }
        }
    }

    let anchors: Vec<(f64, RigidParams)> = entries
        .iter()
        .filter(|e| e.status == TrackStatus::Optimized)
        .map(|e| (e.t as f64, e.params))
        .collect();
    for e in entries.iter_mut().filter(|e| e.status == TrackStatus::Interpolated) {
        e.params = interpolate_params(&anchors, e.t as f64)?;
    }
    Ok(TrackResult { entries })
}
