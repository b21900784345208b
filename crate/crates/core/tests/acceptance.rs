//! End-to-end acceptance checks. Each test prints one line of the form
//! `criterion N: PASS|FAIL ...` to stderr before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hmt_core::analysis::{
    atr_fit, average_voxel_distance_with, mean, permutation_p_value, permutation_test, reconstruct_volumes,
    resample_mask, roc_auc, trajectory_distances, PermutationOptions,
};
use hmt_core::geometry::{euler_to_matrix, matrix_to_euler, scanner_to_reference, Calibration, RigidParams, RotationMatrix};
use hmt_core::imaging::{trilinear_sample, SliceGeometry, Volume};
use hmt_core::io::{read_nifti_subset, read_volume, raw_path, write_volume};
use hmt_core::phantom::{generate, PhantomConfig};
use hmt_core::pipeline::{self, estimate_trajectory, EvaluateInputs, Method, PipelineConfig};
use hmt_core::rng::{self, Domain};
use hmt_core::tracking::{
    calibrate_center, calibrate_motion_covariance, calibrate_static, equalize_weights, gz_cdf, gz_density,
    gz_max, hmt_track, initial_motion_covariance, stack_all_volumes, weighted_moments, GaussianFilter,
    RandomWalk, RankWeights, TrackConfig,
};
use nalgebra::{Matrix1, Rotation3, SVector, Vector1, Vector3};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

// criterion 1
const GZ_INTEGRAL_TOL: f64 = 1e-6;
const GZ_POINT_TOL: f64 = 1e-9;
const GZ_DRAWS: usize = 1_000_000;
const GZ_KS_MAX: f64 = 0.01;
// criterion 2
const WEIGHT_PARTICLES: usize = 4000;
const WEIGHT_KS_MAX: f64 = 0.05;
// criterion 3
const KALMAN_RMSE_REL: f64 = 0.10;
// criterion 4
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const DESK_PARTICLES: usize = 500;
const HMT_TO_S2V_MAX: f64 = 0.6;
const DESK_BUDGET: Duration = Duration::from_secs(15 * 60);
// criterion 5
const AUC_TRUTH_MIN: f64 = 0.98;
// criterion 6
const NULL_VOXELS: usize = 5000;
const NULL_RATE: (f64, f64) = (0.002, 0.009);
// criterion 7
const ATR_TOL: f64 = 0.05;
// criterion 8
const CENTER_TOL_MM: f64 = 0.5;
const SIGMA_D_TOL: f64 = 1e-12;
const STATIC_ROT_TOL_DEG: f64 = 0.2;
const STATIC_TRANS_TOL_MM: f64 = 0.5;
// criterion 9
const AFFINE_TOL: f64 = 1e-10;
const CHAIN_TOL: f64 = 1e-9;
const DISTANCE_TOL: f64 = 1e-10;

/// Written straight to stderr so the line shows up without `--nocapture`.
fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

/// Chi-square survival function with 6 degrees of freedom.
fn chi2_6_survival(x: f64) -> f64 {
    (-x / 2.0).exp() * (1.0 + x / 2.0 + x * x / 8.0)
}

/// `P{f(X) <= z}` for six-dimensional standard normal `X`.
fn gz6_cdf_closed_form(z: f64) -> f64 {
    chi2_6_survival(-2.0 * (z / gz_max(6)).ln())
}

fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_01_appendix_density() {
    let start = Instant::now();
    let zmax = gz_max(6);
    // z = zmax e^{-u} removes the logarithmic growth at z -> 0
    let (steps, u_end) = (200_000, 80.0);
    let h = u_end / steps as f64;
    let f = |u: f64| {
        let z = zmax * (-u as f64).exp();
        if z <= 0.0 { 0.0 } else { gz_density(z, 6).unwrap() * z }
    };
    let mut integral = f(0.0) + f(u_end);
    for k in 1..steps {
        integral += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    integral *= h / 3.0;
    let at_max = gz_density(zmax, 6).unwrap();
    let at_half = gz_density(zmax * (-0.5f64).exp(), 6).unwrap();
    let quad_time = start.elapsed();

    let mut r = rng::stream(2024, Domain::Test, 1, 0);
    let draws: Vec<f64> = (0..GZ_DRAWS)
        .map(|_| {
            let s: f64 = (0..6).map(|_| r.sample::<f64, _>(StandardNormal).powi(2)).sum();
            zmax * (-s / 2.0).exp()
        })
        .collect();
    let ks = ks_statistic(draws, |z| gz_cdf(z, 6));

    let pass = (integral - 1.0).abs() < GZ_INTEGRAL_TOL
        && at_max.abs() < GZ_POINT_TOL
        && (at_half - PI.powi(3)).abs() < GZ_POINT_TOL
        && quad_time < Duration::from_secs(1)
        && ks < GZ_KS_MAX;
    verdict(
        1,
        pass,
        &format!(
            "integral {integral:.9} g(zmax) {at_max:e} g(zmax e^-1/2) - pi^3 {:e} time {quad_time:?} KS {ks:.5}",
            at_half - PI.powi(3)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_weight_law() {
    let ranks = RankWeights::new(WEIGHT_PARTICLES, 6).unwrap();
    let mut r = rng::stream(7, Domain::Test, 2, 0);
    let scores: Vec<f64> = (0..WEIGHT_PARTICLES).map(|_| r.random::<f64>()).collect();
    let raw = ranks.assign_raw(&scores).unwrap();
    let ks = ks_statistic(raw, gz6_cdf_closed_form);

    let ties = equalize_weights(&[0.37; 50]).unwrap();
    let uniform = ties.iter().all(|&w| w == ties[0]) && (ties[0] - 1.0 / 50.0).abs() < 1e-15;

    let pass = ks < WEIGHT_KS_MAX && uniform;
    verdict(2, pass, &format!("KS {ks:.5} (P = {WEIGHT_PARTICLES}), ties uniform {uniform}"));
    assert!(pass);
}

/// Posterior means of the Gaussian particle filter and of the exact Kalman
/// filter for `x_t = a x_{t-1} + w`, `y_t = x_t + v`.
fn filter_pair(seed: u64, steps: usize, particles: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (a, q, r_var, m0, p0): (f64, f64, f64, f64, f64) = (0.95, 1.0, 1.0, 0.0, 4.0);
    let mut r = rng::stream(seed, Domain::Test, 3, 0);
    let mut x: f64 = m0 + p0.sqrt() * r.sample::<f64, _>(StandardNormal);
    let mut truth = Vec::with_capacity(steps);
    let mut ys = Vec::with_capacity(steps);
    for _ in 0..steps {
        truth.push(x);
        ys.push(x + r_var.sqrt() * r.sample::<f64, _>(StandardNormal));
        x = a * x + q.sqrt() * r.sample::<f64, _>(StandardNormal);
    }

    let (mut m, mut p) = (m0, p0);
    let mut kf = Vec::with_capacity(steps);
    for &y in &ys {
        let k = p / (p + r_var);
        m += k * (y - m);
        p *= 1.0 - k;
        kf.push(m);
        m *= a;
        p = a * a * p + q;
    }

    let walk = RandomWalk::<1>::new(&Matrix1::new(q));
    let mut filter = GaussianFilter::<1>::from_gaussian(&Vector1::new(m0), &Matrix1::new(p0), particles, seed);
    let mut gpf = Vec::with_capacity(steps);
    for &y in &ys {
        let xs: Vec<SVector<f64, 1>> = filter.particles().to_vec();
        let lik: Vec<f64> = xs.iter().map(|x| (-(y - x[0]).powi(2) / (2.0 * r_var)).exp()).collect();
        let total: f64 = lik.iter().sum();
        let w: Vec<f64> = lik.iter().map(|l| l / total).collect();
        let (mean, cov) = weighted_moments(&xs, &w).unwrap();
        gpf.push(mean[0]);
        filter.resample_and_propagate(&(mean * a), &(cov * (a * a)), &walk);
    }
    (truth, kf, gpf)
}

#[test]
fn criterion_03_filter_sanity() {
    let start = Instant::now();
    let (mut se_kf, mut se_gpf, mut n) = (0.0, 0.0, 0.0);
    for seed in 0..20 {
        let (truth, kf, gpf) = filter_pair(seed, 100, 1000);
        for ((t, k), g) in truth.iter().zip(&kf).zip(&gpf) {
            se_kf += (k - t).powi(2);
            se_gpf += (g - t).powi(2);
            n += 1.0;
        }
    }
    let (rmse_kf, rmse_gpf) = ((se_kf / n).sqrt(), (se_gpf / n).sqrt());
    let rel = (rmse_gpf - rmse_kf).abs() / rmse_kf;
    let elapsed = start.elapsed();
    let pass = rel < KALMAN_RMSE_REL && elapsed < Duration::from_secs(30);
    verdict(3, pass, &format!("RMSE Kalman {rmse_kf:.4} GPF {rmse_gpf:.4} relative gap {rel:.4} time {elapsed:?}"));
    assert!(pass);
}

/// Mean `D_t` and AUC for every method on one desk-scale phantom.
struct DeskRun {
    seed: u64,
    distance: [f64; 4],
    auc: [f64; 4],
    auc_truth: f64,
    elapsed: Duration,
}

fn desk_run(seed: u64) -> DeskRun {
    let start = Instant::now();
    let cfg = PhantomConfig { seed, ..PhantomConfig::default() };
    let ds = generate(&cfg).unwrap();
    let track = TrackConfig { particles: DESK_PARTICLES, seed, ..TrackConfig::default() };

    // static offset and center from the phantom, random-walk covariance from
    // the tracker's own first 70 estimates
    let mut cal = Calibration { sigma_d: initial_motion_covariance(), ..ds.calibration.clone() };
    let first = hmt_track(&ds.slices[..70], &ds.v_anat, &cal, &track).unwrap();
    cal.sigma_d = calibrate_motion_covariance(&first.params()).unwrap();

    let grid = cfg.epi_volume_grid().unwrap();
    let mask = resample_mask(&ds.activation_mask, &grid).unwrap();
    let perm = PermutationOptions { seed, ..PermutationOptions::default() };
    let auc_for = |params: &[RigidParams], c: &Calibration| {
        let recons = reconstruct_volumes(&ds.slices, params, c, &grid).unwrap();
        let map = permutation_test(&recons, &ds.design, &perm).unwrap();
        roc_auc(&map.p_values, &mask).unwrap().auc
    };
    let geoms: Vec<&SliceGeometry> = ds.slices.iter().map(|s| &s.geometry).collect();

    let mut distance = [0.0; 4];
    let mut auc = [0.0; 4];
    for (k, method) in Method::ALL.into_iter().enumerate() {
        let rows = estimate_trajectory(method, &ds.slices, &ds.v_anat, &cal, &track).unwrap();
        let params: Vec<RigidParams> = rows.iter().map(|r| r.params()).collect();
        distance[k] = mean(&trajectory_distances(&params, &cal, &ds.true_traj, &ds.calibration, &geoms));
        auc[k] = auc_for(&params, &cal);
    }
    let auc_truth = auc_for(&ds.true_traj, &ds.calibration);
    DeskRun { seed, distance, auc, auc_truth, elapsed: start.elapsed() }
}

fn desk_runs() -> &'static [DeskRun] {
    static RUNS: OnceLock<Vec<DeskRun>> = OnceLock::new();
    RUNS.get_or_init(|| DESK_SEEDS.iter().map(|&s| desk_run(s)).collect())
}

#[test]
fn criterion_04_distance_ordering() {
    let mut pass = true;
    let mut detail = String::new();
    for r in desk_runs() {
        let [hmt, s2v, v2v, none] = r.distance;
        let ok = hmt < s2v && s2v < v2v && v2v < none && hmt < HMT_TO_S2V_MAX * s2v && r.elapsed < DESK_BUDGET;
        pass &= ok;
        detail += &format!(
            "[seed {} HMT {hmt:.3} S2V {s2v:.3} V2V {v2v:.3} none {none:.3} HMT/S2V {:.3} {:.0?}] ",
            r.seed,
            hmt / s2v,
            r.elapsed
        );
    }
    verdict(4, pass, detail.trim_end());
    assert!(pass);
}

#[test]
fn criterion_05_auc_ordering() {
    let mut pass = true;
    let mut detail = String::new();
    for r in desk_runs() {
        let [hmt, s2v, _, none] = r.auc;
        let ok = r.auc_truth >= AUC_TRUTH_MIN && hmt > s2v && s2v > none;
        pass &= ok;
        detail += &format!(
            "[seed {} truth {:.3} HMT {hmt:.3} S2V {s2v:.3} V2V {:.3} none {none:.3}] ",
            r.seed, r.auc_truth, r.auc[2]
        );
    }
    verdict(5, pass, detail.trim_end());
    assert!(pass);
}

#[test]
fn criterion_06_permutation_calibration() {
    let permutations = 2000;
    let stim: Vec<bool> = (0..20).map(|m| m < 10).collect();
    let p: Vec<f64> = (0..NULL_VOXELS)
        .map(|i| {
            let mut data = rng::stream(11, Domain::Test, 6, i as u64);
            let values: Vec<f64> = (0..20).map(|_| data.sample(StandardNormal)).collect();
            let mut perm = rng::stream(11, Domain::Permutation, i as u64, 0);
            permutation_p_value(&values, &stim, permutations, &mut perm).unwrap()
        })
        .collect();
    let rate = p.iter().filter(|&&v| v < 0.005).count() as f64 / NULL_VOXELS as f64;
    let separated: Vec<f64> = (0..20).map(|m| if m < 10 { 1.0 } else { 0.0 }).collect();
    let min_p = permutation_p_value(&separated, &stim, permutations, &mut rng::stream(1, Domain::Permutation, 0, 0)).unwrap();
    let floor = p.iter().all(|&v| v >= 1.0 / 2001.0);
    let pass = (NULL_RATE.0..=NULL_RATE.1).contains(&rate) && min_p == 1.0 / 2001.0 && floor;
    verdict(6, pass, &format!("null rate {rate:.4} minimum p {min_p:.6} (1/2001 = {:.6})", 1.0 / 2001.0));
    assert!(pass);
}

#[test]
fn criterion_07_atr_recovery() {
    let (lambda, p_a, p_i, l) = (0.3, 0.9, 0.05, 4usize);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut r = rng::stream(seed, Domain::Test, 7, 0);
        let active = Binomial::new(l as u64, p_a).unwrap();
        let inactive = Binomial::new(l as u64, p_i).unwrap();
        let counts: Vec<usize> = (0..10_000)
            .map(|_| if r.random::<f64>() < lambda { active.sample(&mut r) } else { inactive.sample(&mut r) } as usize)
            .collect();
        let fit = atr_fit(&counts, l).unwrap();
        worst = worst.max((fit.lambda - lambda).abs()).max((fit.p_a - p_a).abs()).max((fit.p_i - p_i).abs());
    }
    let all = atr_fit(&[l; 100], l).unwrap();
    let none = atr_fit(&[0; 100], l).unwrap();
    let boundaries = (all.lambda, all.p_a) == (1.0, 1.0) && (none.lambda, none.p_i) == (0.0, 0.0);
    let pass = worst <= ATR_TOL && boundaries;
    verdict(7, pass, &format!("worst parameter error {worst:.4} over 10 seeds, boundary fits exact {boundaries}"));
    assert!(pass);
}

fn rotation_angle_deg(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let rel = a.matrix().transpose() * b.matrix();
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn criterion_08_calibration() {
    // center: rotation-only motion about a known pivot, no blur or noise
    let cfg = PhantomConfig { max_rotation_deg: 3.0, ..PhantomConfig::clean() };
    let ds = generate(&cfg).unwrap();
    let partial = Calibration { sigma_d: initial_motion_covariance(), ..ds.calibration.clone() };
    let track = TrackConfig { particles: DESK_PARTICLES, seed: 1, ..TrackConfig::default() };
    let center = calibrate_center(&ds.slices, &ds.v_anat, &partial, 70, &track).unwrap();
    let center_err = (center.center - ds.calibration.c).norm();

    // covariance against a direct double loop
    let mut r = rng::stream(8, Domain::Test, 8, 0);
    let traj: Vec<RigidParams> =
        (0..70).map(|_| RigidParams::from_array(std::array::from_fn(|_| r.random::<f64>() - 0.5))).collect();
    let sigma = calibrate_motion_covariance(&traj).unwrap();
    let mut sigma_err: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let mut s = 0.0;
            for t in 1..traj.len() {
                let (a, b) = (traj[t].to_array(), traj[t - 1].to_array());
                s += (a[i] - b[i]) * (a[j] - b[j]);
            }
            sigma_err = sigma_err.max((sigma[(i, j)] - s / (traj.len() - 1) as f64).abs());
        }
    }

    // static offset on a motionless phantom
    let defaults = PhantomConfig::default();
    let still = PhantomConfig {
        static_rotation_deg: defaults.static_rotation_deg,
        static_translation_mm: defaults.static_translation_mm,
        ..PhantomConfig::clean()
    };
    let ds0 = generate(&still).unwrap();
    let vols = stack_all_volumes(&ds0.slices).unwrap();
    let est = calibrate_static(&vols, &ds0.v_anat, &track.registration()).unwrap();
    let rot_err = rotation_angle_deg(&est.r_s, &ds0.calibration.r_s);
    let trans_err = (est.q_s - ds0.calibration.q_s).norm();

    let pass = center_err < CENTER_TOL_MM
        && sigma_err < SIGMA_D_TOL
        && rot_err < STATIC_ROT_TOL_DEG
        && trans_err < STATIC_TRANS_TOL_MM;
    verdict(
        8,
        pass,
        &format!(
            "center error {center_err:.3} mm (estimate {:.2?}), sigma_d max deviation {sigma_err:e}, static rotation {rot_err:.4} deg translation {trans_err:.4} mm",
            center.center.as_slice()
        ),
    );
    assert!(pass);
}

/// `R = R_z(alpha) R_y(beta) R_x(gamma)` built by nalgebra.
fn oracle_rotation(p: &RigidParams) -> nalgebra::Matrix3<f64> {
    *Rotation3::from_euler_angles(p.gamma, p.beta, p.alpha).matrix()
}

fn oracle_chain(x: &Vector3<f64>, p: &RigidParams, cal: &Calibration) -> Vector3<f64> {
    oracle_rotation(p) * ((cal.r_s.matrix() * x + cal.q_s) - cal.c) + Vector3::new(p.dx, p.dy, p.dz) + cal.c
}

#[test]
fn criterion_09_geometry_exactness() {
    let mut r = rng::stream(9, Domain::Test, 9, 0);
    let (a, b, c, d) = (0.7, -1.3, 2.1, 5.0);
    let v = {
        let (dims, vox, org) = ([9, 8, 7], [1.5, 2.0, 3.0], [-4.0, 2.0, 1.0]);
        let mut data = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = [org[0] + i as f64 * vox[0], org[1] + j as f64 * vox[1], org[2] + k as f64 * vox[2]];
                    data.push(a * x[0] + b * x[1] + c * x[2] + d);
                }
            }
        }
        Volume::new(dims, vox, org, data).unwrap()
    };
    let mut affine_err: f64 = 0.0;
    for _ in 0..1000 {
        let x = Vector3::new(r.random_range(-4.0..8.0), r.random_range(2.0..16.0), r.random_range(1.0..19.0));
        let got = trilinear_sample(&v, &x).unwrap();
        affine_err = affine_err.max((got - (a * x.x + b * x.y + c * x.z + d)).abs());
    }

    let rnd_params = |r: &mut rand_chacha::ChaCha8Rng| {
        RigidParams::new(
            r.random_range(-0.5..0.5),
            r.random_range(-0.5..0.5),
            r.random_range(-0.5..0.5),
            r.random_range(-10.0..10.0),
            r.random_range(-10.0..10.0),
            r.random_range(-10.0..10.0),
        )
    };
    let mut chain_err: f64 = 0.0;
    let mut iso_err: f64 = 0.0;
    for _ in 0..200 {
        let p = rnd_params(&mut r);
        let s = rnd_params(&mut r);
        let cal = Calibration {
            r_s: euler_to_matrix(&s),
            q_s: s.translation(),
            c: Vector3::new(r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), r.random_range(-80.0..0.0)),
            ..Calibration::identity()
        };
        let x = Vector3::new(r.random_range(-60.0..60.0), r.random_range(-60.0..60.0), r.random_range(-60.0..60.0));
        let y = Vector3::new(r.random_range(-60.0..60.0), r.random_range(-60.0..60.0), r.random_range(-60.0..60.0));
        let fx = scanner_to_reference(&x, &p, &cal);
        let fy = scanner_to_reference(&y, &p, &cal);
        chain_err = chain_err.max((fx - oracle_chain(&x, &p, &cal)).norm()).max((cal.chain(&p).apply(&x) - fx).norm());
        iso_err = iso_err.max(((fx - fy).norm() - (x - y).norm()).abs());
        let back = matrix_to_euler(&euler_to_matrix(&p));
        chain_err = chain_err.max((back.alpha - p.alpha).abs().max((back.beta - p.beta).abs()).max((back.gamma - p.gamma).abs()));
    }

    let g = SliceGeometry::axial(0, [-63.0, -63.0, 0.0], [2.0, 2.0], [64, 64]);
    let mut dist_err: f64 = 0.0;
    for _ in 0..20 {
        let (est, truth) = (rnd_params(&mut r), rnd_params(&mut r));
        let (ce, ct) = (Calibration { c: Vector3::new(0.0, -30.0, -70.0), ..Calibration::identity() }, Calibration::identity());
        let mut brute = 0.0;
        for v in 0..64 {
            for u in 0..64 {
                let x = Vector3::new(-63.0 + 2.0 * u as f64, -63.0 + 2.0 * v as f64, 0.0);
                brute += (oracle_chain(&x, &est, &ce) - oracle_chain(&x, &truth, &ct)).norm();
            }
        }
        brute /= 4096.0;
        dist_err = dist_err.max((average_voxel_distance_with(&est, &ce, &truth, &ct, &g) - brute).abs());
    }

    let pass = affine_err < AFFINE_TOL && chain_err < CHAIN_TOL && iso_err < CHAIN_TOL && dist_err < DISTANCE_TOL;
    verdict(
        9,
        pass,
        &format!("trilinear {affine_err:e}, chain {chain_err:e}, isometry {iso_err:e}, voxel distance {dist_err:e}"),
    );
    assert!(pass);
}

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.phantom = PhantomConfig {
        anat_dims: [24, 24, 12],
        anat_voxel_mm: [5.0, 5.0, 7.0],
        anat_origin_mm: [-57.5, -57.5, -38.5],
        epi_grid: [16, 16],
        epi_pixel_mm: [7.0, 7.0],
        epi_origin_mm: [-52.5, -52.5, -30.0],
        slices_per_volume: 4,
        slice_spacing_mm: 12.0,
        volumes: 16,
        volumes_per_cycle: 16,
        blur_sigma_px: 0.5,
        ..PhantomConfig::default()
    };
    cfg.calibration.center_slices = 20;
    cfg.calibration.track.particles = 100;
    cfg.track.particles = 100;
    cfg.analysis.permutations = 200;
    cfg
}

/// Runs every command into `root` and returns all output files with their bytes.
fn run_pipeline(root: &std::path::Path, seed: u64) -> Vec<(String, Vec<u8>)> {
    let cfg = tiny_config();
    let p = |name: &str| root.join(name);
    pipeline::simulate(&cfg, &p("ds"), seed).unwrap();
    pipeline::calibrate(&cfg, &p("ds"), &p("cal.json"), seed).unwrap();
    let mut runs = Vec::new();
    for method in Method::ALL {
        let m = method.as_str();
        let traj = p(&format!("{m}.csv"));
        pipeline::track(&cfg, &p("ds"), &p("cal.json"), method, &traj, seed).unwrap();
        pipeline::reconstruct(&p("ds"), &p("cal.json"), &traj, &p(&format!("{m}_recon"))).unwrap();
        pipeline::activate(&cfg, &p("ds"), &p(&format!("{m}_recon")), &p(&format!("{m}_act")), seed).unwrap();
        let inputs = EvaluateInputs {
            dataset: p("ds"),
            calibration: p("cal.json"),
            trajectory: traj,
            activation: Some(p(&format!("{m}_act"))),
            recon: Some(p(&format!("{m}_recon"))),
        };
        pipeline::evaluate(&cfg, &inputs, &p(&format!("{m}_eval")), seed).unwrap();
        runs.push((m.to_string(), p(&format!("{m}_eval"))));
    }
    pipeline::report(&runs, &p("report")).unwrap();

    let mut files: Vec<(String, Vec<u8>)> = walk(root)
        .into_iter()
        .map(|f| (f.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&f).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let in_pool = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let files = pool.install(|| run_pipeline(dir.path(), 5));
        (dir, files)
    };
    let (_d1, one) = in_pool(1);
    let (_d4, four) = in_pool(4);
    let (_d4b, again) = in_pool(4);
    let identical = one == four && four == again;
    let mismatched: Vec<&str> =
        one.iter().zip(&four).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).take(5).collect();
    verdict(
        10,
        identical,
        &format!("{} output files byte-identical across 1 and 4 threads and reruns; differing: {mismatched:?}", one.len()),
    );
    assert!(identical);
}

fn nifti_header(dims: [i16; 3], datatype: i16, bitpix: i16, pixdim: [f32; 3], magic: &[u8; 4]) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (k, d) in [3, dims[0], dims[1], dims[2], 1, 1, 1, 1].iter().enumerate() {
        h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    for (k, p) in [1.0f32, pixdim[0], pixdim[1], pixdim[2]].iter().enumerate() {
        h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352f32.to_le_bytes());
    h[344..348].copy_from_slice(magic);
    h
}

#[test]
fn criterion_11_io() {
    let dir = tempfile::tempdir().unwrap();

    let mut r = rng::stream(11, Domain::Test, 11, 0);
    let data: Vec<f64> = (0..16 * 16 * 16).map(|_| (r.random::<f32>() * 10.0 - 5.0) as f64).collect();
    let v = Volume::new([16, 16, 16], [1.0, 2.0, 3.0], [0.5, -1.0, 2.0], data).unwrap();
    let vp = dir.path().join("v.json");
    write_volume(&vp, &v, "a.u.").unwrap();
    let back = read_volume(&vp).unwrap();
    let bit_exact = back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        && back.dims() == v.dims()
        && back.voxel_size() == v.voxel_size()
        && back.origin() == v.origin();
    let bytes = std::fs::read(raw_path(&vp)).unwrap();
    std::fs::write(raw_path(&vp), &bytes[..bytes.len() - 4]).unwrap();
    let truncated = read_volume(&vp).unwrap_err().kind();

    let write_nii = |name: &str, b: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, b).unwrap();
        p
    };
    let mut ones = nifti_header([4, 4, 4], 16, 32, [1.5, 2.0, 2.5], b"n+1\0");
    (0..64).for_each(|_| ones.extend_from_slice(&1f32.to_le_bytes()));
    let nv = read_nifti_subset(&write_nii("ones.nii", &ones)).unwrap();
    let nifti_ok = nv.dims() == [4, 4, 4] && nv.voxel_size() == [1.5, 2.0, 2.5] && nv.data().iter().all(|&x| x == 1.0);

    let mut two_file = ones.clone();
    two_file[344..348].copy_from_slice(b"ni1\0");
    let mut complex = ones.clone();
    complex[70..72].copy_from_slice(&32i16.to_le_bytes());
    let mut junk = ones.clone();
    junk[344..348].copy_from_slice(b"xyz\0");
    let kinds = [
        read_nifti_subset(&write_nii("a.nii", &two_file)).unwrap_err().kind(),
        read_nifti_subset(&write_nii("b.nii", &complex)).unwrap_err().kind(),
        read_nifti_subset(&write_nii("c.nii", &junk)).unwrap_err().kind(),
        read_nifti_subset(&write_nii("d.nii", &ones[..400])).unwrap_err().kind(),
    ];
    let errors_ok = truncated == "SizeMismatch" && kinds == ["UnsupportedFeature", "UnsupportedFeature", "BadMagic", "SizeMismatch"];

    let pass = bit_exact && nifti_ok && errors_ok;
    verdict(11, pass, &format!("round trip bit-exact {bit_exact}, NIfTI parsed {nifti_ok}, error classes {truncated} {kinds:?}"));
    assert!(pass);
}
