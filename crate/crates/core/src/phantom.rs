//! Synthetic EPI series with known motion, calibration and activation.
//!
//! The head is a set of nested soft-edged ellipsoids (scalp, skull, CSF,
//! cortex, white matter) with a folded cortical boundary, ventricles and
//! deep grey nuclei. The same tissue model is rendered with T1-like levels
//! for the anatomical reference and with T2-like levels for the functional
//! source, so the two modalities share geometry but not intensities.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{euler_to_matrix, Calibration, RigidParams};
use crate::imaging::{sample_section, AcquisitionOrder, Slice, SliceGeometry, Volume};
use crate::rng::{self, Domain};
use crate::tracking::calibrate_motion_covariance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    /// Normalized radius: 1 on the surface.
    fn rho(&self, x: &Vector3<f64>) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (x[a] - self.center[a]) / self.semi_axes[a];
            s += d * d;
        }
        s.sqrt()
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.rho(x) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignLabel {
    Stim,
    Control,
}

impl DesignLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignLabel::Stim => "stim",
            DesignLabel::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub anat_dims: [usize; 3],
    pub anat_voxel_mm: [f64; 3],
    pub anat_origin_mm: [f64; 3],
    pub epi_grid: [usize; 2],
    pub epi_pixel_mm: [f64; 2],
    /// Scanner-frame center of pixel (0, 0) of spatial slice 0.
    pub epi_origin_mm: [f64; 3],
    pub slices_per_volume: usize,
    pub slice_spacing_mm: f64,
    pub volumes: usize,
    pub cycles: usize,
    /// Half stimulation then half control.
    pub volumes_per_cycle: usize,
    pub blur_sigma_px: f64,
    pub noise_fraction: f64,
    pub activation_fraction: f64,
    pub max_rotation_deg: f64,
    pub max_translation_mm: f64,
    pub acquisition: AcquisitionOrder,
    /// Static scanner offset: Euler angles in degrees.
    pub static_rotation_deg: [f64; 3],
    pub static_translation_mm: [f64; 3],
    pub rotation_center_mm: [f64; 3],
    pub activation_blobs: Vec<Ellipsoid>,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            anat_dims: [64, 64, 28],
            anat_voxel_mm: [2.0, 2.0, 3.0],
            anat_origin_mm: [-63.0, -63.0, -40.5],
            epi_grid: [64, 64],
            epi_pixel_mm: [2.0, 2.0],
            epi_origin_mm: [-63.0, -63.0, -39.0],
            slices_per_volume: 14,
            slice_spacing_mm: 6.0,
            volumes: 20,
            cycles: 1,
            volumes_per_cycle: 20,
            blur_sigma_px: 2.0,
            noise_fraction: 0.03,
            activation_fraction: 0.05,
            max_rotation_deg: 3.0,
            max_translation_mm: 3.0,
            acquisition: AcquisitionOrder::Interleaved,
            static_rotation_deg: [1.0, -0.6, 0.8],
            static_translation_mm: [1.0, -1.5, 0.8],
            rotation_center_mm: [0.0, -30.0, -70.0],
            activation_blobs: default_blobs(),
            seed: 1,
        }
    }
}

fn default_blobs() -> Vec<Ellipsoid> {
    NUCLEI[..3].iter().map(|n| Ellipsoid { center: n.center, semi_axes: n.semi_axes.map(|a| a - 2.0) }).collect()
}

impl PhantomConfig {
    /// 120 volumes in 6 stimulation/control cycles.
    pub fn paper_scale() -> Self {
        PhantomConfig { volumes: 120, cycles: 6, ..Self::default() }
    }

    /// No motion, blur, noise or static offset.
    pub fn clean() -> Self {
        PhantomConfig {
            blur_sigma_px: 0.0,
            noise_fraction: 0.0,
            max_rotation_deg: 0.0,
            max_translation_mm: 0.0,
            static_rotation_deg: [0.0; 3],
            static_translation_mm: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.volumes == 0 || self.slices_per_volume == 0 {
            return bad("volumes and slices_per_volume must be positive");
        }
        if self.cycles * self.volumes_per_cycle != self.volumes {
            return bad("volumes must equal cycles * volumes_per_cycle");
        }
        if self.volumes_per_cycle % 2 != 0 {
            return bad("volumes_per_cycle must be even");
        }
        if self.anat_dims.contains(&0) || self.epi_grid.contains(&0) {
            return bad("grid dimensions must be positive");
        }
        if self.blur_sigma_px < 0.0 || self.noise_fraction < 0.0 || self.activation_fraction < 0.0 {
            return bad("blur, noise and activation must be non-negative");
        }
        if self.max_rotation_deg < 0.0 || self.max_translation_mm < 0.0 {
            return bad("motion caps must be non-negative");
        }
        Ok(())
    }

    pub fn slice_count(&self) -> usize {
        self.volumes * self.slices_per_volume
    }

    pub fn calibration(&self) -> Calibration {
        let r = RigidParams::from_degrees_mm([
            self.static_rotation_deg[0],
            self.static_rotation_deg[1],
            self.static_rotation_deg[2],
            0.0,
            0.0,
            0.0,
        ]);
        Calibration {
            r_s: euler_to_matrix(&r),
            q_s: Vector3::from(self.static_translation_mm),
            c: Vector3::from(self.rotation_center_mm),
            ..Calibration::identity()
        }
    }

    /// Geometry of spatial slice `n` in scanner coordinates.
    pub fn slice_geometry(&self, n: usize) -> SliceGeometry {
        let o = self.epi_origin_mm;
        SliceGeometry::axial(n, [o[0], o[1], o[2] + n as f64 * self.slice_spacing_mm], self.epi_pixel_mm, self.epi_grid)
    }

    /// EPI grid as a volume geometry.
    pub fn epi_volume_grid(&self) -> Result<Volume> {
        Volume::zeros(
            [self.epi_grid[0], self.epi_grid[1], self.slices_per_volume],
            [self.epi_pixel_mm[0], self.epi_pixel_mm[1], self.slice_spacing_mm],
            self.epi_origin_mm,
        )
    }

    pub fn design(&self) -> Vec<DesignLabel> {
        let half = self.volumes_per_cycle / 2;
        (0..self.volumes)
            .map(|m| if m % self.volumes_per_cycle < half { DesignLabel::Stim } else { DesignLabel::Control })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Tissue {
    background: f64,
    scalp: f64,
    skull: f64,
    csf: f64,
    grey: f64,
    white: f64,
}

const T1: Tissue = Tissue { background: 0.0, scalp: 0.7, skull: 0.1, csf: 0.2, grey: 0.55, white: 0.85 };
const T2: Tissue = Tissue { background: 0.0, scalp: 0.5, skull: 0.08, csf: 1.0, grey: 0.9, white: 0.55 };

const HEAD: Ellipsoid = Ellipsoid { center: [0.0, -2.0, -6.0], semi_axes: [50.0, 62.0, 44.0] };

const VENTRICLES: [Ellipsoid; 2] = [
    Ellipsoid { center: [-7.0, 4.0, 4.0], semi_axes: [4.5, 18.0, 7.0] },
    Ellipsoid { center: [8.0, 0.0, 6.0], semi_axes: [4.0, 14.0, 6.0] },
];

const NUCLEI: [Ellipsoid; 4] = [
    Ellipsoid { center: [-20.0, -12.0, -3.0], semi_axes: [10.0, 12.0, 11.0] },
    Ellipsoid { center: [22.0, 14.0, 10.0], semi_axes: [10.0, 11.0, 12.0] },
    Ellipsoid { center: [-4.0, 30.0, 14.0], semi_axes: [11.0, 9.0, 11.0] },
    Ellipsoid { center: [14.0, -30.0, -14.0], semi_axes: [8.0, 8.0, 9.0] },
];

const BLOB_COUNT: usize = 80;
const TEXTURE: f64 = 0.10;

/// Shell boundaries in normalized head radius.
const R_SKULL: f64 = 0.93;
const R_CSF: f64 = 0.87;
const R_BRAIN: f64 = 0.84;
const R_WHITE: f64 = 0.70;
/// Boundary softness in normalized radius (about 1 mm).
const EDGE: f64 = 0.02;

fn inside(rho: f64, r: f64, w: f64) -> f64 {
    0.5 * (1.0 - ((rho - r) / w).tanh())
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + s * (b - a)
}

/// Seed-dependent shape details shared by both modalities.
#[derive(Debug, Clone)]
struct HeadModel {
    folds: Vec<(f64, f64, f64, f64)>,
    texture: Vec<(Vector3<f64>, f64)>,
    /// Small structures scattered through the brain, with a tissue class
    /// (0 CSF, 1 grey, 2 white).
    blobs: Vec<(Ellipsoid, u8)>,
}

impl HeadModel {
    fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, Domain::PhantomShape, 0, 0);
        let folds = (0..6)
            .map(|k| {
                let az = (3 + 2 * k) as f64;
                let el = (3 + 2 * k) as f64;
                (az, el, r.random_range(0.0..2.0 * PI), r.random_range(0.0..2.0 * PI))
            })
            .collect();
        let texture = (0..4)
            .map(|_| {
                // oblique waves make in-plane structure drift with z
                let az: f64 = r.random_range(0.0..2.0 * PI);
                let tilt: f64 = r.random_range(0.3..0.7);
                let dir = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
                let wavelength: f64 = r.random_range(15.0..25.0);
                (dir * (2.0 * PI / wavelength), r.random_range(0.0..2.0 * PI))
            })
            .collect();
        let mut blobs = Vec::with_capacity(BLOB_COUNT);
        while blobs.len() < BLOB_COUNT {
            let u = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            if u.norm() > 0.8 {
                continue;
            }
            let center = [0, 1, 2].map(|a| HEAD.center[a] + u[a] * HEAD.semi_axes[a]);
            let semi_axes = [0, 1, 2].map(|_| r.random_range(3.5..8.0));
            blobs.push((Ellipsoid { center, semi_axes }, r.random_range(0..3u8)));
        }
        HeadModel { folds, texture, blobs }
    }

    fn intensity(&self, x: &Vector3<f64>, t: &Tissue) -> f64 {
        let rho = HEAD.rho(x);
        if rho > 1.2 {
            return t.background;
        }
        let p = Vector3::new(x[0] - HEAD.center[0], x[1] - HEAD.center[1], x[2] - HEAD.center[2]);
        let az = p[1].atan2(p[0]);
        let el = (p[2] / p.norm().max(1e-9)).asin();
        let fold: f64 = self.folds.iter().map(|&(a, e, pa, pe)| (a * az + pa).sin() * (e * el + pe).cos()).sum();
        let r_white = R_WHITE + 0.025 * fold;

        let mut v = lerp(t.grey, t.white, inside(rho, r_white, EDGE));
        for (b, class) in &self.blobs {
            let level = [t.csf, t.grey, t.white][*class as usize];
            v = lerp(v, level, inside(b.rho(x), 1.0, 0.15));
        }
        for n in &NUCLEI {
            v = lerp(v, t.grey, inside(n.rho(x), 1.0, 0.1));
        }
        for c in &VENTRICLES {
            v = lerp(v, t.csf, inside(c.rho(x), 1.0, 0.1));
        }
        v = lerp(t.csf, v, inside(rho, R_BRAIN, EDGE));
        v = lerp(t.skull, v, inside(rho, R_CSF, EDGE));
        v = lerp(t.scalp, v, inside(rho, R_SKULL, EDGE));
        v = lerp(t.background, v, inside(rho, 1.0, EDGE));
        let tex: f64 = self.texture.iter().map(|(k, ph)| (k.dot(x) + ph).sin()).sum();
        v * (1.0 + TEXTURE * tex)
    }

    fn render(&self, grid: &Volume, t: &Tissue) -> Volume {
        let [nx, ny, nz] = grid.dims();
        let data = (0..nx * ny * nz)
            .into_par_iter()
            .map(|i| {
                let (x, rest) = (i % nx, i / nx);
                let (y, z) = (rest % ny, rest / ny);
                self.intensity(&grid.voxel_center(x, y, z), t)
            })
            .collect();
        grid.with_data(data).expect("grid-sized data")
    }
}

fn anat_grid(cfg: &PhantomConfig) -> Result<Volume> {
    Volume::zeros(cfg.anat_dims, cfg.anat_voxel_mm, cfg.anat_origin_mm)
}

/// T1-like anatomical reference volume.
pub fn make_anatomy(cfg: &PhantomConfig) -> Result<Volume> {
    Ok(HeadModel::new(cfg.seed).render(&anat_grid(cfg)?, &T1))
}

/// T2-like functional source on the anatomical grid.
pub fn make_functional_source(cfg: &PhantomConfig) -> Result<Volume> {
    Ok(HeadModel::new(cfg.seed).render(&anat_grid(cfg)?, &T2))
}

/// Activation mask on the anatomical grid as 0/1 values.
pub fn make_activation_mask(cfg: &PhantomConfig) -> Result<Volume> {
    let grid = anat_grid(cfg)?;
    let [nx, ny, nz] = grid.dims();
    let mut data = vec![0.0; grid.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = grid.voxel_center(x, y, z);
                if cfg.activation_blobs.iter().any(|b| b.contains(&c)) {
                    data[grid.index(x, y, z)] = 1.0;
                }
            }
        }
    }
    grid.with_data(data)
}

/// Scales masked voxels by `1 + fraction` for stimulation volumes.
pub fn inject_activation(volume: &Volume, mask: &Volume, label: DesignLabel, fraction: f64) -> Result<Volume> {
    if !volume.same_grid(mask) {
        return Err(Error::ShapeMismatch("activation mask and volume grids differ".into()));
    }
    if label == DesignLabel::Control {
        return Ok(volume.clone());
    }
    let data = volume.data().iter().zip(mask.data()).map(|(&v, &m)| if m > 0.5 { v * (1.0 + fraction) } else { v }).collect();
    volume.with_data(data)
}

/// Two sinusoids per coordinate with seed-drawn periods and phases.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    terms: [[(f64, f64, f64); 2]; 6],
}

impl MotionModel {
    pub fn new(cfg: &PhantomConfig) -> Self {
        let mut r = rng::stream(cfg.seed, Domain::Motion, 0, 0);
        let mut terms = [[(0.0, 0.0, 0.0); 2]; 6];
        for (c, term) in terms.iter_mut().enumerate() {
            let cap = if c < 3 { cfg.max_rotation_deg.to_radians() } else { cfg.max_translation_mm };
            let slow: f64 = r.random_range(110.0..170.0);
            let fast: f64 = r.random_range(35.0..60.0);
            term[0] = (0.6 * cap, 2.0 * PI / slow, r.random_range(0.0..2.0 * PI));
            term[1] = (0.4 * cap, 2.0 * PI / fast, r.random_range(0.0..2.0 * PI));
        }
        MotionModel { terms }
    }

    pub fn at(&self, t: usize) -> RigidParams {
        let t = t as f64;
        let v = self.terms.map(|c| c.iter().map(|&(a, w, ph)| a * (w * t + ph).sin()).sum::<f64>());
        RigidParams::from_array(v)
    }
}

/// Ground-truth motion at slice time `t`.
pub fn motion_trajectory(t: usize, cfg: &PhantomConfig) -> RigidParams {
    MotionModel::new(cfg).at(t)
}

/// Separable Gaussian blur truncated at 4 sigma, edges clamped.
pub fn gaussian_blur_2d(data: &[f64], grid: [usize; 2], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let [nu, nv] = grid;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for v in 0..nv {
        for u in 0..nu {
            tmp[v * nu + u] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * data[v * nu + clamp(u as isize + k as isize - radius, nu)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for v in 0..nv {
        for u in 0..nu {
            out[v * nu + u] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(v as isize + k as isize - radius, nv) * nu + u])
                .sum();
        }
    }
    out
}

/// Samples `source` under `theta`, blurs, and adds noise of standard
/// deviation `noise_fraction * noise_reference`.
#[allow(clippy::too_many_arguments)]
pub fn render_slice(
    source: &Volume,
    geometry: &SliceGeometry,
    theta: &RigidParams,
    cal: &Calibration,
    blur_sigma_px: f64,
    noise_sd: f64,
    noise_stream: (u64, u64),
) -> Vec<f64> {
    let (data, _, _) = sample_section(source, geometry, theta, cal);
    let mut data = gaussian_blur_2d(&data, geometry.grid, blur_sigma_px);
    if noise_sd > 0.0 {
        let mut r = rng::stream(noise_stream.0, Domain::SliceNoise, noise_stream.1, 0);
        for d in data.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *d += noise_sd * z;
        }
    }
    data
}

#[derive(Debug, Clone)]
pub struct PhantomDataset {
    pub config: PhantomConfig,
    pub v_anat: Volume,
    pub source: Volume,
    /// Slices in acquisition (time) order.
    pub slices: Vec<Slice>,
    pub true_traj: Vec<RigidParams>,
    pub activation_mask: Volume,
    pub design: Vec<DesignLabel>,
    pub calibration: Calibration,
}

/// Renders the full series.
pub fn generate(cfg: &PhantomConfig) -> Result<PhantomDataset> {
    cfg.validate()?;
    let v_anat = make_anatomy(cfg)?;
    let source = make_functional_source(cfg)?;
    let mask = make_activation_mask(cfg)?;
    let stim = inject_activation(&source, &mask, DesignLabel::Stim, cfg.activation_fraction)?;
    let design = cfg.design();
    let motion = MotionModel::new(cfg);
    let n = cfg.slices_per_volume;
    let total = cfg.slice_count();
    let true_traj: Vec<RigidParams> = (0..total).map(|t| motion.at(t)).collect();
    let mut cal = cfg.calibration();
    cal.sigma_d = calibrate_motion_covariance(&true_traj).unwrap_or_default();
    let noise_sd = cfg.noise_fraction * source.max();
    let order = cfg.acquisition.order(n);

    let slices = (0..total)
        .into_par_iter()
        .map(|t| {
            let (m, rank) = (t / n, t % n);
            let spatial = order[rank];
            let g = cfg.slice_geometry(spatial);
            let src = if design[m] == DesignLabel::Stim { &stim } else { &source };
            let data = render_slice(src, &g, &true_traj[t], &cal, cfg.blur_sigma_px, noise_sd, (cfg.seed, t as u64));
            Slice::new(g, data, m, t)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PhantomDataset {
        config: cfg.clone(),
        v_anat,
        source,
        slices,
        true_traj,
        activation_mask: mask,
        design,
        calibration: cal,
    })
}
