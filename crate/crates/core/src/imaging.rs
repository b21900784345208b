//! Volume and slice containers, trilinear resampling and oblique section
//! extraction from the anatomical reference.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineMap, Calibration, RigidParams};

/// Fewest in-bounds pixels for which a section is usable.
pub const MIN_VALID_PIXELS: usize = 32;

const SNAP_TOL: f64 = 1e-12;

const EDGE_TOL: f64 = 1e-9;

/// Axis-aligned scalar volume, x-fastest storage.
///
/// Voxel `(i, j, k)` is centered at `origin + (i, j, k) * voxel_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    origin: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::ShapeMismatch(format!("dims must be positive, got {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match dims {dims:?} ({expected})",
                data.len()
            )));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::ShapeMismatch(format!("voxel size must be positive, got {voxel_size:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite origin {origin:?}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite intensity".into()));
        }
        Ok(Volume { dims, voxel_size, origin, data })
    }

    pub fn zeros(dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        Self::new(dims, voxel_size, origin, vec![0.0; dims[0] * dims[1] * dims[2]])
    }

    /// Volume with the same grid as `self` and new data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.dims, self.voxel_size, self.origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.voxel_size == other.voxel_size && self.origin == other.origin
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + i as f64 * self.voxel_size[0],
            self.origin[1] + j as f64 * self.voxel_size[1],
            self.origin[2] + k as f64 * self.voxel_size[2],
        )
    }

    /// Continuous voxel index of a world point.
    #[inline]
    pub fn continuous_index(&self, x: &Vector3<f64>) -> [f64; 3] {
        [
            (x[0] - self.origin[0]) / self.voxel_size[0],
            (x[1] - self.origin[1]) / self.voxel_size[1],
            (x[2] - self.origin[2]) / self.voxel_size[2],
        ]
    }

    /// Trilinear interpolation at a continuous index, `None` outside the
    /// voxel-center bounding box.
    #[inline]
    pub fn sample_index(&self, f: [f64; 3]) -> Option<f64> {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let hi = (n - 1) as f64;
            let v = f[a];
            if !(v >= -EDGE_TOL && v <= hi + EDGE_TOL) {
                return None;
            }
            let v = v.clamp(0.0, hi);
            // grid-aligned samples reproduce voxel values exactly
            let r = v.round();
            let v = if (v - r).abs() < SNAP_TOL { r } else { v };
            let i0 = if n >= 2 { (v.floor() as usize).min(n - 2) } else { 0 };
            base[a] = i0;
            frac[a] = v - i0 as f64;
        }
        let sx = usize::from(self.dims[0] > 1);
        let sy = if self.dims[1] > 1 { self.dims[0] } else { 0 };
        let sz = if self.dims[2] > 1 { self.dims[0] * self.dims[1] } else { 0 };
        let i = self.index(base[0], base[1], base[2]);
        let d = &self.data;
        let [fx, fy, fz] = frac;
        let c00 = lerp(d[i], d[i + sx], fx);
        let c10 = lerp(d[i + sy], d[i + sy + sx], fx);
        let c01 = lerp(d[i + sz], d[i + sz + sx], fx);
        let c11 = lerp(d[i + sz + sy], d[i + sz + sy + sx], fx);
        Some(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz))
    }
}

// exact at both endpoints
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

/// Trilinear interpolation at a world point; `None` means outside.
pub fn trilinear_sample(v: &Volume, x: &Vector3<f64>) -> Option<f64> {
    v.sample_index(v.continuous_index(x))
}

/// Scanner-frame placement of one acquired slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceGeometry {
    pub slice_index: usize,
    /// Center of pixel (0, 0), mm.
    pub plane_origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub pixel_spacing: [f64; 2],
    pub grid: [usize; 2],
}

impl SliceGeometry {
    /// Plane at height `z` with the in-plane axes along scanner x and y.
    pub fn axial(slice_index: usize, plane_origin: [f64; 3], pixel_spacing: [f64; 2], grid: [usize; 2]) -> Self {
        SliceGeometry {
            slice_index,
            plane_origin,
            axis_u: [1.0, 0.0, 0.0],
            axis_v: [0.0, 1.0, 0.0],
            pixel_spacing,
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let u = Vector3::from(self.axis_u);
        let v = Vector3::from(self.axis_v);
        let err = (u.norm() - 1.0).abs().max((v.norm() - 1.0).abs()).max(u.dot(&v).abs());
        if err > 1e-10 {
            return Err(Error::InconsistentGeometry(format!("in-plane axes not orthonormal ({err:e})")));
        }
        if self.pixel_spacing.iter().any(|&s| !(s > 0.0)) || self.grid.iter().any(|&n| n == 0) {
            return Err(Error::InconsistentGeometry("empty grid or non-positive spacing".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    pub fn pixel_center(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::from(self.plane_origin)
            + Vector3::from(self.axis_u) * (u as f64 * self.pixel_spacing[0])
            + Vector3::from(self.axis_v) * (v as f64 * self.pixel_spacing[1])
    }

    /// All pixel centers, u fastest.
    pub fn pixel_centers(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..self.grid[1]).flat_map(move |v| (0..self.grid[0]).map(move |u| self.pixel_center(u, v)))
    }
}

/// One acquired 2-D slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub geometry: SliceGeometry,
    pub data: Vec<f64>,
    pub volume_index: usize,
    pub time_index: usize,
}

impl Slice {
    pub fn new(geometry: SliceGeometry, data: Vec<f64>, volume_index: usize, time_index: usize) -> Result<Self> {
        if data.len() != geometry.pixel_count() {
            return Err(Error::ShapeMismatch(format!(
                "slice data length {} does not match grid {:?}",
                data.len(),
                geometry.grid
            )));
        }
        Ok(Slice { geometry, data, volume_index, time_index })
    }
}

/// Slices `t - h ..= t + h`, shrunk at the ends of the series.
#[derive(Debug, Clone)]
pub struct SliceStack<'a> {
    pub slices: Vec<&'a Slice>,
    /// Position of the center slice within `slices`.
    pub center: usize,
    pub half_width: usize,
}

impl<'a> SliceStack<'a> {
    /// `series` must be ordered by acquisition time.
    pub fn centered(series: &'a [Slice], t: usize, half_width: usize) -> Self {
        let lo = t.saturating_sub(half_width);
        let hi = (t + half_width).min(series.len() - 1);
        SliceStack { slices: series[lo..=hi].iter().collect(), center: t - lo, half_width }
    }

    pub fn single(slice: &'a Slice) -> Self {
        SliceStack { slices: vec![slice], center: 0, half_width: 0 }
    }

    pub fn center_slice(&self) -> &'a Slice {
        self.slices[self.center]
    }
}

/// Order in which the slices of one volume are acquired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionOrder {
    Sequential,
    /// Even slice indices first, then odd (1-based: odd then even).
    #[default]
    Interleaved,
}

impl AcquisitionOrder {
    /// Slice indices in acquisition order.
    pub fn order(self, n: usize) -> Vec<usize> {
        match self {
            AcquisitionOrder::Sequential => (0..n).collect(),
            AcquisitionOrder::Interleaved => (0..n).step_by(2).chain((1..n).step_by(2)).collect(),
        }
    }

    /// Time index of slice `n` of volume `m` (all zero-based).
    pub fn time_index(self, m: usize, n: usize, slices_per_volume: usize) -> usize {
        let rank = self.order(slices_per_volume).iter().position(|&k| k == n).expect("slice index in range");
        m * slices_per_volume + rank
    }
}

/// Maps pixel `(u, v)` of a slice to a continuous voxel index of a volume as
/// `base + u * du + v * dv`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SectionMap {
    base: [f64; 3],
    du: [f64; 3],
    dv: [f64; 3],
}

impl SectionMap {
    pub(crate) fn new(vol: &Volume, g: &SliceGeometry, map: &AffineMap) -> Self {
        let o = map.apply(&Vector3::from(g.plane_origin));
        let du = map.linear * Vector3::from(g.axis_u) * g.pixel_spacing[0];
        let dv = map.linear * Vector3::from(g.axis_v) * g.pixel_spacing[1];
        let vs = vol.voxel_size();
        let org = vol.origin();
        SectionMap {
            base: [(o[0] - org[0]) / vs[0], (o[1] - org[1]) / vs[1], (o[2] - org[2]) / vs[2]],
            du: [du[0] / vs[0], du[1] / vs[1], du[2] / vs[2]],
            dv: [dv[0] / vs[0], dv[1] / vs[1], dv[2] / vs[2]],
        }
    }

    /// Samples every pixel, appending values and validity; returns the
    /// number of valid pixels.
    pub(crate) fn sample_into(&self, vol: &Volume, grid: [usize; 2], values: &mut Vec<f64>, mask: &mut Vec<bool>) -> usize {
        let mut valid = 0;
        for v in 0..grid[1] {
            let vf = v as f64;
            let row = [
                self.base[0] + vf * self.dv[0],
                self.base[1] + vf * self.dv[1],
                self.base[2] + vf * self.dv[2],
            ];
            for u in 0..grid[0] {
                let uf = u as f64;
                let f = [row[0] + uf * self.du[0], row[1] + uf * self.du[1], row[2] + uf * self.du[2]];
                match vol.sample_index(f) {
                    Some(x) => {
                        values.push(x);
                        mask.push(true);
                        valid += 1;
                    }
                    None => {
                        values.push(0.0);
                        mask.push(false);
                    }
                }
            }
        }
        valid
    }
}

/// Samples `v_anat` on the slice plane `g` displaced by motion `p`.
///
/// Out-of-bounds pixels are zero and flagged invalid in the mask.
pub fn extract_section(v_anat: &Volume, g: &SliceGeometry, p: &RigidParams, cal: &Calibration) -> Result<(Slice, Vec<bool>)> {
    let (data, mask, valid) = sample_section(v_anat, g, p, cal);
    if valid < MIN_VALID_PIXELS {
        return Err(Error::EmptyOverlap { found: valid, required: MIN_VALID_PIXELS });
    }
    Ok((Slice { geometry: g.clone(), data, volume_index: 0, time_index: 0 }, mask))
}

/// Like [`extract_section`] without the overlap check.
pub fn sample_section(v: &Volume, g: &SliceGeometry, p: &RigidParams, cal: &Calibration) -> (Vec<f64>, Vec<bool>, usize) {
    let map = SectionMap::new(v, g, &cal.chain(p));
    let mut data = Vec::with_capacity(g.pixel_count());
    let mut mask = Vec::with_capacity(g.pixel_count());
    let valid = map.sample_into(v, g.grid, &mut data, &mut mask);
    (data, mask, valid)
}

/// Voxelwise arithmetic mean.
pub fn mean_volume(vols: &[Volume]) -> Result<Volume> {
    let first = vols.first().ok_or_else(|| Error::ShapeMismatch("no volumes to average".into()))?;
    if let Some(bad) = vols.iter().position(|v| !v.same_grid(first)) {
        return Err(Error::ShapeMismatch(format!("volume {bad} grid differs from volume 0")));
    }
    let n = vols.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for v in vols {
        for (a, x) in acc.iter_mut().zip(v.data()) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    first.with_data(acc)
}

/// Stacks one volume's slices by slice index, ignoring motion.
///
/// Slices must be parallel axial planes sharing the in-plane grid, evenly
/// spaced along z.
pub fn stack_slices_to_volume(slices: &[&Slice]) -> Result<Volume> {
    let n = slices.len();
    if n == 0 {
        return Err(Error::MissingSlice(0));
    }
    let mut by_index: Vec<Option<&Slice>> = vec![None; n];
    for s in slices {
        let k = s.geometry.slice_index;
        if k >= n || by_index[k].is_some() {
            return Err(Error::InconsistentGeometry(format!("slice index {k} duplicated or out of range")));
        }
        by_index[k] = Some(s);
    }
    let ordered: Vec<&Slice> = by_index
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or(Error::MissingSlice(k)))
        .collect::<Result<_>>()?;
    let g0 = &ordered[0].geometry;
    if g0.axis_u != [1.0, 0.0, 0.0] || g0.axis_v != [0.0, 1.0, 0.0] {
        return Err(Error::InconsistentGeometry("stacking requires axial slices".into()));
    }
    let dz = if n > 1 { ordered[1].geometry.plane_origin[2] - g0.plane_origin[2] } else { g0.pixel_spacing[0] };
    if !(dz > 0.0) {
        return Err(Error::InconsistentGeometry("slice positions must increase with index".into()));
    }
    let mut data = Vec::with_capacity(n * g0.pixel_count());
    for (k, s) in ordered.iter().enumerate() {
        let g = &s.geometry;
        let expected_z = g0.plane_origin[2] + k as f64 * dz;
        if g.grid != g0.grid
            || g.pixel_spacing != g0.pixel_spacing
            || g.axis_u != g0.axis_u
            || g.axis_v != g0.axis_v
            || g.plane_origin[0] != g0.plane_origin[0]
            || g.plane_origin[1] != g0.plane_origin[1]
            || (g.plane_origin[2] - expected_z).abs() > 1e-9 * dz.max(1.0)
        {
            return Err(Error::InconsistentGeometry(format!("slice {k} does not continue the stack")));
        }
        data.extend_from_slice(&s.data);
    }
    Volume::new(
        [g0.grid[0], g0.grid[1], n],
        [g0.pixel_spacing[0], g0.pixel_spacing[1], dz],
        g0.plane_origin,
        data,
    )
}

/// Axial slice geometries covering every z-plane of `vol`.
pub fn volume_planes(vol: &Volume) -> Vec<SliceGeometry> {
    let [nx, ny, nz] = vol.dims();
    let [sx, sy, sz] = vol.voxel_size();
    let o = vol.origin();
    (0..nz)
        .map(|k| SliceGeometry::axial(k, [o[0], o[1], o[2] + k as f64 * sz], [sx, sy], [nx, ny]))
        .collect()
}
