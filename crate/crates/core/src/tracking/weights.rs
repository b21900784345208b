//! Histogram-equalized particle weights.
//!
//! Particle similarity scores are replaced by their ranks, and rank `k` of
//! `P` receives the `(k - 0.5) / P` quantile of `Z = f(X)`, the value of a
//! `d`-dimensional standard normal density at a draw from that same
//! density. The weighted ensemble then carries the spread of a Gaussian
//! while staying monotone in similarity.

use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Dimension of the rigid motion state.
pub const STATE_DIM: usize = 6;

const TABLE_INTERVALS: usize = 12_000;
const RADIUS_MAX: f64 = 16.0;

// 5-point Gauss-Legendre nodes and weights on [-1, 1]
const GL_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Largest attainable density value `(2 pi)^(-d/2)`.
pub fn gz_max(d: u32) -> f64 {
    (2.0 * PI).powf(-(d as f64) / 2.0)
}

/// Surface area of the unit `(d-1)`-sphere.
fn sphere_area(d: u32) -> f64 {
    let d = d as f64;
    d * PI.powf(d / 2.0) / gamma(d / 2.0 + 1.0)
}

/// Density of `Z = f(X)` for `X ~ N(0, I_d)`:
/// `S_{d-1} (-2 log((2 pi)^{d/2} z))^{(d-2)/2}` on `(0, (2 pi)^{-d/2}]`.
pub fn gz_density(z: f64, d: u32) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let zmax = gz_max(d);
    if !(z > 0.0 && z <= zmax) {
        return Err(Error::DomainError { value: z, domain: "(0, (2 pi)^(-d/2)]" });
    }
    let s = (-2.0 * (z / zmax).ln()).max(0.0);
    Ok(sphere_area(d) * s.powf((d as f64 - 2.0) / 2.0))
}

/// Tabulated CDF `G_Z(z) = P{f(X) <= z}` built by quadrature of
/// [`gz_density`].
///
/// The quadrature runs in the radius `r = sqrt(-2 log(z / z_max))`, where
/// the integrand `g_Z(z) |dz/dr|` is smooth for every `d`.
#[derive(Debug, Clone)]
pub struct GzTable {
    d: u32,
    zmax: f64,
    area: f64,
    step: f64,
    /// `tail[i] = G_Z(z(r_i))`, the mass at radii above `r_i = i * step`.
    tail: Vec<f64>,
}

impl GzTable {
    pub fn new(d: u32) -> Self {
        assert!(d >= 1, "dimension must be positive");
        let zmax = gz_max(d);
        let area = sphere_area(d);
        let step = RADIUS_MAX / TABLE_INTERVALS as f64;
        let mut table = GzTable { d, zmax, area, step, tail: vec![0.0; TABLE_INTERVALS + 1] };
        for i in (0..TABLE_INTERVALS).rev() {
            let a = i as f64 * step;
            table.tail[i] = table.tail[i + 1] + table.integrate(a, a + step);
        }
        table
    }

    pub fn dim(&self) -> u32 {
        self.d
    }

    /// `g_Z(z(r)) |dz/dr| = S_{d-1} r^{d-1} z(r)`.
    fn radial(&self, r: f64) -> f64 {
        let z = self.zmax * (-0.5 * r * r).exp();
        self.area * r.powi(self.d as i32 - 1) * z
    }

    fn integrate(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        GL_X.iter().zip(&GL_W).map(|(x, w)| w * self.radial(mid + half * x)).sum::<f64>() * half
    }

    fn radius(&self, z: f64) -> f64 {
        (-2.0 * (z / self.zmax).ln()).max(0.0).sqrt()
    }

    /// Mass at radii above `r`.
    fn tail_at(&self, r: f64) -> f64 {
        if r >= RADIUS_MAX {
            return 0.0;
        }
        let i = ((r / self.step) as usize).min(TABLE_INTERVALS - 1);
        let hi = (i + 1) as f64 * self.step;
        self.tail[i + 1] + self.integrate(r, hi)
    }

    /// `G_Z(z)`, clamped to `[0, 1]` outside the support.
    pub fn cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            0.0
        } else if z >= self.zmax {
            1.0
        } else {
            self.tail_at(self.radius(z)).min(1.0)
        }
    }

    /// `G_Z^{-1}(q)`: table bracket followed by bisection on the radius.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::DomainError { value: q, domain: "[0, 1]" });
        }
        if q == 0.0 {
            return Ok(0.0);
        }
        if q >= self.tail[0] {
            return Ok(self.zmax);
        }
        // tail is decreasing in the node index
        let idx = self.tail.partition_point(|&t| t > q);
        let (mut lo, mut hi) = ((idx.saturating_sub(1)) as f64 * self.step, idx as f64 * self.step);
        if idx > TABLE_INTERVALS {
            hi = RADIUS_MAX;
            lo = RADIUS_MAX - self.step;
        }
        // z = zmax exp(-r^2/2): relative error in z is r * dr
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.tail_at(mid) > q {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) * hi.max(1.0) < 1e-11 {
                break;
            }
        }
        Ok(self.zmax * (-0.25 * (lo + hi) * (lo + hi) / 2.0).exp())
    }
}

fn table_for(d: u32) -> &'static GzTable {
    static SIX: OnceLock<GzTable> = OnceLock::new();
    if d == STATE_DIM as u32 {
        SIX.get_or_init(|| GzTable::new(d))
    } else {
        static OTHERS: Mutex<Vec<&'static GzTable>> = Mutex::new(Vec::new());
        let mut cache = OTHERS.lock().expect("table cache poisoned");
        if let Some(t) = cache.iter().find(|t| t.d == d) {
            return t;
        }
        let t: &'static GzTable = Box::leak(Box::new(GzTable::new(d)));
        cache.push(t);
        t
    }
}

/// `G_Z^{-1}(q)` for dimension `d` using a shared table.
pub fn gz_cdf_inverse(q: f64, d: u32) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    table_for(d).inverse(q)
}

/// `G_Z(z)` for dimension `d` using a shared table.
pub fn gz_cdf(z: f64, d: u32) -> f64 {
    table_for(d).cdf(z)
}

/// Raw weight per rank, `z_k = G_Z^{-1}((k - 0.5) / P)` for `k = 1..=P`.
#[derive(Debug, Clone)]
pub struct RankWeights {
    raw: Vec<f64>,
}

impl RankWeights {
    pub fn new(count: usize, d: u32) -> Result<Self> {
        let table = table_for(d);
        let raw = (1..=count)
            .map(|k| table.inverse((k as f64 - 0.5) / count as f64))
            .collect::<Result<_>>()?;
        Ok(RankWeights { raw })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Unnormalized equalized weights for `scores`.
    ///
    /// Tied scores share the mean raw weight of their ranks; invalid scores
    /// (`-inf` or NaN) take the lowest ranks and get zero.
    pub fn assign_raw(&self, scores: &[f64]) -> Result<Vec<f64>> {
        let p = scores.len();
        if p != self.raw.len() {
            return Err(Error::InvalidArgument(format!("expected {} scores, got {p}", self.raw.len())));
        }
        let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| key(scores[a]).total_cmp(&key(scores[b])).then(a.cmp(&b)));
        let mut out = vec![0.0; p];
        let mut any_valid = false;
        let mut start = 0;
        while start < p {
            let v = key(scores[order[start]]);
            let mut end = start + 1;
            while end < p && key(scores[order[end]]) == v {
                end += 1;
            }
            if v != f64::NEG_INFINITY {
                any_valid = true;
                let mean = self.raw[start..end].iter().sum::<f64>() / (end - start) as f64;
                for &j in &order[start..end] {
                    out[j] = mean;
                }
            }
            start = end;
        }
        if !any_valid {
            return Err(Error::AllInvalid);
        }
        Ok(out)
    }

    /// Normalized equalized weights for `scores`.
    pub fn assign(&self, scores: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.assign_raw(scores)?;
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Ok(w)
    }
}

/// Equalized, normalized weights for a set of similarity scores (6-D law).
pub fn equalize_weights(mi_values: &[f64]) -> Result<Vec<f64>> {
    if mi_values.len() < 2 {
        return Err(Error::InvalidArgument("need at least two particles".into()));
    }
    RankWeights::new(mi_values.len(), STATE_DIM as u32)?.assign(mi_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Independent oracle: `G_Z(z) = P(chi2_d >= -2 log(z / zmax))`.
    fn chi2_cdf(z: f64, d: u32) -> f64 {
        let s = -2.0 * (z / gz_max(d)).ln();
        ChiSquared::new(d as f64).unwrap().sf(s)
    }

    #[test]
    fn density_special_values() {
        let zmax = gz_max(6);
        assert_eq!(gz_density(zmax, 6).unwrap(), 0.0);
        assert_abs_diff_eq!(gz_density(zmax * (-0.5f64).exp(), 6).unwrap(), PI.powi(3), epsilon = 1e-9);
        assert_abs_diff_eq!(PI.powi(3), 31.0063, epsilon = 1e-4);
        assert!(matches!(gz_density(0.0, 6), Err(Error::DomainError { .. })));
        assert!(matches!(gz_density(zmax * 1.0001, 6), Err(Error::DomainError { .. })));
        // d = 6 closed form
        let z = 0.3 * zmax;
        let closed = PI.powi(3) * (-2.0 * ((2.0 * PI).powi(3) * z).ln()).powi(2);
        assert_abs_diff_eq!(gz_density(z, 6).unwrap(), closed, epsilon = 1e-9);
    }

    #[test]
    fn cdf_matches_chi_square_oracle() {
        for d in [1u32, 2, 3, 6, 9] {
            let table = GzTable::new(d);
            for f in [1e-6, 1e-3, 0.05, 0.3, 0.5, 0.8, 0.99] {
                let z = f * gz_max(d);
                assert_abs_diff_eq!(table.cdf(z), chi2_cdf(z, d), epsilon = 1e-10);
            }
            assert_abs_diff_eq!(table.cdf(gz_max(d)), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_endpoints_and_median() {
        assert_eq!(gz_cdf_inverse(1.0, 6).unwrap(), gz_max(6));
        assert_eq!(gz_cdf_inverse(0.0, 6).unwrap(), 0.0);
        let z50 = gz_cdf_inverse(0.5, 6).unwrap();
        assert_abs_diff_eq!(chi2_cdf(z50, 6), 0.5, epsilon = 1e-6);
        assert!(gz_cdf_inverse(1.5, 6).is_err());
    }

    #[test]
    fn inverse_relative_accuracy() {
        let table = GzTable::new(6);
        for q in [1e-9, 1e-4, 0.01, 0.25, 0.75, 0.999] {
            let z = table.inverse(q).unwrap();
            // invert the oracle by bisection on z
            let (mut lo, mut hi) = (0.0, gz_max(6));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if chi2_cdf(mid, 6) < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(((z - lo) / lo).abs() < 1e-8, "q={q}: {z} vs {lo}");
        }
    }

    #[test]
    fn all_equal_scores_are_uniform() {
        let w = equalize_weights(&[0.7; 10]).unwrap();
        for x in w {
            assert_abs_diff_eq!(x, 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn invalid_scores_get_zero() {
        let w = equalize_weights(&[0.2, f64::NEG_INFINITY, 0.5, f64::NAN]).unwrap();
        assert_eq!(w[1], 0.0);
        assert_eq!(w[3], 0.0);
        assert!(w[2] > w[0]);
        assert!(matches!(equalize_weights(&[f64::NEG_INFINITY; 3]), Err(Error::AllInvalid)));
    }

    #[test]
    fn raw_weights_follow_gz_law() {
        let rw = RankWeights::new(4000, 6).unwrap();
        let mut raw = rw.raw().to_vec();
        raw.sort_by(f64::total_cmp);
        let n = raw.len() as f64;
        let ks = raw
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                let c = chi2_cdf(z, 6);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS = {ks}");
    }

    proptest! {
        #[test]
        fn weights_normalized_and_monotone(scores in prop::collection::vec(-5.0f64..5.0, 2..200)) {
            let w = equalize_weights(&scores).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] < scores[j] {
                        prop_assert!(w[i] <= w[j]);
                    }
                    if scores[i] == scores[j] {
                        prop_assert_eq!(w[i], w[j]);
                    }
                }
            }
        }
    }
}
