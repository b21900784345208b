//! Joint intensity histograms and mutual information between observed
//! slices and sections extracted from the anatomical volume.

use crate::error::{Error, Result};
use crate::geometry::{Calibration, RigidParams};
use crate::imaging::{SectionMap, SliceGeometry, SliceStack, Volume, MIN_VALID_PIXELS};

pub const DEFAULT_BINS: usize = 32;

/// Hard-assignment joint histogram over equal-width bins.
///
/// Rows index the first image, columns the second.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<f64>,
    total: f64,
    range_a: (f64, f64),
    range_b: (f64, f64),
    degenerate: bool,
}

impl JointHistogram {
    /// Histogram from explicit counts; used for synthetic distributions.
    pub fn from_counts(bins: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != bins * bins || counts.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::InvalidArgument("counts must be a non-negative bins x bins table".into()));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyOverlap { found: 0, required: 1 });
        }
        Ok(JointHistogram { bins, counts, total, range_a: (0.0, 1.0), range_b: (0.0, 1.0), degenerate: false })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Value ranges used for binning `(min, max)` of each image.
    pub fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        (self.range_a, self.range_b)
    }

    /// True when either image was constant over the valid pixels.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c / self.total).collect()
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        self.counts.chunks(self.bins).map(|row| row.iter().sum::<f64>() / self.total).collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.bins];
        for row in self.counts.chunks(self.bins) {
            for (acc, c) in m.iter_mut().zip(row) {
                *acc += c;
            }
        }
        m.iter_mut().for_each(|x| *x /= self.total);
        m
    }
}

fn valid_range(values: &[f64], mask: Option<&[bool]>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_none_or(|m| m[i]) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

#[inline]
fn bin_of(v: f64, lo: f64, scale: f64, bins: usize) -> usize {
    // scale == 0 for a constant image: everything lands in bin 0
    (((v - lo) * scale) as usize).min(bins - 1)
}

/// Bins the valid `(a, b)` pairs; each image uses its own valid min/max.
pub fn joint_histogram(a: &[f64], b: &[f64], mask: Option<&[bool]>, bins: usize) -> Result<JointHistogram> {
    if a.len() != b.len() || mask.is_some_and(|m| m.len() != a.len()) {
        return Err(Error::ShapeMismatch("histogram inputs differ in length".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let valid = mask.map_or(a.len(), |m| m.iter().filter(|&&x| x).count());
    if valid < MIN_VALID_PIXELS {
        return Err(Error::EmptyOverlap { found: valid, required: MIN_VALID_PIXELS });
    }
    let range_a = valid_range(a, mask);
    let range_b = valid_range(b, mask);
    let scale = |(lo, hi): (f64, f64)| if hi > lo { bins as f64 / (hi - lo) } else { 0.0 };
    let (sa, sb) = (scale(range_a), scale(range_b));
    let mut counts = vec![0.0; bins * bins];
    for i in 0..a.len() {
        if mask.is_none_or(|m| m[i]) {
            let r = bin_of(a[i], range_a.0, sa, bins);
            let c = bin_of(b[i], range_b.0, sb, bins);
            counts[r * bins + c] += 1.0;
        }
    }
    Ok(JointHistogram {
        bins,
        counts,
        total: valid as f64,
        range_a,
        range_b,
        degenerate: sa == 0.0 || sb == 0.0,
    })
}

/// `sum p(x,y) log(p(x,y) / (p(x) p(y)))` in nats, with `0 log 0 = 0`.
pub fn mutual_information(h: &JointHistogram) -> f64 {
    let pa = h.marginal_a();
    let pb = h.marginal_b();
    let mut mi = 0.0;
    for (r, row) in h.counts.chunks(h.bins).enumerate() {
        for (c, &n) in row.iter().enumerate() {
            if n > 0.0 {
                let p = n / h.total;
                mi += p * (p / (pa[r] * pb[c])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Entropy of the first image's marginal, nats.
pub fn marginal_entropy_a(h: &JointHistogram) -> f64 {
    -h.marginal_a().iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Scores an observed image against a candidate extracted image.
///
/// Mutual information is the only measure shipped; other measures can be
/// plugged into [`StackObjective`] through this trait.
pub trait SimilarityMeasure: Sync + Send {
    fn score(&self, observed: &[f64], extracted: &[f64], mask: &[bool]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutualInformation {
    pub bins: usize,
}

impl Default for MutualInformation {
    fn default() -> Self {
        MutualInformation { bins: DEFAULT_BINS }
    }
}

impl SimilarityMeasure for MutualInformation {
    fn score(&self, observed: &[f64], extracted: &[f64], mask: &[bool]) -> Result<f64> {
        joint_histogram(observed, extracted, Some(mask), self.bins).map(|h| mutual_information(&h))
    }
}

/// Similarity of a fixed set of observed slices against the anatomical
/// volume as a function of one shared motion candidate.
///
/// All valid (observed, extracted) pairs of every slice are pooled into a
/// single score.
pub struct StackObjective<'a, M: SimilarityMeasure = MutualInformation> {
    anat: &'a Volume,
    cal: &'a Calibration,
    geometries: Vec<&'a SliceGeometry>,
    observed: Vec<f64>,
    measure: M,
}

impl<'a> StackObjective<'a, MutualInformation> {
    pub fn new(stack: &SliceStack<'a>, anat: &'a Volume, cal: &'a Calibration, bins: usize) -> Self {
        Self::with_measure(stack, anat, cal, MutualInformation { bins })
    }
}

impl<'a, M: SimilarityMeasure> StackObjective<'a, M> {
    pub fn with_measure(stack: &SliceStack<'a>, anat: &'a Volume, cal: &'a Calibration, measure: M) -> Self {
        let geometries = stack.slices.iter().map(|s| &s.geometry).collect();
        let observed = stack.slices.iter().flat_map(|s| s.data.iter().copied()).collect();
        StackObjective { anat, cal, geometries, observed, measure }
    }

    /// Objective over explicit geometries and pooled observations (used for
    /// volume registration, where every z-plane is one geometry).
    pub fn from_parts(geometries: Vec<&'a SliceGeometry>, observed: Vec<f64>, anat: &'a Volume, cal: &'a Calibration, measure: M) -> Self {
        StackObjective { anat, cal, geometries, observed, measure }
    }

    /// Pooled similarity at `p`.
    pub fn evaluate(&self, p: &RigidParams) -> Result<f64> {
        let chain = self.cal.chain(p);
        let mut extracted = Vec::with_capacity(self.observed.len());
        let mut mask = Vec::with_capacity(self.observed.len());
        for g in &self.geometries {
            SectionMap::new(self.anat, g, &chain).sample_into(self.anat, g.grid, &mut extracted, &mut mask);
        }
        self.measure.score(&self.observed, &extracted, &mask)
    }

    /// Like [`evaluate`](Self::evaluate) with invalid candidates mapped to `-inf`.
    pub fn value(&self, p: &RigidParams) -> f64 {
        self.evaluate(p).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Mutual information of a slice stack against the anatomy under one
/// candidate motion.
pub fn stack_similarity(s: &SliceStack<'_>, p: &RigidParams, v_anat: &Volume, cal: &Calibration, bins: usize) -> Result<f64> {
    StackObjective::new(s, v_anat, cal, bins).evaluate(p)
}
