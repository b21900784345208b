//! Activation test-retest reliability: a two-component binomial mixture
//! over per-voxel detection counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub lambda: f64,
    pub p_a: f64,
    pub p_i: f64,
    pub log_likelihood: f64,
}

const GRID_STEP: f64 = 0.005;

fn binomial_pmf(k: usize, l: usize, p: f64) -> f64 {
    let mut c = 1.0;
    for j in 0..k {
        c = c * (l - j) as f64 / (j + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((l - k) as i32)
}

/// Log-likelihood of the mixture given the histogram `counts[k]` of voxels
/// detected `k` times out of `l`.
pub fn mixture_log_likelihood(counts: &[usize], lambda: f64, p_a: f64, p_i: f64) -> f64 {
    let l = counts.len() - 1;
    counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(k, &n)| n as f64 * (lambda * binomial_pmf(k, l, p_a) + (1.0 - lambda) * binomial_pmf(k, l, p_i)).ln())
        .sum()
}

/// Maximum-likelihood fit by a 0.005 grid over `(lambda, p_a, p_i)` with
/// `p_a >= p_i`, refined by coordinate pattern search.
///
/// Among equally likely grid nodes the one with the widest separation
/// `p_a - p_i` wins, which makes boundary cases such as "every voxel always
/// detected" come out as `lambda = 1, p_a = 1`.
pub fn atr_fit(r: &[usize], l: usize) -> Result<MixtureFit> {
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    if let Some(&bad) = r.iter().find(|&&x| x > l) {
        return Err(Error::InvalidArgument(format!("count {bad} exceeds {l} replications")));
    }
    let mut counts = vec![0usize; l + 1];
    for &x in r {
        counts[x] += 1;
    }
    let nodes = (1.0 / GRID_STEP).round() as usize + 1;
    let grid = |i: usize| (i as f64 * GRID_STEP).min(1.0);
    // log-free per-node component probabilities
    let pmf: Vec<Vec<f64>> = (0..nodes).map(|i| (0..=l).map(|k| binomial_pmf(k, l, grid(i))).collect()).collect();
    let ll_at = |lam: f64, a: usize, b: usize| -> f64 {
        counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(k, &n)| n as f64 * (lam * pmf[a][k] + (1.0 - lam) * pmf[b][k]).ln())
            .sum()
    };
    let tol = |v: f64| 1e-12 * v.abs().max(1.0);
    let mut best = (f64::NEG_INFINITY, 0.0, 0, 0);
    for li in 0..nodes {
        let lam = grid(li);
        for a in 0..nodes {
            for b in 0..=a {
                let ll = ll_at(lam, a, b);
                let better = ll > best.0 + tol(best.0)
                    || ((ll - best.0).abs() <= tol(best.0) && a - b > best.2 - best.3);
                if better {
                    best = (ll, lam, a, b);
                }
            }
        }
    }
    let mut x = [best.1, grid(best.2), grid(best.3)];
    let mut ll = best.0;
    let f = |x: &[f64; 3]| mixture_log_likelihood(&counts, x[0], x[1], x[2]);
    let mut h = GRID_STEP;
    while h > 1e-10 {
        let mut improved = false;
        for c in 0..3 {
            for s in [-1.0, 1.0] {
                let mut y = x;
                y[c] = (y[c] + s * h).clamp(0.0, 1.0);
                if y[1] < y[2] {
                    continue;
                }
                let v = f(&y);
                if v > ll + tol(ll) {
                    x = y;
                    ll = v;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    Ok(MixtureFit { lambda: x[0], p_a: x[1], p_i: x[2], log_likelihood: ll })
}
