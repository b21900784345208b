//! Nelder-Mead maximization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Settings for [`nelder_mead_maximize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexOptions {
    /// Initial offset of each simplex vertex from `x0`, one per coordinate.
    pub steps: Vec<f64>,
    /// Stop when the spread of vertex values falls below this.
    pub ftol: f64,
    /// Stop when every vertex lies within `xtol * step` of the best vertex
    /// in every coordinate.
    pub xtol: f64,
    pub max_evals: usize,
}

impl SimplexOptions {
    /// Default steps for rigid motion: 0.5 degree and 0.5 mm.
    pub fn rigid() -> Self {
        let a = 0.5f64.to_radians();
        SimplexOptions { steps: vec![a, a, a, 0.5, 0.5, 0.5], ftol: 1e-5, xtol: 0.02, max_evals: 400 }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.steps.len() != dim || self.steps.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!("need {dim} positive simplex steps")));
        }
        if !(self.ftol > 0.0 && self.xtol > 0.0) {
            return Err(Error::InvalidArgument("simplex tolerances must be positive".into()));
        }
        if self.max_evals < dim + 1 {
            return Err(Error::InvalidArgument(format!("max_evals must be at least {}", dim + 1)));
        }
        Ok(())
    }
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self::rigid()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Set when the evaluation budget ran out before a tolerance was met.
    pub budget_exhausted: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        sanitize((self.f)(x))
    }
}

/// Maximizes `f` from `x0` with the standard Nelder-Mead moves.
///
/// `-inf` (or NaN) marks an invalid point and always ranks worst.
pub fn nelder_mead_maximize<F>(f: F, x0: &[f64], opt: &SimplexOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    opt.validate(n)?;
    let mut f = Counter { f, evals: 0 };

    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    verts.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opt.steps[i];
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| f.call(v)).collect();
    if vals.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::AllInvalid);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut budget_exhausted = false;
    loop {
        // best first; the stable sort keeps earlier vertices ahead on ties
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let f_spread = vals[best] - vals[worst];
        if f_spread.is_finite() && f_spread < opt.ftol {
            break;
        }
        let x_spread = verts
            .iter()
            .flat_map(|v| v.iter().zip(&verts[best]).zip(&opt.steps).map(|((a, b), s)| (a - b).abs() / s))
            .fold(0.0, f64::max);
        if x_spread < opt.xtol {
            break;
        }
        if f.evals >= opt.max_evals {
            budget_exhausted = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for &k in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&verts[k]) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&verts[worst]).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let xr = along(REFLECT);
        let fr = f.call(&xr);
        if fr > vals[best] {
            let xe = along(EXPAND);
            let fe = f.call(&xe);
            if fe > fr {
                verts[worst] = xe;
                vals[worst] = fe;
            } else {
                verts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr > vals[second_worst] {
            verts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let outside = fr > vals[worst];
        let xc = if outside { along(REFLECT * CONTRACT) } else { along(-CONTRACT) };
        let fc = f.call(&xc);
        let accept = if outside { fc >= fr } else { fc > vals[worst] };
        if accept {
            verts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        let xb = verts[best].clone();
        for &k in &order[1..] {
            let v: Vec<f64> = xb.iter().zip(&verts[k]).map(|(b, x)| b + SHRINK * (x - b)).collect();
            vals[k] = f.call(&v);
            verts[k] = v;
        }
    }

    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
    let best = order[0];
    Ok(SimplexResult { x: verts[best].clone(), value: vals[best], evaluations: f.evals, budget_exhausted })
}
