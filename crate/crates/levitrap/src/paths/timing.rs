//! Arc length and naive baseline timing laws.
//!
//! These baselines are what a renderer does without optimizing: traverse the
//! path at constant speed (equidistant arc length) or at constant parameter
//! rate (equidistant θ). Both become dynamically infeasible long before the
//! optimized timing does, which is exactly what the evaluation compares.

use super::{PathError, ReferencePath};
use nalgebra::Vector3;

/// Naive timing strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineStrategy {
    /// Constant speed: samples equidistant in arc length.
    ArcLength,
    /// Constant parameter rate: samples equidistant in θ.
    Parameter,
}

impl BaselineStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ArcLength => "baseline-arc",
            Self::Parameter => "baseline-param",
        }
    }
}

/// A sampled timing law (t_k, θ_k), k = 0..=n, with t_n = period (closure sample).
#[derive(Clone, Debug)]
pub struct BaselineTiming {
    pub strategy: BaselineStrategy,
    pub period: f64,
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Arc length ∫|∂q/∂θ| dθ between a ≤ b by adaptive Simpson quadrature,
/// absolute tolerance 1e-9 m.
pub(super) fn arc_length(path: &ReferencePath, a: f64, b: f64) -> Result<f64, PathError> {
    let speed = |t: f64| -> Result<f64, PathError> { Ok(path.derivs4(t)?[1].norm()) };
    adaptive_simpson(&speed, a, b, 1e-9)
}

fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, PathError>
where
    F: Fn(f64) -> Result<f64, PathError>,
{
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, PathError>
where
    F: Fn(f64) -> Result<f64, PathError>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        Ok(left + right + delta / 15.0)
    } else {
        let l = simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
        let r = simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
        Ok(l + r)
    }
}

/// Cumulative arc-length table over the path domain, used to invert s(θ).
pub struct ArcLengthTable<'a> {
    path: &'a ReferencePath,
    theta: Vec<f64>,
    cum: Vec<f64>,
}

impl<'a> ArcLengthTable<'a> {
    pub fn new(path: &'a ReferencePath, cells: usize) -> Result<Self, PathError> {
        let (t0, t1) = path.theta_range();
        let n = cells.max(64);
        let mut theta = Vec::with_capacity(n + 1);
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        theta.push(t0);
        cum.push(0.0);
        for i in 1..=n {
            let a = t0 + (t1 - t0) * (i - 1) as f64 / n as f64;
            let b = t0 + (t1 - t0) * i as f64 / n as f64;
            acc += arc_length(path, a, b)?;
            theta.push(b);
            cum.push(acc);
        }
        Ok(Self { path, theta, cum })
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// θ such that arc(θ0, θ) = s, by bisection to 1e-9 m within the bracketing
    /// table cell.
    pub fn theta_at(&self, s: f64) -> Result<f64, PathError> {
        let s = s.clamp(0.0, self.total());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => return Ok(self.theta[i]),
            Err(i) => i.saturating_sub(1).min(self.theta.len() - 2),
        };
        let target = s - self.cum[i];
        let (mut lo, mut hi) = (self.theta[i], self.theta[i + 1]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let got = arc_length(self.path, self.theta[i], mid)?;
            if (got - target).abs() <= 1e-9 {
                return Ok(mid);
            }
            if got < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub(super) fn baseline_timing(
    path: &ReferencePath,
    strategy: BaselineStrategy,
    period: f64,
    n: usize,
) -> Result<BaselineTiming, PathError> {
    assert!(n >= 2, "need at least 2 samples per period");
    assert!(period > 0.0, "period must be positive");
    let (t0, t1) = path.theta_range();
    let times: Vec<f64> = (0..=n).map(|k| period * k as f64 / n as f64).collect();
    let theta = match strategy {
        BaselineStrategy::Parameter => (0..=n)
            .map(|k| t0 + (t1 - t0) * k as f64 / n as f64)
            .collect(),
        BaselineStrategy::ArcLength => {
            let table = ArcLengthTable::new(path, (4 * n).max(512))?;
            let total = table.total();
            let mut th = Vec::with_capacity(n + 1);
            for k in 0..n {
                th.push(table.theta_at(total * k as f64 / n as f64)?);
            }
            th.push(t1);
            th
        }
    };
    Ok(BaselineTiming {
        strategy,
        period,
        times,
        theta,
    })
}

/// Second-difference acceleration of uniformly sampled positions. For periodic
/// sequences the first/last samples wrap (the closure sample, if present, must
/// be dropped by the caller so positions are the n distinct period samples).
pub fn finite_difference_accel(positions: &[Vector3<f64>], dt: f64, periodic: bool) -> Vec<Vector3<f64>> {
    let n = positions.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (pm, pp) = if periodic {
            (positions[(k + n - 1) % n], positions[(k + 1) % n])
        } else if k == 0 {
            (positions[0], positions[1.min(n - 1)])
        } else if k == n - 1 {
            (positions[n - 2], positions[n - 1])
        } else {
            (positions[k - 1], positions[k + 1])
        };
        out.push((pp - 2.0 * positions[k] + pm) / (dt * dt));
    }
    out
}
