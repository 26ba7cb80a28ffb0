//! Forward simulation of the trap–particle dynamics.
//!
//! The only force acting on the levitated particle is the trap's restoring
//! force (drag and gravity are negligible at these scales; gravity can be
//! switched on for sensitivity checks). Given a trap trajectory this module
//! integrates m·p̈ = F(p, u(t)) with classic fourth-order Runge–Kutta,
//! interpolating the trap command cubically between device samples, and
//! decides feasibility: a trajectory works when the particle traverses the
//! whole path without ever leaving the trap's restoring region.
//!
//! On top of the raw integrator: randomized perturbation trials (initial
//! offset + force-scale jitter, deterministic per seed, fanned out via
//! [`crate::par`]) and the evaluation metrics — nearest-point deviation,
//! RMSE over whole periods, path-normalized RMSE, and the acceleration
//! decomposition used to inspect how close a timing law runs to the device
//! limits.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcemodel::ForceParams;
use crate::par;
use crate::paths::{PathError, ReferencePath};
use crate::trapsolve::{catmull_rom, TrapTrajectory};

/// Standard gravity [m/s²].
const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("particle escaped the trap at t = {time:.4} s; no metrics for a lost particle")]
    Escaped { time: f64 },
    #[error("simulation step dt = {dt:.3e} s exceeds one tenth of the device sample interval")]
    StepTooLarge { dt: f64 },
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Simulation options beyond the spec'd defaults.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Include gravity as a constant −g·ẑ acceleration (default off: the
    /// trap stiffness dwarfs the particle's weight at these scales).
    pub gravity: bool,
    /// Total simulated time [s]; `None` picks the natural span — whole
    /// periods covering at least two seconds for periodic trajectories, the
    /// single traversal otherwise.
    pub duration: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { gravity: false, duration: None }
    }
}

/// Time history of one simulated particle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimTrace {
    /// Integration timestamps [s].
    pub times: Vec<f64>,
    /// Particle positions [m].
    pub p: Vec<Vector3<f64>>,
    /// Particle velocities [m/s].
    pub p_dot: Vec<Vector3<f64>>,
    /// Nearest-point path deviation ‖p − q(θ*)‖ per sample [m].
    pub deviation: Vec<f64>,
    /// Horizontal acceleration magnitude √(aₓ² + a_y²) per sample [m/s²].
    pub accel_h: Vec<f64>,
    /// Signed vertical acceleration per sample [m/s²].
    pub accel_z: Vec<f64>,
    /// Set iff ‖p − u‖ exceeded the escape radius; the trace stops there.
    pub escaped: bool,
    /// Time of escape [s], when it happened.
    pub escape_time: Option<f64>,
    /// Period of the trap trajectory that was simulated [s].
    pub period: f64,
}

impl SimTrace {
    /// Largest path deviation over the trace [m].
    pub fn max_deviation(&self) -> f64 {
        self.deviation.iter().copied().fold(0.0, f64::max)
    }
}

/// Trap command at an arbitrary time: cubic interpolation between device
/// samples, wrapping for periodic trajectories and holding the final sample
/// for rest trajectories.
pub fn trap_at(traj: &TrapTrajectory, t: f64) -> Vector3<f64> {
    let pos = t * traj.rate;
    if traj.periodic {
        let n = traj.u.len() as f64;
        catmull_rom(&traj.u, true, pos.rem_euclid(n))
    } else {
        catmull_rom(&traj.u, false, pos.clamp(0.0, (traj.u.len() - 1) as f64))
    }
}

/// Reference particle position at an arbitrary time (same interpolation as
/// [`trap_at`], over the q samples).
pub fn reference_at(traj: &TrapTrajectory, t: f64) -> Vector3<f64> {
    let pos = t * traj.rate;
    if traj.periodic {
        let n = traj.q.len() as f64;
        catmull_rom(&traj.q, true, pos.rem_euclid(n))
    } else {
        catmull_rom(&traj.q, false, pos.clamp(0.0, (traj.q.len() - 1) as f64))
    }
}

/// Forward-integrate the trap–particle dynamics from (p0, v0).
///
/// Classic RK4 on the second-order system; the step must satisfy
/// dt ≤ 1/(10·rate) so the cubic trap interpolation is sampled well inside
/// its resolution. Escape (‖p − u‖ beyond the escape radius, just past the
/// first radial force peak) halts the integration early — it is a result,
/// not an error. Deviations are measured against the trajectory's reference
/// samples by nearest-point projection onto that polyline.
pub fn simulate(
    traj: &TrapTrajectory,
    params: &ForceParams,
    p0: &Vector3<f64>,
    v0: &Vector3<f64>,
    dt: f64,
) -> Result<SimTrace, SimError> {
    simulate_opts(traj, params, p0, v0, dt, &SimOptions::default())
}

/// [`simulate`] with explicit [`SimOptions`].
pub fn simulate_opts(
    traj: &TrapTrajectory,
    params: &ForceParams,
    p0: &Vector3<f64>,
    v0: &Vector3<f64>,
    dt: f64,
    opts: &SimOptions,
) -> Result<SimTrace, SimError> {
    if !(dt > 0.0) || dt > 1.0 / (10.0 * traj.rate) {
        return Err(SimError::StepTooLarge { dt });
    }
    let t_end = opts.duration.unwrap_or_else(|| natural_span(traj));
    let steps = (t_end / dt).round() as usize;
    let escape = params.escape_radius();
    let inv_m = 1.0 / params.mass;
    let grav = if opts.gravity { Vector3::new(0.0, 0.0, -GRAVITY) } else { Vector3::zeros() };
    let accel = |t: f64, p: &Vector3<f64>| -> Vector3<f64> {
        params.axisym_force(p, &trap_at(traj, t)) * inv_m + grav
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut ps = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let mut accel_h = Vec::with_capacity(steps + 1);
    let mut accel_z = Vec::with_capacity(steps + 1);
    let mut escaped = false;
    let mut escape_time = None;

    let (mut p, mut v) = (*p0, *v0);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let a = accel(t, &p);
        times.push(t);
        ps.push(p);
        vs.push(v);
        accel_h.push(a.x.hypot(a.y));
        accel_z.push(a.z);

        if (p - trap_at(traj, t)).norm() > escape {
            escaped = true;
            escape_time = Some(t);
            break;
        }
        if k == steps {
            break;
        }

        // RK4 on (p, v)
        let k1p = v;
        let k1v = a;
        let k2p = v + k1v * (0.5 * dt);
        let k2v = accel(t + 0.5 * dt, &(p + k1p * (0.5 * dt)));
        let k3p = v + k2v * (0.5 * dt);
        let k3v = accel(t + 0.5 * dt, &(p + k2p * (0.5 * dt)));
        let k4p = v + k3v * dt;
        let k4v = accel(t + dt, &(p + k3p * dt));
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    }

    let deviation = polyline_deviation(&ps, &traj.q, traj.periodic);
    Ok(SimTrace {
        times,
        p: ps,
        p_dot: vs,
        deviation,
        accel_h,
        accel_z,
        escaped,
        escape_time,
        period: traj.period,
    })
}

/// Natural simulated span: whole periods covering ≥ 2 s of rendering for
/// periodic trajectories, one traversal for rest trajectories.
fn natural_span(traj: &TrapTrajectory) -> f64 {
    if traj.periodic {
        let periods = (2.0 / traj.period).ceil().max(1.0);
        periods * traj.period
    } else {
        traj.period
    }
}

/// Distance from each position to the reference polyline (nearest point over
/// all segments, warm-started from the previous match since the particle
/// moves continuously).
fn polyline_deviation(ps: &[Vector3<f64>], q: &[Vector3<f64>], wrap: bool) -> Vec<f64> {
    let n = q.len();
    let segs = if wrap { n } else { n - 1 };
    let seg_dist = |p: &Vector3<f64>, j: usize| -> f64 {
        let a = q[j];
        let b = q[(j + 1) % n];
        let ab = b - a;
        let len2 = ab.norm_squared();
        let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (p - (a + ab * s)).norm()
    };
    let mut hint = 0usize;
    let mut out = Vec::with_capacity(ps.len());
    for (i, p) in ps.iter().enumerate() {
        // global search on the first sample and occasionally after, local
        // window otherwise; the window is generous (device-rate samples are
        // dense relative to particle motion)
        let window = 64usize;
        let mut best = f64::INFINITY;
        let mut best_j = hint;
        let full = i == 0;
        let range: Box<dyn Iterator<Item = usize>> = if full {
            Box::new(0..segs)
        } else {
            Box::new((0..=2 * window).map(move |o| (hint + segs + o - window) % segs))
        };
        for j in range {
            let d = seg_dist(p, j);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        hint = best_j;
        out.push(best);
    }
    out
}

/// Perturbation magnitudes for feasibility trials.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the Gaussian initial-position offset, per axis
    /// [m].
    pub sigma_p0: f64,
    /// Half-width of the uniform force-scale jitter (0.05 ⇒ ±5%).
    pub force_jitter: f64,
    /// Master seed; trial k uses an independent stream derived from it.
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma_p0: 1.0e-4, force_jitter: 0.05, seed: 0x1eb1_7a90 }
    }
}

/// Aggregate outcome of randomized feasibility trials.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// At least ⌈0.9·n⌉ trials finished without escape.
    pub success: bool,
    /// Number of trials run.
    pub trials: usize,
    /// Trials that finished without escape.
    pub survived: usize,
    /// Per-trial escape time [s]; `None` for survivors.
    pub escape_times: Vec<Option<f64>>,
    /// Largest path deviation over surviving trials [m].
    pub max_deviation: f64,
    /// Mean path-normalized RMSE over surviving trials [% of arc length].
    pub path_normalized_rmse: f64,
}

/// Run `n` independent perturbed simulations: Gaussian initial offset and a
/// per-trial uniform force-scale factor, both drawn from a deterministic
/// per-trial ChaCha stream. Success means at least ⌈0.9·n⌉ survivors. Trials
/// fan out across threads via [`crate::par`]; results are identical for any
/// thread count (and with the sequential fallback) because every trial owns
/// its stream.
pub fn perturbed_trials(
    traj: &TrapTrajectory,
    params: &ForceParams,
    n: usize,
    noise: &NoiseSpec,
) -> Result<FeasibilityReport, SimError> {
    assert!(n >= 1, "need at least one trial");
    let dt = 1.0 / (10.0 * traj.rate);
    let arc = polyline_length(&traj.q, traj.periodic);

    let outcomes: Vec<Result<(Option<f64>, f64, f64), SimError>> = par::map_range(n, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed.wrapping_add(k as u64));
        let normal = Normal::new(0.0, noise.sigma_p0).expect("sigma is finite");
        let offset = Vector3::new(
            normal.sample(&mut rng),
            normal.sample(&mut rng),
            normal.sample(&mut rng),
        );
        let scale = 1.0 + noise.force_jitter * rng.gen_range(-1.0..=1.0);
        let jittered = params.scaled(scale);
        let p0 = traj.q[0] + offset;
        let v0 = traj.q_dot[0];
        let trace = simulate(traj, &jittered, &p0, &v0, dt)?;
        let rmse = if trace.escaped { f64::NAN } else { whole_period_rmse(&trace) };
        Ok((trace.escape_time, trace.max_deviation(), rmse))
    });

    let mut escape_times = Vec::with_capacity(n);
    let mut survived = 0usize;
    let mut max_deviation = 0.0f64;
    let mut rmse_sum = 0.0;
    for outcome in outcomes {
        let (escape, dev, rmse) = outcome?;
        if escape.is_none() {
            survived += 1;
            max_deviation = max_deviation.max(dev);
            rmse_sum += rmse;
        }
        escape_times.push(escape);
    }
    let needed = (0.9 * n as f64).ceil() as usize;
    Ok(FeasibilityReport {
        success: survived >= needed,
        trials: n,
        survived,
        escape_times,
        max_deviation,
        path_normalized_rmse: if survived > 0 { 100.0 * rmse_sum / (survived as f64 * arc) } else { f64::NAN },
    })
}

fn polyline_length(q: &[Vector3<f64>], wrap: bool) -> f64 {
    let mut len = 0.0;
    for k in 1..q.len() {
        len += (q[k] - q[k - 1]).norm();
    }
    if wrap {
        if let (Some(first), Some(last)) = (q.first(), q.last()) {
            len += (first - last).norm();
        }
    }
    len
}

/// RMSE of the deviation over the largest whole number of periods in the
/// trace (the whole trace when it is shorter than one period).
fn whole_period_rmse(trace: &SimTrace) -> f64 {
    let t_end = *trace.times.last().expect("non-empty trace");
    let whole = (t_end / trace.period).floor() * trace.period;
    let cut = if whole > 0.0 { whole } else { t_end };
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, e) in trace.times.iter().zip(&trace.deviation) {
        if *t <= cut {
            sum += e * e;
            count += 1;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

/// Evaluation metrics of one simulated trace against the reference path.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Metrics {
    /// RMSE of the nearest-point deviation over whole periods [m].
    pub rmse: f64,
    /// RMSE divided by total arc length, ×100 (dimensionless %).
    pub path_normalized_rmse: f64,
    /// Largest deviation [m].
    pub max_deviation: f64,
    /// Largest horizontal acceleration magnitude [m/s²].
    pub max_accel_h: f64,
    /// Largest |vertical| acceleration [m/s²].
    pub max_accel_z: f64,
}

/// Compute tracking metrics for a non-escaped trace: deviations are
/// recomputed against the continuous path by dense θ-grid search plus local
/// Newton refinement (sharper than the polyline numbers stored in the
/// trace), RMSE is taken over whole periods, and the normalization is the
/// path's total arc length.
pub fn metrics(trace: &SimTrace, path: &ReferencePath) -> Result<Metrics, SimError> {
    if let Some(time) = trace.escape_time {
        return Err(SimError::Escaped { time });
    }
    let t_end = *trace.times.last().expect("non-empty trace");
    let whole = (t_end / trace.period).floor() * trace.period;
    let cut = if whole > 0.0 { whole } else { t_end };

    let (theta0, theta1) = path.theta_range();
    let grid = 2048;
    let mut hint: Option<f64> = None;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut max_dev = 0.0f64;
    for (t, p) in trace.times.iter().zip(&trace.p) {
        if *t > cut {
            break;
        }
        let theta = nearest_theta(path, p, hint, grid, theta0, theta1)?;
        let dev = (p - path.derivs4_ext(theta)[0]).norm();
        sum += dev * dev;
        count += 1;
        max_dev = max_dev.max(dev);
        hint = Some(theta);
    }
    let rmse = (sum / count.max(1) as f64).sqrt();
    let arc = path.total_arc_length()?;
    Ok(Metrics {
        rmse,
        path_normalized_rmse: 100.0 * rmse / arc,
        max_deviation: max_dev,
        max_accel_h: trace.accel_h.iter().copied().fold(0.0, f64::max),
        max_accel_z: trace.accel_z.iter().map(|a| a.abs()).fold(0.0, f64::max),
    })
}

/// Nearest path parameter to `p`: coarse grid search (global on the first
/// call, a local window around the previous match after) refined by a few
/// Newton steps on ½‖p − q(θ)‖².
fn nearest_theta(
    path: &ReferencePath,
    p: &Vector3<f64>,
    hint: Option<f64>,
    grid: usize,
    theta0: f64,
    theta1: f64,
) -> Result<f64, SimError> {
    let span = theta1 - theta0;
    let step = span / grid as f64;
    let dist2 = |theta: f64| (p - path.derivs4_ext(theta)[0]).norm_squared();

    let mut best = match hint {
        Some(h) => h,
        None => {
            let mut arg = theta0;
            let mut val = f64::INFINITY;
            for k in 0..grid {
                let theta = theta0 + k as f64 * step;
                let d = dist2(theta);
                if d < val {
                    val = d;
                    arg = theta;
                }
            }
            arg
        }
    };
    if hint.is_some() {
        // the particle cannot have moved far since the previous sample
        let mut val = f64::INFINITY;
        let mut arg = best;
        for k in -8i32..=8 {
            let theta = best + k as f64 * step;
            let d = dist2(theta);
            if d < val {
                val = d;
                arg = theta;
            }
        }
        best = arg;
    }
    for _ in 0..6 {
        let d = path.derivs4_ext(best);
        let r = p - d[0];
        let g = -r.dot(&d[1]);
        let h = d[1].dot(&d[1]) - r.dot(&d[2]);
        if h.abs() < 1e-30 {
            break;
        }
        let delta = -g / h;
        best += delta.clamp(-step, step);
        if delta.abs() < 1e-12 {
            break;
        }
    }
    Ok(best)
}

/// Write a trace as CSV (`t,p_x,p_y,p_z,e,ax_h,a_z`), one row per
/// integration sample.
pub fn write_trace_csv(trace: &SimTrace, path: &Path) -> Result<(), SimError> {
    let mut out = String::from("t,p_x,p_y,p_z,e,ax_h,a_z\n");
    for k in 0..trace.times.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            trace.times[k],
            trace.p[k].x,
            trace.p[k].y,
            trace.p[k].z,
            trace.deviation[k],
            trace.accel_h[k],
            trace.accel_z[k],
        ));
    }
    std::fs::write(path, out).map_err(|e| SimError::Io { path: path.display().to_string(), source: e })
}

/// Write a feasibility report as pretty JSON.
pub fn write_report_json(report: &FeasibilityReport, path: &Path) -> Result<(), SimError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| SimError::Io { path: path.display().to_string(), source: e })
}
