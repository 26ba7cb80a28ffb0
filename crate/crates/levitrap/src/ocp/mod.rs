//! Minimum-time timing law for traversing a reference path under trap-force
//! limits.
//!
//! Given a geometric path q(θ) and a calibrated force model, this module
//! formulates the regularized minimum-time path-following problem
//!
//! ```text
//! minimize    T + γ ∫₀ᵀ v(t)² dt           (v = θ̈, the virtual input)
//! subject to  m q̈(θ(t)) = F(ζ(t))          (trap force, via auxiliaries ζ)
//!             boundary conditions           (periodic or rest-to-rest)
//!             ζ within the backed-off box   (ζ1 ∈ [0, 1−ε], |ζ3| ≤ 1−ε)
//! ```
//!
//! and solves it by trapezoidal collocation plus a self-contained
//! augmented-Lagrangian Newton solver (see [`nlp`] internals). The result is
//! a [`TimingSolution`]: the timing law θ(t) together with per-node ζ from
//! which physical trap positions are recovered downstream.

mod linalg;
pub(crate) mod nlp;
mod solver;

use crate::forcemodel::{ForceParams, ModelError, TrapAngles, Zeta};
use crate::paths::{PathError, ReferencePath};
use nalgebra::Vector3;
use nlp::{Gathered, Transcription};
use serde::{Deserialize, Serialize};
use solver::{solve_al, AlSettings};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(
        "problem infeasible: constraint violation {violation:.3e} (scaled) persists at node {node} — \
         the shape exceeds the device force envelope at this size/period"
    )]
    Infeasible { violation: f64, node: usize },
    #[error("solver ran out of iterations (violation {violation:.3e}, optimality {optimality:.3e})")]
    MaxIterations { violation: f64, optimality: f64 },
}

/// Boundary conditions of the timing problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    /// θ(0)=θ0, θ(T)=θf with θ̇, θ̈ and ζ continuous across the seam.
    Periodic,
    /// θ(0)=θ0, θ̇(0)=0 → θ(T)=θf, θ̇(T)=θ̇_end (ramp-up arc splicing onto an
    /// orbit traversed at θ̇_end).
    RestToRest { theta_dot_end: f64 },
}

/// Configuration of the transcription and solver.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OcpConfig {
    /// Collocation intervals N (≥ 16).
    pub nodes: usize,
    /// Dimensionless regularization weight γ ≥ 0 penalizing θ̈.
    pub gamma: f64,
    /// Back-off ε ∈ (0,1) shrinking the reachable-force box.
    pub epsilon: f64,
    pub boundary: Boundary,
    /// Prescribe the period instead of optimizing it (feasibility probes).
    pub fixed_period: Option<f64>,
    /// First-order optimality tolerance (scaled problem).
    pub tol_opt: f64,
    /// Constraint tolerance (scaled problem; dynamics rows are in units of
    /// the peak radial force).
    pub tol_con: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            nodes: 160,
            gamma: 1e-4,
            epsilon: 0.05,
            boundary: Boundary::Periodic,
            fixed_period: None,
            tol_opt: 1e-6,
            tol_con: 1e-9,
            max_outer: 60,
            max_inner: 250,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), OcpError> {
        if self.nodes < 16 {
            return Err(OcpError::BadConfig(format!("need ≥ 16 nodes, got {}", self.nodes)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(OcpError::BadConfig(format!("ε must be in (0,1), got {}", self.epsilon)));
        }
        if !(self.gamma >= 0.0) {
            return Err(OcpError::BadConfig(format!("γ must be ≥ 0, got {}", self.gamma)));
        }
        if let Some(t) = self.fixed_period {
            if !(t > 0.0) {
                return Err(OcpError::BadConfig(format!("fixed period must be > 0, got {t}")));
            }
        }
        if let Boundary::RestToRest { theta_dot_end } = self.boundary {
            if theta_dot_end < 0.0 {
                return Err(OcpError::BadConfig("θ̇_end must be ≥ 0".into()));
            }
        }
        Ok(())
    }
}

/// One point of the timing state z = (θ, θ̇).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingState {
    pub theta: f64,
    /// [1/s]
    pub theta_dot: f64,
}

/// Solver diagnostics attached to a solution.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Largest scaled constraint residual at exit.
    pub constraint_violation: f64,
    /// Largest dynamics residual in force units [N].
    pub dynamics_residual_n: f64,
    pub first_order_optimality: f64,
    pub penalty_final: f64,
    pub converged: bool,
}

/// The timing law: per-node times, states, virtual inputs and trap
/// auxiliaries, plus the total time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingSolution {
    /// Collocation intervals.
    pub n: usize,
    pub periodic: bool,
    /// Total traversal time T [s].
    pub t: f64,
    /// Node times t_k = k·T/N [s], k = 0..=N.
    pub times: Vec<f64>,
    /// Node states (θ, θ̇).
    pub states: Vec<TimingState>,
    /// Virtual input v = θ̈ at nodes [1/s²].
    pub v: Vec<f64>,
    /// Auxiliary trap unknowns per node.
    pub zeta: Vec<Zeta>,
    /// Objective value (dimensionless scaled form actually minimized).
    pub objective: f64,
    /// Regularization weight used (scaled).
    pub gamma: f64,
    /// Back-off used.
    pub epsilon: f64,
    pub diagnostics: SolverDiagnostics,
}

impl TimingSolution {
    fn from_solved(tr: &Transcription, g: &Gathered, obj: f64, diag: SolverDiagnostics) -> Self {
        let n = tr.n;
        let t = g.t;
        Self {
            n,
            periodic: tr.periodic,
            t,
            times: (0..=n).map(|k| t * k as f64 / n as f64).collect(),
            states: (0..=n)
                .map(|k| TimingState { theta: g.theta[k], theta_dot: g.w[k] / t })
                .collect(),
            v: (0..=n).map(|k| g.a[k] / (t * t)).collect(),
            zeta: g.zeta.clone(),
            objective: obj,
            gamma: tr.gamma,
            epsilon: tr.epsilon,
            diagnostics: diag,
        }
    }

    /// Largest per-node dynamics residual ‖m q̈ − F(ζ)‖∞ [N].
    pub fn max_dynamics_residual(&self, path: &ReferencePath, params: &ForceParams) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..=self.n {
            let s = self.states[k];
            let accel = required_accel(path, s.theta, s.theta_dot, self.v[k]);
            let f = force_from_zeta(params, &self.zeta[k]);
            let r = params.mass * accel - f;
            worst = worst.max(r.x.abs()).max(r.y.abs()).max(r.z.abs());
        }
        worst
    }

    /// Largest violation of ζ2²+ζ3²=1, ζ5²+ζ6²=1 and the radial-consistency
    /// tie ζ4 = cos(κ asin ζ1) over all nodes.
    pub fn zeta_identity_violation(&self, params: &ForceParams) -> f64 {
        let kappa = params.kappa();
        let mut worst = 0.0f64;
        for z in &self.zeta {
            worst = worst.max((z[1] * z[1] + z[2] * z[2] - 1.0).abs());
            worst = worst.max((z[4] * z[4] + z[5] * z[5] - 1.0).abs());
            worst = worst.max((z[3] - (kappa * z[0].asin()).cos()).abs());
        }
        worst
    }

    /// Largest excess of any ζ component beyond its box (ζ1 ∈ [0, 1−ε],
    /// |ζ3| ≤ 1−ε, ζ2, ζ4 ∈ [0, 1], |ζ5|, |ζ6| ≤ 1).
    pub fn zeta_box_violation(&self) -> f64 {
        let e = 1.0 - self.epsilon;
        let mut worst = 0.0f64;
        for z in &self.zeta {
            worst = worst.max(-z[0]).max(z[0] - e);
            worst = worst.max(-z[1]).max(z[1] - 1.0);
            worst = worst.max(z[2].abs() - e);
            worst = worst.max(-z[3]).max(z[3] - 1.0);
            worst = worst.max(z[4].abs() - 1.0);
            worst = worst.max(z[5].abs() - 1.0);
        }
        worst
    }

    /// Boundary-condition violation: seam mismatch of θ̇ for periodic mode,
    /// |θ̇(0)| + |θ̇(T) − θ̇_end| for rest mode (θ ends are exact by
    /// construction).
    pub fn boundary_violation(&self, boundary: &Boundary) -> f64 {
        match boundary {
            Boundary::Periodic => {
                (self.states[0].theta_dot - self.states[self.n].theta_dot).abs()
            }
            Boundary::RestToRest { theta_dot_end } => {
                self.states[0].theta_dot.abs()
                    + (self.states[self.n].theta_dot - theta_dot_end).abs()
            }
        }
    }

    /// Relative standard deviation of θ̇ over the nodes (σ/mean).
    pub fn theta_dot_rel_std(&self) -> f64 {
        let m = self.n; // periodic: node N duplicates node 0
        let vals: Vec<f64> = self.states[..m].iter().map(|s| s.theta_dot).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        var.sqrt() / mean.abs().max(1e-300)
    }

    /// Physical regularizer ∫₀ᵀ v(t)² dt [1/s³].
    pub fn v_sq_integral(&self) -> f64 {
        let h = self.t / self.n as f64;
        let mut s = 0.0;
        for k in 0..self.n {
            s += 0.5 * h * (self.v[k] * self.v[k] + self.v[k + 1] * self.v[k + 1]);
        }
        s
    }

    /// Required particle acceleration at node k [m/s²].
    pub fn accel_at(&self, path: &ReferencePath, k: usize) -> Vector3<f64> {
        let s = self.states[k];
        required_accel(path, s.theta, s.theta_dot, self.v[k])
    }
}

/// Particle acceleration required to follow the path with the given timing:
/// q̈ = ∂²q/∂θ² · θ̇² + ∂q/∂θ · v [m/s²].
pub fn required_accel(path: &ReferencePath, theta: f64, theta_dot: f64, v: f64) -> Vector3<f64> {
    let d = path.derivs4_ext(theta);
    d[2] * (theta_dot * theta_dot) + d[1] * v
}

/// Trap force encoded by the auxiliaries:
/// F̂(ζ) = (A_r ζ1ζ2ζ6, A_r ζ1ζ2ζ5, A_z ζ3ζ4) [N].
pub fn force_from_zeta(params: &ForceParams, z: &Zeta) -> Vector3<f64> {
    Vector3::new(
        params.a_r * z[0] * z[1] * z[5],
        params.a_r * z[0] * z[1] * z[4],
        params.a_z * z[2] * z[3],
    )
}

/// Conservative uniform-speed period: the slowest traversal at which the
/// equidistant-parameter baseline needs only half of each force capability.
pub(crate) fn conservative_period(path: &ReferencePath, params: &ForceParams) -> f64 {
    let (t0, t1) = path.theta_range();
    let l = t1 - t0;
    let m = 1024;
    let (mut peak_h, mut peak_z) = (0.0f64, 0.0f64);
    for k in 0..=m {
        let th = t0 + l * k as f64 / m as f64;
        let d2 = path.derivs4_ext(th)[2];
        peak_h = peak_h.max((d2.x * d2.x + d2.y * d2.y).sqrt() * l * l);
        peak_z = peak_z.max(d2.z.abs() * l * l);
    }
    let cap_h = 0.5 * params.a_r / params.mass;
    let cap_z = 0.5 * params.a_z / params.mass;
    (peak_h / cap_h).sqrt().max((peak_z / cap_z).sqrt()).max(1e-3)
}

/// A discretized instance ready to solve.
pub struct Nlp<'a> {
    pub(crate) tr: Transcription<'a>,
    t_guess: f64,
    settings: AlSettings,
    boundary: Boundary,
}

/// Discretize the timing problem for a path and force model.
pub fn build_nlp<'a>(
    path: &'a ReferencePath,
    params: &ForceParams,
    cfg: &OcpConfig,
) -> Result<Nlp<'a>, OcpError> {
    let t_ref = conservative_period(path, params);
    let tr = Transcription::new(path, params, cfg, t_ref)?;
    Ok(Nlp {
        tr,
        t_guess: cfg.fixed_period.unwrap_or(t_ref),
        settings: AlSettings {
            tol_opt: cfg.tol_opt,
            tol_con: cfg.tol_con,
            max_outer: cfg.max_outer,
            max_inner: cfg.max_inner,
        },
        boundary: cfg.boundary,
    })
}

impl Nlp<'_> {
    pub fn n_vars(&self) -> usize {
        self.tr.n_vars
    }

    pub fn n_constraints(&self) -> usize {
        self.tr.n_con
    }

    /// Boundary conditions this instance was built with.
    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    /// Feasible-by-construction initial guess: equidistant-parameter timing at
    /// a conservative period (periodic) or a quadratic speed ramp (rest mode),
    /// with ζ from pointwise inversion of the required forces.
    pub fn initial_guess(&self) -> Vec<f64> {
        let tr = &self.tr;
        let n = tr.n;
        let l = tr.theta_len;
        let mut g = Gathered {
            theta: Vec::with_capacity(n + 1),
            w: Vec::with_capacity(n + 1),
            a: Vec::with_capacity(n + 1),
            zeta: Vec::with_capacity(n + 1),
            t: self.t_guess,
        };
        if tr.periodic {
            for k in 0..=n {
                g.theta.push(tr.theta0 + l * k as f64 / n as f64);
                g.w.push(l);
                g.a.push(0.0);
            }
        } else {
            let tau: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let trapz = |f: &dyn Fn(f64) -> f64| -> f64 {
                let mut s = 0.0;
                for k in 0..n {
                    s += (f(tau[k]) + f(tau[k + 1])) / (2.0 * n as f64);
                }
                s
            };
            let (alpha, beta_lin) = match tr.t_fixed {
                None => {
                    // w = c τ², scaled so the defects integrate θ to exactly L
                    let c = l / trapz(&|t| t * t);
                    if tr.theta_dot_end > 1e-9 {
                        g.t = c / tr.theta_dot_end;
                    }
                    (c, 0.0)
                }
                Some(t) => {
                    // w = α τ² + β τ with w(1) pinned by the end condition
                    let wn = t * tr.theta_dot_end;
                    (3.0 * wn - 6.0 * l, 6.0 * l - 2.0 * wn)
                }
            };
            for k in 0..=n {
                g.w.push((alpha * tau[k] * tau[k] + beta_lin * tau[k]).max(0.0));
                g.a.push(2.0 * alpha * tau[k] + beta_lin);
            }
            g.theta.push(tr.theta0);
            for k in 0..n {
                let next = g.theta[k] + (g.w[k] + g.w[k + 1]) / (2.0 * n as f64);
                g.theta.push(next);
            }
        }

        // auxiliary unknowns by chained force inversion, clamped to the box
        let params = tr.params;
        let rho_max = (1.0 - tr.epsilon).asin() - 1e-9;
        let mut hint: Option<TrapAngles> = None;
        for k in 0..=n {
            let d = tr.path.derivs4_ext(g.theta[k]);
            let f_req =
                (d[2] * (g.w[k] * g.w[k]) + d[1] * g.a[k]) * (params.mass / (g.t * g.t));
            let mut ang = invert_clamped(&params, &f_req, hint.as_ref());
            ang.rho = ang.rho.clamp(0.0, rho_max);
            ang.sigma = ang.sigma.clamp(-rho_max, rho_max);
            hint = Some(ang);
            g.zeta.push(params.zeta_from_angles(&ang));
        }
        tr.scatter(&g)
    }
}

/// Invert a required force, scaling it toward zero if it exceeds the
/// reachable set (the solver then repairs the residual or proves
/// infeasibility).
fn invert_clamped(params: &ForceParams, f: &Vector3<f64>, hint: Option<&TrapAngles>) -> TrapAngles {
    if let Ok(a) = params.angles_from_force(f, hint) {
        return a;
    }
    let phi = if f.x.hypot(f.y) > 1e-300 {
        f.y.atan2(f.x)
    } else {
        hint.map_or(0.0, |h| h.phi)
    };
    let mut best = TrapAngles { rho: 0.0, sigma: 0.0, phi };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match params.angles_from_force(&(f * mid), hint) {
            Ok(a) => {
                best = a;
                lo = mid;
            }
            Err(_) => hi = mid,
        }
    }
    best
}

/// Solve a built instance. `guess` overrides the default initial point.
pub fn solve_timing(nlp: &Nlp, guess: Option<Vec<f64>>) -> Result<TimingSolution, OcpError> {
    let x0 = match guess {
        Some(x) => {
            if x.len() != nlp.tr.n_vars {
                return Err(OcpError::BadConfig(format!(
                    "initial guess has {} variables, expected {}",
                    x.len(),
                    nlp.tr.n_vars
                )));
            }
            x
        }
        None => nlp.initial_guess(),
    };
    let out = solve_al(&nlp.tr, x0, &nlp.settings);
    let g = nlp.tr.gather(&out.x);
    if !out.converged {
        let node = nlp.tr.row_node(out.worst_row);
        if out.con_inf > 1e-6 {
            return Err(OcpError::Infeasible { violation: out.con_inf, node });
        }
        return Err(OcpError::MaxIterations {
            violation: out.con_inf,
            optimality: out.opt_inf,
        });
    }
    let obj = nlp.tr.objective(&g, None);
    let mut sol = TimingSolution::from_solved(
        &nlp.tr,
        &g,
        obj,
        SolverDiagnostics {
            outer_iterations: out.outer,
            inner_iterations: out.inner_total,
            constraint_violation: out.con_inf,
            dynamics_residual_n: 0.0,
            first_order_optimality: out.opt_inf,
            penalty_final: out.mu,
            converged: true,
        },
    );
    sol.diagnostics.dynamics_residual_n =
        sol.max_dynamics_residual(nlp.tr.path, &nlp.tr.params);
    Ok(sol)
}

/// Build and solve in one call.
pub fn solve_path_timing(
    path: &ReferencePath,
    params: &ForceParams,
    cfg: &OcpConfig,
) -> Result<TimingSolution, OcpError> {
    let nlp = build_nlp(path, params, cfg)?;
    solve_timing(&nlp, None)
}

/// Result of a feasibility search over the period.
#[derive(Clone, Debug)]
pub struct TimeSearch {
    /// Smallest feasible period found [s], with its solution.
    pub period: Option<f64>,
    pub solution: Option<TimingSolution>,
    /// Final bracket (largest infeasible, smallest feasible) [s].
    pub bracket: (f64, f64),
}

/// Smallest period at which the path remains traversable, by bisection over
/// prescribed-period solves down to `resolution` seconds.
pub fn min_time_for_size(
    path: &ReferencePath,
    params: &ForceParams,
    cfg: &OcpConfig,
    resolution: f64,
) -> Result<TimeSearch, OcpError> {
    if !(resolution > 0.0) {
        return Err(OcpError::BadConfig("resolution must be > 0".into()));
    }
    let probe = |t: f64| -> Result<Option<TimingSolution>, OcpError> {
        let mut c = *cfg;
        c.fixed_period = Some(t);
        match solve_path_timing(path, params, &c) {
            Ok(s) => Ok(Some(s)),
            Err(OcpError::Infeasible { .. }) | Err(OcpError::MaxIterations { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    // establish a feasible upper end starting from the conservative period
    let mut hi = conservative_period(path, params);
    let mut hi_sol = None;
    for _ in 0..6 {
        if let Some(s) = probe(hi)? {
            hi_sol = Some(s);
            break;
        }
        hi *= 2.0;
    }
    if hi_sol.is_none() {
        return Ok(TimeSearch { period: None, solution: None, bracket: (hi / 2.0, hi) });
    }

    // walk down until infeasible to bracket the boundary
    let mut lo = hi;
    loop {
        let cand = lo / 1.6;
        if cand < resolution {
            lo = cand.max(resolution * 0.5);
            break;
        }
        match probe(cand)? {
            Some(s) => {
                hi = cand;
                hi_sol = Some(s);
                lo = cand;
            }
            None => {
                lo = cand;
                break;
            }
        }
    }
    if lo == hi {
        // never found an infeasible period above the resolution floor
        return Ok(TimeSearch { period: Some(hi), solution: hi_sol, bracket: (lo, hi) });
    }

    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(s) => {
                hi = mid;
                hi_sol = Some(s);
            }
            None => lo = mid,
        }
    }
    Ok(TimeSearch { period: Some(hi), solution: hi_sol, bracket: (lo, hi) })
}

/// Result of a feasibility search over a size family.
#[derive(Clone, Debug)]
pub struct SizeSearch {
    /// Largest feasible size found [m], with its solution.
    pub size: Option<f64>,
    pub solution: Option<TimingSolution>,
    /// Final bracket (largest feasible, smallest infeasible) [m].
    pub bracket: (f64, f64),
}

/// Largest member of a size-parametrized path family traversable within the
/// prescribed period, by bisection down to `resolution` meters.
pub fn max_size_for_time<F>(
    family: F,
    period: f64,
    bracket: (f64, f64),
    params: &ForceParams,
    cfg: &OcpConfig,
    resolution: f64,
) -> Result<SizeSearch, OcpError>
where
    F: Fn(f64) -> Result<ReferencePath, PathError>,
{
    if !(period > 0.0 && resolution > 0.0 && bracket.0 > 0.0 && bracket.1 > bracket.0) {
        return Err(OcpError::BadConfig("bad period/bracket/resolution".into()));
    }
    let probe = |s: f64| -> Result<Option<TimingSolution>, OcpError> {
        let path = family(s)?;
        let mut c = *cfg;
        c.fixed_period = Some(period);
        match solve_path_timing(&path, params, &c) {
            Ok(sol) => Ok(Some(sol)),
            Err(OcpError::Infeasible { .. }) | Err(OcpError::MaxIterations { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let (mut lo, mut hi) = bracket;
    let mut lo_sol = match probe(lo)? {
        Some(s) => Some(s),
        None => return Ok(SizeSearch { size: None, solution: None, bracket }),
    };
    if let Some(s) = probe(hi)? {
        // entire bracket feasible
        return Ok(SizeSearch { size: Some(hi), solution: Some(s), bracket: (hi, hi) });
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(s) => {
                lo = mid;
                lo_sol = Some(s);
            }
            None => hi = mid,
        }
    }
    Ok(SizeSearch { size: Some(lo), solution: lo_sol, bracket: (lo, hi) })
}
