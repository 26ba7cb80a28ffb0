//! Direct transcription of the timing problem.
//!
//! Decision variables per collocation node k are the path parameter θ_k, its
//! normalized-time derivatives w_k = T θ̇(t_k) and a_k = T² θ̈(t_k), and the
//! six auxiliary trap unknowns ζ_k; the total time T is a single extra
//! variable (absent when the period is prescribed). On the uniform normalized
//! grid τ = t/T the double-integrator defects are *linear*:
//!
//! ```text
//! θ_{k+1} − θ_k − (w_k + w_{k+1}) / 2N = 0
//! w_{k+1} − w_k − (a_k + a_{k+1}) / 2N = 0
//! ```
//!
//! and all nonlinearity concentrates in the per-node dynamics constraint
//! (scaled by the peak radial force A_r so residuals are dimensionless)
//!
//! ```text
//! (m / (A_r T²)) · (q''(θ) w² + q'(θ) a) − F̂(ζ) = 0,
//! F̂(ζ) = (ζ1ζ2ζ6, ζ1ζ2ζ5, (A_z/A_r) ζ3ζ4)
//! ```
//!
//! plus the trigonometric identities tying ζ together: ζ2²+ζ3²=1, ζ5²+ζ6²=1
//! and the radial consistency ζ4 = cos(κ·asin ζ1) with κ = |V_zr|/|V_xr|.
//! In periodic mode node N is identified with node 0 (θ shifted by the
//! parameter span), which makes θ̇, θ̈, ζ and hence the recovered traps close
//! exactly around the seam; the seam node and T form a dense border to the
//! otherwise banded Newton systems.

use super::linalg::BorderedSystem;
use super::{Boundary, OcpConfig, OcpError};
use crate::forcemodel::ForceParams;
use crate::paths::ReferencePath;

/// Half-bandwidth of the banded block: variables of adjacent nodes are at
/// most 10 slots apart in the interleaved layout.
pub(crate) const HALF_BAND: usize = 10;

const J_THETA: usize = 0;
const J_W: usize = 1;
const J_A: usize = 2;
const J_Z: usize = 3; // ζ1..ζ6 occupy slots 3..9

#[derive(Clone, Copy, Debug)]
pub(crate) enum Slot {
    Var(usize),
    Fixed(f64),
}

/// Node values gathered from the packed variable vector: full arrays over
/// nodes 0..=N (periodic mode mirrors node 0 into node N).
pub(crate) struct Gathered {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub zeta: Vec<[f64; 6]>,
    pub t: f64,
}

/// One constraint row: residual plus sparse gradient (variable entries only).
pub(crate) struct Row {
    pub val: f64,
    pub grad: Vec<(usize, f64)>,
}

pub(crate) struct Transcription<'a> {
    pub path: &'a ReferencePath,
    pub params: ForceParams,
    pub n: usize,
    pub periodic: bool,
    pub epsilon: f64,
    /// Dimensionless regularization weight (γ of the objective after scaling).
    pub gamma: f64,
    pub t_fixed: Option<f64>,
    /// Rest mode: target θ̇(T) [1/s].
    pub theta_dot_end: f64,
    pub theta0: f64,
    pub theta_len: f64,
    /// Reference period used to scale the regularizer (fixed per instance).
    pub t_ref: f64,
    pub n_vars: usize,
    pub n_banded: usize,
    pub n_border: usize,
    pub n_con: usize,
    dyn_base: usize,
    trig_base: usize,
    link_row: Option<usize>,
    t_index: Option<usize>,
    /// m/A_r [kg/N]; β = beta0/T².
    beta0: f64,
    /// A_z/A_r.
    r_az: f64,
    /// Regularizer scale T_ref⁴ / L².
    c_reg: f64,
}

impl<'a> Transcription<'a> {
    pub fn new(
        path: &'a ReferencePath,
        params: &ForceParams,
        cfg: &OcpConfig,
        t_ref: f64,
    ) -> Result<Self, OcpError> {
        cfg.validate()?;
        params.validate().map_err(OcpError::Model)?;
        let n = cfg.nodes;
        let periodic = matches!(cfg.boundary, Boundary::Periodic);
        if periodic && !path.is_periodic() {
            return Err(OcpError::BadConfig(
                "periodic boundary mode requires a periodic path".into(),
            ));
        }
        let (theta0, theta1) = path.theta_range();
        let theta_len = theta1 - theta0;
        let t_free = cfg.fixed_period.is_none();
        let theta_dot_end = match cfg.boundary {
            Boundary::Periodic => 0.0,
            Boundary::RestToRest { theta_dot_end } => theta_dot_end,
        };

        let (n_banded, n_border) = if periodic {
            (9 * (n - 1), 8 + usize::from(t_free))
        } else {
            // node 0: a + ζ (7); interior: 9 each; node N: w? + a + ζ
            let node_n = if t_free { 8 } else { 7 };
            (7 + 9 * (n - 1) + node_n, usize::from(t_free))
        };
        let n_vars = n_banded + n_border;
        let (dyn_nodes, link) = if periodic { (n, None) } else { (n + 1, t_free.then_some(0)) };
        let dyn_base = 2 * n;
        let trig_base = dyn_base + 3 * dyn_nodes;
        let mut n_con = trig_base + 3 * dyn_nodes;
        let link_row = link.map(|_| {
            let r = n_con;
            n_con += 1;
            r
        });

        Ok(Self {
            path,
            params: *params,
            n,
            periodic,
            epsilon: cfg.epsilon,
            gamma: cfg.gamma,
            t_fixed: cfg.fixed_period,
            theta_dot_end,
            theta0,
            theta_len,
            t_ref,
            n_vars,
            n_banded,
            n_border,
            n_con,
            dyn_base,
            trig_base,
            link_row,
            t_index: t_free.then_some(n_vars - 1),
            beta0: params.mass / params.a_r,
            r_az: params.a_z / params.a_r,
            c_reg: t_ref.powi(4) / (theta_len * theta_len),
        })
    }

    /// Number of nodes carrying dynamics/trig constraints.
    pub fn dyn_nodes(&self) -> usize {
        if self.periodic { self.n } else { self.n + 1 }
    }

    /// Variable slots of node k in the order [θ, w, a, ζ1..ζ6].
    pub fn slots(&self, k: usize) -> [Slot; 9] {
        use Slot::*;
        let mut s = [Fixed(0.0); 9];
        if self.periodic {
            let wrap = k == self.n;
            let k0 = if wrap { 0 } else { k };
            if k0 == 0 {
                let b = self.n_banded;
                s[J_THETA] = Fixed(self.theta0 + if wrap { self.theta_len } else { 0.0 });
                s[J_W] = Var(b);
                s[J_A] = Var(b + 1);
                for j in 0..6 {
                    s[J_Z + j] = Var(b + 2 + j);
                }
            } else {
                let b = 9 * (k0 - 1);
                s[J_THETA] = Var(b);
                s[J_W] = Var(b + 1);
                s[J_A] = Var(b + 2);
                for j in 0..6 {
                    s[J_Z + j] = Var(b + 3 + j);
                }
            }
        } else if k == 0 {
            s[J_THETA] = Fixed(self.theta0);
            s[J_W] = Fixed(0.0);
            s[J_A] = Var(0);
            for j in 0..6 {
                s[J_Z + j] = Var(1 + j);
            }
        } else if k < self.n {
            let b = 7 + 9 * (k - 1);
            s[J_THETA] = Var(b);
            s[J_W] = Var(b + 1);
            s[J_A] = Var(b + 2);
            for j in 0..6 {
                s[J_Z + j] = Var(b + 3 + j);
            }
        } else {
            let b = 7 + 9 * (self.n - 1);
            s[J_THETA] = Fixed(self.theta0 + self.theta_len);
            if let Some(t) = self.t_fixed {
                s[J_W] = Fixed(t * self.theta_dot_end);
                s[J_A] = Var(b);
                for j in 0..6 {
                    s[J_Z + j] = Var(b + 1 + j);
                }
            } else {
                s[J_W] = Var(b);
                s[J_A] = Var(b + 1);
                for j in 0..6 {
                    s[J_Z + j] = Var(b + 2 + j);
                }
            }
        }
        s
    }

    pub fn t_slot(&self) -> Slot {
        match self.t_fixed {
            Some(t) => Slot::Fixed(t),
            None => Slot::Var(self.t_index.unwrap()),
        }
    }

    pub fn gather(&self, x: &[f64]) -> Gathered {
        let read = |s: Slot| match s {
            Slot::Var(i) => x[i],
            Slot::Fixed(v) => v,
        };
        let n = self.n;
        let mut g = Gathered {
            theta: Vec::with_capacity(n + 1),
            w: Vec::with_capacity(n + 1),
            a: Vec::with_capacity(n + 1),
            zeta: Vec::with_capacity(n + 1),
            t: read(self.t_slot()),
        };
        for k in 0..=n {
            let s = self.slots(k);
            g.theta.push(read(s[J_THETA]));
            g.w.push(read(s[J_W]));
            g.a.push(read(s[J_A]));
            let mut z = [0.0; 6];
            for j in 0..6 {
                z[j] = read(s[J_Z + j]);
            }
            g.zeta.push(z);
        }
        g
    }

    /// Scatter full node arrays into a packed variable vector (initial guess).
    pub fn scatter(&self, g: &Gathered) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        let mut write = |s: Slot, v: f64| {
            if let Slot::Var(i) = s {
                x[i] = v;
            }
        };
        for k in 0..=self.n {
            let s = self.slots(k);
            write(s[J_THETA], g.theta[k]);
            write(s[J_W], g.w[k]);
            write(s[J_A], g.a[k]);
            for j in 0..6 {
                write(s[J_Z + j], g.zeta[k][j]);
            }
        }
        write(self.t_slot(), g.t);
        x
    }

    /// Variable bounds (projection box).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let inf = f64::INFINITY;
        let mut lo = vec![-inf; self.n_vars];
        let mut hi = vec![inf; self.n_vars];
        let e = 1.0 - self.epsilon;
        for k in 0..=self.n {
            let s = self.slots(k);
            if let Slot::Var(i) = s[J_W] {
                lo[i] = 0.0;
            }
            let zb: [(f64, f64); 6] = [(0.0, e), (0.0, 1.0), (-e, e), (0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)];
            for j in 0..6 {
                if let Slot::Var(i) = s[J_Z + j] {
                    lo[i] = zb[j].0;
                    hi[i] = zb[j].1;
                }
            }
        }
        if let Slot::Var(i) = self.t_slot() {
            lo[i] = (0.02 * self.t_ref).max(1e-4);
            hi[i] = (50.0 * self.t_ref).min(30.0);
        }
        (lo, hi)
    }

    /// Regularizer trapezoid weight of node k.
    fn reg_weight(&self, k: usize) -> f64 {
        let base = 1.0 / self.n as f64;
        if self.periodic {
            if k == self.n { 0.0 } else { base }
        } else if k == 0 || k == self.n {
            0.5 * base
        } else {
            base
        }
    }

    /// Objective value and (optionally) its gradient added into `grad`.
    pub fn objective(&self, g: &Gathered, mut grad: Option<&mut [f64]>) -> f64 {
        let t = g.t;
        let s: f64 = (0..=self.n).map(|k| self.reg_weight(k) * g.a[k] * g.a[k]).sum();
        let cg = self.gamma * self.c_reg;
        let f = t + cg * s / t.powi(3);
        if let Some(grad) = grad.as_deref_mut() {
            for k in 0..=self.n {
                if let Slot::Var(i) = self.slots(k)[J_A] {
                    grad[i] += 2.0 * cg * self.reg_weight(k) * g.a[k] / t.powi(3);
                }
            }
            if let Slot::Var(i) = self.t_slot() {
                grad[i] += 1.0 - 3.0 * cg * s / t.powi(4);
            }
        }
        f
    }

    /// Objective Hessian terms added into `sys`.
    fn objective_hessian(&self, g: &Gathered, sys: &mut BorderedSystem) {
        let t = g.t;
        let cg = self.gamma * self.c_reg;
        let mut s = 0.0;
        for k in 0..=self.n {
            let wt = self.reg_weight(k);
            s += wt * g.a[k] * g.a[k];
            if let Slot::Var(i) = self.slots(k)[J_A] {
                sys.add(i, i, 2.0 * cg * wt / t.powi(3));
                if let Slot::Var(ti) = self.t_slot() {
                    sys.add(i, ti, -6.0 * cg * wt * g.a[k] / t.powi(4));
                }
            }
        }
        if let Slot::Var(ti) = self.t_slot() {
            sys.add(ti, ti, 12.0 * cg * s / t.powi(5));
        }
    }

    /// All constraint residuals (cheap path used by line searches).
    pub fn constraint_values(&self, g: &Gathered) -> Vec<f64> {
        let mut c = vec![0.0; self.n_con];
        let h2 = 1.0 / (2.0 * self.n as f64);
        for k in 0..self.n {
            c[k] = g.theta[k + 1] - g.theta[k] - h2 * (g.w[k] + g.w[k + 1]);
            c[self.n + k] = g.w[k + 1] - g.w[k] - h2 * (g.a[k] + g.a[k + 1]);
        }
        let beta = self.beta0 / (g.t * g.t);
        let kappa = self.params.kappa();
        for k in 0..self.dyn_nodes() {
            let d = self.path.derivs4_ext(g.theta[k]);
            let z = &g.zeta[k];
            let fz = [z[0] * z[1] * z[5], z[0] * z[1] * z[4], self.r_az * z[2] * z[3]];
            for i in 0..3 {
                c[self.dyn_base + 3 * k + i] =
                    beta * (d[2][i] * g.w[k] * g.w[k] + d[1][i] * g.a[k]) - fz[i];
            }
            let tb = self.trig_base + 3 * k;
            c[tb] = z[1] * z[1] + z[2] * z[2] - 1.0;
            c[tb + 1] = z[4] * z[4] + z[5] * z[5] - 1.0;
            c[tb + 2] = z[3] - (kappa * z[0].asin()).cos();
        }
        if let Some(r) = self.link_row {
            c[r] = g.w[self.n] - g.t * self.theta_dot_end;
        }
        c
    }

    /// Residuals plus sparse gradients for every constraint row.
    pub fn rows(&self, g: &Gathered) -> Vec<Row> {
        let mut rows: Vec<Row> =
            (0..self.n_con).map(|_| Row { val: 0.0, grad: Vec::new() }).collect();
        let h2 = 1.0 / (2.0 * self.n as f64);
        fn push(row: &mut Row, s: Slot, v: f64) {
            if let Slot::Var(i) = s {
                row.grad.push((i, v));
            }
        }

        for k in 0..self.n {
            let sk = self.slots(k);
            let sk1 = self.slots(k + 1);
            {
                let r = &mut rows[k];
                r.val = g.theta[k + 1] - g.theta[k] - h2 * (g.w[k] + g.w[k + 1]);
                push(r, sk1[J_THETA], 1.0);
                push(r, sk[J_THETA], -1.0);
                push(r, sk[J_W], -h2);
                push(r, sk1[J_W], -h2);
            }
            {
                let r = &mut rows[self.n + k];
                r.val = g.w[k + 1] - g.w[k] - h2 * (g.a[k] + g.a[k + 1]);
                push(r, sk1[J_W], 1.0);
                push(r, sk[J_W], -1.0);
                push(r, sk[J_A], -h2);
                push(r, sk1[J_A], -h2);
            }
        }

        let t = g.t;
        let beta = self.beta0 / (t * t);
        let kappa = self.params.kappa();
        let ts = self.t_slot();
        for k in 0..self.dyn_nodes() {
            let s = self.slots(k);
            let d = self.path.derivs4_ext(g.theta[k]);
            let (w, a) = (g.w[k], g.a[k]);
            let z = &g.zeta[k];
            for i in 0..3 {
                let r = &mut rows[self.dyn_base + 3 * k + i];
                let geom = d[2][i] * w * w + d[1][i] * a;
                let fz = match i {
                    0 => z[0] * z[1] * z[5],
                    1 => z[0] * z[1] * z[4],
                    _ => self.r_az * z[2] * z[3],
                };
                r.val = beta * geom - fz;
                push(r, s[J_THETA], beta * (d[3][i] * w * w + d[2][i] * a));
                push(r, s[J_W], 2.0 * beta * d[2][i] * w);
                push(r, s[J_A], beta * d[1][i]);
                match i {
                    0 => {
                        push(r, s[J_Z], -z[1] * z[5]);
                        push(r, s[J_Z + 1], -z[0] * z[5]);
                        push(r, s[J_Z + 5], -z[0] * z[1]);
                    }
                    1 => {
                        push(r, s[J_Z], -z[1] * z[4]);
                        push(r, s[J_Z + 1], -z[0] * z[4]);
                        push(r, s[J_Z + 4], -z[0] * z[1]);
                    }
                    _ => {
                        push(r, s[J_Z + 2], -self.r_az * z[3]);
                        push(r, s[J_Z + 3], -self.r_az * z[2]);
                    }
                }
                push(r, ts, -2.0 * beta * geom / t);
            }
            let tb = self.trig_base + 3 * k;
            {
                let r = &mut rows[tb];
                r.val = z[1] * z[1] + z[2] * z[2] - 1.0;
                push(r, s[J_Z + 1], 2.0 * z[1]);
                push(r, s[J_Z + 2], 2.0 * z[2]);
            }
            {
                let r = &mut rows[tb + 1];
                r.val = z[4] * z[4] + z[5] * z[5] - 1.0;
                push(r, s[J_Z + 4], 2.0 * z[4]);
                push(r, s[J_Z + 5], 2.0 * z[5]);
            }
            {
                let r = &mut rows[tb + 2];
                let asin1 = z[0].asin();
                r.val = z[3] - (kappa * asin1).cos();
                push(r, s[J_Z + 3], 1.0);
                let root = (1.0 - z[0] * z[0]).sqrt().max(1e-12);
                push(r, s[J_Z], kappa * (kappa * asin1).sin() / root);
            }
        }

        if let Some(rl) = self.link_row {
            let s = self.slots(self.n);
            let r = &mut rows[rl];
            r.val = g.w[self.n] - t * self.theta_dot_end;
            push(r, s[J_W], 1.0);
            push(r, ts, -self.theta_dot_end);
        }
        rows
    }

    /// Assemble the augmented-Lagrangian Hessian
    /// ∇²f + Σ (λ_r + μ c_r) ∇²c_r + μ Σ ∇c_r ∇c_rᵀ into `sys`.
    /// Assemble the augmented-Lagrangian Hessian. With `convexify` the
    /// curvature of the trigonometric identity rows is clamped to be
    /// nonnegative (ŷ = max(y, 0)): a negative multiplier there would inject
    /// negative curvature along the trap-bearing-angle direction, which is
    /// flat in every other term and would force global damping on each Newton
    /// step. Clamping leaves gradients (hence stationary points) untouched.
    pub fn al_hessian(
        &self,
        g: &Gathered,
        rows: &[Row],
        lambda: &[f64],
        mu: f64,
        convexify: bool,
        sys: &mut BorderedSystem,
    ) {
        sys.reset();
        self.objective_hessian(g, sys);

        // Gauss-Newton part μ ∇c ∇cᵀ
        for row in rows {
            for (pi, (i, u)) in row.grad.iter().enumerate() {
                for (j, v) in row.grad.iter().skip(pi) {
                    if i >= j {
                        sys.add(*i, *j, mu * u * v);
                    } else {
                        sys.add(*j, *i, mu * u * v);
                    }
                }
            }
        }

        // exact constraint curvature, weighted by y = λ + μ c
        let t = g.t;
        let beta = self.beta0 / (t * t);
        let kappa = self.params.kappa();
        let ts = self.t_slot();
        let add = |sys: &mut BorderedSystem, a: Slot, b: Slot, v: f64| {
            if let (Slot::Var(i), Slot::Var(j)) = (a, b) {
                sys.add(i.max(j), i.min(j), v);
            }
        };
        for k in 0..self.dyn_nodes() {
            let s = self.slots(k);
            let d = self.path.derivs4_ext(g.theta[k]);
            let (w, a) = (g.w[k], g.a[k]);
            let z = &g.zeta[k];
            for i in 0..3 {
                let r = self.dyn_base + 3 * k + i;
                let y = lambda[r] + mu * rows[r].val;
                if y == 0.0 {
                    continue;
                }
                let geom = d[2][i] * w * w + d[1][i] * a;
                let geom_th = d[3][i] * w * w + d[2][i] * a;
                add(sys, s[J_THETA], s[J_THETA], y * beta * (d[4][i] * w * w + d[3][i] * a));
                add(sys, s[J_THETA], s[J_W], y * 2.0 * beta * d[3][i] * w);
                add(sys, s[J_THETA], s[J_A], y * beta * d[2][i]);
                add(sys, s[J_W], s[J_W], y * 2.0 * beta * d[2][i]);
                match i {
                    0 => {
                        add(sys, s[J_Z], s[J_Z + 1], -y * z[5]);
                        add(sys, s[J_Z], s[J_Z + 5], -y * z[1]);
                        add(sys, s[J_Z + 1], s[J_Z + 5], -y * z[0]);
                    }
                    1 => {
                        add(sys, s[J_Z], s[J_Z + 1], -y * z[4]);
                        add(sys, s[J_Z], s[J_Z + 4], -y * z[1]);
                        add(sys, s[J_Z + 1], s[J_Z + 4], -y * z[0]);
                    }
                    _ => {
                        add(sys, s[J_Z + 2], s[J_Z + 3], -y * self.r_az);
                    }
                }
                add(sys, ts, s[J_THETA], -y * 2.0 * beta * geom_th / t);
                add(sys, ts, s[J_W], -y * 4.0 * beta * d[2][i] * w / t);
                add(sys, ts, s[J_A], -y * 2.0 * beta * d[1][i] / t);
                add(sys, ts, ts, y * 6.0 * beta * geom / (t * t));
            }
            let tb = self.trig_base + 3 * k;
            let clamp = |y: f64| if convexify { y.max(0.0) } else { y };
            let y1 = clamp(lambda[tb] + mu * rows[tb].val);
            add(sys, s[J_Z + 1], s[J_Z + 1], 2.0 * y1);
            add(sys, s[J_Z + 2], s[J_Z + 2], 2.0 * y1);
            let y2 = clamp(lambda[tb + 1] + mu * rows[tb + 1].val);
            add(sys, s[J_Z + 4], s[J_Z + 4], 2.0 * y2);
            add(sys, s[J_Z + 5], s[J_Z + 5], 2.0 * y2);
            let y3 = clamp(lambda[tb + 2] + mu * rows[tb + 2].val);
            if y3 != 0.0 {
                let asin1 = z[0].asin();
                let om = (1.0 - z[0] * z[0]).max(1e-12);
                let curv = kappa * kappa * (kappa * asin1).cos() / om
                    + kappa * (kappa * asin1).sin() * z[0] / om.powf(1.5);
                add(sys, s[J_Z], s[J_Z], y3 * curv);
            }
        }
    }

    /// Map a constraint row index to the collocation node it belongs to.
    pub fn row_node(&self, row: usize) -> usize {
        if row < self.n {
            row
        } else if row < 2 * self.n {
            row - self.n
        } else if row < self.trig_base {
            (row - self.dyn_base) / 3
        } else if Some(row) == self.link_row {
            self.n
        } else {
            (row - self.trig_base) / 3
        }
    }

}
