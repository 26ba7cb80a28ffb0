//! Augmented-Lagrangian solver for the transcribed timing problem.
//!
//! Outer loop: classic multiplier updates λ ← λ + μc with penalty escalation
//! when the constraint norm stalls. Inner loop: projected damped Newton on
//! the box-constrained augmented Lagrangian, using the banded+bordered
//! factorization; variables pinned at an active bound are frozen out of the
//! Newton system. All tolerances are on the scaled problem (dynamics rows are
//! in units of the peak radial force).

use super::linalg::BorderedSystem;
use super::nlp::{Gathered, Row, Transcription, HALF_BAND};

#[derive(Debug, Clone)]
pub(crate) struct AlOutcome {
    pub x: Vec<f64>,
    pub con_inf: f64,
    pub opt_inf: f64,
    pub mu: f64,
    pub outer: usize,
    pub inner_total: usize,
    pub converged: bool,
    /// Row with the largest residual at exit.
    pub worst_row: usize,
}

pub(crate) struct AlSettings {
    pub tol_opt: f64,
    pub tol_con: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn al_value(tr: &Transcription, g: &Gathered, lambda: &[f64], mu: f64) -> f64 {
    let c = tr.constraint_values(g);
    let mut v = tr.objective(g, None);
    for (r, ci) in c.iter().enumerate() {
        v += lambda[r] * ci + 0.5 * mu * ci * ci;
    }
    v
}

fn al_gradient(tr: &Transcription, g: &Gathered, rows: &[Row], lambda: &[f64], mu: f64) -> Vec<f64> {
    let mut grad = vec![0.0; tr.n_vars];
    tr.objective(g, Some(&mut grad));
    for (r, row) in rows.iter().enumerate() {
        let y = lambda[r] + mu * row.val;
        for &(i, v) in &row.grad {
            grad[i] += y * v;
        }
    }
    grad
}

/// Infinity norm of the projected gradient P[x − g] − x.
fn projected_grad_inf(x: &[f64], grad: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let step = (x[i] - grad[i]).clamp(lo[i], hi[i]) - x[i];
        m = m.max(step.abs());
    }
    m
}

/// Minimize the augmented Lagrangian over the box to tolerance `omega`.
/// Returns (projected gradient at exit, iterations used).
#[allow(clippy::too_many_arguments)]
fn inner_minimize(
    tr: &Transcription,
    x: &mut Vec<f64>,
    lambda: &[f64],
    mu: f64,
    omega: f64,
    max_iter: usize,
    lo: &[f64],
    hi: &[f64],
) -> (f64, usize) {
    let mut nu = 0.0f64;
    let mut sys = BorderedSystem::new(tr.n_banded, HALF_BAND, tr.n_border);
    let mut pg = f64::INFINITY;
    for it in 0..max_iter {
        let mut g = tr.gather(x);
        let mut rows = tr.rows(&g);
        let mut grad = al_gradient(tr, &g, &rows, lambda, mu);
        pg = projected_grad_inf(x, &grad, lo, hi);
        if pg <= omega {
            return (pg, it);
        }

        // snap ε-active variables onto their bound and freeze them there;
        // tying ε to the projected gradient keeps the estimate from chattering
        let eps_active = pg.min(1e-4).max(1e-12);
        let mut frozen = vec![false; tr.n_vars];
        let mut moved = false;
        for i in 0..tr.n_vars {
            let tol = eps_active * (1.0 + x[i].abs());
            if x[i] - lo[i] <= tol && grad[i] > 0.0 {
                moved |= x[i] != lo[i];
                x[i] = lo[i];
                frozen[i] = true;
            } else if hi[i] - x[i] <= tol && grad[i] < 0.0 {
                moved |= x[i] != hi[i];
                x[i] = hi[i];
                frozen[i] = true;
            }
        }
        // re-linearize at the snapped point so the quadratic model, the
        // gradient, and the line-search baseline all describe the same iterate
        if moved {
            g = tr.gather(x);
            rows = tr.rows(&g);
            grad = al_gradient(tr, &g, &rows, lambda, mu);
        }
        let phi0 = al_value(tr, &g, lambda, mu);

        // damped Newton step with escalation on factorization failure
        let mut step: Option<Vec<f64>> = None;
        for _try in 0..18 {
            tr.al_hessian(&g, &rows, lambda, mu, true, &mut sys);
            if nu > 0.0 {
                sys.add_diagonal(nu);
            }
            let mut rhs = vec![0.0; tr.n_vars];
            for i in 0..tr.n_vars {
                if frozen[i] {
                    sys.freeze(i);
                } else {
                    rhs[i] = -grad[i];
                }
            }
            match sys.solve(&rhs) {
                Ok(d) => {
                    // must be a descent direction for the free variables
                    let slope: f64 = d.iter().zip(&grad).map(|(di, gi)| di * gi).sum();
                    if slope < 0.0 {
                        step = Some(d);
                        break;
                    }
                    nu = if nu == 0.0 { 1e-8 * (1.0 + mu) } else { nu * 10.0 };
                }
                Err(_) => {
                    nu = if nu == 0.0 { 1e-8 * (1.0 + mu) } else { nu * 10.0 };
                }
            }
        }
        let Some(d) = step else {
            return (pg, it); // hopeless curvature; let the outer loop react
        };

        // projected backtracking line search
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            let mut xn = x.clone();
            for i in 0..tr.n_vars {
                xn[i] = (x[i] + alpha * d[i]).clamp(lo[i], hi[i]);
            }
            let gn = tr.gather(&xn);
            let phin = al_value(tr, &gn, lambda, mu);
            let dir: f64 = xn.iter().zip(x.iter()).zip(&grad).map(|((a, b), gi)| (a - b) * gi).sum();
            if dir < 0.0 && phin <= phi0 + 1e-4 * dir {
                *x = xn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if std::env::var_os("LEVITRAP_TRACE_INNER").is_some() {
            let nfrozen = frozen.iter().filter(|f| **f).count();
            eprintln!(
                "  inner {it:4}  pg {pg:9.2e}  phi {phi0:14.8e}  alpha {alpha:8.2e}  \
                 nu {nu:8.2e}  frozen {nfrozen}  ok {accepted}"
            );
        }
        if accepted {
            if alpha == 1.0 {
                nu *= 0.1;
                if nu < 1e-12 {
                    nu = 0.0;
                }
            } else if alpha < 0.25 {
                nu = (nu * 3.0).max(1e-8 * (1.0 + mu));
            }
        } else {
            nu = (nu * 30.0).max(1e-4 * (1.0 + mu));
            if nu > 1e14 {
                return (pg, it);
            }
        }
    }
    (pg, max_iter)
}

pub(crate) fn solve_al(tr: &Transcription, x0: Vec<f64>, settings: &AlSettings) -> AlOutcome {
    let (lo, hi) = tr.bounds();
    let mut x = x0;
    project(&mut x, &lo, &hi);
    let mut lambda = vec![0.0; tr.n_con];
    let mut mu = 10.0f64;
    // classical safeguarded forcing sequences: start loose so multipliers
    // update from the first nearly-feasible iterate, tighten by powers of μ
    let mut omega = (1.0 / mu).max(settings.tol_opt);
    let mut eta = mu.powf(-0.1).max(settings.tol_con);
    let mut inner_total = 0;
    let mut best_con = f64::INFINITY;
    let mut stall = 0usize;
    let mut last = AlOutcome {
        x: Vec::new(),
        con_inf: f64::INFINITY,
        opt_inf: f64::INFINITY,
        mu,
        outer: 0,
        inner_total: 0,
        converged: false,
        worst_row: 0,
    };

    for outer in 0..settings.max_outer {
        let (pg, used) = inner_minimize(
            tr,
            &mut x,
            &lambda,
            mu,
            omega,
            settings.max_inner,
            &lo,
            &hi,
        );
        inner_total += used;
        let g = tr.gather(&x);
        let c = tr.constraint_values(&g);
        let (mut con_inf, mut worst) = (0.0f64, 0usize);
        for (r, ci) in c.iter().enumerate() {
            if ci.abs() > con_inf {
                con_inf = ci.abs();
                worst = r;
            }
        }
        if std::env::var_os("LEVITRAP_TRACE").is_some() {
            eprintln!(
                "outer {outer:3}  mu {mu:9.2e}  omega {omega:9.2e}  eta {eta:9.2e}  \
                 pg {pg:9.2e}  con {con_inf:9.2e}  inner {used:4}  T {:.6}  worst {worst} (node {})",
                g.t,
                tr.row_node(worst)
            );
        }
        last = AlOutcome {
            x: x.clone(),
            con_inf,
            opt_inf: pg,
            mu,
            outer: outer + 1,
            inner_total,
            converged: false,
            worst_row: worst,
        };

        if con_inf <= settings.tol_con && pg <= settings.tol_opt {
            last.converged = true;
            return last;
        }

        if con_inf <= eta.max(settings.tol_con) {
            // multiplier update (first-order), safeguarded against runaway
            for (lr, cr) in lambda.iter_mut().zip(&c) {
                *lr = (*lr + mu * cr).clamp(-1e8, 1e8);
            }
            eta = (eta / mu.powf(0.9)).max(settings.tol_con * 0.5);
            // polish past the final optimality target so the multiplier
            // estimates (and with them the constraint residuals) keep improving
            omega = (omega / mu).max(settings.tol_opt * 1e-2);
        } else {
            mu = (mu * 10.0).min(1e10);
            eta = mu.powf(-0.1).max(settings.tol_con * 0.5);
            omega = (1.0 / mu).max(settings.tol_opt * 1e-2);
        }

        // stagnation detection: penalty maxed and constraints not improving
        if con_inf < best_con * 0.7 {
            best_con = con_inf;
            stall = 0;
        } else {
            stall += 1;
        }
        if mu >= 1e10 && stall >= 4 && con_inf > 100.0 * settings.tol_con {
            return last;
        }
    }
    last
}
