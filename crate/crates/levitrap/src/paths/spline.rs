//! Cubic spline interpolation of waypoints over a uniform θ grid.
//!
//! Classic second-derivative ("moment") formulation: the spline on each knot
//! interval is a cubic determined by the endpoint values and moments M_i, and
//! the moments solve a (cyclic) tridiagonal system enforcing C² continuity.
//! Periodic splines use the cyclic system, open paths use natural boundary
//! conditions (zero end moments).

use nalgebra::Vector3;
use std::f64::consts::TAU;

#[derive(Clone, Debug)]
pub(super) struct CubicSpline3 {
    /// Knot values, including the wrap copy of the first point when periodic.
    pts: Vec<Vector3<f64>>,
    /// Second derivatives at the knots (same length as `pts`).
    moments: Vec<Vector3<f64>>,
    /// Uniform knot spacing in θ.
    h: f64,
}

impl CubicSpline3 {
    pub(super) fn fit(waypoints: &[Vector3<f64>], periodic: bool) -> Self {
        if periodic {
            Self::fit_periodic(waypoints)
        } else {
            Self::fit_natural(waypoints)
        }
    }

    fn fit_natural(w: &[Vector3<f64>]) -> Self {
        let n = w.len();
        let h = TAU / (n - 1) as f64;
        // interior moments: M_{i-1} + 4 M_i + M_{i+1} = 6 (w_{i-1} - 2 w_i + w_{i+1}) / h²
        let m = n - 2;
        let mut diag = vec![4.0; m];
        let mut rhs: Vec<Vector3<f64>> = (1..n - 1)
            .map(|i| 6.0 * (w[i - 1] - 2.0 * w[i] + w[i + 1]) / (h * h))
            .collect();
        // Thomas algorithm (off-diagonals are all 1)
        for i in 1..m {
            let f = 1.0 / diag[i - 1];
            diag[i] -= f;
            let prev = rhs[i - 1];
            rhs[i] -= f * prev;
        }
        let mut moments = vec![Vector3::zeros(); n];
        if m > 0 {
            moments[n - 2] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                moments[i + 1] = (rhs[i] - moments[i + 2]) / diag[i];
            }
        }
        Self {
            pts: w.to_vec(),
            moments,
            h,
        }
    }

    fn fit_periodic(w: &[Vector3<f64>]) -> Self {
        let n = w.len(); // distinct points; the curve closes back to w[0]
        let h = TAU / n as f64;
        let at = |i: isize| w[i.rem_euclid(n as isize) as usize];
        let rhs: Vec<Vector3<f64>> = (0..n as isize)
            .map(|i| 6.0 * (at(i - 1) - 2.0 * at(i) + at(i + 1)) / (h * h))
            .collect();
        let m = solve_cyclic_unit_offdiag(4.0, &rhs);
        let mut pts = w.to_vec();
        pts.push(w[0]);
        let mut moments = m;
        moments.push(moments[0]);
        Self { pts, moments, h }
    }

    pub(super) fn translate(&mut self, offset: Vector3<f64>) {
        for p in &mut self.pts {
            *p += offset;
        }
    }

    /// Value and θ-derivatives through 4th order (3rd is piecewise constant,
    /// 4th identically zero).
    pub(super) fn derivs4(&self, theta: f64) -> [Vector3<f64>; 5] {
        let nseg = self.pts.len() - 1;
        let mut i = ((theta / self.h).floor() as isize).clamp(0, nseg as isize - 1) as usize;
        // guard against θ landing exactly on the last knot
        if i >= nseg {
            i = nseg - 1;
        }
        let t0 = i as f64 * self.h;
        let a = t0 + self.h - theta; // distance to right knot
        let b = theta - t0; // distance to left knot
        let h = self.h;
        let (y0, y1) = (self.pts[i], self.pts[i + 1]);
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        let c0 = y0 / h - m0 * h / 6.0;
        let c1 = y1 / h - m1 * h / 6.0;
        let q = m0 * a.powi(3) / (6.0 * h) + m1 * b.powi(3) / (6.0 * h) + c0 * a + c1 * b;
        let d1 = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - c0 + c1;
        let d2 = m0 * a / h + m1 * b / h;
        let d3 = (m1 - m0) / h;
        [q, d1, d2, d3, Vector3::zeros()]
    }
}

/// Solve the cyclic tridiagonal system with constant diagonal `d`, unit
/// off-diagonals and wrap-around corners, via the Sherman–Morrison trick.
fn solve_cyclic_unit_offdiag(d: f64, rhs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = rhs.len();
    assert!(n >= 3);
    // A = T + u vᵀ with T tridiagonal (modified corners), u = (γ,0,…,0,1)ᵀ,
    // v = (1,0,…,0,γ⁻¹·1)… use the standard choice γ = -d for stability.
    let gamma = -d;
    let mut diag = vec![d; n];
    diag[0] -= gamma;
    diag[n - 1] -= 1.0 / gamma;

    let solve_tri = |rhs: &mut [Vector3<f64>], diag0: &[f64]| {
        let mut diag = diag0.to_vec();
        for i in 1..n {
            let f = 1.0 / diag[i - 1];
            diag[i] -= f;
            let prev = rhs[i - 1];
            rhs[i] -= f * prev;
        }
        rhs[n - 1] /= diag[n - 1];
        for i in (0..n - 1).rev() {
            let next = rhs[i + 1];
            rhs[i] = (rhs[i] - next) / diag[i];
        }
    };

    let mut y = rhs.to_vec();
    solve_tri(&mut y, &diag);
    let mut u = vec![Vector3::zeros(); n];
    u[0] = Vector3::repeat(gamma);
    u[n - 1] = Vector3::repeat(1.0);
    solve_tri(&mut u, &diag);

    // x = y - z (vᵀy)/(1 + vᵀz), component-wise per axis
    let mut x = vec![Vector3::zeros(); n];
    for axis in 0..3 {
        let vy = y[0][axis] + y[n - 1][axis] / gamma;
        let vz = u[0][axis] + u[n - 1][axis] / gamma;
        let f = vy / (1.0 + vz);
        for i in 0..n {
            x[i][axis] = y[i][axis] - f * u[i][axis];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::ReferencePath;

    #[test]
    fn spline_through_circle_waypoints_stays_round() {
        let r = 0.02;
        let pts: Vec<Vector3<f64>> = (0..8)
            .map(|i| {
                let a = TAU * i as f64 / 8.0;
                Vector3::new(r * a.sin(), 0.0, -r * a.cos())
            })
            .collect();
        let p = ReferencePath::spline(&pts, true).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..1000 {
            let th = TAU * i as f64 / 1000.0;
            let q = p.eval(th).unwrap();
            worst = worst.max((q.norm() - r).abs() / r);
        }
        assert!(worst <= 0.02, "radius deviation {worst}");
        // interpolates the waypoints exactly
        for (i, w) in pts.iter().enumerate() {
            let q = p.eval(TAU * i as f64 / 8.0).unwrap();
            assert!((q - w).norm() < 1e-12);
        }
    }

    #[test]
    fn periodic_spline_closes_c2() {
        let pts: Vec<Vector3<f64>> = (0..16)
            .map(|i| {
                let a = TAU * i as f64 / 16.0;
                Vector3::new(0.02 * a.sin(), 0.0, -0.015 * a.cos() + 0.003 * (2.0 * a).cos())
            })
            .collect();
        let p = ReferencePath::spline(&pts, true).unwrap();
        let a = p.derivs4(0.0).unwrap();
        let b = p.derivs4(TAU).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).norm() < 1e-9, "order {i} mismatch");
        }
    }

    #[test]
    fn natural_spline_of_collinear_points_is_straight() {
        let pts: Vec<Vector3<f64>> = (0..4)
            .map(|i| Vector3::new(0.01 * i as f64, 0.0, 0.005 * i as f64))
            .collect();
        let p = ReferencePath::spline(&pts, false).unwrap();
        for i in 1..3 {
            let th = TAU * i as f64 / 3.0;
            let (_, _, d2) = p.eval_derivs(th).unwrap();
            assert!(d2.norm() < 1e-12, "interior curvature {}", d2.norm());
        }
    }

    #[test]
    fn spline_derivatives_match_finite_differences() {
        let pts: Vec<Vector3<f64>> = (0..12)
            .map(|i| {
                let a = TAU * i as f64 / 12.0;
                Vector3::new(0.02 * a.sin() + 0.004 * (3.0 * a).sin(), 0.0, -0.02 * a.cos())
            })
            .collect();
        let p = ReferencePath::spline(&pts, true).unwrap();
        let h = 1e-6;
        for i in 0..50 {
            let th = 0.03 + TAU * i as f64 / 53.0;
            let d = p.derivs4(th).unwrap();
            let qp = p.eval(th + h).unwrap();
            let qm = p.eval(th - h).unwrap();
            assert!(((qp - qm) / (2.0 * h) - d[1]).norm() < 1e-6 * (1.0 + d[1].norm()));
            assert!(((qp - 2.0 * d[0] + qm) / (h * h) - d[2]).norm() < 1e-3 * (1.0 + d[2].norm()));
        }
    }
}
