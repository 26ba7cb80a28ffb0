//! Reference paths q(θ): the geometric curves the levitated particle should trace.
//!
//! Builtin shapes are stored as truncated trigonometric series per axis, so every
//! derivative order is exact and periodic closure is machine-tight. Waypoint input
//! is interpolated with cubic splines (periodic or natural). The vertical axis is
//! z; planar shapes live in a vertical plane (x–z by default, y–z for the
//! cardioid whose closed form is defined there).

mod io;
mod spline;
mod timing;

pub use io::{load_shape_json, load_waypoints_csv, shape_from_spec, ShapeSpec};
pub use timing::{finite_difference_accel, ArcLengthTable, BaselineStrategy, BaselineTiming};

use nalgebra::Vector3;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Errors from path construction, evaluation and file input.
#[derive(Debug, Error)]
pub enum PathError {
    #[error("theta {theta} outside non-periodic domain [{lo}, {hi}]")]
    OutOfDomain { theta: f64, lo: f64, hi: f64 },
    #[error("spline interpolation needs at least 4 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} coincide; consecutive duplicates are not allowed")]
    DuplicateWaypoint(usize, usize),
    #[error("unknown builtin shape kind `{0}` (expected circle|cardioid|squircle|fish)")]
    UnknownKind(String),
    #[error("shape size must be positive and finite, got {0}")]
    BadSize(f64),
    #[error("unknown plane `{0}` (expected xz|yz)")]
    UnknownPlane(String),
    #[error("shape spec must set exactly one of `kind` or `waypoints`")]
    AmbiguousSpec,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid shape file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid waypoint CSV {path} line {line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },
}

/// Builtin closed shapes, each traced over θ ∈ [0, 2π].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinShape {
    Circle,
    Cardioid,
    Squircle,
    Fish,
}

impl BuiltinShape {
    pub fn parse(s: &str) -> Result<Self, PathError> {
        match s.to_ascii_lowercase().as_str() {
            "circle" => Ok(Self::Circle),
            "cardioid" => Ok(Self::Cardioid),
            "squircle" => Ok(Self::Squircle),
            "fish" => Ok(Self::Fish),
            other => Err(PathError::UnknownKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Circle => "circle",
            Self::Cardioid => "cardioid",
            Self::Squircle => "squircle",
            Self::Fish => "fish",
        }
    }

    /// Size parameter whose horizontal bounding-box extent equals `width` [m].
    pub fn size_for_width(&self, width: f64) -> f64 {
        match self {
            Self::Cardioid => width / CARDIOID_WIDTH_PER_R,
            _ => width,
        }
    }
}

/// Plane a planar shape lies in (z is the vertical axis; `Xy` lays the shape
/// flat, its in-shape vertical component pointing along y).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Xz,
    Yz,
    Xy,
}

impl Plane {
    pub fn parse(s: &str) -> Result<Self, PathError> {
        match s.to_ascii_lowercase().as_str() {
            "xz" => Ok(Self::Xz),
            "yz" => Ok(Self::Yz),
            "xy" => Ok(Self::Xy),
            other => Err(PathError::UnknownPlane(other.to_string())),
        }
    }

    /// Axis indices (in-shape horizontal, in-shape vertical, off-plane).
    fn axes(self) -> (usize, usize, usize) {
        match self {
            Plane::Xz => (0, 2, 1),
            Plane::Yz => (1, 2, 0),
            Plane::Xy => (0, 1, 2),
        }
    }
}

/// Horizontal bounding-box extent ratio width/r for the cardioid: the closed
/// form reaches |y|max = (3√3/4)·r at cos θ = 1/2.
const CARDIOID_WIDTH_PER_R: f64 = 2.598_076_211_353_316; // 3·√3/2

/// One truncated trigonometric series a0 + Σ_k (a_k cos kθ + b_k sin kθ).
#[derive(Clone, Debug, Default)]
struct TrigSeries {
    a0: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TrigSeries {
    /// Value and derivatives through 4th order at θ.
    fn derivs4(&self, theta: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        out[0] = self.a0;
        for k in 1..=self.cos.len() {
            let a = self.cos[k - 1];
            let b = self.sin[k - 1];
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            let e = a * c + b * s; // even part, reappears at order 4
            let o = -a * s + b * c; // odd part
            let k2 = kf * kf;
            out[0] += e;
            out[1] += kf * o;
            out[2] -= k2 * e;
            out[3] -= k2 * kf * o;
            out[4] += k2 * k2 * e;
        }
        out
    }

    fn scale(&mut self, s: f64) {
        self.a0 *= s;
        for c in &mut self.cos {
            *c *= s;
        }
        for b in &mut self.sin {
            *b *= s;
        }
    }
}

#[derive(Clone, Debug)]
enum Curve {
    Trig([TrigSeries; 3]),
    Spline(spline::CubicSpline3),
}

/// A C² curve q(θ) ∈ R³ over a θ domain, periodic or open.
#[derive(Clone, Debug)]
pub struct ReferencePath {
    curve: Curve,
    theta0: f64,
    theta1: f64,
    periodic: bool,
    /// Current plane assignment of a planar (trig) curve; splines ignore it.
    plane: Plane,
}

impl ReferencePath {
    /// Builtin shape with its natural size parameter [m]: bounding-box width
    /// for circle/squircle/fish, the cardioid's r parameter for the cardioid
    /// (its widest horizontal extent is ≈2.598·r).
    pub fn builtin(kind: BuiltinShape, size: f64) -> Result<Self, PathError> {
        if !(size.is_finite() && size > 0.0) {
            return Err(PathError::BadSize(size));
        }
        let path = match kind {
            BuiltinShape::Circle => Self::circle(size / 2.0),
            BuiltinShape::Cardioid => Self::cardioid(size),
            BuiltinShape::Squircle => Self::squircle(size),
            BuiltinShape::Fish => Self::fish(size),
        };
        Ok(path)
    }

    /// Builtin shape scaled so the horizontal bounding-box extent equals `width` [m].
    pub fn builtin_with_width(kind: BuiltinShape, width: f64) -> Result<Self, PathError> {
        Self::builtin(kind, kind.size_for_width(width))
    }

    /// Circle of radius r in the x–z plane, starting at the bottom:
    /// q(θ) = (r sin θ, 0, −r cos θ).
    fn circle(r: f64) -> Self {
        let x = TrigSeries {
            sin: vec![r],
            cos: vec![0.0],
            a0: 0.0,
        };
        let z = TrigSeries {
            cos: vec![-r],
            sin: vec![0.0],
            a0: 0.0,
        };
        Self::from_trig([x, TrigSeries::default(), z], Plane::Xz)
    }

    /// Cardioid in the y–z plane, cusp at the top:
    /// q(θ) = (0, r sin θ (1+cos θ), −r cos θ (1+cos θ) + r).
    fn cardioid(r: f64) -> Self {
        // sin θ (1+cos θ) = sin θ + sin 2θ / 2
        let y = TrigSeries {
            sin: vec![r, r / 2.0],
            cos: vec![0.0, 0.0],
            a0: 0.0,
        };
        // −cos θ (1+cos θ) + 1 = 1/2 − cos θ − cos 2θ / 2
        let z = TrigSeries {
            cos: vec![-r, -r / 2.0],
            sin: vec![0.0, 0.0],
            a0: r / 2.0,
        };
        Self::from_trig([TrigSeries::default(), y, z], Plane::Yz)
    }

    /// Squircle (superellipse exponent 4) in the x–z plane, smoothed to C^∞ by a
    /// truncated Fourier fit with odd harmonics ≤ 11, scaled to the given width.
    fn squircle(width: f64) -> Self {
        // Odd-cosine coefficients of f(θ) = sgn(cos θ)·|cos θ|^(1/2). The sine
        // series of the vertical component follows by the quarter-turn shift
        // g(θ) = f(θ − π/2): b_k = c_k · sin(kπ/2).
        const HARMONICS: [usize; 6] = [1, 3, 5, 7, 9, 11];
        let coeff: Vec<f64> = HARMONICS.iter().map(|&k| squircle_cos_coeff(k)).collect();
        let kmax = *HARMONICS.last().unwrap();
        let mut x = TrigSeries {
            a0: 0.0,
            cos: vec![0.0; kmax],
            sin: vec![0.0; kmax],
        };
        let mut z = x.clone();
        for (i, &k) in HARMONICS.iter().enumerate() {
            x.cos[k - 1] = coeff[i];
            // sin(kπ/2) alternates +1, −1 over odd k
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            z.sin[k - 1] = sign * coeff[i];
        }
        let mut path = Self::from_trig([x, TrigSeries::default(), z], Plane::Xz);
        path.scale_to_width(width);
        path
    }

    /// Fish outline in the x–z plane: the classical two-harmonic fish curve
    /// x = cos θ − sin²θ/√2, z = cos θ sin θ (body with a crossing tail whose
    /// corners are parametric cusps), centered and scaled to the given width.
    fn fish(width: f64) -> Self {
        let inv = 1.0 / (2.0 * 2.0_f64.sqrt());
        // cos θ − sin²θ/√2 = −1/(2√2) + cos θ + cos 2θ/(2√2)
        let x = TrigSeries {
            a0: -inv,
            cos: vec![1.0, inv],
            sin: vec![0.0, 0.0],
        };
        // cos θ sin θ = sin 2θ / 2
        let z = TrigSeries {
            a0: 0.0,
            cos: vec![0.0, 0.0],
            sin: vec![0.0, 0.5],
        };
        let mut path = Self::from_trig([x, TrigSeries::default(), z], Plane::Xz);
        path.center_horizontal();
        path.scale_to_width(width);
        path
    }

    fn from_trig(series: [TrigSeries; 3], plane: Plane) -> Self {
        Self {
            curve: Curve::Trig(series),
            theta0: 0.0,
            theta1: TAU,
            periodic: true,
            plane,
        }
    }

    /// Cubic-spline path through waypoints over θ ∈ [0, 2π] with uniform knots:
    /// periodic (closed) or natural (open) boundary conditions.
    pub fn spline(waypoints: &[Vector3<f64>], periodic: bool) -> Result<Self, PathError> {
        if waypoints.len() < 4 {
            return Err(PathError::TooFewWaypoints(waypoints.len()));
        }
        for i in 1..waypoints.len() {
            if (waypoints[i] - waypoints[i - 1]).norm() == 0.0 {
                return Err(PathError::DuplicateWaypoint(i - 1, i));
            }
        }
        if periodic {
            let n = waypoints.len();
            if (waypoints[n - 1] - waypoints[0]).norm() == 0.0 {
                return Err(PathError::DuplicateWaypoint(n - 1, 0));
            }
        }
        let curve = spline::CubicSpline3::fit(waypoints, periodic);
        Ok(Self {
            curve: Curve::Spline(curve),
            theta0: 0.0,
            theta1: TAU,
            periodic,
            plane: Plane::Xz,
        })
    }

    pub fn theta_range(&self) -> (f64, f64) {
        (self.theta0, self.theta1)
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Move a planar (trig) path into another plane by permuting its axis
    /// components; apply before [`Self::translate`]. No-op for splines.
    pub fn set_plane(&mut self, plane: Plane) {
        let current = self.plane;
        if let Curve::Trig(series) = &mut self.curve {
            let (h0, v0, o0) = current.axes();
            let (h1, v1, o1) = plane.axes();
            let mut next: [TrigSeries; 3] = Default::default();
            next[h1] = std::mem::take(&mut series[h0]);
            next[v1] = std::mem::take(&mut series[v0]);
            next[o1] = std::mem::take(&mut series[o0]);
            *series = next;
            self.plane = plane;
        }
    }

    /// Translate the whole path by `offset` [m].
    pub fn translate(&mut self, offset: Vector3<f64>) {
        match &mut self.curve {
            Curve::Trig(series) => {
                for (axis, s) in series.iter_mut().enumerate() {
                    s.a0 += offset[axis];
                }
            }
            Curve::Spline(sp) => sp.translate(offset),
        }
    }

    fn reduce(&self, theta: f64) -> Result<f64, PathError> {
        if self.periodic {
            let span = self.theta1 - self.theta0;
            Ok(self.theta0 + (theta - self.theta0).rem_euclid(span))
        } else if theta >= self.theta0 - 1e-12 && theta <= self.theta1 + 1e-12 {
            Ok(theta.clamp(self.theta0, self.theta1))
        } else {
            Err(PathError::OutOfDomain {
                theta,
                lo: self.theta0,
                hi: self.theta1,
            })
        }
    }

    /// Position q(θ) [m].
    pub fn eval(&self, theta: f64) -> Result<Vector3<f64>, PathError> {
        Ok(self.derivs4(theta)?[0])
    }

    /// Position and the first two θ-derivatives (q, ∂q/∂θ, ∂²q/∂θ²).
    pub fn eval_derivs(
        &self,
        theta: f64,
    ) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>), PathError> {
        let d = self.derivs4(theta)?;
        Ok((d[0], d[1], d[2]))
    }

    /// Position and θ-derivatives through 4th order; the higher orders feed the
    /// timing solver's Newton steps. For spline paths the 3rd derivative is
    /// piecewise constant and the 4th is zero.
    pub fn derivs4(&self, theta: f64) -> Result<[Vector3<f64>; 5], PathError> {
        let t = self.reduce(theta)?;
        Ok(match &self.curve {
            Curve::Trig(series) => {
                let dx = series[0].derivs4(t);
                let dy = series[1].derivs4(t);
                let dz = series[2].derivs4(t);
                let mut out = [Vector3::zeros(); 5];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = Vector3::new(dx[i], dy[i], dz[i]);
                }
                out
            }
            Curve::Spline(sp) => sp.derivs4(t),
        })
    }

    /// Like [`Self::derivs4`] but total: periodic paths wrap around, open
    /// paths extrapolate their end segments smoothly. Used by the timing
    /// solver, whose iterates may momentarily leave the θ domain.
    pub(crate) fn derivs4_ext(&self, theta: f64) -> [Vector3<f64>; 5] {
        let t = if self.periodic {
            self.theta0 + (theta - self.theta0).rem_euclid(self.theta1 - self.theta0)
        } else {
            theta
        };
        match &self.curve {
            Curve::Trig(series) => {
                let dx = series[0].derivs4(t);
                let dy = series[1].derivs4(t);
                let dz = series[2].derivs4(t);
                let mut out = [Vector3::zeros(); 5];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = Vector3::new(dx[i], dy[i], dz[i]);
                }
                out
            }
            Curve::Spline(sp) => sp.derivs4(t),
        }
    }

    /// Arc length between parameters a ≤ b, by adaptive Simpson quadrature
    /// (absolute tolerance 1e-9 m).
    pub fn arc_length(&self, a: f64, b: f64) -> Result<f64, PathError> {
        timing::arc_length(self, a, b)
    }

    /// Total arc length over the θ domain [m].
    pub fn total_arc_length(&self) -> Result<f64, PathError> {
        self.arc_length(self.theta0, self.theta1)
    }

    /// Naive timing law: N+1 samples (t_k, θ_k) over one period, either
    /// equidistant in arc length or equidistant in the path parameter.
    pub fn baseline_timing(
        &self,
        strategy: BaselineStrategy,
        period: f64,
        n: usize,
    ) -> Result<BaselineTiming, PathError> {
        timing::baseline_timing(self, strategy, period, n)
    }

    /// Horizontal bounding-box extent [m], measured on a dense parameter grid.
    pub fn measured_width(&self) -> f64 {
        let (ext_x, ext_y, _) = self.extents();
        ext_x.max(ext_y)
    }

    /// Vertical bounding-box extent [m].
    pub fn measured_height(&self) -> f64 {
        self.extents().2
    }

    fn extents(&self) -> (f64, f64, f64) {
        let n = 8192;
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for i in 0..=n {
            let t = self.theta0 + (self.theta1 - self.theta0) * i as f64 / n as f64;
            let q = self.derivs4(t).expect("in-domain")[0];
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let ext = hi - lo;
        (ext.x, ext.y, ext.z)
    }

    /// Uniformly rescale about the origin so the horizontal extent equals `width`.
    fn scale_to_width(&mut self, width: f64) {
        let current = self.measured_width();
        let s = width / current;
        if let Curve::Trig(series) = &mut self.curve {
            for ser in series.iter_mut() {
                ser.scale(s);
            }
        }
    }

    /// Shift horizontally so the bounding box is centered on the origin.
    fn center_horizontal(&mut self) {
        let n = 8192;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=n {
            let t = self.theta0 + (self.theta1 - self.theta0) * i as f64 / n as f64;
            let q = self.derivs4(t).expect("in-domain")[0];
            lo = lo.min(q.x);
            hi = hi.max(q.x);
        }
        if let Curve::Trig(series) = &mut self.curve {
            series[0].a0 -= (lo + hi) / 2.0;
        }
    }
}

/// Odd-cosine Fourier coefficient c_k = (2/π) ∫₀^π sgn(cos θ)|cos θ|^(1/2) cos(kθ) dθ,
/// by composite Simpson quadrature on a fine fixed grid (deterministic).
fn squircle_cos_coeff(k: usize) -> f64 {
    let n = 1 << 14; // even, puts the θ=π/2 kink on a grid point
    let h = PI / n as f64;
    let f = |theta: f64| {
        let c = theta.cos();
        c.signum() * c.abs().sqrt() * (k as f64 * theta).cos()
    };
    let mut acc = f(0.0) + f(PI);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    (2.0 / PI) * acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn fd_check(path: &ReferencePath, theta: f64) {
        let h = 1e-6;
        let d = path.derivs4(theta).unwrap();
        let qp = path.eval(theta + h).unwrap();
        let qm = path.eval(theta - h).unwrap();
        let d1_fd = (qp - qm) / (2.0 * h);
        let d2_fd = (qp - 2.0 * d[0] + qm) / (h * h);
        assert!((d[1] - d1_fd).norm() <= 1e-6 * (1.0 + d[1].norm()));
        assert!((d[2] - d2_fd).norm() <= 1e-3 * (1.0 + d[2].norm()));
        // higher orders: difference the analytic lower orders
        let dp = path.derivs4(theta + h).unwrap();
        let dm = path.derivs4(theta - h).unwrap();
        let d3_fd = (dp[2] - dm[2]) / (2.0 * h);
        let d4_fd = (dp[3] - dm[3]) / (2.0 * h);
        assert!((d[3] - d3_fd).norm() <= 1e-5 * (1.0 + d[3].norm()));
        assert!((d[4] - d4_fd).norm() <= 1e-4 * (1.0 + d[4].norm()));
    }

    #[test]
    fn circle_matches_convention() {
        let p = ReferencePath::builtin(BuiltinShape::Circle, 0.07).unwrap();
        let q = p.eval(FRAC_PI_2).unwrap();
        assert_relative_eq!(q.x, 0.035, max_relative = 1e-14);
        assert!(q.y.abs() < 1e-16 && q.z.abs() < 1e-14);
        let q0 = p.eval(0.0).unwrap();
        assert_relative_eq!(q0.z, -0.035, max_relative = 1e-14);
    }

    #[test]
    fn cardioid_matches_closed_form() {
        let r = 0.025;
        let p = ReferencePath::builtin(BuiltinShape::Cardioid, r).unwrap();
        assert_eq!(p.eval(0.0).unwrap(), Vector3::new(0.0, 0.0, -r));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let th: f64 = rng.gen_range(0.0..TAU);
            let q = p.eval(th).unwrap();
            let want = Vector3::new(
                0.0,
                r * th.sin() * (1.0 + th.cos()),
                -r * th.cos() * (1.0 + th.cos()) + r,
            );
            assert!((q - want).norm() < 1e-15 + 1e-12 * r);
        }
        // cusp at θ=π has zero parameter velocity
        let (_, d1, _) = p.eval_derivs(PI).unwrap();
        assert!(d1.norm() < 1e-15);
        assert!((p.eval(PI).unwrap() - Vector3::new(0.0, 0.0, r)).norm() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for kind in [
            BuiltinShape::Circle,
            BuiltinShape::Cardioid,
            BuiltinShape::Squircle,
            BuiltinShape::Fish,
        ] {
            let p = ReferencePath::builtin_with_width(kind, 0.08).unwrap();
            for _ in 0..25 {
                fd_check(&p, rng.gen_range(0.0..TAU));
            }
        }
    }

    #[test]
    fn periodic_closure_is_tight() {
        for kind in [
            BuiltinShape::Circle,
            BuiltinShape::Cardioid,
            BuiltinShape::Squircle,
            BuiltinShape::Fish,
        ] {
            let p = ReferencePath::builtin_with_width(kind, 0.09).unwrap();
            let a = p.derivs4(0.0).unwrap();
            let b = p.derivs4(TAU).unwrap();
            for i in 0..3 {
                assert!((a[i] - b[i]).norm() < 1e-12);
            }
            // periodic evaluation wraps
            let q1 = p.eval(1.3).unwrap();
            let q2 = p.eval(1.3 + TAU).unwrap();
            assert!((q1 - q2).norm() < 1e-12);
        }
    }

    #[test]
    fn builtin_scaling_is_linear() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for kind in [
            BuiltinShape::Circle,
            BuiltinShape::Cardioid,
            BuiltinShape::Squircle,
            BuiltinShape::Fish,
        ] {
            let s = 2.7;
            let p1 = ReferencePath::builtin(kind, 0.03).unwrap();
            let p2 = ReferencePath::builtin(kind, 0.03 * s).unwrap();
            for _ in 0..50 {
                let th: f64 = rng.gen_range(0.0..TAU);
                let q1 = p1.eval(th).unwrap();
                let q2 = p2.eval(th).unwrap();
                assert!((q2 - s * q1).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn widths_hit_requested_values() {
        for kind in [
            BuiltinShape::Circle,
            BuiltinShape::Cardioid,
            BuiltinShape::Squircle,
            BuiltinShape::Fish,
        ] {
            let p = ReferencePath::builtin_with_width(kind, 0.0876).unwrap();
            assert!(
                (p.measured_width() - 0.0876).abs() < 1e-4,
                "{} width {}",
                kind.name(),
                p.measured_width()
            );
        }
        // cardioid natural parameter: width ≈ 2.598 r
        let p = ReferencePath::builtin(BuiltinShape::Cardioid, 0.035).unwrap();
        assert_relative_eq!(
            p.measured_width(),
            CARDIOID_WIDTH_PER_R * 0.035,
            max_relative = 1e-6
        );
    }

    #[test]
    fn squircle_resembles_superellipse() {
        // the smoothed squircle stays within a few percent of the exact
        // superellipse |x|^4 + |z|^4 = a^4 away from the corners
        let w = 0.08;
        let p = ReferencePath::builtin(BuiltinShape::Squircle, w).unwrap();
        let a = w / 2.0;
        let mut worst = 0.0_f64;
        for i in 0..256 {
            let th = TAU * i as f64 / 256.0;
            let q = p.eval(th).unwrap();
            let v = (q.x / a).abs().powi(4) + (q.z / a).abs().powi(4);
            worst = worst.max((v.powf(0.25) - 1.0).abs());
        }
        assert!(worst < 0.08, "max radial deviation {worst}");
    }

    #[test]
    fn fish_has_tail_crossing() {
        let p = ReferencePath::builtin(BuiltinShape::Fish, 0.0876).unwrap();
        // the two tail-crossing parameters of the closed form
        let q1 = p.eval(FRAC_PI_2).unwrap();
        let q2 = p.eval(3.0 * FRAC_PI_2).unwrap();
        assert!((q1 - q2).norm() < 1e-12, "tail crossing moved");
        // parametric cusps at the tail corners
        let (_, d1, _) = p.eval_derivs(3.0 * PI / 4.0).unwrap();
        assert!(d1.norm() < 1e-12);
    }

    #[test]
    fn cardioid_plane_override() {
        let mut p = ReferencePath::builtin(BuiltinShape::Cardioid, 0.02).unwrap();
        p.set_plane(Plane::Xz);
        let q = p.eval(1.0).unwrap();
        assert!(q.y.abs() < 1e-16 && q.x.abs() > 1e-4);
        p.translate(Vector3::new(0.0, 0.0, 0.01));
        assert_relative_eq!(p.eval(0.0).unwrap().z, -0.01, max_relative = 1e-12);
    }

    #[test]
    fn non_periodic_domain_is_enforced() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.01, 0.0, 0.0),
            Vector3::new(0.02, 0.0, 0.01),
            Vector3::new(0.03, 0.0, 0.01),
        ];
        let p = ReferencePath::spline(&pts, false).unwrap();
        assert!(p.eval(-0.5).is_err());
        assert!(p.eval(TAU + 0.5).is_err());
        assert!(p.eval(TAU).is_ok());
    }

    #[test]
    fn spline_validation_errors() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.01, 0.0, 0.0),
            Vector3::new(0.01, 0.0, 0.0),
            Vector3::new(0.03, 0.0, 0.01),
        ];
        assert!(matches!(
            ReferencePath::spline(&pts, true),
            Err(PathError::DuplicateWaypoint(1, 2))
        ));
        assert!(matches!(
            ReferencePath::spline(&pts[..3], false),
            Err(PathError::TooFewWaypoints(3))
        ));
    }
}
