//! Closed-form trap force models and their inversion.
//!
//! The force a twin trap exerts on a nearby particle is well approximated by an
//! axis-symmetric product of sinusoids in the trap-to-particle displacement:
//! with Δ = u − p, d_r = √(Δx² + Δy²), Δz = u_z − p_z and azimuth φ of Δ,
//!
//! ```text
//! F_r = A_r · cos(V_z Δz) · sin(|V_xr| d_r)      (radial, toward the trap)
//! F_z = A_z · sin(V_z Δz) · cos(|V_zr| d_r)      (vertical)
//! F   = (F_r cos φ, F_r sin φ, F_z)
//! ```
//!
//! Radial frequencies enter through their magnitudes; fitted values are
//! sometimes reported with negative sign (the sine's parity gauge), which is
//! accepted and ignored. Forces restore toward the trap center within the
//! first sinusoid lobes. Two legacy models (linear spring, per-axis sinusoid)
//! are retained for calibration comparison only.

pub mod fit;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid force parameters: {0}")]
    BadParams(String),
    #[error("required force (F_h={fh:.3e} N, F_z={fz:.3e} N) lies outside the trap's feasible set")]
    ForceOutOfRange { fh: f64, fz: f64 },
    #[error("model fit failed: {0}")]
    FitFailed(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid calibration file {path}: {message}")]
    Parse { path: String, message: String },
}

/// Axis-symmetric trap force model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceParams {
    /// Peak radial force [N].
    pub a_r: f64,
    /// Peak vertical force [N].
    pub a_z: f64,
    /// Vertical spatial frequency of the vertical profile [1/m].
    pub v_z: f64,
    /// Radial spatial frequency of the radial force [1/m] (magnitude used).
    pub v_xr: f64,
    /// Radial spatial frequency of the vertical force [1/m] (magnitude used).
    pub v_zr: f64,
    /// Particle mass [kg].
    pub mass: f64,
}

impl ForceParams {
    /// Reference calibration of the default two-array levitator (full-field
    /// oracle fit; peak forces as fitted, not derated).
    pub fn reference() -> Self {
        Self {
            a_r: 4.636e-4,
            a_z: 2.758e-4,
            v_z: 1307.83,
            v_xr: -476.49,
            v_zr: 287.87,
            mass: 0.7e-7,
        }
    }

    /// Reference calibration with peak forces replaced by the measured device
    /// capabilities (horizontal 2.1e-5 N, vertical 4.2e-5 N), the values used
    /// for trajectory planning. With the default 0.7e-7 kg particle these give
    /// acceleration caps of 300 m/s² horizontally and 600 m/s² vertically.
    pub fn device() -> Self {
        Self {
            a_r: 2.1e-5,
            a_z: 4.2e-5,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_finite = [self.a_r, self.a_z, self.v_z, self.v_xr, self.v_zr, self.mass]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ModelError::BadParams("non-finite parameter".into()));
        }
        if self.a_r <= 0.0 || self.a_z <= 0.0 {
            return Err(ModelError::BadParams(format!(
                "peak forces must be positive (A_r={}, A_z={})",
                self.a_r, self.a_z
            )));
        }
        if self.mass <= 0.0 {
            return Err(ModelError::BadParams(format!("mass must be positive ({})", self.mass)));
        }
        if self.v_z == 0.0 || self.v_xr == 0.0 || self.v_zr == 0.0 {
            return Err(ModelError::BadParams("spatial frequencies must be nonzero".into()));
        }
        Ok(())
    }

    /// Copy with rescaled peak forces (used for simulation-time force jitter).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            a_r: self.a_r * factor,
            a_z: self.a_z * factor,
            ..*self
        }
    }

    /// Copy with replaced peak forces [N].
    pub fn with_amplitudes(&self, a_r: f64, a_z: f64) -> Self {
        Self { a_r, a_z, ..*self }
    }

    /// Ratio of the two radial frequencies κ = |V_zr|/|V_xr|.
    pub fn kappa(&self) -> f64 {
        self.v_zr.abs() / self.v_xr.abs()
    }

    /// Trap displacement at which the radial force peaks [m].
    pub fn radial_peak_displacement(&self) -> f64 {
        FRAC_PI_2 / self.v_xr.abs()
    }

    /// Trap displacement at which the vertical force peaks [m].
    pub fn vertical_peak_displacement(&self) -> f64 {
        FRAC_PI_2 / self.v_z.abs()
    }

    /// Separation beyond which the particle is considered lost [m].
    pub fn escape_radius(&self) -> f64 {
        std::f64::consts::PI / self.v_xr.abs()
    }

    /// Trap force on a particle at `p` from a trap at `u` [N].
    pub fn axisym_force(&self, p: &Vector3<f64>, u: &Vector3<f64>) -> Vector3<f64> {
        let d = u - p;
        let dr = (d.x * d.x + d.y * d.y).sqrt();
        let fz = self.a_z * (self.v_z * d.z).sin() * (self.v_zr.abs() * dr).cos();
        if dr == 0.0 {
            // zero radial displacement: azimuth undefined, lateral force vanishes
            return Vector3::new(0.0, 0.0, fz);
        }
        let fr = self.a_r * (self.v_z * d.z).cos() * (self.v_xr.abs() * dr).sin();
        Vector3::new(fr * d.x / dr, fr * d.y / dr, fz)
    }

    /// Encode trap angles into the six auxiliary unknowns
    /// ζ = (sin ρ, cos σ, sin σ, cos κρ, sin φ, cos φ).
    pub fn zeta_from_angles(&self, ang: &TrapAngles) -> Zeta {
        [
            ang.rho.sin(),
            ang.sigma.cos(),
            ang.sigma.sin(),
            (self.kappa() * ang.rho).cos(),
            ang.phi.sin(),
            ang.phi.cos(),
        ]
    }

    /// Trap displacement u − p corresponding to trap angles [m].
    pub fn displacement_from_angles(&self, ang: &TrapAngles) -> Vector3<f64> {
        let dr = ang.rho / self.v_xr.abs();
        Vector3::new(dr * ang.phi.cos(), dr * ang.phi.sin(), ang.sigma / self.v_z)
    }

    /// Invert a required force into consistent trap angles, solving
    /// sin ρ cos σ = F_h/A_r, cos(κρ) sin σ = F_z/A_z on the first lobe
    /// (ρ ∈ [0, π/2], σ ∈ [−π/2, π/2]) by damped Newton.
    ///
    /// The map folds on parts of the lobe, so a force can have two preimages;
    /// `hint` selects the branch (Newton starts there) and supplies the
    /// azimuth when the horizontal force vanishes. Without a hint the
    /// small-displacement branch is preferred.
    pub fn angles_from_force(
        &self,
        f: &Vector3<f64>,
        hint: Option<&TrapAngles>,
    ) -> Result<TrapAngles, ModelError> {
        let fh = (f.x * f.x + f.y * f.y).sqrt();
        let phi = if fh > 1e-300 {
            f.y.atan2(f.x)
        } else {
            hint.map_or(0.0, |h| h.phi)
        };
        let b1 = fh / self.a_r;
        let b2 = f.z / self.a_z;
        let kappa = self.kappa();
        let out_of_range = || ModelError::ForceOutOfRange { fh, fz: f.z };
        if b1 > 1.0 + 1e-9 || b2.abs() > 1.0 + 1e-9 {
            return Err(out_of_range());
        }

        let (mut rho, mut sigma) = match hint {
            Some(h) => (h.rho.clamp(0.0, FRAC_PI_2), h.sigma.clamp(-FRAC_PI_2, FRAC_PI_2)),
            None => {
                let s = b2.clamp(-1.0, 1.0).asin();
                let r = (b1 / s.cos().max(0.2)).clamp(0.0, 1.0).asin();
                (r, s)
            }
        };
        let residual = |rho: f64, sigma: f64| {
            let g1 = rho.sin() * sigma.cos() - b1;
            let g2 = (kappa * rho).cos() * sigma.sin() - b2;
            (g1, g2)
        };
        let (mut g1, mut g2) = residual(rho, sigma);
        for _ in 0..80 {
            if g1.abs().max(g2.abs()) <= 1e-14 {
                return Ok(TrapAngles { rho, sigma, phi });
            }
            let j11 = rho.cos() * sigma.cos();
            let j12 = -rho.sin() * sigma.sin();
            let j21 = -kappa * (kappa * rho).sin() * sigma.sin();
            let j22 = (kappa * rho).cos() * sigma.cos();
            let det = j11 * j22 - j12 * j21;
            if det.abs() < 1e-14 {
                return Err(out_of_range());
            }
            let drho = (-g1 * j22 + g2 * j12) / det;
            let dsigma = (-g2 * j11 + g1 * j21) / det;
            // backtracking keeps the iterate on the first lobe and descending
            let norm0 = g1.abs().max(g2.abs());
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let r = (rho + step * drho).clamp(0.0, FRAC_PI_2);
                let s = (sigma + step * dsigma).clamp(-FRAC_PI_2, FRAC_PI_2);
                let (n1, n2) = residual(r, s);
                if n1.abs().max(n2.abs()) < norm0 {
                    rho = r;
                    sigma = s;
                    g1 = n1;
                    g2 = n2;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(out_of_range());
            }
        }
        if g1.abs().max(g2.abs()) <= 1e-12 {
            Ok(TrapAngles { rho, sigma, phi })
        } else {
            Err(out_of_range())
        }
    }
}

/// Trap displacement in angle form: ρ = |V_xr| d_r, σ = V_z Δz, azimuth φ.
#[derive(Clone, Copy, Debug)]
pub struct TrapAngles {
    pub rho: f64,
    pub sigma: f64,
    pub phi: f64,
}

/// The six auxiliary unknowns ζ of the trap-displacement encoding.
pub type Zeta = [f64; 6];

/// Legacy fit-comparison models: a per-axis linear spring and a per-axis
/// sinusoid, both acting on the displacement (p − u) with the fitted-sign
/// convention (restoring when K_i < 0 and when A_i·V_i < 0).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LegacyParams {
    /// Spring stiffnesses [N/m], force K_i (p_i − u_i).
    pub spring_k: [f64; 3],
    /// Sinusoid amplitudes [N].
    pub sin_a: [f64; 3],
    /// Sinusoid spatial frequencies [1/m], force A_i sin(V_i (p_i − u_i)).
    pub sin_v: [f64; 3],
}

impl LegacyParams {
    /// Reference calibration of the default device (same oracle as
    /// [`ForceParams::reference`]).
    pub fn reference() -> Self {
        Self {
            spring_k: [-0.0071, -0.0071, -0.94],
            sin_a: [9e-5, 9e-5, -0.0019],
            sin_v: [-68.92, -68.92, 1307.83],
        }
    }

    pub fn spring_force(&self, p: &Vector3<f64>, u: &Vector3<f64>) -> Vector3<f64> {
        let d = p - u;
        Vector3::new(
            self.spring_k[0] * d.x,
            self.spring_k[1] * d.y,
            self.spring_k[2] * d.z,
        )
    }

    pub fn sinusoid_force(&self, p: &Vector3<f64>, u: &Vector3<f64>) -> Vector3<f64> {
        let d = p - u;
        Vector3::new(
            self.sin_a[0] * (self.sin_v[0] * d.x).sin(),
            self.sin_a[1] * (self.sin_v[1] * d.y).sin(),
            self.sin_a[2] * (self.sin_v[2] * d.z).sin(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn force_vanishes_exactly_at_trap_center() {
        let m = ForceParams::reference();
        let p = Vector3::new(0.01, -0.02, 0.005);
        assert_eq!(m.axisym_force(&p, &p), Vector3::zeros());
    }

    #[test]
    fn radial_peak_matches_amplitude() {
        let m = ForceParams::reference();
        let d = m.radial_peak_displacement();
        let f = m.axisym_force(&Vector3::zeros(), &Vector3::new(d, 0.0, 0.0));
        assert!((f.x - m.a_r).abs() < 1e-12 * m.a_r, "{f:?}");
        assert!(f.y.abs() < 1e-18 && f.z.abs() < 1e-18);
        // trap on the other side pulls the other way
        let g = m.axisym_force(&Vector3::zeros(), &Vector3::new(-d, 0.0, 0.0));
        assert!((g.x + m.a_r).abs() < 1e-12 * m.a_r);
    }

    #[test]
    fn vertical_peak_matches_amplitude() {
        let m = ForceParams::reference();
        let d = m.vertical_peak_displacement();
        let f = m.axisym_force(&Vector3::zeros(), &Vector3::new(0.0, 0.0, d));
        assert!((f.z - m.a_z).abs() < 1e-12 * m.a_z);
        assert_eq!(f.x, 0.0);
        assert_eq!(f.y, 0.0);
    }

    #[test]
    fn spring_magnitude_example() {
        let legacy = LegacyParams::reference();
        let f = legacy.spring_force(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1e-3));
        assert!((f.z.abs() - 9.4e-4).abs() < 1e-12);
        // restoring: trap above pulls up
        assert!(f.z > 0.0);
    }

    #[test]
    fn sinusoid_restores_toward_trap() {
        let legacy = LegacyParams::reference();
        // trap to the +x of the particle pulls +x
        let f = legacy.sinusoid_force(&Vector3::zeros(), &Vector3::new(2e-3, 0.0, 0.0));
        assert!(f.x > 0.0);
        let g = legacy.sinusoid_force(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 5e-4));
        assert!(g.z > 0.0);
    }

    #[test]
    fn axisym_matches_axis_sinusoid_on_main_axes() {
        let m = ForceParams::reference();
        let legacy = LegacyParams {
            spring_k: [0.0; 3],
            sin_a: [m.a_r, m.a_r, -m.a_z],
            sin_v: [-m.v_xr.abs(), -m.v_xr.abs(), m.v_z],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t: f64 = rng.gen_range(-3e-3..3e-3);
            let fx = m.axisym_force(&Vector3::new(t, 0.0, 0.0), &Vector3::zeros());
            let sx = legacy.sinusoid_force(&Vector3::new(t, 0.0, 0.0), &Vector3::zeros());
            assert!((fx.x - sx.x).abs() < 1e-15, "x-axis {t}: {} vs {}", fx.x, sx.x);
            let t2: f64 = rng.gen_range(-1e-3..1e-3);
            let fz = m.axisym_force(&Vector3::new(0.0, 0.0, t2), &Vector3::zeros());
            let sz = legacy.sinusoid_force(&Vector3::new(0.0, 0.0, t2), &Vector3::zeros());
            assert!((fz.z - sz.z).abs() < 1e-15, "z-axis {t2}");
        }
    }

    #[test]
    fn non_invertibility_witness() {
        // traps displaced ±x at the vertical quarter-period exert the same
        // force on a particle at the origin (radial envelope crosses zero)
        let m = ForceParams::reference();
        let x = 0.001953125; // 2^-9: square and root are exact
        let dz = m.vertical_peak_displacement();
        let fp = m.axisym_force(&Vector3::zeros(), &Vector3::new(x, 0.0, dz));
        let fm = m.axisym_force(&Vector3::zeros(), &Vector3::new(-x, 0.0, dz));
        assert_eq!(fp.z, fm.z);
        assert_eq!(fp.y, fm.y);
        // lateral parts agree to below one ulp of the force scale
        assert!((fp.x - fm.x).abs() < 1e-19, "{} vs {}", fp.x, fm.x);
    }

    #[test]
    fn equivariant_under_vertical_rotations() {
        let m = ForceParams::reference();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p = Vector3::new(
                rng.gen_range(-2e-3..2e-3),
                rng.gen_range(-2e-3..2e-3),
                rng.gen_range(-1e-3..1e-3),
            );
            let u = Vector3::new(
                rng.gen_range(-2e-3..2e-3),
                rng.gen_range(-2e-3..2e-3),
                rng.gen_range(-1e-3..1e-3),
            );
            let c = Vector3::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), 0.0);
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), ang);
            let f = m.axisym_force(&p, &u);
            let f_rot = m.axisym_force(&(rot * (p - c) + c), &(rot * (u - c) + c));
            assert!((rot * f - f_rot).norm() < 1e-15 + 1e-10 * f.norm());
        }
    }

    #[test]
    fn odd_symmetry_under_z_reflection() {
        let m = ForceParams::reference();
        let u = Vector3::new(0.001, -0.002, 0.0005);
        let p = Vector3::new(0.0005, 0.0, -0.0002);
        let f = m.axisym_force(&p, &u);
        let p_mirror = Vector3::new(p.x, p.y, 2.0 * u.z - p.z);
        let g = m.axisym_force(&p_mirror, &u);
        assert!((f.x - g.x).abs() < 1e-18);
        assert!((f.y - g.y).abs() < 1e-18);
        assert!((f.z + g.z).abs() < 1e-18);
    }

    #[test]
    fn angle_inversion_round_trips_force() {
        let m = ForceParams::device();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let ang = TrapAngles {
                rho: rng.gen_range(0.0..1.45),
                sigma: rng.gen_range(-1.45..1.45),
                phi: rng.gen_range(-3.1..3.1),
            };
            let d = m.displacement_from_angles(&ang);
            let f = m.axisym_force(&Vector3::zeros(), &d);
            let back = m.angles_from_force(&f, None).unwrap();
            let f2 = m.axisym_force(&Vector3::zeros(), &m.displacement_from_angles(&back));
            assert!(
                (f - f2).norm() < 1e-16 + 1e-12 * f.norm(),
                "angles ({}, {}, {}): {:?} vs {:?}",
                ang.rho,
                ang.sigma,
                ang.phi,
                f,
                f2
            );
        }
    }

    #[test]
    fn angle_inversion_warm_start_keeps_branch() {
        // the force map folds, so the same force can come from two
        // displacements; away from the fold (where the preimages coalesce and
        // no local method can tell them apart) a warm start must recover the
        // hinted one
        let m = ForceParams::device();
        let kappa = m.kappa();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 300 {
            let ang = TrapAngles {
                rho: rng.gen_range(0.0..1.5),
                sigma: rng.gen_range(-1.5..1.5),
                phi: rng.gen_range(-3.1..3.1),
            };
            let det = ang.rho.cos() * (kappa * ang.rho).cos() * ang.sigma.cos().powi(2)
                - kappa * ang.rho.sin() * (kappa * ang.rho).sin() * ang.sigma.sin().powi(2);
            if det.abs() < 0.1 {
                continue;
            }
            checked += 1;
            let d = m.displacement_from_angles(&ang);
            let f = m.axisym_force(&Vector3::zeros(), &d);
            let near = TrapAngles {
                rho: ang.rho + rng.gen_range(-0.01..0.01),
                sigma: ang.sigma + rng.gen_range(-0.01..0.01),
                phi: ang.phi,
            };
            let back = m.angles_from_force(&f, Some(&near)).unwrap();
            let d2 = m.displacement_from_angles(&back);
            assert!(
                (d - d2).norm() < 1e-10,
                "angles ({}, {}, {}): {:?} vs {:?}",
                ang.rho,
                ang.sigma,
                ang.phi,
                d,
                d2
            );
        }
    }

    #[test]
    fn angle_inversion_rejects_overdemand() {
        let m = ForceParams::device();
        let f = Vector3::new(1.2 * m.a_r, 0.0, 0.0);
        assert!(matches!(
            m.angles_from_force(&f, None),
            Err(ModelError::ForceOutOfRange { .. })
        ));
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut m = ForceParams::reference();
        assert!(m.validate().is_ok());
        m.a_r = -1.0;
        assert!(m.validate().is_err());
        let mut m2 = ForceParams::reference();
        m2.v_z = 0.0;
        assert!(m2.validate().is_err());
    }
}
