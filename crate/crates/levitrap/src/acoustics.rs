//! Two-array levitator field oracle.
//!
//! A pair of opposed 16×16 transducer grids produces the acoustic field; a
//! twin trap is a focus pattern with a π phase step across a vertical plane
//! through the trap, leaving a pressure null that holds the particle. The
//! field is the standard far-field circular-piston summation, and the force
//! on a small sphere is the negative gradient of the Gor'kov potential.
//!
//! This module is the ground truth the analytic force models are fitted
//! against. Absolute pressure scale is arbitrary (the per-transducer
//! reference amplitude is a free constant); only the spatial *shape* of the
//! force field matters, since force amplitudes are later calibrated to the
//! measured device capabilities.

use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Half-extent of the cubic volume traps may be placed in [m] (8 cm cube
/// centered between the arrays).
pub const ORACLE_HALF_EXTENT: f64 = 0.04;

/// Central-difference step for Gor'kov gradients [m].
pub const GORKOV_FD_STEP: f64 = 1.0e-5;

/// Minimum distance from any transducer for far-field evaluation [m].
const SINGULAR_DISTANCE: f64 = 1.0e-3;

#[derive(Debug, Error)]
pub enum AcousticsError {
    #[error("trap position ({x:.4}, {y:.4}, {z:.4}) leaves the 8 cm oracle volume")]
    OutsideWorkingVolume { x: f64, y: f64, z: f64 },
    #[error("field point within {0:.1e} m of a transducer; the far-field sum is singular there")]
    SingularDistance(f64),
    #[error("particle radius {radius:.2e} m exceeds λ/10 = {limit:.2e} m; Gor'kov assumptions break")]
    RadiusTooLarge { radius: f64, limit: f64 },
    #[error("particle radius and mass must be positive")]
    BadParticle,
    #[error("activation length {got} does not match the array's {want} transducers")]
    ActivationMismatch { got: usize, want: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid array config {path}: {message}")]
    Parse { path: String, message: String },
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Scalar parameters of the levitator, as persisted to JSON. Transducer
/// positions are derived, not stored.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayConfigFile {
    /// Transducers per grid side.
    grid: usize,
    /// Transducer pitch [m].
    pitch: f64,
    /// Distance between the opposed arrays [m].
    separation: f64,
    /// Carrier frequency [Hz].
    frequency: f64,
    /// Speed of sound in the medium [m/s].
    sound_speed: f64,
    /// Medium density [kg/m³].
    air_density: f64,
    /// Effective piston radius of one transducer [m].
    transducer_radius: f64,
    /// Per-transducer pressure constant [Pa·m] (free scale).
    reference_amplitude: f64,
}

impl Default for ArrayConfigFile {
    fn default() -> Self {
        Self {
            grid: 16,
            pitch: 10.5e-3,
            separation: 0.239,
            frequency: 40.0e3,
            sound_speed: 346.0,
            air_density: 1.18,
            transducer_radius: 4.5e-3,
            reference_amplitude: 1.0,
        }
    }
}

/// The two opposed transducer arrays with precomputed element geometry.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "ArrayConfigFile", into = "ArrayConfigFile")]
pub struct ArrayConfig {
    pub grid: usize,
    pub pitch: f64,
    pub separation: f64,
    pub frequency: f64,
    pub sound_speed: f64,
    pub air_density: f64,
    pub transducer_radius: f64,
    pub reference_amplitude: f64,
    positions: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl From<ArrayConfigFile> for ArrayConfig {
    fn from(f: ArrayConfigFile) -> Self {
        // bottom array at z = −separation/2 radiating up, top array opposed;
        // grids centered on the vertical axis
        let mut positions = Vec::with_capacity(2 * f.grid * f.grid);
        let mut normals = Vec::with_capacity(2 * f.grid * f.grid);
        let half = (f.grid as f64 - 1.0) / 2.0;
        for (z, nz) in [(-0.5 * f.separation, 1.0), (0.5 * f.separation, -1.0)] {
            for i in 0..f.grid {
                for j in 0..f.grid {
                    let x = (i as f64 - half) * f.pitch;
                    let y = (j as f64 - half) * f.pitch;
                    positions.push(Vector3::new(x, y, z));
                    normals.push(Vector3::new(0.0, 0.0, nz));
                }
            }
        }
        Self {
            grid: f.grid,
            pitch: f.pitch,
            separation: f.separation,
            frequency: f.frequency,
            sound_speed: f.sound_speed,
            air_density: f.air_density,
            transducer_radius: f.transducer_radius,
            reference_amplitude: f.reference_amplitude,
            positions,
            normals,
        }
    }
}

impl From<ArrayConfig> for ArrayConfigFile {
    fn from(c: ArrayConfig) -> Self {
        Self {
            grid: c.grid,
            pitch: c.pitch,
            separation: c.separation,
            frequency: c.frequency,
            sound_speed: c.sound_speed,
            air_density: c.air_density,
            transducer_radius: c.transducer_radius,
            reference_amplitude: c.reference_amplitude,
        }
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfigFile::default().into()
    }
}

impl ArrayConfig {
    pub fn transducer_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// Carrier wavenumber [1/m].
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency / self.sound_speed
    }

    /// Carrier wavelength [m].
    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.frequency
    }
}

/// Load an [`ArrayConfig`] from a JSON file.
pub fn load_array_config(path: &Path) -> Result<ArrayConfig, AcousticsError> {
    let text = std::fs::read_to_string(path).map_err(|e| AcousticsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| AcousticsError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Particle
// ---------------------------------------------------------------------------

/// Levitated particle properties.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ParticleProps {
    /// Radius [m]; must stay well below the wavelength for Gor'kov theory.
    pub radius: f64,
    /// Particle material density [kg/m³].
    pub density: f64,
    /// Particle mass [kg].
    pub mass: f64,
}

impl Default for ParticleProps {
    fn default() -> Self {
        // expanded-polystyrene bead; radius kept at λ/10 of the 40 kHz
        // carrier so the small-particle expansion stays valid
        Self { radius: 0.8e-3, density: 29.0, mass: 0.7e-7 }
    }
}

impl ParticleProps {
    /// Check the Gor'kov small-particle assumptions against a config.
    pub fn validate(&self, cfg: &ArrayConfig) -> Result<(), AcousticsError> {
        if !(self.radius > 0.0 && self.mass > 0.0 && self.density > 0.0) {
            return Err(AcousticsError::BadParticle);
        }
        let limit = cfg.wavelength() / 10.0;
        if self.radius > limit {
            return Err(AcousticsError::RadiusTooLarge { radius: self.radius, limit });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Per-transducer drive: phase [rad] and normalized amplitude [0, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransducerActivation {
    pub phases: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl TransducerActivation {
    fn check(&self, cfg: &ArrayConfig) -> Result<(), AcousticsError> {
        if self.phases.len() != cfg.transducer_count()
            || self.amplitudes.len() != cfg.transducer_count()
        {
            return Err(AcousticsError::ActivationMismatch {
                got: self.phases.len().min(self.amplitudes.len()),
                want: cfg.transducer_count(),
            });
        }
        Ok(())
    }
}

fn inside_oracle_volume(p: &Vector3<f64>) -> bool {
    p.x.abs() <= ORACLE_HALF_EXTENT
        && p.y.abs() <= ORACLE_HALF_EXTENT
        && p.z.abs() <= ORACLE_HALF_EXTENT
}

/// Plain focus: every transducer phased so its wave arrives at `point` with
/// zero phase.
pub fn focus_activation(
    cfg: &ArrayConfig,
    point: &Vector3<f64>,
) -> Result<TransducerActivation, AcousticsError> {
    if !inside_oracle_volume(point) {
        return Err(AcousticsError::OutsideWorkingVolume { x: point.x, y: point.y, z: point.z });
    }
    let k = cfg.wavenumber();
    let phases = cfg
        .positions
        .iter()
        .map(|t| -k * (point - t).norm())
        .collect();
    Ok(TransducerActivation { phases, amplitudes: vec![1.0; cfg.transducer_count()] })
}

/// Twin trap: the focus pattern plus a π levitation signature on one side of
/// the vertical plane x = trap_x. The step makes the waves from the two
/// halves cancel at the focus, leaving a pressure null flanked by two lobes
/// along x̂ — the particle sits in the null.
pub fn twin_trap_activation(
    cfg: &ArrayConfig,
    trap_pos: &Vector3<f64>,
) -> Result<TransducerActivation, AcousticsError> {
    oriented_twin_trap_activation(cfg, trap_pos, 0.0)
}

/// Twin trap with the signature plane rotated so the stiff (lobe) axis points
/// along `azimuth` [rad] instead of +x̂.
///
/// The null is much stiffer along the lobe axis than across it, so the device
/// re-orients the signature to point the strong axis at whatever lateral
/// force it needs; trap force models are fitted in this aligned frame.
pub fn oriented_twin_trap_activation(
    cfg: &ArrayConfig,
    trap_pos: &Vector3<f64>,
    azimuth: f64,
) -> Result<TransducerActivation, AcousticsError> {
    let mut act = focus_activation(cfg, trap_pos)?;
    let dir = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
    for (phase, t) in act.phases.iter_mut().zip(&cfg.positions) {
        if (t - trap_pos).dot(&dir) < 0.0 {
            *phase += std::f64::consts::PI;
        }
    }
    Ok(act)
}

// ---------------------------------------------------------------------------
// Bessel functions (series; arguments stay ≤ k·a, a few units)
// ---------------------------------------------------------------------------

fn bessel_j0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..=40 {
        term *= -q / ((m * m) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1.0) {
            break;
        }
    }
    sum
}

fn bessel_j1(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for m in 1..=40 {
        term *= -q / ((m * (m + 1)) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Far-field circular-piston directivity D(g) = 2J₁(g)/g with D(0) = 1,
/// and its derivative D′(g) = −2J₂(g)/g, as (D, D′).
fn directivity(g: f64) -> (f64, f64) {
    if g.abs() < 1e-8 {
        // series: D = 1 − g²/8 + …, D′ = −g/4 + …
        (1.0 - g * g / 8.0, -0.25 * g)
    } else {
        let j1 = bessel_j1(g);
        let j2 = 2.0 * j1 / g - bessel_j0(g);
        (2.0 * j1 / g, -2.0 * j2 / g)
    }
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

/// Complex pressure at `x` [Pa]: far-field piston-source summation over all
/// transducers.
pub fn pressure(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    x: &Vector3<f64>,
) -> Result<Complex64, AcousticsError> {
    Ok(pressure_and_gradient(cfg, act, x)?.0)
}

/// Complex pressure and its analytic spatial gradient at `x`.
///
/// Each transducer contributes A·D(k·a·sin α)·e^{i(k·d + φ)}/d; the gradient
/// differentiates distance, spreading and directivity terms exactly, so the
/// Gor'kov potential needs no nested finite differences.
pub fn pressure_and_gradient(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    x: &Vector3<f64>,
) -> Result<(Complex64, Vector3<Complex64>), AcousticsError> {
    act.check(cfg)?;
    let k = cfg.wavenumber();
    let ka = k * cfg.transducer_radius;
    let mut p = Complex64::new(0.0, 0.0);
    let mut grad = Vector3::new(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));

    for idx in 0..cfg.positions.len() {
        let r = x - cfg.positions[idx];
        let d = r.norm();
        if d < SINGULAR_DISTANCE {
            return Err(AcousticsError::SingularDistance(d));
        }
        let n = cfg.normals[idx];
        let axial = r.dot(&n);
        let perp2 = (d * d - axial * axial).max(0.0);
        let perp = perp2.sqrt();
        let g = ka * perp / d;
        let (dir, dir_slope) = directivity(g);

        let amp = cfg.reference_amplitude * act.amplitudes[idx];
        let phase = Complex64::from_polar(1.0, k * d + act.phases[idx]);
        p += amp * dir / d * phase;

        // ∇d = r/d; ∇g = k·a·(∇perp·d − perp·∇d)/d², ∇perp = (r − axial·n)/perp
        let grad_d = r / d;
        let grad_g = if perp > 1e-12 * d {
            ((r - n * axial) / perp * d - grad_d * perp) * (ka / (d * d))
        } else {
            Vector3::zeros() // on-axis: directivity is stationary
        };
        let scale = amp * phase;
        for i in 0..3 {
            let real_part = dir_slope * grad_g[i] / d - dir * grad_d[i] / (d * d);
            let imag_part = dir / d * k * grad_d[i];
            grad[i] += scale * Complex64::new(real_part, imag_part);
        }
    }
    Ok((p, grad))
}

/// Gor'kov potential U at `x` [J], using the analytic pressure gradient.
///
/// U = (4πa³/3)·[ f₁·|p|²/(4ρ₀c²) − (3f₂/8)·|∇p|²/(ρ₀ω²) ] with the
/// monopole factor f₁ = 1 (the bead is effectively incompressible next to
/// air) and the dipole factor f₂ = 2(ρ_p − ρ₀)/(2ρ_p + ρ₀).
pub fn gorkov_potential(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    particle: &ParticleProps,
    x: &Vector3<f64>,
) -> Result<f64, AcousticsError> {
    particle.validate(cfg)?;
    let (p, grad) = pressure_and_gradient(cfg, act, x)?;
    Ok(gorkov_from_field(cfg, particle, p, grad.map(|c| c.norm_sqr()).sum()))
}

fn gorkov_from_field(
    cfg: &ArrayConfig,
    particle: &ParticleProps,
    p: Complex64,
    grad_norm_sqr: f64,
) -> f64 {
    let rho0 = cfg.air_density;
    let c = cfg.sound_speed;
    let omega = 2.0 * std::f64::consts::PI * cfg.frequency;
    let f2 = 2.0 * (particle.density - rho0) / (2.0 * particle.density + rho0);
    let vol_factor = 4.0 * std::f64::consts::PI * particle.radius.powi(3) / 3.0;
    vol_factor * (p.norm_sqr() / (4.0 * rho0 * c * c) - 0.375 * f2 * grad_norm_sqr / (rho0 * omega * omega))
}

/// Same potential with the pressure gradient by central differences instead
/// of the analytic expression; kept as an independent cross-check of the
/// field derivatives.
fn gorkov_potential_fd(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    particle: &ParticleProps,
    x: &Vector3<f64>,
) -> Result<f64, AcousticsError> {
    particle.validate(cfg)?;
    let h = GORKOV_FD_STEP;
    let p = pressure(cfg, act, x)?;
    let mut grad_norm_sqr = 0.0;
    for i in 0..3 {
        let mut hi = *x;
        let mut lo = *x;
        hi[i] += h;
        lo[i] -= h;
        let dp = (pressure(cfg, act, &hi)? - pressure(cfg, act, &lo)?) / (2.0 * h);
        grad_norm_sqr += dp.norm_sqr();
    }
    Ok(gorkov_from_field(cfg, particle, p, grad_norm_sqr))
}

/// Acoustic radiation force F = −∇U at `x` [N], gradient by central
/// differences with step [`GORKOV_FD_STEP`].
pub fn gorkov_force(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    particle: &ParticleProps,
    x: &Vector3<f64>,
) -> Result<Vector3<f64>, AcousticsError> {
    let h = GORKOV_FD_STEP;
    let mut f = Vector3::zeros();
    for i in 0..3 {
        let mut hi = *x;
        let mut lo = *x;
        hi[i] += h;
        lo[i] -= h;
        f[i] = -(gorkov_potential(cfg, act, particle, &hi)?
            - gorkov_potential(cfg, act, particle, &lo)?)
            / (2.0 * h);
    }
    Ok(f)
}

/// Evaluate [`gorkov_force`] over many points, fanned out via [`crate::par`].
pub fn force_batch(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    particle: &ParticleProps,
    points: &[Vector3<f64>],
) -> Result<Vec<Vector3<f64>>, AcousticsError> {
    par::map_collect(points, |x| gorkov_force(cfg, act, particle, x))
        .into_iter()
        .collect()
}

/// Sequential reference of [`force_batch`] (for benchmarking the dispatch).
pub fn force_batch_seq(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    particle: &ParticleProps,
    points: &[Vector3<f64>],
) -> Result<Vec<Vector3<f64>>, AcousticsError> {
    par::map_collect_seq(points, |x| gorkov_force(cfg, act, particle, x))
        .into_iter()
        .collect()
}

/// Scan the field on a regular lattice and write CSV rows
/// `x,y,z,Re p,Im p,Fx,Fy,Fz`. Rows are evaluated concurrently.
#[allow(clippy::too_many_arguments)]
pub fn write_field_scan_csv(
    cfg: &ArrayConfig,
    act: &TransducerActivation,
    particle: &ParticleProps,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
    steps: [usize; 3],
    path: &Path,
) -> Result<(), AcousticsError> {
    let counts = steps.map(|s| s.max(1));
    let total = counts[0] * counts[1] * counts[2];
    let coord = |axis: usize, idx: usize| -> f64 {
        if counts[axis] == 1 {
            lo[axis]
        } else {
            lo[axis] + (hi[axis] - lo[axis]) * idx as f64 / (counts[axis] - 1) as f64
        }
    };
    let rows = par::map_range(total, |flat| -> Result<String, AcousticsError> {
        let iz = flat % counts[2];
        let iy = (flat / counts[2]) % counts[1];
        let ix = flat / (counts[1] * counts[2]);
        let x = Vector3::new(coord(0, ix), coord(1, iy), coord(2, iz));
        let p = pressure(cfg, act, &x)?;
        let f = gorkov_force(cfg, act, particle, &x)?;
        Ok(format!("{},{},{},{},{},{},{},{}\n", x.x, x.y, x.z, p.re, p.im, f.x, f.y, f.z))
    });
    let mut out = String::from("x,y,z,Re p,Im p,Fx,Fy,Fz\n");
    for row in rows {
        out.push_str(&row?);
    }
    std::fs::write(path, out).map_err(|e| AcousticsError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noise(seed: &mut u64) -> f64 {
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        ((seed.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn config_builds_512_opposed_transducers() {
        let cfg = ArrayConfig::default();
        assert_eq!(cfg.transducer_count(), 512);
        let (bottom, top) = cfg.positions().split_at(256);
        assert!(bottom.iter().all(|p| p.z == -0.5 * cfg.separation));
        assert!(top.iter().all(|p| p.z == 0.5 * cfg.separation));
        let (nb, nt) = cfg.normals().split_at(256);
        for (a, b) in nb.iter().zip(nt) {
            assert_relative_eq!(a.dot(b), -1.0); // antiparallel
        }
        // grids centered: mean position on the axis
        let mean: Vector3<f64> = bottom.iter().sum::<Vector3<f64>>() / 256.0;
        assert!(mean.x.abs() < 1e-12 && mean.y.abs() < 1e-12);
    }

    #[test]
    fn bessel_series_match_reference_values() {
        // frozen from a standard special-function implementation
        assert_relative_eq!(bessel_j0(0.5), 0.938469807240813, epsilon = 1e-14);
        assert_relative_eq!(bessel_j0(1.0), 0.7651976865579665, epsilon = 1e-14);
        assert_relative_eq!(bessel_j0(2.0), 0.22389077914123562, epsilon = 1e-14);
        assert_relative_eq!(bessel_j0(3.269), -0.3372585187731891, epsilon = 1e-14);
        assert_relative_eq!(bessel_j1(0.5), 0.24226845767487387, epsilon = 1e-14);
        assert_relative_eq!(bessel_j1(1.0), 0.44005058574493355, epsilon = 1e-14);
        assert_relative_eq!(bessel_j1(2.0), 0.5767248077568734, epsilon = 1e-14);
        assert_relative_eq!(bessel_j1(3.269), 0.2333713932520977, epsilon = 1e-14);
    }

    #[test]
    fn single_transducer_pressure_halves_when_distance_doubles() {
        let cfg = ArrayConfig::default();
        let mut act = TransducerActivation {
            phases: vec![0.0; cfg.transducer_count()],
            amplitudes: vec![0.0; cfg.transducer_count()],
        };
        act.amplitudes[0] = 1.0; // one bottom transducer radiating up
        let t = cfg.positions()[0];
        let n = cfg.normals()[0];
        let p1 = pressure(&cfg, &act, &(t + n * 0.05)).unwrap();
        let p2 = pressure(&cfg, &act, &(t + n * 0.10)).unwrap();
        assert_relative_eq!(p1.norm(), 2.0 * p2.norm(), max_relative = 1e-12);
    }

    #[test]
    fn focusing_maximizes_pressure_at_the_focus() {
        let cfg = ArrayConfig::default();
        let focus = Vector3::new(0.004, -0.007, 0.012);
        let act = focus_activation(&cfg, &focus).unwrap();
        let on = pressure(&cfg, &act, &focus).unwrap().norm();
        let mut seed = 0x5eed_f0c5_u64;
        for _ in 0..100 {
            let off = focus
                + Vector3::new(noise(&mut seed), noise(&mut seed), noise(&mut seed)) * 0.01;
            let p = pressure(&cfg, &act, &off).unwrap().norm();
            assert!(p <= on, "|p| {p:.3} at offset beats focus {on:.3}");
        }
    }

    #[test]
    fn twin_trap_has_a_pressure_null_at_its_center() {
        let cfg = ArrayConfig::default();
        let mut seed = 0xacc5_7150_u64;
        for _ in 0..10 {
            // keep x inside half a pitch of the grid center so the signature
            // plane splits the aperture 8/8 columns; an unbalanced split
            // leaves a real, physical residual at the focus
            let trap = Vector3::new(
                noise(&mut seed) * 0.004,
                noise(&mut seed) * ORACLE_HALF_EXTENT,
                noise(&mut seed) * ORACLE_HALF_EXTENT,
            );
            let act = twin_trap_activation(&cfg, &trap).unwrap();
            let center = pressure(&cfg, &act, &trap).unwrap().norm();
            let mut ring_max = 0.0f64;
            for k in 0..64 {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                let x = trap + Vector3::new(a.cos(), 0.0, a.sin()) * 0.01;
                ring_max = ring_max.max(pressure(&cfg, &act, &x).unwrap().norm());
            }
            assert!(
                center <= 0.10 * ring_max,
                "null washed out: |p|(trap) = {center:.3}, ring max = {ring_max:.3}"
            );
        }
    }

    #[test]
    fn twin_trap_phases_follow_recomputed_distances() {
        let cfg = ArrayConfig::default();
        let trap = Vector3::new(0.01, 0.0, 0.0);
        let act = twin_trap_activation(&cfg, &trap).unwrap();
        let k = cfg.wavenumber();
        let tau = 2.0 * std::f64::consts::PI;
        for (idx, t) in cfg.positions().iter().enumerate() {
            let mut expected = -k * (trap - t).norm();
            if t.x < trap.x {
                expected += std::f64::consts::PI;
            }
            let wrapped = (act.phases[idx] - expected).rem_euclid(tau);
            assert!(
                wrapped.min(tau - wrapped) < 1e-9,
                "transducer {idx}: phase {} != recomputed {expected}",
                act.phases[idx]
            );
        }
        // symmetry at the center trap: reflection through the signature
        // plane x = 0 maps the pattern onto itself up to the π offset
        let center = twin_trap_activation(&cfg, &Vector3::zeros()).unwrap();
        for (idx, t) in cfg.positions().iter().enumerate() {
            if t.x <= 0.0 {
                continue; // pair each +x transducer with its mirror
            }
            let mirror = cfg
                .positions()
                .iter()
                .position(|m| {
                    (m.x + t.x).abs() < 1e-12 && (m.y - t.y).abs() < 1e-12 && m.z == t.z
                })
                .expect("grid is mirror-symmetric");
            let diff = (center.phases[idx] - center.phases[mirror] + std::f64::consts::PI)
                .rem_euclid(tau);
            assert!(diff.min(tau - diff) < 1e-9);
        }
    }

    #[test]
    fn trap_center_force_vanishes_against_the_axis_scan_peak() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps::default();
        let trap = Vector3::new(0.0, 0.0, 0.0);
        let act = twin_trap_activation(&cfg, &trap).unwrap();
        let at_center = gorkov_force(&cfg, &act, &particle, &trap).unwrap().norm();
        let mut peak = 0.0f64;
        for k in 1..=40 {
            let dx = k as f64 * 1e-4;
            for sgn in [-1.0, 1.0] {
                let f = gorkov_force(&cfg, &act, &particle, &(trap + Vector3::new(sgn * dx, 0.0, 0.0)))
                    .unwrap();
                peak = peak.max(f.norm());
            }
        }
        assert!(
            at_center <= 0.01 * peak,
            "center force {at_center:.3e} vs scan peak {peak:.3e}"
        );
    }

    #[test]
    fn vertical_force_is_restoring_within_the_first_peak() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps::default();
        let trap = Vector3::new(0.0, 0.0, 0.005);
        let act = twin_trap_activation(&cfg, &trap).unwrap();
        // first vertical peak sits near an eighth of the standing-wave
        // period; stay safely inside it
        for k in 1..=8 {
            let dz = k as f64 * 1e-4;
            let up = gorkov_force(&cfg, &act, &particle, &(trap + Vector3::new(0.0, 0.0, dz)))
                .unwrap();
            let down = gorkov_force(&cfg, &act, &particle, &(trap - Vector3::new(0.0, 0.0, dz)))
                .unwrap();
            assert!(up.z < 0.0, "force not restoring at +{dz:.1e} m: F_z = {:.3e}", up.z);
            assert!(down.z > 0.0, "force not restoring at -{dz:.1e} m: F_z = {:.3e}", down.z);
        }
    }

    #[test]
    fn force_field_is_symmetric_under_half_turn_about_the_trap_axis() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps::default();
        let trap = Vector3::zeros();
        let act = twin_trap_activation(&cfg, &trap).unwrap();
        let mut seed = 0x0707_2024_u64;
        for _ in 0..25 {
            let off = Vector3::new(noise(&mut seed), noise(&mut seed), noise(&mut seed)) * 2e-3;
            let f = gorkov_force(&cfg, &act, &particle, &(trap + off)).unwrap();
            let rotated = Vector3::new(-off.x, -off.y, off.z);
            let fr = gorkov_force(&cfg, &act, &particle, &(trap + rotated)).unwrap();
            assert_relative_eq!(fr.x, -f.x, epsilon = 1e-9 * f.norm().max(1e-12));
            assert_relative_eq!(fr.y, -f.y, epsilon = 1e-9 * f.norm().max(1e-12));
            assert_relative_eq!(fr.z, f.z, epsilon = 1e-9 * f.norm().max(1e-12));
        }
    }

    #[test]
    fn amplitude_scaling_is_linear_in_pressure_and_quadratic_in_force() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps::default();
        let trap = Vector3::new(0.002, 0.001, -0.003);
        let act = twin_trap_activation(&cfg, &trap).unwrap();
        let s = 0.37;
        let scaled = TransducerActivation {
            phases: act.phases.clone(),
            amplitudes: act.amplitudes.iter().map(|a| a * s).collect(),
        };
        let x = trap + Vector3::new(1e-3, -5e-4, 8e-4);
        let p = pressure(&cfg, &act, &x).unwrap();
        let ps = pressure(&cfg, &scaled, &x).unwrap();
        assert_relative_eq!(ps.re, s * p.re, max_relative = 1e-12);
        assert_relative_eq!(ps.im, s * p.im, max_relative = 1e-12);
        let f = gorkov_force(&cfg, &act, &particle, &x).unwrap();
        let fs = gorkov_force(&cfg, &scaled, &particle, &x).unwrap();
        for i in 0..3 {
            assert_relative_eq!(fs[i], s * s * f[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn analytic_and_finite_difference_field_gradients_agree() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps::default();
        let trap = Vector3::new(0.005, -0.003, 0.008);
        let act = twin_trap_activation(&cfg, &trap).unwrap();
        let h = GORKOV_FD_STEP;
        let mut seed = 0xfd_c0de_u64;
        for _ in 0..100 {
            let x = trap + Vector3::new(noise(&mut seed), noise(&mut seed), noise(&mut seed)) * 2e-3;
            let via_analytic = gorkov_force(&cfg, &act, &particle, &x).unwrap();
            let mut via_fd = Vector3::zeros();
            for i in 0..3 {
                let mut hi = x;
                let mut lo = x;
                hi[i] += h;
                lo[i] -= h;
                via_fd[i] = -(gorkov_potential_fd(&cfg, &act, &particle, &hi).unwrap()
                    - gorkov_potential_fd(&cfg, &act, &particle, &lo).unwrap())
                    / (2.0 * h);
            }
            let rel = (via_analytic - via_fd).norm() / via_analytic.norm().max(1e-18);
            assert!(rel <= 5e-3, "gradient routes disagree by {rel:.2e} at {x:?}");
        }
    }

    #[test]
    fn oversized_particle_is_rejected() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps { radius: 1.0e-3, ..ParticleProps::default() };
        let act = twin_trap_activation(&cfg, &Vector3::zeros()).unwrap();
        let err = gorkov_potential(&cfg, &act, &particle, &Vector3::new(0.0, 0.0, 1e-3));
        assert!(matches!(err, Err(AcousticsError::RadiusTooLarge { .. })));
    }

    #[test]
    fn trap_outside_the_volume_is_rejected() {
        let cfg = ArrayConfig::default();
        let err = twin_trap_activation(&cfg, &Vector3::new(0.05, 0.0, 0.0));
        assert!(matches!(err, Err(AcousticsError::OutsideWorkingVolume { .. })));
    }

    #[test]
    fn config_json_round_trips_and_rebuilds_geometry() {
        let cfg = ArrayConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(!json.contains("positions"), "derived geometry must not be persisted");
        let back: ArrayConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.transducer_count(), cfg.transducer_count());
        for (a, b) in back.positions().iter().zip(cfg.positions()) {
            assert_eq!(a, b);
        }
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("array.json");
        std::fs::write(&file, &json).unwrap();
        let loaded = load_array_config(&file).unwrap();
        assert_eq!(loaded.transducer_count(), 512);
    }

    #[test]
    fn field_scan_csv_has_header_and_full_lattice() {
        let cfg = ArrayConfig::default();
        let particle = ParticleProps::default();
        let act = twin_trap_activation(&cfg, &Vector3::zeros()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("scan.csv");
        write_field_scan_csv(
            &cfg,
            &act,
            &particle,
            &Vector3::new(-2e-3, 0.0, -2e-3),
            &Vector3::new(2e-3, 0.0, 2e-3),
            [3, 1, 3],
            &file,
        )
        .unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,z,Re p,Im p,Fx,Fy,Fz"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].split(',').count(), 8);
    }
}
