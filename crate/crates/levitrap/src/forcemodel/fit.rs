//! Calibration: fit the analytic trap models against the field oracle.
//!
//! Traps are laid out on a small grid, each probed at random displacements
//! inside the first force peaks. The oracle trap is oriented so its stiff
//! lobe axis points along the horizontal displacement — the way the device
//! is actually driven — which is what makes a single axis-symmetric radial
//! profile the right abstraction. Three models are fitted to the same
//! samples and compared: a per-axis linear spring, a per-axis sinusoid, and
//! the axis-symmetric product of sinusoids.
//!
//! Fitted peak amplitudes inherit the oracle's arbitrary pressure scale, so
//! the calibration stores separate scale factors mapping them onto the
//! measured device force capabilities; planners consume the rescaled
//! parameters.

use std::path::Path;

use nalgebra::{Matrix2, Matrix5, Vector2, Vector3, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustics::{gorkov_force, oriented_twin_trap_activation, ArrayConfig, ParticleProps};
use crate::forcemodel::{ForceParams, LegacyParams, ModelError};
use crate::par;

/// Measured horizontal force capability of the device [N].
pub const DEVICE_PEAK_RADIAL: f64 = 2.1e-5;
/// Measured vertical force capability of the device [N].
pub const DEVICE_PEAK_VERTICAL: f64 = 4.2e-5;

/// Relative noise floor: probes whose oracle force is below this fraction of
/// the per-trap peak are excluded from relative-error averages.
pub const NOISE_FLOOR_FRACTION: f64 = 0.01;

/// Cubic lattice of trap positions to calibrate over.
#[derive(Clone, Copy, Debug)]
pub struct TrapGrid {
    /// Lattice center [m].
    pub center: Vector3<f64>,
    /// Lateral half-extent of the lattice [m].
    pub half_lateral: f64,
    /// Vertical half-extent of the lattice [m].
    pub half_vertical: f64,
    /// Traps per axis (cubed for the total count).
    pub per_axis: usize,
}

impl TrapGrid {
    /// Desk-scale lattice: 3×3×3 traps over a 8×8×20 mm box. Kept lateral-
    /// tight so every signature plane splits the aperture near-evenly.
    pub fn desk_scale() -> Self {
        Self {
            center: Vector3::zeros(),
            half_lateral: 4.0e-3,
            half_vertical: 10.0e-3,
            per_axis: 3,
        }
    }

    /// Trap positions in lattice order.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        let n = self.per_axis.max(1);
        let frac = |i: usize| {
            if n == 1 {
                0.0
            } else {
                2.0 * i as f64 / (n - 1) as f64 - 1.0
            }
        };
        let mut out = Vec::with_capacity(n * n * n);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    out.push(
                        self.center
                            + Vector3::new(
                                frac(ix) * self.half_lateral,
                                frac(iy) * self.half_lateral,
                                frac(iz) * self.half_vertical,
                            ),
                    );
                }
            }
        }
        out
    }
}

/// Per-trap probe protocol: scans along the main axes measure the force
/// profiles out to near their peaks, and a smaller random 3D cloud pins the
/// radial–vertical cross-coupling that pure scans leave undetermined.
#[derive(Clone, Copy, Debug)]
pub struct ProbeSpec {
    /// Probes per trap (split between scans and cloud by `axis_fraction`).
    pub per_trap: usize,
    /// Fraction of probes placed on the ± main axes.
    pub axis_fraction: f64,
    /// Axis-scan reach [m]; must stay inside the first force peaks.
    pub axis_max_radial: f64,
    pub axis_max_vertical: f64,
    /// Radial range of the 3D cloud [m]; kept shorter than the scans since
    /// the trap's azimuthal anisotropy grows toward the radial peak.
    pub min_radial: f64,
    pub max_radial: f64,
    /// Vertical bound of the 3D cloud [m].
    pub max_vertical: f64,
    /// RNG seed (one stream per trap, derived from this).
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        // first peaks of the default oracle sit near 2.8 mm radial and
        // 1.2 mm vertical
        Self {
            per_trap: 100,
            axis_fraction: 0.75,
            axis_max_radial: 2.6e-3,
            axis_max_vertical: 1.1e-3,
            min_radial: 0.2e-3,
            max_radial: 1.5e-3,
            max_vertical: 0.7e-3,
            seed: 0x0f17_ca1b,
        }
    }
}

/// One oracle evaluation: a trap, a particle displaced from it, the force.
#[derive(Clone, Copy, Debug)]
struct ProbeSample {
    /// Trap position [m].
    u: Vector3<f64>,
    /// Particle position [m].
    p: Vector3<f64>,
    /// Radial displacement u−p magnitude [m].
    r: f64,
    /// Vertical displacement (u−p)_z [m].
    dz: f64,
    /// Oracle force [N], and its component along the horizontal
    /// displacement direction.
    force: Vector3<f64>,
    fh: f64,
    /// Trap index the sample belongs to.
    trap: usize,
}

/// Mean relative errors ‖F_model − F_oracle‖/‖F_oracle‖ of the three models.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ModelErrors {
    pub spring: f64,
    pub sinusoid: f64,
    pub axisym: f64,
}

/// Per-trap error breakdown plus the overall averages.
#[derive(Clone, Debug)]
pub struct FitReport {
    /// One row per trap: position, samples drawn, samples above the noise
    /// floor, and per-model mean relative errors over those samples.
    pub per_trap: Vec<(Vector3<f64>, usize, usize, ModelErrors)>,
    pub overall: ModelErrors,
    pub samples: usize,
    pub samples_used: usize,
}

/// Fitted parameters plus the device rescaling, as persisted to JSON.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Calibration {
    /// Axis-symmetric parameters in oracle force units.
    pub fitted: ForceParams,
    /// Comparison models in oracle force units.
    pub legacy: LegacyParams,
    /// Multipliers taking fitted peak forces to the measured device
    /// capabilities.
    pub scale_r: f64,
    pub scale_z: f64,
    pub errors: ModelErrors,
    pub traps: usize,
    pub probes_per_trap: usize,
}

impl Calibration {
    /// Planner-facing parameters: fitted spatial frequencies with peak
    /// forces rescaled to the measured device capabilities.
    pub fn device_params(&self) -> ForceParams {
        self.fitted
            .with_amplitudes(self.fitted.a_r * self.scale_r, self.fitted.a_z * self.scale_z)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ModelError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cal: Self = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cal.fitted.validate()?;
        Ok(cal)
    }
}

/// Probe the oracle over a trap grid and fit all three force models.
///
/// Probe evaluation parallelizes per trap; everything downstream is
/// deterministic in the spec's seed.
pub fn fit_models(
    cfg: &ArrayConfig,
    particle: &ParticleProps,
    traps: &TrapGrid,
    probes: &ProbeSpec,
) -> Result<(Calibration, FitReport), ModelError> {
    particle
        .validate(cfg)
        .map_err(|e| ModelError::BadParams(e.to_string()))?;
    if probes.per_trap < 4 {
        return Err(ModelError::FitFailed(format!(
            "{} probes per trap cannot constrain the models",
            probes.per_trap
        )));
    }
    if !(probes.max_radial > probes.min_radial && probes.min_radial >= 0.0)
        || probes.max_vertical <= 0.0
        || !(0.0..=1.0).contains(&probes.axis_fraction)
        || (probes.axis_fraction > 0.0
            && !(probes.axis_max_radial > 0.0 && probes.axis_max_vertical > 0.0))
    {
        return Err(ModelError::FitFailed(
            "probe spread insufficient: empty radial or vertical range".into(),
        ));
    }

    let trap_positions = traps.positions();
    let samples = collect_samples(cfg, particle, &trap_positions, probes)?;

    let fitted = fit_axisym(&samples, particle.mass)?;
    let legacy = fit_legacy(&samples)?;
    let report = error_report(&samples, &fitted, &legacy, &trap_positions);

    let calibration = Calibration {
        fitted,
        legacy,
        scale_r: DEVICE_PEAK_RADIAL / fitted.a_r,
        scale_z: DEVICE_PEAK_VERTICAL / fitted.a_z,
        errors: report.overall,
        traps: trap_positions.len(),
        probes_per_trap: probes.per_trap,
    };
    Ok((calibration, report))
}

fn collect_samples(
    cfg: &ArrayConfig,
    particle: &ParticleProps,
    trap_positions: &[Vector3<f64>],
    probes: &ProbeSpec,
) -> Result<Vec<ProbeSample>, ModelError> {
    let axis_count = (probes.per_trap as f64 * probes.axis_fraction).round() as usize;
    let per_trap = par::map_range(trap_positions.len(), |trap_idx| {
        let u = trap_positions[trap_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(probes.seed.wrapping_add(trap_idx as u64));
        let mut out = Vec::with_capacity(probes.per_trap);
        for k in 0..probes.per_trap {
            // displacement u − p: particle sits opposite the azimuth so the
            // trap pulls it along +azimuth
            let (azimuth, r, dz) = if k < axis_count {
                // scans: ±x, ±y, ±z in rotation, random reach along the axis
                match k % 6 {
                    0 | 1 | 2 | 3 => (
                        (k % 6) as f64 * std::f64::consts::FRAC_PI_2,
                        rng.gen_range(0.0..=probes.axis_max_radial),
                        0.0,
                    ),
                    4 => (0.0, 0.0, rng.gen_range(0.0..=probes.axis_max_vertical)),
                    _ => (0.0, 0.0, -rng.gen_range(0.0..=probes.axis_max_vertical)),
                }
            } else {
                (
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(probes.min_radial..=probes.max_radial),
                    rng.gen_range(-probes.max_vertical..=probes.max_vertical),
                )
            };
            let delta = Vector3::new(r * azimuth.cos(), r * azimuth.sin(), dz);
            let p = u - delta;
            let act = oriented_twin_trap_activation(cfg, &u, azimuth)?;
            let force = gorkov_force(cfg, &act, particle, &p)?;
            let fh = force.x * azimuth.cos() + force.y * azimuth.sin();
            out.push(ProbeSample { u, p, r, dz, force, fh, trap: trap_idx });
        }
        Ok::<_, crate::acoustics::AcousticsError>(out)
    });
    let mut samples = Vec::with_capacity(trap_positions.len() * probes.per_trap);
    for chunk in per_trap {
        samples.extend(chunk.map_err(|e| ModelError::FitFailed(e.to_string()))?);
    }
    Ok(samples)
}

/// Separable fit of the axis-symmetric model: coarse grid over the spatial
/// frequencies with the amplitudes solved linearly at each grid point, then
/// a joint Gauss–Newton refinement of all five parameters.
fn fit_axisym(samples: &[ProbeSample], mass: f64) -> Result<ForceParams, ModelError> {
    // For fixed frequencies the model is linear in each peak force:
    //   F_h = A_r·cos(V_z·dz)·sin(V_xr·r),  F_z = A_z·sin(V_z·dz)·cos(V_zr·r)
    let amp_for = |basis: &dyn Fn(&ProbeSample) -> (f64, f64)| -> Option<(f64, f64)> {
        let (mut btb, mut btf) = (0.0, 0.0);
        for s in samples {
            let (b, f) = basis(s);
            btb += b * b;
            btf += b * f;
        }
        (btb > 1e-12).then(|| (btf / btb, btf * btf / btb))
    };

    let mut best: Option<(f64, f64, f64, f64, f64)> = None; // sse, vz, vxr, vzr, _
    let grid = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(move |i| lo + step * i as f64)
    };
    for v_z in grid(700.0, 2200.0, 50.0) {
        // radial and vertical residuals decouple once V_z is fixed
        let mut best_h = f64::INFINITY; // −explained variance, lower is better
        let mut best_vxr = 0.0;
        for v_xr in grid(150.0, 1200.0, 25.0) {
            if let Some((_, explained)) =
                amp_for(&|s: &ProbeSample| ((v_z * s.dz).cos() * (v_xr * s.r).sin(), s.fh))
            {
                if -explained < best_h {
                    best_h = -explained;
                    best_vxr = v_xr;
                }
            }
        }
        let mut best_z = f64::INFINITY;
        let mut best_vzr = 0.0;
        for v_zr in grid(50.0, 1200.0, 25.0) {
            if let Some((_, explained)) =
                amp_for(&|s: &ProbeSample| ((v_z * s.dz).sin() * (v_zr * s.r).cos(), s.force.z))
            {
                if -explained < best_z {
                    best_z = -explained;
                    best_vzr = v_zr;
                }
            }
        }
        let sse = best_h + best_z;
        if best.map_or(true, |(s, ..)| sse < s) {
            best = Some((sse, v_z, best_vxr, best_vzr, 0.0));
        }
    }
    let (_, v_z, v_xr, v_zr, _) = best.ok_or_else(|| {
        ModelError::FitFailed("probe spread insufficient: singular normal equations".into())
    })?;
    if v_xr == 0.0 || v_zr == 0.0 {
        return Err(ModelError::FitFailed(
            "probe spread insufficient: radial basis degenerate".into(),
        ));
    }
    let a_r = amp_for(&|s: &ProbeSample| ((v_z * s.dz).cos() * (v_xr * s.r).sin(), s.fh))
        .map(|(a, _)| a)
        .ok_or_else(|| ModelError::FitFailed("degenerate radial normal equation".into()))?;
    let a_z = amp_for(&|s: &ProbeSample| ((v_z * s.dz).sin() * (v_zr * s.r).cos(), s.force.z))
        .map(|(a, _)| a)
        .ok_or_else(|| ModelError::FitFailed("degenerate vertical normal equation".into()))?;

    // joint Levenberg–Marquardt polish of x = (A_r, A_z, V_z, V_xr, V_zr)
    let mut x = Vector5::new(a_r, a_z, v_z, v_xr, v_zr);
    let sse_of = |x: &Vector5<f64>| -> f64 {
        samples
            .iter()
            .map(|s| {
                let eh = x[0] * (x[2] * s.dz).cos() * (x[3] * s.r).sin() - s.fh;
                let ez = x[1] * (x[2] * s.dz).sin() * (x[4] * s.r).cos() - s.force.z;
                eh * eh + ez * ez
            })
            .sum()
    };
    let mut sse = sse_of(&x);
    let mut lambda = 1e-3;
    for _ in 0..60 {
        let mut jtj = Matrix5::zeros();
        let mut jte = Vector5::zeros();
        for s in samples {
            let (cz, sz) = ((x[2] * s.dz).cos(), (x[2] * s.dz).sin());
            let (sr, cr) = ((x[3] * s.r).sin(), (x[4] * s.r).cos());
            let eh = x[0] * cz * sr - s.fh;
            let jh = Vector5::new(
                cz * sr,
                0.0,
                -x[0] * s.dz * sz * sr,
                x[0] * cz * s.r * (x[3] * s.r).cos(),
                0.0,
            );
            let ez = x[1] * sz * cr - s.force.z;
            let jz = Vector5::new(
                0.0,
                sz * cr,
                x[1] * s.dz * cz * cr,
                0.0,
                -x[1] * sz * s.r * (x[4] * s.r).sin(),
            );
            jtj += jh * jh.transpose() + jz * jz.transpose();
            jte += jh * eh + jz * ez;
        }
        let mut damped = jtj;
        for i in 0..5 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&(-jte)) else {
            return Err(ModelError::FitFailed(
                "probe spread insufficient: singular normal equations".into(),
            ));
        };
        let candidate = x + step;
        let new_sse = sse_of(&candidate);
        if new_sse < sse {
            let rel: f64 = (0..5).map(|i| (step[i] / x[i].abs().max(1e-300)).abs()).fold(0.0, f64::max);
            x = candidate;
            sse = new_sse;
            lambda = (lambda * 0.5).max(1e-12);
            if rel < 1e-10 {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let params = ForceParams {
        a_r: x[0],
        a_z: x[1],
        v_z: x[2],
        v_xr: x[3].abs(),
        v_zr: x[4].abs(),
        mass,
    };
    params.validate()?;
    Ok(params)
}

/// Fit the per-axis comparison models on the same samples: closed-form
/// springs and a separable sinusoid per axis.
fn fit_legacy(samples: &[ProbeSample]) -> Result<LegacyParams, ModelError> {
    let mut spring_k = [0.0; 3];
    let mut sin_a = [0.0; 3];
    let mut sin_v = [0.0; 3];
    for axis in 0..3 {
        // displacement convention of the legacy models: d = p − u
        let data: Vec<(f64, f64)> = samples
            .iter()
            .map(|s| (s.p[axis] - s.u[axis], s.force[axis]))
            .collect();
        let dtd: f64 = data.iter().map(|(d, _)| d * d).sum();
        if dtd < 1e-30 {
            return Err(ModelError::FitFailed(format!(
                "probe spread insufficient: no displacement variance on axis {axis}"
            )));
        }
        spring_k[axis] = data.iter().map(|(d, f)| d * f).sum::<f64>() / dtd;

        // sinusoid: grid the frequency, solve the amplitude, then polish
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut v = 30.0;
        while v <= 2400.0 {
            let btb: f64 = data.iter().map(|(d, _)| (v * d).sin().powi(2)).sum();
            if btb > 1e-12 {
                let a = data.iter().map(|(d, f)| (v * d).sin() * f).sum::<f64>() / btb;
                let sse: f64 = data.iter().map(|(d, f)| (a * (v * d).sin() - f).powi(2)).sum();
                if sse < best.0 {
                    best = (sse, a, v);
                }
            }
            v += 10.0;
        }
        let (mut sse, mut a, mut v) = best;
        if v == 0.0 {
            return Err(ModelError::FitFailed(
                "probe spread insufficient: sinusoid basis degenerate".into(),
            ));
        }
        let mut lambda = 1e-3;
        for _ in 0..60 {
            let mut jtj = Matrix2::zeros();
            let mut jte = Vector2::zeros();
            for &(d, f) in &data {
                let e = a * (v * d).sin() - f;
                let j = Vector2::new((v * d).sin(), a * d * (v * d).cos());
                jtj += j * j.transpose();
                jte += j * e;
            }
            let mut damped = jtj;
            for i in 0..2 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-jte)) else { break };
            let (ca, cv) = (a + step[0], v + step[1]);
            let new_sse: f64 = data.iter().map(|(d, f)| (ca * (cv * d).sin() - f).powi(2)).sum();
            if new_sse < sse {
                a = ca;
                v = cv;
                sse = new_sse;
                lambda = (lambda * 0.5).max(1e-12);
            } else {
                lambda *= 4.0;
                if lambda > 1e12 {
                    break;
                }
            }
        }
        // gauge: keep spatial frequencies positive, sign lives in the amplitude
        sin_a[axis] = if v < 0.0 { -a } else { a };
        sin_v[axis] = v.abs();
    }
    Ok(LegacyParams { spring_k, sin_a, sin_v })
}

fn error_report(
    samples: &[ProbeSample],
    fitted: &ForceParams,
    legacy: &LegacyParams,
    trap_positions: &[Vector3<f64>],
) -> FitReport {
    // per-trap noise floor: a fraction of the strongest force that trap showed
    let mut peak = vec![0.0f64; trap_positions.len()];
    for s in samples {
        peak[s.trap] = peak[s.trap].max(s.force.norm());
    }
    let mut per_trap: Vec<(Vector3<f64>, usize, usize, [f64; 3])> = trap_positions
        .iter()
        .map(|&u| (u, 0usize, 0usize, [0.0; 3]))
        .collect();
    for s in samples {
        let row = &mut per_trap[s.trap];
        row.1 += 1;
        let oracle = s.force.norm();
        if oracle < NOISE_FLOOR_FRACTION * peak[s.trap] {
            continue;
        }
        row.2 += 1;
        let models = [
            legacy.spring_force(&s.p, &s.u),
            legacy.sinusoid_force(&s.p, &s.u),
            fitted.axisym_force(&s.p, &s.u),
        ];
        for (acc, f) in row.3.iter_mut().zip(models) {
            *acc += (f - s.force).norm() / oracle;
        }
    }
    let mut total_used = 0usize;
    let mut sums = [0.0; 3];
    let rows = per_trap
        .into_iter()
        .map(|(u, n, used, acc)| {
            total_used += used;
            for (t, a) in sums.iter_mut().zip(acc) {
                *t += a;
            }
            let denom = used.max(1) as f64;
            (
                u,
                n,
                used,
                ModelErrors {
                    spring: acc[0] / denom,
                    sinusoid: acc[1] / denom,
                    axisym: acc[2] / denom,
                },
            )
        })
        .collect();
    let denom = total_used.max(1) as f64;
    FitReport {
        per_trap: rows,
        overall: ModelErrors {
            spring: sums[0] / denom,
            sinusoid: sums[1] / denom,
            axisym: sums[2] / denom,
        },
        samples: samples.len(),
        samples_used: total_used,
    }
}

/// Write the per-trap error breakdown as CSV
/// (`trap,x,y,z,samples,used,err_spring,err_sinusoid,err_axisym`; final
/// `all` row carries the overall averages).
pub fn write_error_report_csv(report: &FitReport, path: &Path) -> Result<(), ModelError> {
    let mut out = String::from("trap,x,y,z,samples,used,err_spring,err_sinusoid,err_axisym\n");
    for (idx, (u, n, used, e)) in report.per_trap.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            idx, u.x, u.y, u.z, n, used, e.spring, e.sinusoid, e.axisym
        ));
    }
    out.push_str(&format!(
        "all,,,,{},{},{},{},{}\n",
        report.samples,
        report.samples_used,
        report.overall.spring,
        report.overall.sinusoid,
        report.overall.axisym
    ));
    std::fs::write(path, out).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
