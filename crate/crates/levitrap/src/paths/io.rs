//! Shape file input: JSON shape specs and waypoint CSV.

use super::{BuiltinShape, PathError, Plane, ReferencePath};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk shape description. Exactly one of `kind` (builtin) or `waypoints`
/// must be present.
///
/// * `size_m` — builtin size [m]: bounding-box width for circle/squircle/fish,
///   the r parameter for the cardioid.
/// * `plane` — "xz" or "yz" (defaults: cardioid "yz", others "xz").
/// * `center_m` — translation applied to the shape [m].
/// * `periodic` — waypoint paths only; closed when true (default).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<bool>,
}

impl ShapeSpec {
    pub fn builtin(kind: BuiltinShape, size_m: f64) -> Self {
        Self {
            kind: Some(kind.name().to_string()),
            size_m: Some(size_m),
            plane: None,
            center_m: None,
            waypoints: None,
            periodic: None,
        }
    }

    /// Short human-readable label for report sidecars.
    pub fn label(&self) -> String {
        match (&self.kind, &self.waypoints) {
            (Some(k), _) => match self.size_m {
                Some(s) => format!("{k}:{s}"),
                None => k.clone(),
            },
            (None, Some(w)) => format!("waypoints:{}", w.len()),
            _ => "unspecified".to_string(),
        }
    }
}

/// Build a path from a parsed spec.
pub fn shape_from_spec(spec: &ShapeSpec) -> Result<ReferencePath, PathError> {
    let mut path = match (&spec.kind, &spec.waypoints) {
        (Some(kind), None) => {
            let kind = BuiltinShape::parse(kind)?;
            let size = spec.size_m.ok_or(PathError::BadSize(f64::NAN))?;
            ReferencePath::builtin(kind, size)?
        }
        (None, Some(points)) => {
            let pts: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(*p)).collect();
            ReferencePath::spline(&pts, spec.periodic.unwrap_or(true))?
        }
        _ => return Err(PathError::AmbiguousSpec),
    };
    if let Some(plane) = &spec.plane {
        path.set_plane(Plane::parse(plane)?);
    }
    if let Some(c) = spec.center_m {
        path.translate(Vector3::from(c));
    }
    Ok(path)
}

/// Load a shape JSON file.
pub fn load_shape_json(file: &Path) -> Result<(ShapeSpec, ReferencePath), PathError> {
    let text = std::fs::read_to_string(file).map_err(|source| PathError::Io {
        path: file.display().to_string(),
        source,
    })?;
    let spec: ShapeSpec = serde_json::from_str(&text).map_err(|e| PathError::Parse {
        path: file.display().to_string(),
        message: e.to_string(),
    })?;
    let path = shape_from_spec(&spec)?;
    Ok((spec, path))
}

/// Load waypoints from CSV with one `x,y,z` row per point [m]. A leading
/// `x,y,z` header row is accepted and skipped.
pub fn load_waypoints_csv(file: &Path) -> Result<Vec<Vector3<f64>>, PathError> {
    let text = std::fs::read_to_string(file).map_err(|source| PathError::Io {
        path: file.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && line.chars().any(|c| c.is_ascii_alphabetic()) {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(PathError::Csv {
                path: file.display().to_string(),
                line: i + 1,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let mut v = [0.0; 3];
        for (j, f) in fields.iter().enumerate() {
            v[j] = f.parse::<f64>().map_err(|e| PathError::Csv {
                path: file.display().to_string(),
                line: i + 1,
                message: format!("field {}: {e}", j + 1),
            })?;
        }
        out.push(Vector3::from(v));
    }
    Ok(out)
}
