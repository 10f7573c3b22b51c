use serde::{Deserialize, Serialize};

use super::{bounding_box, TriangleMesh};
use crate::{Error, Result, Vec3};

/// Margin kept between the longest bounding-box axis and the cube faces.
pub const DEFAULT_MARGIN: f64 = 0.02;

/// `normalized = scale * (original - center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.center)) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + Vec3::from(self.center)
    }
}

/// Centers the bounding box at the origin and scales so the longest axis
/// spans `[-0.5 + margin, 0.5 - margin]`.
pub fn normalize_points(points: &[Vec3], margin: f64) -> Result<(Vec<Vec3>, NormalizeTransform)> {
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::InvalidArgument(format!("margin {margin} outside [0, 0.5)")));
    }
    let (lo, hi) = bounding_box(points).ok_or_else(|| Error::Empty("no vertices".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::Degenerate("bounding box has zero extent".into()));
    }
    let transform = NormalizeTransform {
        center: ((lo + hi) * 0.5).into(),
        scale: (1.0 - 2.0 * margin) / extent,
    };
    Ok((points.iter().map(|p| transform.apply(p)).collect(), transform))
}

pub fn normalize_to_unit_cube(mesh: &TriangleMesh, margin: f64) -> Result<(TriangleMesh, NormalizeTransform)> {
    let (vertices, transform) = normalize_points(&mesh.vertices, margin)?;
    Ok((
        TriangleMesh {
            vertices,
            faces: mesh.faces.clone(),
            // Uniform scaling keeps unit normals unit.
            vertex_normals: mesh.vertex_normals.clone(),
        },
        transform,
    ))
}
