//! Field and quad-mesh quality measures.

mod quad;

pub use quad::{
    angle_distortion, area_distortion, count_irregular, jacobian_ratio, quad_area, quad_quality,
    quad_singularities, FaceQuality, JacobianRatios, QuadQualityReport,
};

use crate::bvh::TriangleBvh;
use crate::crossfield::{alignment_deviation, FieldOnMesh};
use crate::mesh::{sample_surface, CurvatureFrame, TriangleMesh, UMBILIC_THRESHOLD};
use crate::{Error, Result};

/// Default number of surface samples per side for [`chamfer_l1`].
pub const DEFAULT_CHAMFER_SAMPLES: usize = 100_000;

/// Mean alignment deviation of the field against principal directions,
/// skipping sites whose anisotropy is below `mask` (use
/// [`UMBILIC_THRESHOLD`] by default).
pub fn angular_error(field: &FieldOnMesh, frames: &[CurvatureFrame], mask: f64) -> Result<f64> {
    if field.samples.len() != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for {} frames",
            field.samples.len(),
            frames.len()
        )));
    }
    let devs: Vec<f64> = field
        .samples
        .iter()
        .zip(frames)
        .filter(|(_, f)| f.anisotropy >= mask)
        .map(|(s, f)| alignment_deviation(&s.alpha, &f.dir_max, &f.dir_min))
        .collect();
    if devs.is_empty() {
        return Err(Error::Empty(format!("no site with anisotropy >= {mask}")));
    }
    Ok(devs.iter().sum::<f64>() / devs.len() as f64)
}

/// [`angular_error`] with the default umbilic mask.
pub fn angular_error_default(field: &FieldOnMesh, frames: &[CurvatureFrame]) -> Result<f64> {
    angular_error(field, frames, UMBILIC_THRESHOLD)
}

/// Mean alignment deviation of every sample against its own ground-truth
/// frame `(μ, ν)`.
pub fn gt_angular_error(field: &FieldOnMesh) -> Result<f64> {
    if !field.has_gt() {
        return Err(Error::Empty("field carries no ground-truth frames".into()));
    }
    let sum: f64 = field
        .samples
        .iter()
        .map(|s| alignment_deviation(&s.alpha, &s.gt_mu.unwrap(), &s.gt_nu.unwrap()))
        .sum();
    Ok(sum / field.samples.len() as f64)
}

/// Symmetric Chamfer distance ×10⁴: the mean of the two one-sided mean
/// point-to-surface distances, each over `samples` area-uniform points.
pub fn chamfer_l1(a: &TriangleMesh, b: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    if a.faces.is_empty() || b.faces.is_empty() {
        return Err(Error::Empty("chamfer needs two non-empty meshes".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("chamfer needs at least one sample".into()));
    }
    let one_sided = |from: &TriangleMesh, to: &TriangleMesh| -> Result<f64> {
        let cloud = sample_surface(from, samples, seed)?;
        let bvh = TriangleBvh::new(to);
        let total: f64 = cloud
            .points
            .iter()
            .map(|p| bvh.closest(p, f64::INFINITY).map_or(0.0, |h| h.distance))
            .sum();
        Ok(total / samples as f64)
    };
    Ok(1e4 * 0.5 * (one_sided(a, b)? + one_sided(b, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfield::{CrossFieldSample, SiteKind};
    use crate::fixtures;
    use crate::mesh::principal_curvatures;
    use crate::Vec3;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn field_from(frames: &[CurvatureFrame], angle: f64) -> FieldOnMesh {
        FieldOnMesh {
            site: SiteKind::Vertex,
            samples: frames
                .iter()
                .map(|f| {
                    let a = crate::crossfield::rotate_about(&f.dir_max, &f.normal, angle);
                    CrossFieldSample::new(f.point, f.normal, a)
                })
                .collect(),
        }
    }

    #[test]
    fn angular_error_examples() {
        let mesh = fixtures::cylinder(0.3, 0.9, 48, 24, false);
        let frames = principal_curvatures(&mesh).unwrap();
        assert!(angular_error_default(&field_from(&frames, 0.0), &frames).unwrap() < 1e-12);
        let off = angular_error_default(&field_from(&frames, FRAC_PI_4), &frames).unwrap();
        assert!((off - (SQRT_2 - 1.0)).abs() < 1e-9);
        let quarter = angular_error_default(&field_from(&frames, 0.3 + std::f64::consts::FRAC_PI_2), &frames).unwrap();
        assert!((quarter - angular_error_default(&field_from(&frames, 0.3), &frames).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_is_an_error() {
        let mesh = fixtures::plane_grid(4, 0.5);
        let frames = principal_curvatures(&mesh).unwrap();
        assert!(angular_error_default(&field_from(&frames, 0.0), &frames).is_err());
    }

    #[test]
    fn chamfer_identical_and_offset_spheres() {
        let a = fixtures::icosphere(0.4, 4);
        assert!(chamfer_l1(&a, &a, 20_000, 3).unwrap() < 1e-2);
        let b = fixtures::icosphere(0.41, 4);
        let cd = chamfer_l1(&a, &b, 20_000, 3).unwrap();
        assert!((70.0..130.0).contains(&cd), "{cd}");
        assert_eq!(cd, chamfer_l1(&a, &b, 20_000, 3).unwrap());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let a = fixtures::icosphere(0.4, 2);
        let b = fixtures::cube(0.7, 3);
        let n = 10_000;
        let brute_side = |from: &TriangleMesh, to: &TriangleMesh| {
            let pts = sample_surface(from, n, 5).unwrap().points;
            pts.iter()
                .map(|p| {
                    (0..to.faces.len())
                        .map(|f| (crate::bvh::closest_point_on_triangle(p, &to.corners(f)) - p).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / n as f64
        };
        let brute = 1e4 * 0.5 * (brute_side(&a, &b) + brute_side(&b, &a));
        let fast = chamfer_l1(&a, &b, n, 5).unwrap();
        assert!((brute - fast).abs() < 1e-9 * brute, "{brute} vs {fast}");
    }

    #[test]
    fn chamfer_is_rigid_invariant_and_linear_in_scale() {
        let a = fixtures::icosphere(0.3, 3);
        let b = fixtures::torus(0.25, 0.08, 32, 16);
        let base = chamfer_l1(&a, &b, 5000, 1).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = Vec3::new(0.1, -0.2, 0.05);
        let moved = chamfer_l1(&a.transformed(&rot, t), &b.transformed(&rot, t), 5000, 1).unwrap();
        assert!((moved - base).abs() < 1e-9 * base.max(1.0));
        let scale = nalgebra::Rotation3::identity();
        let scaled = |m: &TriangleMesh| {
            let mut m = m.transformed(&scale, Vec3::zeros());
            m.vertices.iter_mut().for_each(|v| *v *= 2.0);
            m
        };
        let big = chamfer_l1(&scaled(&a), &scaled(&b), 5000, 1).unwrap();
        assert!((big - 2.0 * base).abs() < 1e-9 * base);
    }
}
