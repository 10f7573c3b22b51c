//! 4-RoSy cross fields: one tangent direction `α` per site stands for the
//! four directions `α, β, -α, -β` with `β = α × n`.

mod generate;
mod io;
mod singularity;

pub use generate::{generate_gt_field, GtField, DEFAULT_GT_ITERATIONS, DEFAULT_SMOOTH_WEIGHT};
pub use io::{read_field, read_field_from, write_field, write_field_to, FIELD_FORMAT_VERSION};
pub use singularity::{singularity_indices, Singularities};

use nalgebra::Complex;

use crate::mesh::{reference_tangent, SurfaceSite, TriangleMesh};
use crate::{Error, Result, Vec3};

/// Below this length a projected direction is treated as parallel to the normal.
pub const MIN_TANGENT_LENGTH: f64 = 1e-8;

/// A surface site with its predicted cross and optional ground-truth frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossFieldSample {
    pub point: Vec3,
    pub normal: Vec3,
    pub alpha: Vec3,
    pub gt_mu: Option<Vec3>,
    pub gt_nu: Option<Vec3>,
}

impl CrossFieldSample {
    pub fn new(point: Vec3, normal: Vec3, alpha: Vec3) -> Self {
        Self {
            point,
            normal,
            alpha,
            gt_mu: None,
            gt_nu: None,
        }
    }

    /// Attaches a ground-truth frame `(μ, ν)`.
    pub fn with_gt(mut self, mu: Vec3, nu: Vec3) -> Self {
        self.gt_mu = Some(mu);
        self.gt_nu = Some(nu);
        self
    }

    pub fn beta(&self) -> Vec3 {
        self.alpha.cross(&self.normal)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if (self.normal.norm() - 1.0).abs() > 1e-5 || (self.alpha.norm() - 1.0).abs() > 1e-5 {
            return bad(format!("non-unit normal or alpha at {:?}", self.point));
        }
        if self.alpha.dot(&self.normal).abs() > 1e-5 {
            return bad(format!("alpha not tangent at {:?}", self.point));
        }
        match (self.gt_mu, self.gt_nu) {
            (None, None) => Ok(()),
            (Some(mu), Some(nu)) => {
                if mu.dot(&nu).abs() > 1e-4 || mu.dot(&self.normal).abs() > 1e-4 || nu.dot(&self.normal).abs() > 1e-4 {
                    bad(format!("ground-truth frame not orthogonal at {:?}", self.point))
                } else {
                    Ok(())
                }
            }
            _ => bad("ground truth needs both mu and nu".into()),
        }
    }
}

/// Where the samples of a field live on its mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteKind {
    Vertex,
    FaceCenter,
}

impl SiteKind {
    pub fn tag(self) -> u8 {
        match self {
            SiteKind::Vertex => 0,
            SiteKind::FaceCenter => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SiteKind::Vertex),
            1 => Some(SiteKind::FaceCenter),
            _ => None,
        }
    }

    pub fn site_count(self, mesh: &TriangleMesh) -> usize {
        match self {
            SiteKind::Vertex => mesh.vertices.len(),
            SiteKind::FaceCenter => mesh.faces.len(),
        }
    }
}

/// A cross field sampled at the vertices or face centers of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOnMesh {
    pub site: SiteKind,
    pub samples: Vec<CrossFieldSample>,
}

impl FieldOnMesh {
    pub fn check_sites(&self, mesh: &TriangleMesh) -> Result<()> {
        let expected = self.site.site_count(mesh);
        if self.samples.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "field has {} samples, mesh has {expected} {:?} sites",
                self.samples.len(),
                self.site
            )));
        }
        Ok(())
    }

    pub fn has_gt(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.gt_mu.is_some())
    }

    /// Cross direction at a surface site of a per-vertex field, blended from
    /// the three corner directions with barycentric weights in the tangent
    /// plane of `n`.
    pub fn direction_at(&self, mesh: &TriangleMesh, site: &SurfaceSite, n: &Vec3) -> Result<Vec3> {
        if self.site != SiteKind::Vertex {
            return Err(Error::InvalidArgument("interpolation needs a per-vertex field".into()));
        }
        self.check_sites(mesh)?;
        let corners = mesh.faces[site.face];
        let dirs: Vec<(Vec3, Vec3, f64)> = (0..3)
            .map(|i| {
                let s = &self.samples[corners[i]];
                (s.alpha, s.normal, site.bary[i])
            })
            .collect();
        blend_crosses(&dirs, n)
            .ok_or_else(|| Error::Degenerate(format!("cross average vanishes on face {}", site.face)))
    }
}

/// Weighted 4-RoSy average of directions `(α_i, n_i, w_i)` in the tangent
/// plane of `n`: each `α_i` is transported to `n`, its angle is multiplied
/// by four, and the weighted mean angle is divided back. `None` when the
/// mean vanishes or a normal is antipodal to `n`.
pub fn blend_crosses(dirs: &[(Vec3, Vec3, f64)], n: &Vec3) -> Option<Vec3> {
    let e1 = reference_tangent(n);
    let mut sum = Complex::new(0.0, 0.0);
    for (alpha, from, w) in dirs {
        let a = transport(alpha, from, n)?;
        sum += Complex::from_polar(*w, 4.0 * angle_in_basis(&a, &e1, n));
    }
    if sum.norm() < 1e-12 {
        return None;
    }
    Some(rotate_about(&e1, n, sum.arg() / 4.0))
}

/// Removes the normal component of `raw` and normalizes.
pub fn project_to_tangent(raw: &Vec3, n: &Vec3) -> Result<Vec3> {
    let t = raw - n * n.dot(raw);
    let len = t.norm();
    if !(len >= MIN_TANGENT_LENGTH) {
        return Err(Error::Degenerate(format!(
            "direction {raw:?} is parallel to normal {n:?}"
        )));
    }
    Ok(t / len)
}

/// `|α·μ| + |α·ν| - 1`, zero when `α` is one of the four frame directions and
/// `√2 - 1` halfway between them.
pub fn alignment_deviation(alpha: &Vec3, mu: &Vec3, nu: &Vec3) -> f64 {
    (alpha.dot(mu).abs() + alpha.dot(nu).abs() - 1.0).max(0.0)
}

/// Rotates `v` by `angle` about the unit axis `n` (right-handed).
pub fn rotate_about(v: &Vec3, n: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + n.cross(v) * s + n * (n.dot(v) * (1.0 - c))
}

/// Minimal rotation taking unit `from` to unit `to`, applied to `v`.
/// `None` when the normals are (nearly) antipodal.
pub(crate) fn transport(v: &Vec3, from: &Vec3, to: &Vec3) -> Option<Vec3> {
    let c = from.dot(to);
    if c <= -1.0 + 1e-9 {
        return None;
    }
    let k = from.cross(to);
    Some(v * c + k.cross(v) + k * (k.dot(v) / (1.0 + c)))
}

/// Angle of tangent vector `v` in the basis `(e1, n × e1)`.
pub(crate) fn angle_in_basis(v: &Vec3, e1: &Vec3, n: &Vec3) -> f64 {
    let e2 = n.cross(e1);
    v.dot(&e2).atan2(v.dot(e1))
}

/// Wraps an angle into `(-π/4, π/4]` modulo `π/2`.
pub(crate) fn reduce_quarter(a: f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let mut r = a - FRAC_PI_2 * (a / FRAC_PI_2).round();
    if r <= -std::f64::consts::FRAC_PI_4 {
        r += FRAC_PI_2;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    #[test]
    fn projection_examples() {
        let n = Vec3::z();
        let a = project_to_tangent(&Vec3::x(), &n).unwrap();
        assert_eq!(a, Vec3::x());
        let s = CrossFieldSample::new(Vec3::zeros(), n, a);
        assert_eq!(s.beta(), Vec3::new(0.0, -1.0, 0.0));
        assert_eq!(project_to_tangent(&Vec3::new(1.0, 0.0, 1.0), &n).unwrap(), Vec3::x());
        assert!(project_to_tangent(&Vec3::z(), &n).is_err());
    }

    #[test]
    fn deviation_examples() {
        let (mu, nu) = (Vec3::x(), Vec3::y());
        assert_eq!(alignment_deviation(&mu, &mu, &nu), 0.0);
        let diag = Vec3::new(1.0, 1.0, 0.0).normalize();
        assert!((alignment_deviation(&diag, &mu, &nu) - (SQRT_2 - 1.0)).abs() < 1e-12);
        let t = 22.5f64.to_radians();
        let a = Vec3::new(t.cos(), t.sin(), 0.0);
        let expected = t.cos() + (FRAC_PI_2 - t).cos() - 1.0;
        assert!((alignment_deviation(&a, &mu, &nu) - expected).abs() < 1e-12);
        assert!((expected - 0.30656).abs() < 1e-5);
    }

    #[test]
    fn blend_respects_symmetry() {
        let n = Vec3::z();
        let a = Vec3::new(0.3f64.cos(), 0.3f64.sin(), 0.0);
        let b = rotate_about(&a, &n, FRAC_PI_2);
        let c = rotate_about(&a, &n, 0.2);
        let out = blend_crosses(&[(a, n, 0.5), (b, n, 0.5)], &n).unwrap();
        assert!(alignment_deviation(&out, &a, &a.cross(&n)) < 1e-12);
        let out = blend_crosses(&[(a, n, 0.5), (c, n, 0.5)], &n).unwrap();
        let mid = rotate_about(&a, &n, 0.1);
        assert!(alignment_deviation(&out, &mid, &mid.cross(&n)) < 1e-12);
        assert!(blend_crosses(&[(a, n, 0.5), (rotate_about(&a, &n, FRAC_PI_4), n, 0.5)], &n).is_none());
    }

    #[test]
    fn quarter_reduction() {
        assert_eq!(reduce_quarter(0.0), 0.0);
        assert!((reduce_quarter(FRAC_PI_4) - FRAC_PI_4).abs() < 1e-15);
        assert!((reduce_quarter(-FRAC_PI_4) - FRAC_PI_4).abs() < 1e-15);
        assert!((reduce_quarter(FRAC_PI_2 + 0.1) - 0.1).abs() < 1e-12);
        assert!((reduce_quarter(-7.0 * FRAC_PI_2 - 0.2) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn transport_aligns_normals() {
        let from = Vec3::z();
        let to = Vec3::new(1.0, 0.0, 1.0).normalize();
        let v = transport(&Vec3::x(), &from, &to).unwrap();
        assert!(v.dot(&to).abs() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!(transport(&Vec3::y(), &from, &-from).is_none());
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    fn frame() -> impl Strategy<Value = (Vec3, Vec3, Vec3, Vec3)> {
        (unit(), unit(), unit()).prop_filter_map("tangents", |(n, m, a)| {
            let mu = project_to_tangent(&m, &n).ok()?;
            let alpha = project_to_tangent(&a, &n).ok()?;
            Some((n, mu, n.cross(&mu), alpha))
        })
    }

    proptest! {
        #[test]
        fn projection_is_unit_tangent(raw in unit(), n in unit()) {
            if let Ok(a) = project_to_tangent(&raw, &n) {
                prop_assert!(a.dot(&n).abs() < 1e-12);
                prop_assert!((a.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn deviation_in_range_and_symmetric((n, mu, nu, alpha) in frame(), k in 0usize..4) {
            let d = alignment_deviation(&alpha, &mu, &nu);
            prop_assert!((0.0..=SQRT_2 - 1.0 + 1e-12).contains(&d));
            let rotated = rotate_about(&alpha, &n, k as f64 * FRAC_PI_2);
            prop_assert!((alignment_deviation(&rotated, &mu, &nu) - d).abs() < 1e-10);
            prop_assert!((alignment_deviation(&alpha, &nu, &mu) - d).abs() < 1e-15);
        }
    }
}
