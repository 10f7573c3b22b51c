use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};

use super::TriangleMesh;
use crate::{Error, Result, Vec3};

/// Regularizer in the anisotropy denominator, in normalized (1/length) units.
pub const ANISOTROPY_DELTA: f64 = 1e-3;

/// Vertices with lower anisotropy are treated as umbilic.
pub const UMBILIC_THRESHOLD: f64 = 0.05;

/// Principal curvature frame at a vertex. Curvatures are positive where the
/// surface bends away from the normal (convex under outward normals).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureFrame {
    pub point: Vec3,
    pub normal: Vec3,
    pub dir_min: Vec3,
    pub dir_max: Vec3,
    pub k_min: f64,
    pub k_max: f64,
    pub anisotropy: f64,
}

impl CurvatureFrame {
    pub fn is_umbilic(&self) -> bool {
        self.anisotropy < UMBILIC_THRESHOLD
    }

    /// Builds a frame with `dir_max` projected into the tangent plane and
    /// `dir_min = normal x dir_max`.
    pub fn new(point: Vec3, normal: Vec3, dir_max: Vec3, k_max: f64, k_min: f64) -> Self {
        let normal = normal.normalize();
        let dir_max = (dir_max - normal * dir_max.dot(&normal)).normalize();
        let dir_min = normal.cross(&dir_max);
        let (k_max, k_min) = if k_max >= k_min { (k_max, k_min) } else { (k_min, k_max) };
        Self {
            point,
            normal,
            dir_min,
            dir_max,
            k_min,
            k_max,
            anisotropy: anisotropy(k_max, k_min),
        }
    }
}

pub fn anisotropy(k_max: f64, k_min: f64) -> f64 {
    ((k_max - k_min).abs() / (k_max.abs() + k_min.abs() + ANISOTROPY_DELTA)).clamp(0.0, 1.0)
}

/// Deterministic unit tangent for a normal: the x axis projected into the
/// tangent plane, or the y axis when the normal is close to x.
pub fn reference_tangent(n: &Vec3) -> Vec3 {
    let axis = if n.x.abs() > 0.99 { Vec3::y() } else { Vec3::x() };
    (axis - n * axis.dot(n)).normalize()
}

/// Per-vertex principal frames from a least-squares height-field quadric
/// `z = a x^2 + b xy + c y^2 + d x + e y` over the 2-ring, expressed in the
/// vertex tangent frame. The fit is repeated once in the frame of the
/// normal implied by the linear terms.
pub fn principal_curvatures(mesh: &TriangleMesh) -> Result<Vec<CurvatureFrame>> {
    let normals = mesh.normals_or_computed();
    let ring1 = mesh.vertex_neighbors();
    let mut frames = Vec::with_capacity(mesh.vertices.len());
    let mut ring2 = Vec::new();
    for (v, p) in mesh.vertices.iter().enumerate() {
        if ring1[v].is_empty() {
            return Err(Error::Degenerate(format!("vertex {v} has no neighbors")));
        }
        ring2.clear();
        for &u in &ring1[v] {
            ring2.push(u);
            ring2.extend(ring1[u].iter().copied().filter(|&w| w != v));
        }
        ring2.sort_unstable();
        ring2.dedup();
        let offsets: Vec<Vec3> = ring2.iter().map(|&u| mesh.vertices[u] - p).collect();

        let mut normal = normals[v];
        let mut fit = fit_quadric(&offsets, &normal);
        if let Some(q) = &fit {
            let t1 = reference_tangent(&normal);
            let t2 = normal.cross(&t1);
            let corrected = (normal - t1 * q.d - t2 * q.e).normalize();
            if corrected.dot(&normal) > 0.85 {
                if let Some(q2) = fit_quadric(&offsets, &corrected) {
                    normal = corrected;
                    fit = Some(q2);
                }
            }
        }
        let t1 = reference_tangent(&normal);
        let t2 = normal.cross(&t1);
        let frame = match fit {
            Some(q) => {
                let shape = -Matrix2::new(2.0 * q.a, q.b, q.b, 2.0 * q.c);
                let eig = SymmetricEigen::new(shape);
                let (imax, imin) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
                    (0, 1)
                } else {
                    (1, 0)
                };
                let (k_max, k_min) = (eig.eigenvalues[imax], eig.eigenvalues[imin]);
                let scale = k_max.abs() + k_min.abs();
                let dir = if (k_max - k_min).abs() <= 1e-9 * (1.0 + scale) {
                    t1
                } else {
                    let e = eig.eigenvectors.column(imax);
                    t1 * e[0] + t2 * e[1]
                };
                CurvatureFrame::new(*p, normal, dir, k_max, k_min)
            }
            None => CurvatureFrame::new(*p, normal, t1, 0.0, 0.0),
        };
        frames.push(frame);
    }
    Ok(frames)
}

struct Quadric {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
}

fn fit_quadric(offsets: &[Vec3], normal: &Vec3) -> Option<Quadric> {
    let t1 = reference_tangent(normal);
    let t2 = normal.cross(&t1);
    let with_linear = offsets.len() >= 5;
    let cols = if with_linear { 5 } else { 3 };
    if offsets.len() < 3 {
        return None;
    }
    let mut a = DMatrix::zeros(offsets.len(), cols);
    let mut rhs = DVector::zeros(offsets.len());
    for (r, o) in offsets.iter().enumerate() {
        let (x, y, z) = (o.dot(&t1), o.dot(&t2), o.dot(normal));
        a[(r, 0)] = x * x;
        a[(r, 1)] = x * y;
        a[(r, 2)] = y * y;
        if with_linear {
            a[(r, 3)] = x;
            a[(r, 4)] = y;
        }
        rhs[r] = z;
    }
    let svd = a.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Quadric {
        a: sol[0],
        b: sol[1],
        c: sol[2],
        d: if with_linear { sol[3] } else { 0.0 },
        e: if with_linear { sol[4] } else { 0.0 },
    })
}
