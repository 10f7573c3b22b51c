use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::Serialize;

use super::chamfer_l1;
use crate::mesh::{QuadMesh, TriangleMesh};
use crate::{Error, Result, Vec3};

/// Below this the Newell normal of a quad counts as zero area.
const MIN_QUAD_AREA: f64 = 1e-12;

fn tri_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Quad area as the mean of both diagonal splits.
pub fn quad_area(q: &[Vec3; 4]) -> f64 {
    let d02 = tri_area(q[0], q[1], q[2]) + tri_area(q[0], q[2], q[3]);
    let d13 = tri_area(q[0], q[1], q[3]) + tri_area(q[1], q[2], q[3]);
    0.5 * (d02 + d13)
}

fn non_empty(quad: &QuadMesh) -> Result<()> {
    if quad.faces.is_empty() {
        Err(Error::Empty("quad mesh has no faces".into()))
    } else {
        Ok(())
    }
}

/// 10⁴ × population standard deviation of face areas.
pub fn area_distortion(quad: &QuadMesh) -> Result<f64> {
    non_empty(quad)?;
    let areas: Vec<f64> = (0..quad.faces.len()).map(|f| quad_area(&quad.corners(f))).collect();
    let n = areas.len() as f64;
    let mean = areas.iter().sum::<f64>() / n;
    let var = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok(1e4 * var.sqrt())
}

fn corner_angles(q: &[Vec3; 4], face: usize) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for i in 0..4 {
        let a = q[(i + 1) % 4] - q[i];
        let b = q[(i + 3) % 4] - q[i];
        if a.norm() == 0.0 || b.norm() == 0.0 {
            return Err(Error::Degenerate(format!("zero-length edge at corner {i} of quad {face}")));
        }
        out[i] = a.cross(&b).norm().atan2(a.dot(&b));
    }
    Ok(out)
}

/// RMS deviation of all corner angles from π/2, in radians.
pub fn angle_distortion(quad: &QuadMesh) -> Result<f64> {
    non_empty(quad)?;
    let mut sum = 0.0;
    for f in 0..quad.faces.len() {
        for a in corner_angles(&quad.corners(f), f)? {
            sum += (a - FRAC_PI_2).powi(2);
        }
    }
    Ok((sum / (4 * quad.faces.len()) as f64).sqrt())
}

/// Counts vertices whose valence differs from `interior` (interior
/// vertices) or from `boundary` (boundary vertices; `None` skips them).
pub fn count_irregular(quad: &QuadMesh, interior: usize, boundary: Option<usize>) -> Result<usize> {
    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &quad.faces {
        for i in 0..4 {
            let (a, b) = (f[i], f[(i + 1) % 4]);
            *edge_use.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut bad: Vec<(usize, usize)> = edge_use.iter().filter(|(_, &n)| n > 2).map(|(e, _)| *e).collect();
    if !bad.is_empty() {
        bad.sort_unstable();
        return Err(Error::NonManifold { edges: bad });
    }
    let mut valence = vec![0usize; quad.vertices.len()];
    let mut on_boundary = vec![false; quad.vertices.len()];
    for (&(a, b), &n) in &edge_use {
        valence[a] += 1;
        valence[b] += 1;
        if n == 1 {
            on_boundary[a] = true;
            on_boundary[b] = true;
        }
    }
    Ok((0..quad.vertices.len())
        .filter(|&v| valence[v] > 0)
        .filter(|&v| match (on_boundary[v], boundary) {
            (false, _) => valence[v] != interior,
            (true, Some(regular)) => valence[v] != regular,
            (true, None) => false,
        })
        .count())
}

/// Irregular vertices: interior valence other than 4, boundary valence other than 3.
pub fn quad_singularities(quad: &QuadMesh) -> Result<usize> {
    count_irregular(quad, 4, Some(3))
}

/// Per-face Jacobian ratios and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianRatios {
    pub per_face: Vec<f64>,
    /// Faces with (near) zero area.
    pub degenerate: Vec<usize>,
    pub mean: f64,
}

/// Signed corner Jacobians `(e_next × e_prev) · n̂` with `n̂` the Newell
/// normal, or `None` for a zero-area face.
fn corner_jacobians(q: &[Vec3; 4]) -> Option<[f64; 4]> {
    let mut newell = Vec3::zeros();
    for i in 0..4 {
        newell += q[i].cross(&q[(i + 1) % 4]);
    }
    if 0.5 * newell.norm() < MIN_QUAD_AREA {
        return None;
    }
    let n = newell.normalize();
    let mut j = [0.0; 4];
    for i in 0..4 {
        let next = q[(i + 1) % 4] - q[i];
        let prev = q[(i + 3) % 4] - q[i];
        j[i] = next.cross(&prev).dot(&n);
    }
    Some(j)
}

pub fn jacobian_ratio(quad: &QuadMesh) -> Result<JacobianRatios> {
    non_empty(quad)?;
    let mut per_face = Vec::with_capacity(quad.faces.len());
    let mut degenerate = Vec::new();
    for f in 0..quad.faces.len() {
        let r = match corner_jacobians(&quad.corners(f)) {
            None => {
                degenerate.push(f);
                0.0
            }
            Some(j) => {
                let lo = j.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = j.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if lo <= 0.0 {
                    0.0
                } else {
                    lo / hi
                }
            }
        };
        per_face.push(r);
    }
    let mean = per_face.iter().sum::<f64>() / per_face.len() as f64;
    Ok(JacobianRatios {
        per_face,
        degenerate,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceQuality {
    pub area: f64,
    /// Largest corner-angle deviation from π/2.
    pub max_angle_deviation: f64,
    pub jacobian_ratio: f64,
}

/// The five quad metrics plus a per-face table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadQualityReport {
    pub area_distortion: f64,
    pub angle_distortion: f64,
    pub singularity_count: usize,
    pub chamfer_l1: Option<f64>,
    pub jacobian_ratio_mean: f64,
    pub faces: Vec<FaceQuality>,
}

impl QuadQualityReport {
    /// Aligned text table in the order Area, Angle, #Sings, CD, JR.
    pub fn to_table(&self) -> String {
        let cd = self.chamfer_l1.map_or_else(|| "-".to_string(), |c| format!("{c:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:>12} {:>12} {:>10} {:>12} {:>8}", "Area", "Angle", "#Sings", "CD", "JR");
        let _ = writeln!(
            s,
            "{:>12.4} {:>12.4} {:>10} {:>12} {:>8.4}",
            self.area_distortion, self.angle_distortion, self.singularity_count, cd, self.jacobian_ratio_mean
        );
        s
    }
}

/// Computes every quad metric; Chamfer is included when a reference surface
/// is given.
pub fn quad_quality(
    quad: &QuadMesh,
    reference: Option<&TriangleMesh>,
    chamfer_samples: usize,
    seed: u64,
) -> Result<QuadQualityReport> {
    let jr = jacobian_ratio(quad)?;
    let mut faces = Vec::with_capacity(quad.faces.len());
    for f in 0..quad.faces.len() {
        let q = quad.corners(f);
        let dev = corner_angles(&q, f)?
            .iter()
            .map(|a| (a - FRAC_PI_2).abs())
            .fold(0.0, f64::max);
        faces.push(FaceQuality {
            area: quad_area(&q),
            max_angle_deviation: dev,
            jacobian_ratio: jr.per_face[f],
        });
    }
    let chamfer = match reference {
        Some(r) => Some(chamfer_l1(&quad.triangulate(), r, chamfer_samples, seed)?),
        None => None,
    };
    Ok(QuadQualityReport {
        area_distortion: area_distortion(quad)?,
        angle_distortion: angle_distortion(quad)?,
        singularity_count: quad_singularities(quad)?,
        chamfer_l1: chamfer,
        jacobian_ratio_mean: jr.mean,
        faces,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::f64::consts::PI;

    fn single(q: [Vec3; 4]) -> QuadMesh {
        QuadMesh::new(q.to_vec(), vec![[0, 1, 2, 3]]).unwrap()
    }

    fn v(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 0.0)
    }

    #[test]
    fn grid_is_perfect() {
        let g = fixtures::quad_grid(6, 1.0);
        assert!(area_distortion(&g).unwrap() < 1e-9);
        assert!(angle_distortion(&g).unwrap() < 1e-12);
        assert!((jacobian_ratio(&g).unwrap().mean - 1.0).abs() < 1e-12);
        assert_eq!(quad_singularities(&g).unwrap(), 4);
    }

    #[test]
    fn closed_fixtures() {
        assert_eq!(quad_singularities(&fixtures::quad_cube(1.0, 4)).unwrap(), 8);
        assert_eq!(quad_singularities(&fixtures::quad_torus(0.3, 0.1, 24, 12)).unwrap(), 0);
    }

    #[test]
    fn two_face_area_spread() {
        let a = 0.001;
        let verts = vec![v(0.0, 0.0), v(a, 0.0), v(a, 1.0), v(0.0, 1.0), v(4.0 * a, 0.0), v(4.0 * a, 1.0)];
        let m = QuadMesh::new(verts, vec![[0, 1, 2, 3], [1, 4, 5, 2]]).unwrap();
        assert!((area_distortion(&m).unwrap() - 1e4 * a).abs() < 1e-9);
    }

    #[test]
    fn rhombus_angles() {
        let s = 3f64.sqrt() / 2.0;
        let m = single([v(0.0, 0.0), v(1.0, 0.0), v(1.5, s), v(0.5, s)]);
        assert!((angle_distortion(&m).unwrap() - PI / 6.0).abs() < 1e-12);
        assert!((jacobian_ratio(&m).unwrap().mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn right_trapezoid_ratio() {
        let m = single([v(0.0, 0.0), v(2.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)]);
        assert!((jacobian_ratio(&m).unwrap().per_face[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inverted_and_degenerate_faces() {
        let bowtie = single([v(0.0, 0.0), v(1.0, 1.0), v(1.0, 0.0), v(0.0, 1.0)]);
        let r = jacobian_ratio(&bowtie).unwrap();
        assert_eq!(r.per_face[0], 0.0);
        let flat = single([v(0.0, 0.0), v(1.0, 0.0), v(2.0, 0.0), v(3.0, 0.0)]);
        let r = jacobian_ratio(&flat).unwrap();
        assert_eq!(r.degenerate, vec![0]);
        assert_eq!(r.per_face[0], 0.0);
    }

    #[test]
    fn zero_length_edge_is_an_error() {
        let m = QuadMesh {
            vertices: vec![v(0.0, 0.0), v(0.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)],
            faces: vec![[0, 1, 2, 3]],
        };
        assert!(angle_distortion(&m).is_err());
    }

    #[test]
    fn report_table_and_json_fields() {
        let r = quad_quality(&fixtures::quad_grid(3, 1.0), None, 0, 0).unwrap();
        let t = r.to_table();
        assert!(t.lines().next().unwrap().contains("#Sings"));
        assert_eq!(r.faces.len(), 9);
        assert_eq!(r.singularity_count, 4);
    }
}
