//! Singularity indices of a cross field.
//!
//! The field is first expressed as one angle per face. Across every interior
//! edge the residual between the neighbor's cross and the transported cross
//! is reduced to `(-π/4, π/4]`; it is computed once per edge and negated for
//! the opposite direction. The index of a vertex is the ring sum of these
//! residuals plus the angle defect, divided by `2π`. Residuals cancel across
//! the mesh and angle defects sum to `2πχ`, so the indices sum to `χ`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Complex;

use super::{angle_in_basis, reduce_quarter, transport, FieldOnMesh, SiteKind};
use crate::mesh::TriangleMesh;
use crate::{Error, Result, Vec3};

/// Nonzero vertex indices in quarter turns plus the vertices that were skipped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Singularities {
    /// `(vertex, index × 4)` for every interior vertex with nonzero index.
    pub indices: Vec<(usize, i32)>,
    /// Boundary or non-manifold vertices, which carry no index.
    pub skipped: Vec<usize>,
}

impl Singularities {
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    /// Sum of all indices in quarter turns.
    pub fn total_quarters(&self) -> i32 {
        self.indices.iter().map(|(_, q)| q).sum()
    }

    pub fn total(&self) -> f64 {
        self.total_quarters() as f64 / 4.0
    }
}

fn face_basis(mesh: &TriangleMesh, f: usize) -> (Vec3, Vec3) {
    let [a, b, _] = mesh.corners(f);
    ((b - a).normalize(), mesh.face_normal(f))
}

/// Per-face field angle in the basis `(first edge, n × first edge)`.
fn face_angles(field: &FieldOnMesh, mesh: &TriangleMesh) -> Vec<f64> {
    (0..mesh.faces.len())
        .map(|f| {
            let (e1, n) = face_basis(mesh, f);
            match field.site {
                SiteKind::FaceCenter => {
                    let s = &field.samples[f];
                    let a = transport(&s.alpha, &s.normal, &n).unwrap_or(s.alpha);
                    angle_in_basis(&a, &e1, &n)
                }
                SiteKind::Vertex => {
                    let mut sum = Complex::new(0.0, 0.0);
                    let mut first = None;
                    for &v in &mesh.faces[f] {
                        let s = &field.samples[v];
                        let a = transport(&s.alpha, &s.normal, &n).unwrap_or(s.alpha);
                        let phi = angle_in_basis(&a, &e1, &n);
                        first.get_or_insert(phi);
                        sum += Complex::from_polar(1.0, 4.0 * phi);
                    }
                    if sum.norm() > 1e-12 {
                        sum.arg() / 4.0
                    } else {
                        first.unwrap_or(0.0)
                    }
                }
            }
        })
        .collect()
}

fn interior_angle(mesh: &TriangleMesh, f: usize, corner: usize) -> f64 {
    let face = mesh.faces[f];
    let p = mesh.vertices[face[corner]];
    let a = mesh.vertices[face[(corner + 1) % 3]] - p;
    let b = mesh.vertices[face[(corner + 2) % 3]] - p;
    a.cross(&b).norm().atan2(a.dot(&b))
}

pub fn singularity_indices(field: &FieldOnMesh, mesh: &TriangleMesh) -> Result<Singularities> {
    field.check_sites(mesh)?;
    let phi = face_angles(field, mesh);

    // Directed edge -> face containing it.
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        for c in 0..3 {
            let e = (face[c], face[(c + 1) % 3]);
            if directed.insert(e, f).is_some() {
                return Err(Error::NonManifold {
                    edges: vec![(e.0.min(e.1), e.0.max(e.1))],
                });
            }
        }
    }

    // Residual across edge {lo, hi}, from the face holding hi->lo to the face
    // holding lo->hi.
    let residual = |lo: usize, hi: usize| -> Option<f64> {
        let f = *directed.get(&(hi, lo))?;
        let g = *directed.get(&(lo, hi))?;
        let e = mesh.vertices[hi] - mesh.vertices[lo];
        let (e1f, nf) = face_basis(mesh, f);
        let (e1g, ng) = face_basis(mesh, g);
        let rho = angle_in_basis(&e, &e1g, &ng) - angle_in_basis(&e, &e1f, &nf);
        Some(reduce_quarter(phi[g] - phi[f] - rho))
    };
    let mut edge_residual: HashMap<(usize, usize), Option<f64>> = HashMap::new();

    // Per-vertex ring: neighbor a -> (next neighbor b, face (v, a, b)).
    let mut rings: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); mesh.vertices.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        for c in 0..3 {
            rings[face[c]].push((face[(c + 1) % 3], face[(c + 2) % 3], f));
        }
    }

    let mut out = Singularities::default();
    for (v, ring) in rings.iter().enumerate() {
        if ring.is_empty() {
            continue;
        }
        let next: HashMap<usize, (usize, usize)> = ring.iter().map(|&(a, b, f)| (a, (b, f))).collect();
        let start = ring[0].0;
        let mut a = start;
        let mut steps = 0;
        let mut total = 0.0;
        let mut angle_sum = 0.0;
        let mut closed = true;
        loop {
            let Some(&(b, f)) = next.get(&a) else {
                closed = false;
                break;
            };
            let corner = mesh.faces[f].iter().position(|&x| x == v).unwrap();
            angle_sum += interior_angle(mesh, f, corner);
            // Crossing edge {v, b} from face (v, a, b), which holds b->v.
            let key = (v.min(b), v.max(b));
            let r = *edge_residual
                .entry(key)
                .or_insert_with(|| residual(key.0, key.1));
            let Some(r) = r else {
                closed = false;
                break;
            };
            total += if b > v { r } else { -r };
            steps += 1;
            a = b;
            if a == start || steps > ring.len() {
                break;
            }
        }
        if !closed || a != start || steps != ring.len() {
            out.skipped.push(v);
            continue;
        }
        let defect = 2.0 * PI - angle_sum;
        let quarters = ((total + defect) / FRAC_PI_2).round() as i32;
        if quarters != 0 {
            out.indices.push((v, quarters));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfield::{generate_gt_field, CrossFieldSample};
    use crate::fixtures;
    use crate::mesh::principal_curvatures;

    fn vertex_field(mesh: &TriangleMesh, dir: impl Fn(&Vec3, &Vec3) -> Vec3) -> FieldOnMesh {
        let normals = mesh.normals_or_computed();
        FieldOnMesh {
            site: SiteKind::Vertex,
            samples: mesh
                .vertices
                .iter()
                .zip(&normals)
                .map(|(p, n)| {
                    let a = crate::crossfield::project_to_tangent(&dir(p, n), n).unwrap();
                    CrossFieldSample::new(*p, *n, a)
                })
                .collect(),
        }
    }

    #[test]
    fn constant_field_on_disk_is_regular() {
        let mesh = fixtures::plane_grid(8, 0.8);
        let field = vertex_field(&mesh, |_, _| Vec3::new(1.0, 0.3, 0.0));
        let s = singularity_indices(&field, &mesh).unwrap();
        assert!(s.indices.is_empty());
        assert_eq!(s.skipped.len(), 4 * 8);
    }

    #[test]
    fn radial_field_in_plane_has_index_one() {
        let mesh = fixtures::plane_grid(8, 0.8);
        let c = mesh.vertices[4 * 9 + 4];
        let field = vertex_field(&mesh, |p, _| {
            let d = p - c;
            if d.norm() < 1e-9 {
                Vec3::x()
            } else {
                d
            }
        });
        let s = singularity_indices(&field, &mesh).unwrap();
        assert_eq!(s.total_quarters(), 4);
    }

    #[test]
    fn cube_axis_field_has_eight_quarter_cones() {
        let mesh = fixtures::cube(0.8, 4);
        let field = vertex_field(&mesh, |_, n| {
            if n.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            }
        });
        let s = singularity_indices(&field, &mesh).unwrap();
        assert_eq!(s.total_quarters(), 8);
        assert_eq!(s.count(), 8);
        assert!(s.indices.iter().all(|(_, q)| *q == 1));
    }

    #[test]
    fn sums_match_euler_characteristic() {
        for (mesh, chi) in [
            (fixtures::icosphere(0.4, 3), 2),
            (fixtures::torus(0.3, 0.1, 32, 16), 0),
            (fixtures::cube(0.8, 6), 2),
        ] {
            let frames = principal_curvatures(&mesh).unwrap();
            let gt = generate_gt_field(&mesh, &frames, 50, 1.0).unwrap();
            let s = singularity_indices(&gt.field, &mesh).unwrap();
            assert_eq!(s.total_quarters(), 4 * chi);
            assert!(s.skipped.is_empty());
        }
    }
}
