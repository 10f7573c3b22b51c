use std::collections::HashMap;

use super::tables::TRIANGLE_TABLE;
use super::DenseSdfGrid;
use crate::grid::vertex_position;
use crate::mesh::TriangleMesh;
use crate::{Error, Result};

const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Crossings are kept strictly inside their edge so that no triangle
/// collapses when the zero set passes through a lattice vertex.
const EDGE_MARGIN: f64 = 1e-6;

/// Extracts the zero level set as a triangle mesh whose face normals point
/// toward positive values. Vertices are shared between cubes through their
/// lattice edge, so a closed zero set gives a watertight mesh.
pub fn marching_cubes(grid: &DenseSdfGrid) -> Result<TriangleMesh> {
    let r = grid.resolution() as i64;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut ids = [0usize; 8];
                let mut vals = [0.0; 8];
                let mut mask = 0usize;
                for (n, d) in CORNERS.iter().enumerate() {
                    let c = [i + d[0], j + d[1], k + d[2]];
                    ids[n] = grid.index(c);
                    vals[n] = grid.values()[ids[n]];
                    if vals[n] < 0.0 {
                        mask |= 1 << n;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[mask];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut f = [0usize; 3];
                    for (slot, &e) in f.iter_mut().zip(tri) {
                        let [a, b] = EDGES[e as usize];
                        let (ia, ib) = (ids[a], ids[b]);
                        let key = (ia.min(ib), ia.max(ib));
                        *slot = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[a], vals[b]);
                            let t = (va / (va - vb)).clamp(EDGE_MARGIN, 1.0 - EDGE_MARGIN);
                            let res = grid.resolution();
                            let pa = vertex_position([i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]], res);
                            let pb = vertex_position([i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]], res);
                            vertices.push(pa + (pb - pa) * t);
                            vertices.len() - 1
                        });
                    }
                    // The table winds triangles toward the negative side.
                    faces.push([f[0], f[2], f[1]]);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::NoZeroCrossing);
    }
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn signed_volume(m: &TriangleMesh) -> f64 {
        (0..m.faces.len())
            .map(|f| {
                let [a, b, c] = m.corners(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn sphere_radius_within_one_cell() {
        let g = DenseSdfGrid::from_fn(64, 0.1, |p| p.norm() - 0.4);
        let m = marching_cubes(&g).unwrap();
        let d = 3f64.sqrt() / 64.0;
        let worst = m.vertices.iter().map(|v| (v.norm() - 0.4).abs()).fold(0.0, f64::max);
        assert!(worst < d);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        let v = signed_volume(&m);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.4f64.powi(3);
        assert!((v - exact).abs() / exact < 0.02, "{v} vs {exact}");
    }

    #[test]
    fn normals_point_to_positive_side() {
        let g = DenseSdfGrid::from_fn(16, 0.2, |p| p.norm() - 0.3);
        let m = marching_cubes(&g).unwrap();
        for f in 0..m.faces.len() {
            assert!(m.face_normal(f).dot(&m.face_center(f)) > 0.0);
        }
    }

    #[test]
    fn plane_is_exact() {
        let g = DenseSdfGrid::from_fn(32, 0.1, |p| p.z - 0.1);
        let m = marching_cubes(&g).unwrap();
        assert!(m.vertices.iter().all(|v| (v.z - 0.1).abs() < 1e-6));
        for f in 0..m.faces.len() {
            assert!(m.face_normal(f).z > 0.999);
        }
    }

    #[test]
    fn all_positive_is_error() {
        let g = DenseSdfGrid::from_fn(8, 0.1, |_| 0.05);
        assert!(matches!(marching_cubes(&g), Err(Error::NoZeroCrossing)));
    }

    #[test]
    fn zero_valued_lattice_vertices_stay_manifold() {
        // A box whose faces pass exactly through lattice vertices.
        let h = 1.0 / 16.0;
        let half = 4.0 * h;
        let g = DenseSdfGrid::from_fn(16, 0.2, |p| {
            let q = Vec3::new(p.x.abs(), p.y.abs(), p.z.abs()) - Vec3::repeat(half - 0.5 * h);
            q.max().min(0.0) + q.map(|x| x.max(0.0)).norm()
        });
        let m = marching_cubes(&g).unwrap();
        assert!(m.is_watertight());
    }

    #[test]
    fn torus_topology() {
        let g = DenseSdfGrid::from_fn(48, 0.1, |p| {
            let q = (p.x * p.x + p.y * p.y).sqrt() - 0.3;
            (q * q + p.z * p.z).sqrt() - 0.1
        });
        let m = marching_cubes(&g).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 0);
    }
}
