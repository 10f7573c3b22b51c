//! Mesh and point-cloud types plus the operations that prepare a shape for
//! the pipeline: loading, normalization, sampling, normals and curvature.

mod curvature;
mod io;
mod normalize;
mod normals;
mod sample;

pub use curvature::{
    anisotropy, principal_curvatures, reference_tangent, CurvatureFrame, ANISOTROPY_DELTA, UMBILIC_THRESHOLD,
};
pub use io::{
    load_mesh, load_point_cloud, load_quad_mesh, read_obj, write_obj, write_ply_cloud,
    write_quad_obj, PlyEncoding,
};
pub use normalize::{normalize_points, normalize_to_unit_cube, NormalizeTransform, DEFAULT_MARGIN};
pub use normals::{estimate_normals, DEFAULT_NORMAL_K};
pub use sample::{sample_sites, sample_surface, SurfaceSite};

use std::collections::HashMap;

use crate::{Error, Result, Vec3};

/// Faces with less area than this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Indexed triangle mesh with optional per-vertex unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    /// Builds a mesh and checks index ranges and face areas.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            vertex_normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex out of range ({f:?}, {n} vertices)"
                )));
            }
            let area = self.face_area(fi);
            if !(area >= MIN_FACE_AREA) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} is degenerate (area {area:e})"
                )));
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "{} vertex normals for {n} vertices",
                    normals.len()
                )));
            }
            if let Some(i) = normals
                .iter()
                .position(|v| (v.norm() - 1.0).abs() > UNIT_TOLERANCE)
            {
                return Err(Error::InvalidMesh(format!("vertex normal {i} is not unit")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Twice-area vector `(b - a) x (c - a)`.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.face_cross(face).normalize()
    }

    pub fn face_center(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        bounding_box(&self.vertices)
    }

    /// Area-weighted vertex normals; isolated vertices get `+z`.
    pub fn area_weighted_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let c = self.face_cross(fi);
            for &v in f {
                acc[v] += c;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect()
    }

    /// Fills `vertex_normals` with area-weighted normals.
    pub fn with_vertex_normals(mut self) -> Self {
        self.vertex_normals = Some(self.area_weighted_normals());
        self
    }

    /// Vertex normals if present, area-weighted otherwise.
    pub fn normals_or_computed(&self) -> Vec<Vec3> {
        match &self.vertex_normals {
            Some(n) => n.clone(),
            None => self.area_weighted_normals(),
        }
    }

    /// Sorted neighbor lists built from face edges.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for list in &mut nbrs {
            list.sort_unstable();
            list.dedup();
        }
        nbrs
    }

    /// Undirected edge -> incident faces.
    pub fn edge_faces(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                map.entry(edge_key(f[k], f[(k + 1) % 3])).or_default().push(fi);
            }
        }
        map
    }

    /// True when every edge has exactly two incident faces traversed in
    /// opposite directions.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// `V - E + F` counting only referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_faces().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Applies `p -> rotation * p + translation` to vertices and normals.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
            faces: self.faces.clone(),
            vertex_normals: self
                .vertex_normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rotation * n).collect()),
        }
    }
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn bounding_box(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Indexed quad mesh, as produced by external quad extraction tools.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 4]>,
}

impl QuadMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 4]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "quad {fi} references vertex out of range ({f:?}, {n} vertices)"
                )));
            }
            for a in 0..4 {
                for b in (a + 1)..4 {
                    if f[a] == f[b] {
                        return Err(Error::InvalidMesh(format!(
                            "quad {fi} repeats vertex {}",
                            f[a]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn corners(&self, face: usize) -> [Vec3; 4] {
        self.faces[face].map(|i| self.vertices[i])
    }

    /// Splits every quad along its shorter diagonal.
    pub fn triangulate(&self) -> TriangleMesh {
        let mut faces = Vec::with_capacity(self.faces.len() * 2);
        for f in &self.faces {
            faces.extend(split_quad(&self.vertices, *f));
        }
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces,
            vertex_normals: None,
        }
    }

    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Two triangles for a quad, cut along the shorter diagonal (ties: 0-2).
pub(crate) fn split_quad(vertices: &[Vec3], f: [usize; 4]) -> [[usize; 3]; 2] {
    let d02 = (vertices[f[0]] - vertices[f[2]]).norm_squared();
    let d13 = (vertices[f[1]] - vertices[f[3]]).norm_squared();
    if d13 < d02 {
        [[f[0], f[1], f[3]], [f[1], f[2], f[3]]]
    } else {
        [[f[0], f[1], f[2]], [f[0], f[2], f[3]]]
    }
}

/// Points with per-point unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let cloud = Self { points, normals };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.normals.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} normals",
                self.points.len(),
                self.normals.len()
            )));
        }
        if let Some(i) = self
            .normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > UNIT_TOLERANCE)
        {
            return Err(Error::InvalidArgument(format!("normal {i} is not unit")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point lies in the closed normalized cube.
    pub fn in_unit_cube(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.iter().all(|c| (-0.5..=0.5).contains(c)))
    }

    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>) -> Self {
        Self {
            points: self.points.iter().map(|p| rotation * p).collect(),
            normals: self.normals.iter().map(|n| rotation * n).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}
