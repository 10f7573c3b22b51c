use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OrientedPointCloud, TriangleMesh};
use crate::{Error, Result, Vec3};

/// A surface sample as a face index plus barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSite {
    pub face: usize,
    pub bary: [f64; 3],
}

impl SurfaceSite {
    pub fn position(&self, mesh: &TriangleMesh) -> Vec3 {
        let [a, b, c] = mesh.corners(self.face);
        a * self.bary[0] + b * self.bary[1] + c * self.bary[2]
    }

    /// Interpolated vertex normal, or the face normal when the mesh has none.
    pub fn normal(&self, mesh: &TriangleMesh) -> Vec3 {
        if let Some(normals) = &mesh.vertex_normals {
            let [a, b, c] = mesh.faces[self.face];
            let n = normals[a] * self.bary[0] + normals[b] * self.bary[1] + normals[c] * self.bary[2];
            let len = n.norm();
            if len > 1e-9 {
                return n / len;
            }
        }
        mesh.face_normal(self.face)
    }
}

/// Area-uniform surface sites, deterministic for a given seed.
pub fn sample_sites(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<SurfaceSite>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if mesh.faces.is_empty() {
        return Err(Error::Empty("mesh has no faces".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let face = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        sites.push(SurfaceSite {
            face,
            bary: [1.0 - s, s * (1.0 - r2), s * r2],
        });
    }
    Ok(sites)
}

pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<OrientedPointCloud> {
    let sites = sample_sites(mesh, count, seed)?;
    Ok(OrientedPointCloud {
        points: sites.iter().map(|s| s.position(mesh)).collect(),
        normals: sites.iter().map(|s| s.normal(mesh)).collect(),
    })
}
