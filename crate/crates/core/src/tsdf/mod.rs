//! Truncated signed distance grids: construction from meshes, thin-shell
//! query sampling and marching-cubes extraction.
//!
//! Grid values live at the same lattice vertices as [`crate::grid`]:
//! sample `i` sits at `-0.5 + (i + 0.5) / R`. Values are negative inside.

mod marching_cubes;
mod tables;

pub use marching_cubes::marching_cubes;

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, LeReader};
use crate::bvh::TriangleBvh;
use crate::grid::{vertex_position, Coord};
use crate::mesh::{OrientedPointCloud, TriangleMesh};
use crate::{Error, Result, Vec3};

pub const DEFAULT_TRUNCATION: f64 = 0.1;
pub const DEFAULT_SHELL_EPSILON: f64 = 0.02;
pub const TSDF_FORMAT_VERSION: u32 = 1;

/// Dense `R^3` grid of truncated signed distances, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSdfGrid {
    resolution: u32,
    truncation: f64,
    values: Vec<f64>,
    /// Set when the source mesh was not watertight and signs come from a
    /// thresholded winding number.
    pub degraded: bool,
}

impl DenseSdfGrid {
    pub fn new(resolution: u32, truncation: f64, values: Vec<f64>) -> Result<Self> {
        let n = resolution as usize;
        if values.len() != n * n * n {
            return Err(Error::InvalidArgument(format!(
                "{} values for resolution {resolution}",
                values.len()
            )));
        }
        if !(truncation > 0.0) {
            return Err(Error::InvalidArgument(format!("truncation {truncation}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > truncation) {
            return Err(Error::InvalidArgument(format!("value {v} outside ±{truncation}")));
        }
        Ok(Self {
            resolution,
            truncation,
            values,
            degraded: false,
        })
    }

    /// Samples `f` at every lattice vertex and clamps to `±truncation`.
    pub fn from_fn(resolution: u32, truncation: f64, f: impl Fn(&Vec3) -> f64) -> Self {
        let r = resolution as i64;
        let mut values = Vec::with_capacity((r * r * r) as usize);
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let p = vertex_position([i, j, k], resolution);
                    values.push(f(&p).clamp(-truncation, truncation));
                }
            }
        }
        Self {
            resolution,
            truncation,
            values,
            degraded: false,
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, c: Coord) -> usize {
        let r = self.resolution as usize;
        c[0] as usize + r * (c[1] as usize + r * c[2] as usize)
    }

    pub fn at(&self, c: Coord) -> f64 {
        self.values[self.index(c)]
    }

    /// Trilinear interpolation; points are clamped into the lattice hull.
    pub fn value_at(&self, p: &Vec3) -> f64 {
        let r = self.resolution as f64;
        let max = self.resolution as i64 - 1;
        let mut base = [0i64; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let u = ((p[a] + 0.5) * r - 0.5).clamp(0.0, max as f64);
            let b = (u.floor() as i64).min(max - 1).max(0);
            base[a] = b;
            t[a] = u - b as f64;
        }
        let mut v = 0.0;
        for n in 0..8 {
            let d = [n & 1, (n >> 1) & 1, (n >> 2) & 1];
            let mut w = 1.0;
            let mut c = base;
            for a in 0..3 {
                c[a] += d[a] as i64;
                w *= if d[a] == 1 { t[a] } else { 1.0 - t[a] };
            }
            if w != 0.0 {
                v += w * self.at(c);
            }
        }
        v
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path, |w| self.write_to(w))
    }

    /// `TSDF` v1: resolution u32, truncation f32, then `R^3` f32 values
    /// x-fastest, little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"TSDF")?;
        binio::write_u32(w, TSDF_FORMAT_VERSION)?;
        binio::write_u32(w, self.resolution)?;
        binio::write_f32(w, self.truncation as f32)?;
        for v in &self.values {
            binio::write_f32(w, *v as f32)?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = LeReader::new(r, "tsdf");
        r.magic(b"TSDF")?;
        let version = r.u32("version")?;
        if version != TSDF_FORMAT_VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let resolution = r.u32("resolution")?;
        if !(2..=2048).contains(&resolution) {
            return Err(r.error(format!("bad resolution {resolution}")));
        }
        let truncation = r.f32("truncation")? as f64;
        let n = (resolution as usize).pow(3);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f32("value")? as f64);
        }
        // f32 rounding may push clamped values a hair past the band.
        let values = values.into_iter().map(|v| v.clamp(-truncation, truncation)).collect();
        Self::new(resolution, truncation, values).map_err(|e| r.error(e.to_string()))
    }
}

/// Truncated signed distance of `mesh` at every lattice vertex: exact
/// point-triangle distance magnitude, sign from the generalized winding
/// number (inside iff > 0.5).
pub fn compute_tsdf(mesh: &TriangleMesh, resolution: u32, truncation: f64) -> Result<DenseSdfGrid> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("resolution {resolution}")));
    }
    if !(truncation > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation {truncation}")));
    }
    if mesh.faces.is_empty() {
        return Err(Error::Empty("mesh has no faces".into()));
    }
    let degraded = !mesh.is_watertight();
    if degraded {
        warn!("mesh is not watertight; TSDF signs use the winding-number threshold");
    }
    let bvh = TriangleBvh::new(mesh);
    let mut grid = DenseSdfGrid::from_fn(resolution, truncation, |p| {
        let dist = bvh
            .closest(p, truncation)
            .map_or(truncation, |h| h.distance.min(truncation));
        if bvh.winding_number(p) > 0.5 {
            -dist
        } else {
            dist
        }
    });
    grid.degraded = degraded;
    Ok(grid)
}

/// Query set Q with ground-truth signed distances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdfSamples {
    pub points: Vec<Vec3>,
    pub values: Vec<f64>,
    pub shell_epsilon: f64,
}

impl SdfSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rejection-samples `count` points uniformly from the region where the
/// interpolated SDF magnitude is below `epsilon`. When `surface` is given its
/// points are appended with value 0, so the surface set is contained in Q.
pub fn sample_thin_shell(
    grid: &DenseSdfGrid,
    epsilon: f64,
    count: usize,
    seed: u64,
    surface: Option<&OrientedPointCloud>,
) -> Result<SdfSamples> {
    if !(epsilon > 0.0) || epsilon > grid.truncation() + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must lie in (0, truncation = {}]",
            grid.truncation()
        )));
    }
    let r = grid.resolution() as i64;
    // Cells whose corner range meets (-eps, eps); the trilinear interpolant
    // stays within the corner range.
    let mut cells: Vec<Coord> = Vec::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for n in 0..8 {
                    let v = grid.at([i + (n & 1), j + ((n >> 1) & 1), k + ((n >> 2) & 1)]);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if lo < epsilon && hi > -epsilon {
                    cells.push([i, j, k]);
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Empty(format!("no cell within the {epsilon} shell")));
    }
    let h = grid.cell_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = SdfSamples {
        shell_epsilon: epsilon,
        ..Default::default()
    };
    let max_attempts = count.saturating_mul(1000).max(10_000);
    let mut attempts = 0;
    while samples.points.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Empty(format!(
                "shell rejection sampling stalled after {max_attempts} attempts"
            )));
        }
        let c = cells[rng.random_range(0..cells.len())];
        let origin = vertex_position(c, grid.resolution());
        let p = origin + Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * h;
        let v = grid.value_at(&p);
        if v.abs() < epsilon {
            samples.points.push(p);
            samples.values.push(v);
        }
    }
    if let Some(cloud) = surface {
        samples.points.extend_from_slice(&cloud.points);
        samples.values.extend(std::iter::repeat_n(0.0, cloud.len()));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn sphere_sdf(r: f64) -> impl Fn(&Vec3) -> f64 {
        move |p| p.norm() - r
    }

    #[test]
    fn sphere_tsdf_center_and_clamp() {
        let mesh = fixtures::icosphere(0.4, 4);
        let g = compute_tsdf(&mesh, 32, 0.5).unwrap();
        // Nearest lattice vertex to the origin is half a cell off-center.
        let c = vertex_position([16, 16, 16], 32);
        assert!((g.at([16, 16, 16]) - (c.norm() - 0.4)).abs() < 2e-3);
        assert!(!g.degraded);

        let g = compute_tsdf(&mesh, 32, 0.1).unwrap();
        assert_eq!(g.at([16, 16, 16]), -0.1);
        assert!(g.values().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn surface_vertices_are_near_zero() {
        let mesh = fixtures::icosphere(0.4, 4);
        let g = compute_tsdf(&mesh, 32, 0.1).unwrap();
        let r = g.resolution() as i64;
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let p = vertex_position([i, j, k], 32);
                    let exact = p.norm() - 0.4;
                    if exact.abs() < 0.5 * g.cell_size() {
                        assert!(g.at([i, j, k]).abs() <= 2.0 * g.cell_size());
                    }
                }
            }
        }
    }

    #[test]
    fn open_mesh_is_degraded() {
        let g = compute_tsdf(&fixtures::cylinder(0.2, 0.6, 24, 8, false), 16, 0.1).unwrap();
        assert!(g.degraded);
    }

    #[test]
    fn shell_samples_respect_epsilon() {
        let g = DenseSdfGrid::from_fn(32, 0.1, sphere_sdf(0.3));
        let s = sample_thin_shell(&g, 0.02, 5000, 1, None).unwrap();
        assert_eq!(s.len(), 5000);
        assert!(s.values.iter().all(|v| v.abs() < 0.02));
        assert_eq!(s, sample_thin_shell(&g, 0.02, 5000, 1, None).unwrap());
    }

    #[test]
    fn wide_epsilon_covers_the_band() {
        let g = DenseSdfGrid::from_fn(16, 0.1, sphere_sdf(0.3));
        let s = sample_thin_shell(&g, 0.1, 4000, 2, None).unwrap();
        let inner = s.values.iter().filter(|v| **v < -0.05).count();
        let outer = s.values.iter().filter(|v| **v > 0.05).count();
        assert!(inner > 300 && outer > 300);
    }

    #[test]
    fn no_shell_is_an_error() {
        let g = DenseSdfGrid::from_fn(8, 0.1, |_| 0.1);
        assert!(sample_thin_shell(&g, 0.02, 10, 0, None).is_err());
        assert!(sample_thin_shell(&g, 0.2, 10, 0, None).is_err());
    }

    #[test]
    fn surface_points_are_appended() {
        let g = DenseSdfGrid::from_fn(16, 0.1, sphere_sdf(0.3));
        let cloud = OrientedPointCloud {
            points: vec![Vec3::new(0.3, 0.0, 0.0)],
            normals: vec![Vec3::x()],
        };
        let s = sample_thin_shell(&g, 0.02, 10, 0, Some(&cloud)).unwrap();
        assert_eq!(s.len(), 11);
        assert_eq!(s.points[10], cloud.points[0]);
        assert_eq!(s.values[10], 0.0);
    }

    #[test]
    fn file_round_trip() {
        let g = DenseSdfGrid::from_fn(8, 0.1, sphere_sdf(0.25));
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TSDF");
        assert_eq!(buf.len(), 16 + 4 * 512);
        let back = DenseSdfGrid::read_from(&buf[..]).unwrap();
        for (a, b) in back.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(DenseSdfGrid::read_from(&buf[..100]).is_err());
    }
}
