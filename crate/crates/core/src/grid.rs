//! Integer-keyed sparse voxel grids.
//!
//! Features live at lattice vertices: vertex `i` of a resolution-`R` grid sits
//! at `-0.5 + (i + 0.5) / R` along each axis, which is also the center of
//! voxel `i`. Quantization snaps a point to the vertex of its containing
//! voxel, and trilinear queries blend the 8 vertices around a point.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use crate::binio::{self, LeReader};
use crate::mesh::OrientedPointCloud;
use crate::{Error, Result, Vec3};

const KEY_BITS: u32 = 21;
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

/// Raw channels produced by [`quantize`]: offset from the voxel center in
/// cell units, then the unit normal.
pub const RAW_FEATURE_DIM: usize = 6;

/// Averaged normals shorter than this are replaced by the voxel's first normal.
pub const DEGENERATE_NORMAL_LENGTH: f64 = 1e-3;

pub type Coord = [i64; 3];

/// Packs a coordinate into `i << 42 | j << 21 | k`. Sorting packed keys
/// sorts coordinates lexicographically.
pub fn pack_key(c: Coord) -> u64 {
    debug_assert!(c.iter().all(|&v| (0..=KEY_MASK as i64).contains(&v)));
    ((c[0] as u64) << (2 * KEY_BITS)) | ((c[1] as u64) << KEY_BITS) | c[2] as u64
}

pub fn unpack_key(key: u64) -> Coord {
    [
        ((key >> (2 * KEY_BITS)) & KEY_MASK) as i64,
        ((key >> KEY_BITS) & KEY_MASK) as i64,
        (key & KEY_MASK) as i64,
    ]
}

/// Position of lattice vertex `c` at resolution `r`.
pub fn vertex_position(c: Coord, resolution: u32) -> Vec3 {
    let h = 1.0 / resolution as f64;
    Vec3::new(
        -0.5 + (c[0] as f64 + 0.5) * h,
        -0.5 + (c[1] as f64 + 0.5) * h,
        -0.5 + (c[2] as f64 + 0.5) * h,
    )
}

/// Voxel containing `p`, clamped into the grid.
pub fn voxel_of(p: &Vec3, resolution: u32) -> Coord {
    let r = resolution as f64;
    let max = resolution as i64 - 1;
    [0, 1, 2].map(|a| (((p[a] + 0.5) * r).floor() as i64).clamp(0, max))
}

pub fn in_range(c: Coord, resolution: u32) -> bool {
    c.iter().all(|&v| v >= 0 && v < resolution as i64)
}

/// The 8 lattice vertices around `p` with their trilinear weights. Vertices
/// outside the grid are still listed; callers drop them.
pub fn trilinear_stencil(p: &Vec3, resolution: u32) -> [(Coord, f64); 8] {
    let r = resolution as f64;
    let u = [0, 1, 2].map(|a| (p[a] + 0.5) * r - 0.5);
    let base = u.map(|v| v.floor());
    let t = [0, 1, 2].map(|a| u[a] - base[a]);
    let mut out = [([0i64; 3], 0.0); 8];
    for (n, slot) in out.iter_mut().enumerate() {
        let d = [n & 1, (n >> 1) & 1, (n >> 2) & 1];
        let mut w = 1.0;
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = base[a] as i64 + d[a] as i64;
            w *= if d[a] == 1 { t[a] } else { 1.0 - t[a] };
        }
        *slot = (c, w);
    }
    out
}

/// Sparse grid of fixed-width feature vectors at one resolution. Keys are
/// kept sorted so iteration order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    resolution: u32,
    feature_dim: usize,
    keys: Vec<u64>,
    features: Vec<f64>,
    index: HashMap<u64, usize>,
    /// Occupancy labels aligned with `keys` (decoder supervision levels).
    labels: Option<Vec<bool>>,
}

impl SparseVoxelGrid {
    pub fn new(resolution: u32, feature_dim: usize) -> Self {
        assert!(resolution >= 1 && (resolution as u64) <= KEY_MASK + 1);
        Self {
            resolution,
            feature_dim,
            keys: Vec::new(),
            features: Vec::new(),
            index: HashMap::new(),
            labels: None,
        }
    }

    /// Builds a grid from `(key, features)` pairs. Keys must be unique and in
    /// range; they are sorted on construction.
    pub fn from_entries(resolution: u32, feature_dim: usize, mut entries: Vec<(u64, Vec<f64>)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        let mut grid = Self::new(resolution, feature_dim);
        grid.keys.reserve(entries.len());
        grid.features.reserve(entries.len() * feature_dim);
        for (key, feat) in entries {
            if !in_range(unpack_key(key), resolution) {
                return Err(Error::InvalidArgument(format!(
                    "key {:?} outside resolution {resolution}",
                    unpack_key(key)
                )));
            }
            if feat.len() != feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "feature of length {} in a {feature_dim}-channel grid",
                    feat.len()
                )));
            }
            if let Some(v) = feat.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite feature {v}")));
            }
            if grid.keys.last() == Some(&key) {
                return Err(Error::InvalidArgument(format!("duplicate key {:?}", unpack_key(key))));
            }
            grid.index.insert(key, grid.keys.len());
            grid.keys.push(key);
            grid.features.extend(feat);
        }
        Ok(grid)
    }

    /// Keys-only grid (zero-width features).
    pub fn from_keys(resolution: u32, keys: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut ks: Vec<u64> = keys.into_iter().collect();
        ks.sort_unstable();
        ks.dedup();
        Self::from_entries(resolution, 0, ks.into_iter().map(|k| (k, Vec::new())).collect())
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row_of(&self, key: u64) -> Option<usize> {
        self.index.get(&key).copied()
    }

    pub fn contains(&self, c: Coord) -> bool {
        in_range(c, self.resolution) && self.index.contains_key(&pack_key(c))
    }

    pub fn feature(&self, key: u64) -> Option<&[f64]> {
        let row = self.row_of(key)?;
        Some(&self.features[row * self.feature_dim..(row + 1) * self.feature_dim])
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.features[row * self.feature_dim..(row + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<bool>) -> Result<()> {
        if labels.len() != self.keys.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} voxels",
                labels.len(),
                self.keys.len()
            )));
        }
        self.labels = Some(labels);
        Ok(())
    }

    /// Replaces all features, keeping keys.
    pub fn with_features(&self, feature_dim: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != feature_dim * self.keys.len() {
            return Err(Error::InvalidArgument("feature buffer length mismatch".into()));
        }
        Ok(Self {
            resolution: self.resolution,
            feature_dim,
            keys: self.keys.clone(),
            features,
            index: self.index.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Key set only.
    pub fn key_set(&self) -> BTreeSet<u64> {
        self.keys.iter().copied().collect()
    }

    /// Trilinear blend of the 8 surrounding vertex features. Missing vertices
    /// contribute zero with their weight kept (no renormalization).
    pub fn trilinear_query(&self, p: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim];
        for (c, w) in trilinear_stencil(p, self.resolution) {
            if w == 0.0 || !in_range(c, self.resolution) {
                continue;
            }
            if let Some(f) = self.feature(pack_key(c)) {
                for (o, v) in out.iter_mut().zip(f) {
                    *o += w * v;
                }
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path, |w| self.write_to(w))
    }

    /// `SVXG` v1: resolution, feature dim, count, then `(key u64, f32 x dim)`
    /// records in key order, all little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"SVXG")?;
        binio::write_u32(w, GRID_FORMAT_VERSION)?;
        binio::write_u32(w, self.resolution)?;
        binio::write_u32(w, self.feature_dim as u32)?;
        binio::write_u64(w, self.keys.len() as u64)?;
        for (row, key) in self.keys.iter().enumerate() {
            binio::write_u64(w, *key)?;
            for v in self.row(row) {
                binio::write_f32(w, *v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: impl std::io::Read) -> Result<Self> {
        let mut r = LeReader::new(r, "sparse grid");
        r.magic(b"SVXG")?;
        let version = r.u32("version")?;
        if version != GRID_FORMAT_VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let resolution = r.u32("resolution")?;
        if resolution == 0 || resolution as u64 > KEY_MASK + 1 {
            return Err(r.error(format!("bad resolution {resolution}")));
        }
        let dim = r.u32("feature_dim")? as usize;
        let count = r.u64("count")?;
        let mut entries = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut last = None;
        for _ in 0..count {
            let key = r.u64("key")?;
            if last.is_some_and(|l| key <= l) {
                return Err(r.error("records not sorted by key"));
            }
            last = Some(key);
            let mut f = Vec::with_capacity(dim);
            for _ in 0..dim {
                f.push(r.f32("feature")? as f64);
            }
            entries.push((key, f));
        }
        Self::from_entries(resolution, dim, entries).map_err(|e| r.error(e.to_string()))
    }
}

pub const GRID_FORMAT_VERSION: u32 = 1;

/// Result of [`quantize_with_report`].
#[derive(Debug, Clone)]
pub struct Quantized {
    pub grid: SparseVoxelGrid,
    /// Voxels whose averaged normal collapsed and was replaced.
    pub degenerate: Vec<u64>,
}

/// Snaps points to their containing voxels, averaging positions and normals
/// per voxel. Each voxel gets the 6 raw channels
/// `(offset from voxel center in cell units, unit normal)`.
pub fn quantize(cloud: &OrientedPointCloud, resolution: u32) -> Result<SparseVoxelGrid> {
    Ok(quantize_with_report(cloud, resolution)?.grid)
}

pub fn quantize_with_report(cloud: &OrientedPointCloud, resolution: u32) -> Result<Quantized> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud".into()));
    }
    if cloud.points.len() != cloud.normals.len() {
        return Err(Error::InvalidArgument("points/normals length mismatch".into()));
    }
    struct Acc {
        pos: Vec3,
        normal: Vec3,
        first_normal: Vec3,
        count: usize,
    }
    let mut accs: HashMap<u64, Acc> = HashMap::new();
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let key = pack_key(voxel_of(p, resolution));
        let acc = accs.entry(key).or_insert(Acc {
            pos: Vec3::zeros(),
            normal: Vec3::zeros(),
            first_normal: *n,
            count: 0,
        });
        acc.pos += p;
        acc.normal += n;
        acc.count += 1;
    }
    let r = resolution as f64;
    let mut degenerate = Vec::new();
    let mut entries = Vec::with_capacity(accs.len());
    for (key, acc) in accs {
        let mean = acc.pos / acc.count as f64;
        let center = vertex_position(unpack_key(key), resolution);
        let offset = ((mean - center) * r).map(|v| v.clamp(-0.5, 0.5));
        let avg = acc.normal / acc.count as f64;
        let normal = if avg.norm() < DEGENERATE_NORMAL_LENGTH {
            degenerate.push(key);
            acc.first_normal.normalize()
        } else {
            avg.normalize()
        };
        entries.push((
            key,
            vec![offset.x, offset.y, offset.z, normal.x, normal.y, normal.z],
        ));
    }
    degenerate.sort_unstable();
    Ok(Quantized {
        grid: SparseVoxelGrid::from_entries(resolution, RAW_FEATURE_DIM, entries)?,
        degenerate,
    })
}

/// Parent key set at half resolution: a parent is occupied iff any of its
/// 8 children is.
pub fn downsample_keys(grid: &SparseVoxelGrid) -> Result<SparseVoxelGrid> {
    let r = grid.resolution();
    if r % 2 != 0 {
        return Err(Error::InvalidArgument(format!("resolution {r} is odd")));
    }
    SparseVoxelGrid::from_keys(
        r / 2,
        grid.keys().iter().map(|&k| pack_key(unpack_key(k).map(|v| v.div_euclid(2)))),
    )
}

/// Multi-resolution stack of grids, finest first for encoders and coarsest
/// first for decoders.
#[derive(Debug, Clone, Default)]
pub struct GridPyramid {
    pub levels: Vec<SparseVoxelGrid>,
}

impl GridPyramid {
    /// Repeatedly halves `base` key occupancy `steps` times.
    pub fn downsample_chain(base: &SparseVoxelGrid, steps: usize) -> Result<Self> {
        let mut levels = vec![SparseVoxelGrid::from_keys(base.resolution(), base.keys().iter().copied())?];
        for _ in 0..steps {
            let next = downsample_keys(levels.last().unwrap())?;
            levels.push(next);
        }
        Ok(Self { levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cloud(points: Vec<Vec3>, normals: Vec<Vec3>) -> OrientedPointCloud {
        OrientedPointCloud { points, normals }
    }

    #[test]
    fn key_round_trip_and_order() {
        let a = [3, 1, 2];
        assert_eq!(unpack_key(pack_key(a)), a);
        assert!(pack_key([0, 5, 9]) < pack_key([1, 0, 0]));
        assert!(pack_key([1, 0, 9]) < pack_key([1, 1, 0]));
    }

    #[test]
    fn point_at_voxel_center() {
        let c = [10, 20, 30];
        let p = vertex_position(c, 64);
        let g = quantize(&cloud(vec![p], vec![Vec3::y()]), 64).unwrap();
        assert_eq!(g.keys(), &[pack_key(c)]);
        assert_eq!(g.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn opposing_normals_flag_degenerate() {
        let p = vertex_position([4, 4, 4], 16);
        let n = Vec3::new(0.0, 0.6, 0.8);
        let jitter = Vec3::new(1e-5, 0.0, 0.0);
        let q = quantize_with_report(&cloud(vec![p, p], vec![n, (-n + jitter).normalize()]), 16).unwrap();
        assert_eq!(q.degenerate, vec![pack_key([4, 4, 4])]);
        let f = q.grid.row(0);
        assert!((Vec3::new(f[3], f[4], f[5]) - n).norm() < 1e-12);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        assert!(quantize(&OrientedPointCloud::default(), 8).is_err());
    }

    #[test]
    fn sphere_occupancy_matches_brute_force_snap() {
        let mesh = crate::fixtures::icosphere(0.45, 4);
        let c = crate::mesh::sample_surface(&mesh, 150_000, 11).unwrap();
        let g = quantize(&c, 256).unwrap();
        let r = 256.0;
        let snapped: BTreeSet<[i64; 3]> = c
            .points
            .iter()
            .map(|p| [p.x, p.y, p.z].map(|v| ((v + 0.5) * r).floor() as i64))
            .collect();
        assert_eq!(g.len(), snapped.len());
        for s in snapped {
            assert!(g.contains(s));
        }
    }

    #[test]
    fn voxel_center_points_are_lossless() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let coords: BTreeSet<Coord> = (0..200)
            .map(|_| [rng.random_range(0..32), rng.random_range(0..32), rng.random_range(0..32)])
            .collect();
        let pts: Vec<Vec3> = coords.iter().map(|&c| vertex_position(c, 32)).collect();
        let g = quantize(&cloud(pts.clone(), vec![Vec3::z(); pts.len()]), 32).unwrap();
        for (c, p) in coords.iter().zip(&pts) {
            let f = g.feature(pack_key(*c)).unwrap();
            let back = vertex_position(*c, 32) + Vec3::new(f[0], f[1], f[2]) / 32.0;
            assert_eq!((back - p).norm(), 0.0);
        }
    }

    #[test]
    fn downsample_examples() {
        let g = SparseVoxelGrid::from_keys(64, [pack_key([5, 5, 5])]).unwrap();
        let d = downsample_keys(&g).unwrap();
        assert_eq!(d.resolution(), 32);
        assert_eq!(d.keys(), &[pack_key([2, 2, 2])]);

        let full: Vec<u64> = (0..64).map(|i| pack_key([i % 4, (i / 4) % 4, i / 16])).collect();
        let d = downsample_keys(&SparseVoxelGrid::from_keys(4, full).unwrap()).unwrap();
        assert_eq!(d.len(), 8);

        let empty = SparseVoxelGrid::new(8, 0);
        assert!(downsample_keys(&empty).unwrap().is_empty());
        assert!(downsample_keys(&SparseVoxelGrid::new(5, 0)).is_err());
    }

    proptest! {
        #[test]
        fn downsample_is_exact_parent_occupancy(
            res_pow in 1u32..=4,
            raw in proptest::collection::vec((0i64..16, 0i64..16, 0i64..16), 0..200)
        ) {
            let r = 1u32 << res_pow;
            let keys: Vec<u64> = raw.iter().map(|&(i, j, k)| pack_key([i % r as i64, j % r as i64, k % r as i64])).collect();
            let g = SparseVoxelGrid::from_keys(r, keys).unwrap();
            let d = downsample_keys(&g).unwrap();
            let h = r as i64 / 2;
            for i in 0..h { for j in 0..h { for k in 0..h {
                let any_child = (0..8).any(|n| g.contains([2 * i + (n & 1), 2 * j + ((n >> 1) & 1), 2 * k + ((n >> 2) & 1)]));
                prop_assert_eq!(d.contains([i, j, k]), any_child);
            }}}
        }

        #[test]
        fn stencil_weights_sum_to_one(x in -0.49f64..0.49, y in -0.49f64..0.49, z in -0.49f64..0.49, rp in 1u32..7) {
            let s = trilinear_stencil(&Vec3::new(x, y, z), 1 << rp);
            let total: f64 = s.iter().map(|e| e.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    fn dense_grid(r: u32, f: impl Fn(Vec3) -> Vec<f64>, dim: usize) -> SparseVoxelGrid {
        let mut entries = Vec::new();
        for i in 0..r as i64 {
            for j in 0..r as i64 {
                for k in 0..r as i64 {
                    let c = [i, j, k];
                    entries.push((pack_key(c), f(vertex_position(c, r))));
                }
            }
        }
        SparseVoxelGrid::from_entries(r, dim, entries).unwrap()
    }

    #[test]
    fn query_at_vertex_and_cell_center() {
        let g = dense_grid(8, |p| vec![p.x * 3.0 - p.y, p.z * p.z], 2);
        let v = vertex_position([2, 5, 3], 8);
        assert_eq!(g.trilinear_query(&v), g.feature(pack_key([2, 5, 3])).unwrap());

        let center = (vertex_position([2, 5, 3], 8) + vertex_position([3, 6, 4], 8)) * 0.5;
        let mut mean = [0.0; 2];
        for n in 0..8i64 {
            let f = g.feature(pack_key([2 + (n & 1), 5 + ((n >> 1) & 1), 3 + ((n >> 2) & 1)])).unwrap();
            mean[0] += f[0] / 8.0;
            mean[1] += f[1] / 8.0;
        }
        let q = g.trilinear_query(&center);
        assert!((q[0] - mean[0]).abs() < 1e-15 && (q[1] - mean[1]).abs() < 1e-15);
    }

    #[test]
    fn linear_field_is_reproduced() {
        let r = 16;
        let g = dense_grid(r, |p| vec![p.x, 2.0 * p.y - 0.5 * p.z + 0.125], 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let lim = 0.5 - 0.5 / r as f64;
        for _ in 0..1000 {
            let p = Vec3::from_fn(|_, _| rng.random_range(-lim..lim));
            let q = g.trilinear_query(&p);
            assert!((q[0] - p.x).abs() < 1e-12);
            assert!((q[1] - (2.0 * p.y - 0.5 * p.z + 0.125)).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_vertices_contribute_zero() {
        let c = [3, 3, 3];
        let g = SparseVoxelGrid::from_entries(8, 1, vec![(pack_key(c), vec![1.0])]).unwrap();
        let p = (vertex_position(c, 8) + vertex_position([4, 4, 4], 8)) * 0.5;
        assert!((g.trilinear_query(&p)[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn continuity_across_cell_faces() {
        let r = 8;
        let g = dense_grid(r, |p| vec![(p.x * 7.0).sin() * p.y + p.z * p.z], 1);
        let face_x = vertex_position([4, 0, 0], r).x;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let y = rng.random_range(-0.4..0.4);
            let z = rng.random_range(-0.4..0.4);
            let a = g.trilinear_query(&Vec3::new(face_x - 1e-13, y, z))[0];
            let b = g.trilinear_query(&Vec3::new(face_x + 1e-13, y, z))[0];
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn file_round_trip_and_errors() {
        let g = SparseVoxelGrid::from_entries(
            16,
            2,
            vec![(pack_key([1, 2, 3]), vec![0.5, -1.25]), (pack_key([0, 0, 1]), vec![2.0, 0.0])],
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SVXG");
        let back = SparseVoxelGrid::read_from(&buf[..]).unwrap();
        assert_eq!(back, g);
        assert!(matches!(
            SparseVoxelGrid::read_from(&buf[..buf.len() - 3]),
            Err(Error::Format { .. })
        ));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(SparseVoxelGrid::read_from(&bad[..]).is_err());
    }
}
