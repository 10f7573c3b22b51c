//! Training shapes: preparation from a mesh, the samples file, and the
//! per-step augmented views fed to the network.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion, Vector4};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use xgen_core::binio::{self, LeReader};
use xgen_core::crossfield::{generate_gt_field, project_to_tangent, FieldOnMesh};
use xgen_core::grid::{pack_key, quantize, unpack_key, SparseVoxelGrid};
use xgen_core::mesh::{principal_curvatures, reference_tangent, sample_sites, OrientedPointCloud, TriangleMesh};
use xgen_core::tsdf::{compute_tsdf, sample_thin_shell, DenseSdfGrid, SdfSamples};
use xgen_core::Vec3;

use crate::config::{NetworkConfig, TrainConfig};
use crate::error::{NetError, Result};
use crate::model::gt_occupancy;
use crate::real::Real;
use crate::tape::CrossTargets;

pub const SAMPLES_FORMAT_VERSION: u32 = 1;

/// Surface points with normals and ground-truth cross frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub mu: Vec<Vec3>,
    pub nu: Vec<Vec3>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cloud(&self) -> OrientedPointCloud {
        OrientedPointCloud {
            points: self.points.clone(),
            normals: self.normals.clone(),
        }
    }
}

/// Everything the loss needs from one shape besides its TSDF.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShapeSamples {
    pub surface: SurfaceSamples,
    pub shell: SdfSamples,
}

fn write_vec(w: &mut impl Write, v: &Vec3) -> std::io::Result<()> {
    for x in v.iter() {
        binio::write_f32(w, *x as f32)?;
    }
    Ok(())
}

fn read_vec(r: &mut LeReader<impl Read>, field: &str) -> xgen_core::Result<Vec3> {
    Ok(Vec3::new(r.f32(field)? as f64, r.f32(field)? as f64, r.f32(field)? as f64))
}

impl ShapeSamples {
    /// Binary layout: magic `XSMP`, version u32, shell epsilon f32, surface
    /// count u64 and `(p, n, μ, ν)` f32 triples, then shell count u64 and
    /// `(q, value)` f32 quadruples.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"XSMP")?;
        binio::write_u32(w, SAMPLES_FORMAT_VERSION)?;
        binio::write_f32(w, self.shell.shell_epsilon as f32)?;
        let s = &self.surface;
        binio::write_u64(w, s.len() as u64)?;
        for i in 0..s.len() {
            for v in [&s.points[i], &s.normals[i], &s.mu[i], &s.nu[i]] {
                write_vec(w, v)?;
            }
        }
        binio::write_u64(w, self.shell.len() as u64)?;
        for (p, v) in self.shell.points.iter().zip(&self.shell.values) {
            write_vec(w, p)?;
            binio::write_f32(w, *v as f32)?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(xgen_core::write_atomic(path, |w| self.write_to(w))?)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = LeReader::new(r, "samples file");
        r.magic(b"XSMP")?;
        let version = r.u32("version")?;
        if version != SAMPLES_FORMAT_VERSION {
            return Err(r.error(format!("version {version}, expected {SAMPLES_FORMAT_VERSION}")).into());
        }
        let eps = r.f32("shell epsilon")? as f64;
        let n = r.u64("surface count")? as usize;
        let mut s = SurfaceSamples::default();
        for _ in 0..n {
            s.points.push(read_vec(&mut r, "surface point")?);
            s.normals.push(read_vec(&mut r, "surface normal")?);
            s.mu.push(read_vec(&mut r, "mu")?);
            s.nu.push(read_vec(&mut r, "nu")?);
        }
        let m = r.u64("shell count")? as usize;
        let mut shell = SdfSamples {
            shell_epsilon: eps,
            ..Default::default()
        };
        for _ in 0..m {
            shell.points.push(read_vec(&mut r, "shell point")?);
            shell.values.push(r.f32("shell value")? as f64);
        }
        Ok(Self { surface: s, shell })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Settings for turning a normalized mesh into training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub tsdf_resolution: u32,
    pub truncation: f64,
    pub shell_epsilon: f64,
    pub shell_samples: usize,
    pub surface_samples: usize,
    /// Surface points also added to the shell set with value 0.
    pub surface_in_shell: usize,
    pub gt_iterations: usize,
    pub gt_smooth_weight: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            tsdf_resolution: 64,
            truncation: xgen_core::tsdf::DEFAULT_TRUNCATION,
            shell_epsilon: xgen_core::tsdf::DEFAULT_SHELL_EPSILON,
            shell_samples: 100_000,
            surface_samples: 150_000,
            surface_in_shell: 25_000,
            gt_iterations: xgen_core::crossfield::DEFAULT_GT_ITERATIONS,
            gt_smooth_weight: xgen_core::crossfield::DEFAULT_SMOOTH_WEIGHT,
        }
    }
}

/// A prepared shape: its mesh (with vertex normals), TSDF, per-vertex GT
/// field and sample sets.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub mesh: TriangleMesh,
    pub tsdf: DenseSdfGrid,
    pub gt_field: FieldOnMesh,
    pub gt_energy: Vec<f64>,
    pub samples: ShapeSamples,
}

/// TSDF, curvature-aligned GT field and sample sets of a normalized mesh.
pub fn prepare_shape(mesh: &TriangleMesh, cfg: &PrepareConfig, seed: u64) -> Result<PreparedShape> {
    let mesh = mesh.clone().with_vertex_normals();
    let tsdf = compute_tsdf(&mesh, cfg.tsdf_resolution, cfg.truncation)?;
    let frames = principal_curvatures(&mesh)?;
    let gt = generate_gt_field(&mesh, &frames, cfg.gt_iterations, cfg.gt_smooth_weight)?;
    let sites = sample_sites(&mesh, cfg.surface_samples, seed)?;
    let mut surface = SurfaceSamples::default();
    let mut skipped = 0usize;
    for site in &sites {
        let n = site.normal(&mesh);
        let mu = gt
            .field
            .direction_at(&mesh, site, &n)
            .and_then(|d| project_to_tangent(&d, &n));
        match mu {
            Ok(mu) => {
                surface.points.push(site.position(&mesh));
                surface.normals.push(n);
                surface.nu.push(mu.cross(&n));
                surface.mu.push(mu);
            }
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} surface samples dropped where the GT cross average vanished");
    }
    if surface.is_empty() {
        return Err(NetError::EmptyShape("no usable surface samples".into()));
    }
    let k = cfg.surface_in_shell.min(surface.len());
    let head = OrientedPointCloud {
        points: surface.points[..k].to_vec(),
        normals: surface.normals[..k].to_vec(),
    };
    let shell = sample_thin_shell(
        &tsdf,
        cfg.shell_epsilon,
        cfg.shell_samples,
        seed.wrapping_add(1),
        (k > 0).then_some(&head),
    )?;
    Ok(PreparedShape {
        mesh,
        tsdf,
        gt_field: gt.field,
        gt_energy: gt.energy,
        samples: ShapeSamples { surface, shell },
    })
}

/// What training reads for one shape.
#[derive(Debug, Clone)]
pub struct TrainingShape {
    pub id: String,
    pub samples: ShapeSamples,
    pub tsdf: DenseSdfGrid,
}

impl From<(String, PreparedShape)> for TrainingShape {
    fn from((id, p): (String, PreparedShape)) -> Self {
        Self {
            id,
            samples: p.samples,
            tsdf: p.tsdf,
        }
    }
}

/// One augmented view of a shape, ready for a forward pass.
#[derive(Debug, Clone)]
pub struct StepSample<T> {
    pub input: SparseVoxelGrid,
    /// Ground-truth occupancy per decoder level.
    pub occupancy: Vec<Vec<u64>>,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub cross: CrossTargets<T>,
    pub queries: Vec<Vec3>,
    pub sdf: Vec<T>,
}

/// Rigid part of an augmentation: `x -> scale * rotation * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub rotation: Rotation3<f64>,
    pub scale: f64,
    pub drop_rate: f64,
}

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            scale: 1.0,
            drop_rate: 0.0,
        }
    }
}

/// Largest coordinate magnitude allowed after rotation; points are scaled
/// down uniformly to stay inside it.
pub const ROTATION_EXTENT: f64 = 0.48;

/// Rotation uniform over SO(3) (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q)).to_rotation_matrix();
        }
    }
}

/// Draws an augmentation: a uniform rotation (when enabled) with the scale
/// that keeps the surface inside [`ROTATION_EXTENT`], and a drop rate in
/// `[0, max_point_drop]`.
pub fn draw_augmentation(shape: &TrainingShape, cfg: &TrainConfig, rng: &mut impl Rng) -> Augmentation {
    let mut aug = Augmentation::identity();
    if cfg.rotate {
        aug.rotation = random_rotation(rng);
        let extent = shape
            .samples
            .surface
            .points
            .iter()
            .map(|p| (aug.rotation * p).amax())
            .fold(0.0, f64::max);
        aug.scale = if extent > ROTATION_EXTENT { ROTATION_EXTENT / extent } else { 1.0 };
    }
    if cfg.max_point_drop > 0.0 {
        aug.drop_rate = rng.random_range(0.0..=cfg.max_point_drop);
    }
    aug
}

fn to3<T: Real>(v: &Vec3) -> [T; 3] {
    [T::lit(v.x), T::lit(v.y), T::lit(v.z)]
}

/// Latent keys implied by an input key set after `levels` floor-halvings.
pub fn latent_keys(input: &SparseVoxelGrid, levels: usize) -> Vec<u64> {
    let mut keys: Vec<u64> = input
        .keys()
        .iter()
        .map(|&k| pack_key(unpack_key(k).map(|v| v >> levels)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Occupancy threshold at the finest decoder level.
pub fn occupancy_threshold(net: &NetworkConfig, train: &TrainConfig, scale: f64) -> f64 {
    scale * train.shell_epsilon + train.occupancy_margin_cells / net.output_resolution() as f64
}

/// Builds the augmented input grid, occupancy targets and the supervised
/// point and query subsets for one step.
pub fn build_step_sample<T: Real>(
    shape: &TrainingShape,
    net: &NetworkConfig,
    train: &TrainConfig,
    aug: &Augmentation,
    rng: &mut impl Rng,
) -> Result<StepSample<T>> {
    let s = &shape.samples.surface;
    if s.is_empty() || shape.samples.shell.is_empty() {
        return Err(NetError::EmptyShape(format!("shape {} has no samples", shape.id)));
    }
    let r = aug.rotation;
    let map = |p: &Vec3| (r * p) * aug.scale;
    let kept: Vec<usize> = if aug.drop_rate > 0.0 {
        let k: Vec<usize> = (0..s.len()).filter(|_| rng.random::<f64>() >= aug.drop_rate).collect();
        if k.is_empty() {
            vec![0]
        } else {
            k
        }
    } else {
        (0..s.len()).collect()
    };
    let cloud = OrientedPointCloud {
        points: kept.iter().map(|&i| map(&s.points[i])).collect(),
        normals: kept.iter().map(|&i| r * s.normals[i]).collect(),
    };
    let input = quantize(&cloud, net.input_resolution)?;
    let latent = latent_keys(&input, net.encoder_levels());
    let rt = r.inverse();
    let sdf = |p: &Vec3| aug.scale * shape.tsdf.value_at(&((rt * p) / aug.scale));
    let occupancy = gt_occupancy(net, &latent, sdf, occupancy_threshold(net, train, aug.scale));

    let np = train.points_per_step.min(s.len());
    let pi = sample_indices(rng, s.len(), np).into_vec();
    let points: Vec<Vec3> = pi.iter().map(|&i| map(&s.points[i])).collect();
    let normals: Vec<Vec3> = pi.iter().map(|&i| r * s.normals[i]).collect();
    let cross = CrossTargets {
        normal: normals.iter().map(to3).collect(),
        mu: pi.iter().map(|&i| to3(&(r * s.mu[i]))).collect(),
        nu: pi.iter().map(|&i| to3(&(r * s.nu[i]))).collect(),
        reference: normals.iter().map(|n| to3(&reference_tangent(n))).collect(),
    };
    let q = &shape.samples.shell;
    let nq = train.queries_per_step.min(q.len());
    let qi = sample_indices(rng, q.len(), nq).into_vec();
    Ok(StepSample {
        input,
        occupancy,
        points,
        normals,
        cross,
        queries: qi.iter().map(|&i| map(&q.points[i])).collect(),
        sdf: qi.iter().map(|&i| T::lit(aug.scale * q.values[i])).collect(),
    })
}

/// Deterministic per-use seed from a base seed and a tuple of counters.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fresh generator for a derived seed.
pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgen_core::fixtures;

    fn small_prepare() -> PrepareConfig {
        PrepareConfig {
            tsdf_resolution: 32,
            shell_samples: 2000,
            surface_samples: 3000,
            surface_in_shell: 500,
            gt_iterations: 10,
            ..Default::default()
        }
    }

    #[test]
    fn samples_round_trip() {
        let p = prepare_shape(&fixtures::icosphere(0.35, 2), &small_prepare(), 1).unwrap();
        let mut buf = Vec::new();
        p.samples.write_to(&mut buf).unwrap();
        let back = ShapeSamples::read_from(&buf[..]).unwrap();
        assert_eq!(back.surface.len(), p.samples.surface.len());
        assert_eq!(back.shell.len(), 2500);
        for i in 0..back.surface.len() {
            assert!((back.surface.mu[i] - p.samples.surface.mu[i]).amax() < 1e-6);
        }
        assert!(ShapeSamples::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn gt_frames_are_tangent() {
        let p = prepare_shape(&fixtures::cylinder(0.25, 0.6, 32, 12, true), &small_prepare(), 2).unwrap();
        let s = &p.samples.surface;
        for i in 0..s.len() {
            assert!(s.mu[i].dot(&s.normals[i]).abs() < 1e-9);
            assert!(s.nu[i].dot(&s.mu[i]).abs() < 1e-9);
        }
        assert!(p.samples.shell.values.iter().all(|v| v.abs() < 0.02 + 1e-12));
    }

    #[test]
    fn rotation_is_uniform_enough_and_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mean = Vec3::zeros();
        for _ in 0..2000 {
            let r = random_rotation(&mut rng);
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
            mean += r * Vec3::z();
        }
        assert!((mean / 2000.0).norm() < 0.06);
    }

    #[test]
    fn augmented_sample_stays_in_cube() {
        let p = prepare_shape(&fixtures::cube(0.8, 6), &small_prepare(), 3).unwrap();
        let shape = TrainingShape::from(("cube".to_string(), p));
        let net = NetworkConfig {
            input_resolution: 32,
            encoder_channels: vec![4, 4, 4],
            decoder_channels: vec![4, 4],
            ..Default::default()
        };
        let train = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let aug = draw_augmentation(&shape, &train, &mut rng);
            let s: StepSample<f32> = build_step_sample(&shape, &net, &train, &aug, &mut rng).unwrap();
            assert!(s.points.iter().all(|p| p.amax() <= ROTATION_EXTENT + 1e-9));
            assert!(!s.occupancy[1].is_empty());
            for (p, n) in s.points.iter().zip(&s.normals) {
                let d = aug.scale * shape.tsdf.value_at(&(aug.rotation.inverse() * p / aug.scale));
                assert!(d.abs() < 0.02, "surface point off the zero set: {d}");
                assert!((n.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3]), derive_seed(7, &[3]));
    }
}
