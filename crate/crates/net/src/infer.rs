//! Evaluation-mode forward passes: latent mean, predicted occupancy gating,
//! SDF and field heads at arbitrary points, and the mesh and point-cloud
//! inference paths.

use std::collections::VecDeque;
use std::time::Instant;

use xgen_core::crossfield::{alignment_deviation, CrossFieldSample, FieldOnMesh, SiteKind};
use xgen_core::grid::{quantize, vertex_position};
use xgen_core::mesh::{reference_tangent, sample_surface, OrientedPointCloud, TriangleMesh};
use xgen_core::tsdf::{marching_cubes, DenseSdfGrid};
use xgen_core::Vec3;

use crate::checkpoint::Checkpoint;
use crate::config::NetworkConfig;
use crate::data::TrainingShape;
use crate::error::Result;
use crate::model::{decode, encode, field_directions, field_head, query_features, sdf_head, Decoded, Gating};
use crate::params::ParamStore;
use crate::tape::Tape;

/// Trained network in evaluation mode.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub network: NetworkConfig,
    pub params: ParamStore<f32>,
}

/// Outputs of one decoded shape at caller-chosen points.
#[derive(Debug, Clone, Default)]
pub struct Prediction {
    pub sdf: Vec<f64>,
    /// `None` where the direction head's tangent part vanished.
    pub directions: Vec<Option<Vec3>>,
    /// Kept voxels per decoder level.
    pub occupancy: Vec<usize>,
}

/// Field on a mesh plus bookkeeping from inference.
#[derive(Debug, Clone)]
pub struct InferredField {
    pub field: FieldOnMesh,
    /// Sites whose predicted direction was degenerate and replaced by the
    /// reference tangent.
    pub degenerate: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct InferredSurface {
    pub mesh: TriangleMesh,
    pub sdf: DenseSdfGrid,
    pub field: InferredField,
    /// Lattice vertices whose SDF came from the network.
    pub evaluated: usize,
}

struct Decoding<'p> {
    tape: Tape<'p, f32>,
    decoded: Decoded,
}

fn to_field(site: SiteKind, points: &[Vec3], normals: &[Vec3], dirs: Vec<Option<Vec3>>) -> (FieldOnMesh, usize) {
    let mut degenerate = 0;
    let samples = points
        .iter()
        .zip(normals)
        .zip(dirs)
        .map(|((p, n), d)| {
            let alpha = d.unwrap_or_else(|| {
                degenerate += 1;
                reference_tangent(n)
            });
            CrossFieldSample::new(*p, *n, alpha)
        })
        .collect();
    (FieldOnMesh { site, samples }, degenerate)
}

/// Positions and normals of the field sites of a mesh.
pub fn mesh_sites(mesh: &TriangleMesh, site: SiteKind) -> (Vec<Vec3>, Vec<Vec3>) {
    match site {
        SiteKind::Vertex => (mesh.vertices.clone(), mesh.normals_or_computed()),
        SiteKind::FaceCenter => (
            (0..mesh.faces.len()).map(|f| mesh.face_center(f)).collect(),
            (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect(),
        ),
    }
}

impl Predictor {
    pub fn new(network: NetworkConfig, params: ParamStore<f32>) -> Self {
        Self { network, params }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        Self::new(ck.config.network.clone(), ck.params.clone())
    }

    fn decode(&self, cloud: &OrientedPointCloud) -> Result<Decoding<'_>> {
        let input = quantize(cloud, self.network.input_resolution)?;
        let mut tape = Tape::new(&self.params);
        let latent = encode(&mut tape, &self.network, &input)?;
        let decoded = decode(&mut tape, &self.network, &latent.keys, latent.mean, Gating::Predicted)?;
        Ok(Decoding { tape, decoded })
    }

    fn sdf_at(&self, d: &mut Decoding<'_>, points: &[Vec3]) -> Vec<f64> {
        if points.is_empty() {
            return Vec::new();
        }
        let (f, _) = query_features(&mut d.tape, &d.decoded, points);
        let s = sdf_head(&mut d.tape, f);
        d.tape.value(s).data.iter().map(|v| *v as f64).collect()
    }

    fn directions_at(&self, d: &mut Decoding<'_>, points: &[Vec3], normals: &[Vec3]) -> Vec<Option<Vec3>> {
        if points.is_empty() {
            return Vec::new();
        }
        let (f, _) = query_features(&mut d.tape, &d.decoded, points);
        let out = field_head(&mut d.tape, &self.network, f, normals);
        field_directions(self.network.field_head_kind, d.tape.value(out), normals)
    }

    /// Decodes `cloud` and evaluates the SDF head at `queries` and the field
    /// head at `sites` (positions with normals).
    pub fn predict(&self, cloud: &OrientedPointCloud, queries: &[Vec3], sites: &[Vec3], normals: &[Vec3]) -> Result<Prediction> {
        let mut d = self.decode(cloud)?;
        Ok(Prediction {
            sdf: self.sdf_at(&mut d, queries),
            directions: self.directions_at(&mut d, sites, normals),
            occupancy: d.decoded.levels.iter().map(|l| l.kept.len()).collect(),
        })
    }

    /// Field on a mesh from a given input cloud.
    pub fn field_on_mesh(&self, cloud: &OrientedPointCloud, mesh: &TriangleMesh, site: SiteKind) -> Result<InferredField> {
        let start = Instant::now();
        let (points, normals) = mesh_sites(mesh, site);
        let mut d = self.decode(cloud)?;
        let dirs = self.directions_at(&mut d, &points, &normals);
        let (field, degenerate) = to_field(site, &points, &normals, dirs);
        Ok(InferredField {
            field,
            degenerate,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Mesh path: samples an input cloud from the mesh and queries the field
    /// at its sites.
    pub fn infer_mesh(&self, mesh: &TriangleMesh, samples: usize, seed: u64, site: SiteKind) -> Result<InferredField> {
        let start = Instant::now();
        let cloud = sample_surface(mesh, samples, seed)?;
        let mut out = self.field_on_mesh(&cloud, mesh, site)?;
        out.seconds = start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Cloud path: SDF on the input lattice where the decoded shell covers
    /// the full trilinear stencil, truncation values elsewhere (positive
    /// where connected to the grid boundary, negative otherwise), marching
    /// cubes, then the field at face centers.
    pub fn infer_cloud(&self, cloud: &OrientedPointCloud, truncation: f64) -> Result<InferredSurface> {
        let start = Instant::now();
        let mut d = self.decode(cloud)?;
        let r = self.network.input_resolution;
        let n = r as usize;
        let mut lattice = Vec::with_capacity(n * n * n);
        for k in 0..r as i64 {
            for j in 0..r as i64 {
                for i in 0..r as i64 {
                    lattice.push(vertex_position([i, j, k], r));
                }
            }
        }
        let map = crate::sparse::trilinear_map(&d.decoded.keys, d.decoded.resolution, &lattice);
        let covered: Vec<usize> = map
            .coverage()
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 1.0 - 1e-9)
            .map(|(i, _)| i)
            .collect();
        let pts: Vec<Vec3> = covered.iter().map(|&i| lattice[i]).collect();
        let values = self.sdf_at(&mut d, &pts);
        let mut grid: Vec<Option<f64>> = vec![None; lattice.len()];
        for (&i, v) in covered.iter().zip(&values) {
            grid[i] = Some(v.clamp(-truncation, truncation));
        }
        let filled = fill_outside(&grid, n, truncation);
        let sdf = DenseSdfGrid::new(r, truncation, filled)?;
        let mesh = marching_cubes(&sdf)?;
        let (points, normals) = mesh_sites(&mesh, SiteKind::FaceCenter);
        let dirs = self.directions_at(&mut d, &points, &normals);
        let (field, degenerate) = to_field(SiteKind::FaceCenter, &points, &normals, dirs);
        Ok(InferredSurface {
            mesh,
            sdf,
            field: InferredField {
                field,
                degenerate,
                seconds: start.elapsed().as_secs_f64(),
            },
            evaluated: covered.len(),
        })
    }
}

/// How well a network reproduces a training shape from its full surface
/// cloud: mean alignment deviation against the GT frames of surface
/// samples and mean absolute SDF error over shell samples.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FitMetrics {
    pub angular_error: f64,
    pub sdf_mae: f64,
    /// Evaluated surface samples whose predicted direction was degenerate
    /// (counted at the maximum deviation).
    pub degenerate: usize,
}

/// Evaluates [`FitMetrics`] on up to `count` seeded surface and shell samples.
pub fn fit_metrics(predictor: &Predictor, shape: &TrainingShape, cloud: &OrientedPointCloud, count: usize, seed: u64) -> Result<FitMetrics> {
    let s = &shape.samples.surface;
    let q = &shape.samples.shell;
    let mut rng = crate::data::rng_for(seed, &[]);
    let pi = rand::seq::index::sample(&mut rng, s.len(), count.min(s.len())).into_vec();
    let qi = rand::seq::index::sample(&mut rng, q.len(), count.min(q.len())).into_vec();
    let points: Vec<Vec3> = pi.iter().map(|&i| s.points[i]).collect();
    let normals: Vec<Vec3> = pi.iter().map(|&i| s.normals[i]).collect();
    let queries: Vec<Vec3> = qi.iter().map(|&i| q.points[i]).collect();
    let pred = predictor.predict(cloud, &queries, &points, &normals)?;
    let mut degenerate = 0;
    let mut ae = 0.0;
    for (d, &i) in pred.directions.iter().zip(&pi) {
        ae += match d {
            Some(a) => alignment_deviation(a, &s.mu[i], &s.nu[i]),
            None => {
                degenerate += 1;
                std::f64::consts::SQRT_2 - 1.0
            }
        };
    }
    let mae = pred.sdf.iter().zip(&qi).map(|(p, &i)| (p - q.values[i]).abs()).sum::<f64>() / qi.len() as f64;
    Ok(FitMetrics {
        angular_error: ae / pi.len() as f64,
        sdf_mae: mae,
        degenerate,
    })
}

/// Fills unevaluated lattice vertices: `+τ` when 6-connected to the grid
/// boundary through unevaluated vertices, `-τ` otherwise.
fn fill_outside(grid: &[Option<f64>], n: usize, tau: f64) -> Vec<f64> {
    let idx = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    let mut outside = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let on_boundary = [i, j, k].iter().any(|&c| c == 0 || c == n - 1);
                let id = idx(i, j, k);
                if on_boundary && grid[id].is_none() {
                    outside[id] = true;
                    queue.push_back((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = queue.pop_front() {
        let c = [i as i64, j as i64, k as i64];
        for axis in 0..3 {
            for s in [-1i64, 1] {
                let mut d = c;
                d[axis] += s;
                if d.iter().any(|&v| v < 0 || v >= n as i64) {
                    continue;
                }
                let id = idx(d[0] as usize, d[1] as usize, d[2] as usize);
                if grid[id].is_none() && !outside[id] {
                    outside[id] = true;
                    queue.push_back((d[0] as usize, d[1] as usize, d[2] as usize));
                }
            }
        }
    }
    grid.iter()
        .zip(&outside)
        .map(|(v, &o)| v.unwrap_or(if o { tau } else { -tau }))
        .collect()
}
