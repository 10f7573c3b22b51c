//! One function per subcommand. Each returns the JSON result line and the
//! number of per-item failures; fatal problems are errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use xgen_core::crossfield::{
    blend_crosses, generate_gt_field, read_field, singularity_indices, write_field, FieldOnMesh, SiteKind,
};
use xgen_core::metrics::{angular_error, quad_quality};
use xgen_core::mesh::{
    load_mesh, load_point_cloud, load_quad_mesh, normalize_points, normalize_to_unit_cube, principal_curvatures,
    write_obj, CurvatureFrame, TriangleMesh,
};
use xgen_core::tsdf::{marching_cubes, DenseSdfGrid};
use xgen_core::write_atomic;
use xgen_net::data::{derive_seed, prepare_shape, random_rotation, rng_for, TrainingShape};
use xgen_net::manifest::{load_split, read_manifest, write_manifest, ManifestEntry, Split};
use xgen_net::train::{Control, RunOptions};
use xgen_net::{Checkpoint, Predictor, Trainer};

use crate::config::PipelineConfig;

/// Result of a command: the JSON line to print and how many items failed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub result: Value,
    pub failures: usize,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Self { result, failures: 0 }
    }
}

/// One source mesh out of every `TEST_MODULUS` goes to the test split.
pub const TEST_MODULUS: u64 = 10;

const MESH_EXTENSIONS: [&str; 2] = ["obj", "ply"];

/// Stable 64-bit hash of a shape name (first 8 bytes of its SHA-256).
pub fn name_hash(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn split_of(source: &str) -> Split {
    if name_hash(source) % TEST_MODULUS == 0 {
        Split::Test
    } else {
        Split::Train
    }
}

fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| MESH_EXTENSIONS.contains(&e.as_str())) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, |w| std::io::Write::write_all(w, text.as_bytes()))?;
    Ok(())
}

/// Builds every augmentation copy of one source mesh.
fn dataset_source(path: &Path, out_dir: &Path, cfg: &PipelineConfig, hash: &str) -> Result<Vec<ManifestEntry>> {
    let source = stem(path);
    let mesh = load_mesh(path).with_context(|| format!("reading {}", path.display()))?;
    let (base, _) = normalize_to_unit_cube(&mesh, cfg.normalize.margin)?;
    let key = name_hash(&source);
    let split = split_of(&source);
    let mut entries = Vec::new();
    for a in 0..cfg.dataset.augmentations {
        let id = format!("{source}_r{a:02}");
        let mesh = if a == 0 {
            base.clone()
        } else {
            let rot = random_rotation(&mut rng_for(cfg.seed, &[key, a as u64]));
            let rotated = base.transformed(&rot, xgen_core::Vec3::zeros());
            normalize_to_unit_cube(&rotated, cfg.normalize.margin)?.0
        };
        let prepared = prepare_shape(&mesh, &cfg.prepare(), derive_seed(cfg.seed, &[key, a as u64, 2]))
            .with_context(|| format!("preparing {id}"))?;
        let files = ["obj", "tsdf", "xsmp", "xfld"].map(|ext| format!("shapes/{id}.{ext}"));
        write_obj(&prepared.mesh, out_dir.join(&files[0]))?;
        prepared.tsdf.write(out_dir.join(&files[1]))?;
        prepared.samples.write(out_dir.join(&files[2]))?;
        write_field(&prepared.gt_field, out_dir.join(&files[3]))?;
        log::info!("[{id}] {} vertices, {} shell samples", prepared.mesh.vertices.len(), prepared.samples.shell.len());
        let [mesh, tsdf, samples, field] = files;
        entries.push(ManifestEntry {
            id,
            source: source.clone(),
            augmentation: a,
            split,
            mesh,
            tsdf,
            samples,
            field,
            config_hash: hash.to_string(),
        });
    }
    Ok(entries)
}

/// Meshes in `in_dir` to training shapes under `out_dir` plus
/// `manifest.jsonl` and the resolved `config.json`.
pub fn cmd_dataset(in_dir: &Path, out_dir: &Path, cfg: &PipelineConfig, workers: usize) -> Result<Outcome> {
    let files = mesh_files(in_dir)?;
    if files.is_empty() {
        bail!("no .obj or .ply meshes in {}", in_dir.display());
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = files.iter().map(|p| stem(p)).find(|s| !seen.insert(s.clone())) {
        bail!("two input meshes share the name {dup:?}");
    }
    std::fs::create_dir_all(out_dir.join("shapes"))?;
    let hash = cfg.hash();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let results: Vec<Result<Vec<ManifestEntry>>> = pool.install(|| {
        files
            .par_iter()
            .map(|p| dataset_source(p, out_dir, cfg, &hash))
            .collect()
    });
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in files.iter().zip(results) {
        match r {
            Ok(e) => entries.extend(e),
            Err(e) => {
                log::error!("[{}] skipped: {e:#}", stem(p));
                failed.push(json!({"source": stem(p), "error": format!("{e:#}")}));
            }
        }
    }
    if entries.is_empty() {
        bail!("every mesh failed");
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    write_json(&out_dir.join("config.json"), cfg)?;
    let test = entries.iter().filter(|e| e.split == Split::Test).count();
    Ok(Outcome {
        failures: failed.len(),
        result: json!({
            "command": "dataset",
            "manifest": manifest,
            "entries": entries.len(),
            "train": entries.len() - test,
            "test": test,
            "failed": failed,
            "config_hash": hash,
        }),
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    /// Periodic checkpoints go here; defaults to `<out>.d/`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Log the loss every this many steps (0 disables).
    pub log_every: u64,
}

pub fn cmd_train(manifest: &Path, out: &Path, cfg: &PipelineConfig, opts: &TrainOptions) -> Result<Outcome> {
    let hash = cfg.hash();
    let entries = read_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    if let Some(e) = entries.iter().find(|e| e.config_hash != hash) {
        log::warn!("[{}] built with config {}, training with {hash}", e.id, e.config_hash);
    }
    let shapes: Vec<TrainingShape> = load_split(manifest, Split::Train)?;
    if shapes.is_empty() {
        bail!("manifest {} has no training entries", manifest.display());
    }
    let mut trainer = match &opts.resume {
        Some(p) => {
            let ck = Checkpoint::read(p).with_context(|| format!("reading {}", p.display()))?;
            if ck.config.network != cfg.network {
                bail!("checkpoint {} was trained with a different network", p.display());
            }
            let mut t = Trainer::from_checkpoint(ck)?;
            t.train = cfg.train.clone();
            t.config_hash = hash.clone();
            t
        }
        None => Trainer::new(cfg.network.clone(), cfg.train.clone(), hash.clone())?,
    };
    let dir = opts.checkpoint_dir.clone().unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".d");
        out.with_file_name(name)
    });
    let start = Instant::now();
    let log_every = opts.log_every;
    let summary = trainer.run(
        &shapes,
        &RunOptions {
            checkpoint_dir: (cfg.train.checkpoint_every_epochs > 0).then_some(dir),
        },
        |t, l| {
            if log_every > 0 && t.step % log_every == 0 {
                log::info!(
                    "step {} loss {:.5} (occ {:.4} cf {:.4} sdf {:.5} kl {:.3})",
                    t.step, l.total, l.occupancy, l.cross_field, l.sdf, l.kl
                );
            }
            Control::Continue
        },
    )?;
    let epoch = summary.epochs;
    trainer.checkpoint(epoch).write(out)?;
    Ok(Outcome::ok(json!({
        "command": "train",
        "checkpoint": out,
        "shapes": shapes.len(),
        "steps": summary.steps,
        "epochs": summary.epochs,
        "loss": summary.last,
        "periodic_checkpoints": summary.checkpoints,
        "seconds": start.elapsed().as_secs_f64(),
        "config_hash": hash,
    })))
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn field_points_to(field: &mut FieldOnMesh, f: impl Fn(&xgen_core::Vec3) -> xgen_core::Vec3) {
    for s in &mut field.samples {
        s.point = f(&s.point);
    }
}

fn mesh_to(mesh: &TriangleMesh, f: impl Fn(&xgen_core::Vec3) -> xgen_core::Vec3) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh.vertices.iter().map(f).collect(),
        faces: mesh.faces.clone(),
        vertex_normals: mesh.vertex_normals.clone(),
    }
}

/// Field for a mesh (sampled input cloud, field at face centers or
/// vertices) or for a point cloud (surface from the SDF head, field at its
/// face centers). Output geometry is in the input's coordinates.
pub fn cmd_infer(input: &Path, checkpoint: &Path, out: &Path, cfg: &PipelineConfig, site: SiteKind) -> Result<Outcome> {
    let ck = Checkpoint::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let predictor = Predictor::from_checkpoint(&ck);
    let margin = cfg.normalize.margin;
    match load_mesh(input) {
        Ok(mesh) if !mesh.faces.is_empty() => {
            let (norm, tf) = normalize_to_unit_cube(&mesh, margin)?;
            let norm = norm.with_vertex_normals();
            let mut inferred = predictor.infer_mesh(&norm, cfg.dataset.surface_samples, cfg.seed, site)?;
            field_points_to(&mut inferred.field, |p| tf.invert(p));
            write_field(&inferred.field, out)?;
            Ok(Outcome::ok(json!({
                "command": "infer",
                "input": "mesh",
                "field": out,
                "sites": inferred.field.samples.len(),
                "degenerate": inferred.degenerate,
                "seconds": inferred.seconds,
                "config_hash": ck.config.config_hash,
            })))
        }
        _ => {
            let cloud = load_point_cloud(input).with_context(|| format!("{} is neither a mesh nor an oriented cloud", input.display()))?;
            let (points, tf) = normalize_points(&cloud.points, margin)?;
            let cloud = xgen_core::mesh::OrientedPointCloud::new(points, cloud.normals)?;
            let mut s = predictor.infer_cloud(&cloud, cfg.tsdf.truncation)?;
            field_points_to(&mut s.field.field, |p| tf.invert(p));
            let mesh_path = with_extension(out, "obj");
            write_obj(&mesh_to(&s.mesh, |p| tf.invert(p)), &mesh_path)?;
            write_field(&s.field.field, out)?;
            Ok(Outcome::ok(json!({
                "command": "infer",
                "input": "cloud",
                "field": out,
                "mesh": mesh_path,
                "sites": s.field.field.samples.len(),
                "faces": s.mesh.faces.len(),
                "evaluated_lattice_vertices": s.evaluated,
                "degenerate": s.field.degenerate,
                "seconds": s.field.seconds,
                "config_hash": ck.config.config_hash,
            })))
        }
    }
}

/// Principal frames at face centers: the 4-RoSy blend of the corner
/// directions with averaged curvatures.
pub fn face_frames(mesh: &TriangleMesh, frames: &[CurvatureFrame]) -> Vec<Option<CurvatureFrame>> {
    (0..mesh.faces.len())
        .map(|f| {
            let n = mesh.face_normal(f);
            let corners = mesh.faces[f].map(|v| &frames[v]);
            let dirs: Vec<_> = corners.iter().map(|c| (c.dir_max, c.normal, 1.0)).collect();
            let d = blend_crosses(&dirs, &n)?;
            let k_max = corners.iter().map(|c| c.k_max).sum::<f64>() / 3.0;
            let k_min = corners.iter().map(|c| c.k_min).sum::<f64>() / 3.0;
            Some(CurvatureFrame::new(mesh.face_center(f), n, d, k_max, k_min))
        })
        .collect()
}

/// Angular error of a field against the principal directions of `mesh`,
/// plus singularities for per-vertex fields.
pub fn cmd_eval_field(field_path: &Path, mesh_path: &Path, cfg: &PipelineConfig) -> Result<Outcome> {
    let field = read_field(field_path).with_context(|| format!("reading {}", field_path.display()))?;
    let mesh = load_mesh(mesh_path)
        .with_context(|| format!("reading {}", mesh_path.display()))?
        .with_vertex_normals();
    field.check_sites(&mesh)?;
    let frames = principal_curvatures(&mesh)?;
    let mask = cfg.metrics.anisotropy_mask;
    let mut result = json!({"command": "eval-field", "sites": field.samples.len(), "anisotropy_mask": mask});
    match field.site {
        SiteKind::Vertex => {
            result["angular_error"] = json!(angular_error(&field, &frames, mask)?);
            let s = singularity_indices(&field, &mesh)?;
            result["singularities"] = json!(s.count());
            result["index_sum"] = json!(s.total());
        }
        SiteKind::FaceCenter => {
            let per_face = face_frames(&mesh, &frames);
            let (kept, fr): (Vec<_>, Vec<_>) = field
                .samples
                .iter()
                .zip(per_face)
                .filter_map(|(s, f)| f.map(|f| (s.clone(), f)))
                .unzip();
            let sub = FieldOnMesh {
                site: SiteKind::FaceCenter,
                samples: kept,
            };
            result["angular_error"] = json!(angular_error(&sub, &fr, mask)?);
        }
    }
    Ok(Outcome::ok(result))
}

pub fn cmd_eval_quad(quad: &Path, reference: Option<&Path>, report: Option<&Path>, cfg: &PipelineConfig) -> Result<Outcome> {
    let q = load_quad_mesh(quad).with_context(|| format!("reading {}", quad.display()))?;
    let reference = reference
        .map(|r| load_mesh(r).with_context(|| format!("reading {}", r.display())))
        .transpose()?;
    let r = quad_quality(&q, reference.as_ref(), cfg.metrics.chamfer_samples, cfg.seed)?;
    if let Some(p) = report {
        write_json(p, &r)?;
    }
    log::info!("\n{}", r.to_table());
    Ok(Outcome::ok(json!({
        "command": "eval-quad",
        "faces": q.faces.len(),
        "area_distortion": r.area_distortion,
        "angle_distortion": r.angle_distortion,
        "singularity_count": r.singularity_count,
        "chamfer_l1": r.chamfer_l1,
        "jacobian_ratio_mean": r.jacobian_ratio_mean,
        "report": report,
    })))
}

fn edges_shared_by_two(mesh: &TriangleMesh) -> bool {
    mesh.edge_faces().values().all(|f| f.len() == 2)
}

pub fn cmd_mc(tsdf: &Path, out: &Path) -> Result<Outcome> {
    let grid = DenseSdfGrid::read(tsdf).with_context(|| format!("reading {}", tsdf.display()))?;
    let mesh = marching_cubes(&grid)?;
    write_obj(&mesh, out)?;
    Ok(Outcome::ok(json!({
        "command": "mc",
        "mesh": out,
        "vertices": mesh.vertices.len(),
        "faces": mesh.faces.len(),
        "watertight": edges_shared_by_two(&mesh),
    })))
}

pub fn cmd_gt_field(mesh_path: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Outcome> {
    let mesh = load_mesh(mesh_path)
        .with_context(|| format!("reading {}", mesh_path.display()))?
        .with_vertex_normals();
    let frames = principal_curvatures(&mesh)?;
    let gt = generate_gt_field(&mesh, &frames, cfg.gt_field.iterations, cfg.gt_field.smooth_weight)?;
    write_field(&gt.field, out)?;
    let s = singularity_indices(&gt.field, &mesh)?;
    Ok(Outcome::ok(json!({
        "command": "gt-field",
        "field": out,
        "vertices": mesh.vertices.len(),
        "iterations": cfg.gt_field.iterations,
        "energy_initial": gt.energy.first(),
        "energy_final": gt.energy.last(),
        "singularities": s.count(),
        "index_sum": s.total(),
    })))
}

/// Error line printed for fatal failures.
pub fn error_json(command: &str, err: &anyhow::Error) -> Value {
    json!({"command": command, "error": format!("{err:#}")})
}

pub fn parse_site(s: &str) -> Result<SiteKind> {
    match s {
        "vertex" => Ok(SiteKind::Vertex),
        "face" | "face-center" => Ok(SiteKind::FaceCenter),
        other => Err(anyhow!("unknown site kind {other:?} (vertex or face)")),
    }
}
