//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! cargo test --release -p xgen-cli --test acceptance

use std::f64::consts::{FRAC_PI_2, LN_2};
use std::rc::Rc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xgen_cli::commands::{cmd_dataset, cmd_train, split_of, TrainOptions};
use xgen_cli::PipelineConfig;
use xgen_core::bvh::TriangleBvh;
use xgen_core::crossfield::{alignment_deviation, generate_gt_field, singularity_indices, SiteKind};
use xgen_core::fixtures;
use xgen_core::grid::{pack_key, vertex_position, SparseVoxelGrid};
use xgen_core::mesh::{
    principal_curvatures, reference_tangent, write_obj, OrientedPointCloud, QuadMesh, TriangleMesh, UMBILIC_THRESHOLD,
};
use xgen_core::metrics::{angle_distortion, angular_error, area_distortion, jacobian_ratio, quad_singularities};
use xgen_core::tsdf::{compute_tsdf, marching_cubes, DenseSdfGrid};
use xgen_core::Vec3;
use xgen_net::data::{prepare_shape, PrepareConfig, TrainingShape};
use xgen_net::gradcheck::{full_suite, DIRECTIONS};
use xgen_net::infer::{fit_metrics, FitMetrics, Predictor};
use xgen_net::manifest::Split;
use xgen_net::sparse::trilinear_map;
use xgen_net::tape::{CrossTargets, Tape};
use xgen_net::train::{Control, RunOptions};
use xgen_net::{Mat, NetworkConfig, ParamStore, TrainConfig, Trainer};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// Criterion 1

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let reports = full_suite(DIRECTIONS, 1);
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.2e})", r.name, r.max_rel_error))
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let detail = format!("{} checks, worst rel error {worst:.2e}, {secs:.1}s; failed: {failed:?}", reports.len());
    check(failed.is_empty() && secs < 60.0, detail)
}

// Criterion 2

fn scalar(f: impl FnOnce(&mut Tape<'_, f64>) -> xgen_net::Var) -> f64 {
    let params = ParamStore::<f64>::new();
    let mut tape = Tape::new(&params);
    let v = f(&mut tape);
    tape.value(v).data[0]
}

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 256;
    let mut targets = CrossTargets { normal: vec![], mu: vec![], nu: vec![], reference: vec![] };
    let mut raw = Vec::with_capacity(3 * n);
    for r in 0..n {
        let normal = random_unit(&mut rng);
        let t = reference_tangent(&normal);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mu = t * a.cos() + normal.cross(&t) * a.sin();
        let nu = normal.cross(&mu);
        let arr = |v: Vec3| [v.x, v.y, v.z];
        targets.normal.push(arr(normal));
        targets.mu.push(arr(mu));
        targets.nu.push(arr(nu));
        targets.reference.push(arr(t));
        // One of the four cross directions, scaled and tilted off the plane.
        let d = [mu, nu, -mu, -nu][r % 4] * 1.7 + normal * 0.4;
        raw.extend([d.x, d.y, d.z]);
    }
    let targets = Rc::new(targets);
    let cf = scalar(|t| {
        let x = t.input(Mat::from_vec(n, 3, raw));
        t.cross_loss_direction(x, targets)
    });
    let kl = scalar(|t| {
        let m = t.input(Mat::zeros(64, 64));
        let v = t.input(Mat::zeros(64, 64));
        t.kl(m, v)
    });
    let labels: Vec<f64> = (0..1000).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let occ = scalar(|t| {
        let x = t.input(Mat::zeros(labels.len(), 1));
        t.bce_with_logits(x, labels)
    });
    let detail = format!("L_cf {cf:.2e}, L_kl {kl:.2e}, L_o - ln2 {:.2e}", occ - LN_2);
    check(cf.abs() <= 1e-6 && kl.abs() <= 1e-9 && (occ - LN_2).abs() <= 1e-6, detail)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

// Criteria 3, 4 and 9 share one overfit per fixture.

const OVERFIT_STEPS: usize = 5000;
const EVAL_EVERY: u64 = 250;
const EVAL_SAMPLES: usize = 4096;
const AE_TARGET: f64 = 0.05;
const MAE_TARGET: f64 = 0.005;
const TIME_LIMIT_SECS: f64 = 30.0 * 60.0;
const NOISE_SIGMA: f64 = 0.01;
const DROP_RATE: f64 = 0.5;
const NOISY_AE_TARGET: f64 = 0.10;

struct Overfit {
    name: &'static str,
    mesh: TriangleMesh,
    shape: TrainingShape,
    predictor: Predictor,
    metrics: FitMetrics,
    steps: u64,
    seconds: f64,
}

fn overfit(name: &'static str, mesh: TriangleMesh) -> Overfit {
    let start = Instant::now();
    let prepared = prepare_shape(&mesh, &PrepareConfig::default(), 7).expect("prepare fixture");
    let mesh = prepared.mesh.clone();
    let shape = TrainingShape::from((name.to_string(), prepared));
    let cloud = shape.samples.surface.cloud();
    let train = TrainConfig {
        batch_size: 1,
        max_steps: OVERFIT_STEPS,
        rotate: false,
        max_point_drop: 0.0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(NetworkConfig::default(), train, String::new()).expect("trainer");
    let shapes = vec![shape];
    let mut last: Option<FitMetrics> = None;
    trainer
        .run(&shapes, &RunOptions::default(), |tr, _| {
            if tr.step % EVAL_EVERY != 0 {
                return Control::Continue;
            }
            let p = Predictor::new(tr.network.clone(), tr.params.clone());
            let m = fit_metrics(&p, &shapes[0], &cloud, EVAL_SAMPLES, 1).expect("fit metrics");
            println!("    {name} step {:5}: AE {:.4} MAE {:.5}", tr.step, m.angular_error, m.sdf_mae);
            last = Some(m);
            if m.angular_error < AE_TARGET && m.sdf_mae < MAE_TARGET {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .expect("training");
    let predictor = Predictor::new(trainer.network.clone(), trainer.params.clone());
    let metrics = match last {
        Some(m) if trainer.step % EVAL_EVERY == 0 => m,
        _ => fit_metrics(&predictor, &shapes[0], &cloud, EVAL_SAMPLES, 1).expect("fit metrics"),
    };
    Overfit {
        name,
        mesh,
        shape: shapes.into_iter().next().unwrap(),
        predictor,
        metrics,
        steps: trainer.step,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// AE as the metrics module defines it: deviation from principal-curvature
/// frames at the mesh vertices, umbilic vertices masked. `None` when every
/// vertex is umbilic (the sphere).
fn curvature_ae(r: &Overfit, cloud: &OrientedPointCloud) -> Option<f64> {
    let field = r.predictor.field_on_mesh(cloud, &r.mesh, SiteKind::Vertex).expect("inference");
    let frames = principal_curvatures(&r.mesh).expect("curvature");
    angular_error(&field.field, &frames, UMBILIC_THRESHOLD).ok()
}

fn format_ae(ae: Option<f64>) -> String {
    ae.map_or_else(|| "n/a (all umbilic)".to_string(), |a| format!("{a:.4}"))
}

fn overfit_criterion(runs: &[Overfit]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let m = &r.metrics;
        let ae = curvature_ae(r, &r.shape.samples.surface.cloud());
        // Training AE is measured against the training targets; the
        // curvature AE is reported for information only.
        ok &= m.angular_error < AE_TARGET && m.sdf_mae < MAE_TARGET && r.seconds < TIME_LIMIT_SECS;
        parts.push(format!(
            "{}: training AE {:.4} (curvature AE {}) MAE {:.5} after {} steps in {:.0}s",
            r.name,
            m.angular_error,
            format_ae(ae),
            m.sdf_mae,
            r.steps,
            r.seconds
        ));
    }
    check(ok, parts.join("; "))
}

fn genus_zero_fixtures() -> Vec<(&'static str, TriangleMesh)> {
    vec![
        ("sphere", fixtures::icosphere(0.35, 4)),
        ("cylinder", fixtures::cylinder(0.25, 0.6, 64, 24, true)),
        ("cube", fixtures::cube(0.6, 16)),
    ]
}

fn torus_fixture() -> TriangleMesh {
    fixtures::torus(0.3, 0.1, 64, 24)
}

fn expected_quarters(name: &str) -> i32 {
    if name == "torus" {
        0
    } else {
        8
    }
}

fn topology(runs: &[Overfit]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut fixtures_all = genus_zero_fixtures();
    fixtures_all.push(("torus", torus_fixture()));
    for (name, mesh) in fixtures_all {
        let mesh = mesh.with_vertex_normals();
        let frames = principal_curvatures(&mesh).expect("curvature");
        let gt = generate_gt_field(&mesh, &frames, 50, 1.0).expect("gt field");
        let s = singularity_indices(&gt.field, &mesh).expect("indices");
        ok &= s.total_quarters() == expected_quarters(name) && s.skipped.is_empty();
        parts.push(format!("GT {name} {} ({} singular)", s.total(), s.count()));
    }
    for r in runs {
        let cloud = r.shape.samples.surface.cloud();
        let field = r.predictor.field_on_mesh(&cloud, &r.mesh, SiteKind::Vertex).expect("inference");
        let s = singularity_indices(&field.field, &r.mesh).expect("indices");
        ok &= s.total_quarters() == expected_quarters(r.name) && s.skipped.is_empty();
        parts.push(format!("predicted {} {} ({} singular)", r.name, s.total(), s.count()));
    }
    check(ok, parts.join("; "))
}

fn noisy_cloud(cloud: &OrientedPointCloud, seed: u64) -> OrientedPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = sample(&mut rng, cloud.len(), ((1.0 - DROP_RATE) * cloud.len() as f64) as usize).into_vec();
    let mut kept = cloud.subset(&keep);
    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    for p in &mut kept.points {
        for c in 0..3 {
            p[c] = (p[c] + noise.sample(&mut rng)).clamp(-0.5, 0.5);
        }
    }
    kept
}

fn robustness(runs: &[Overfit]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut evaluated = 0;
    for r in runs.iter().filter(|r| r.name != "torus") {
        let cloud = noisy_cloud(&r.shape.samples.surface.cloud(), 9);
        let ae = curvature_ae(r, &cloud);
        let gt = fit_metrics(&r.predictor, &r.shape, &cloud, EVAL_SAMPLES, 1).expect("fit metrics");
        if let Some(a) = ae {
            ok &= a < NOISY_AE_TARGET;
            evaluated += 1;
        }
        parts.push(format!("{}: AE {} (vs GT frames {:.4})", r.name, format_ae(ae), gt.angular_error));
    }
    check(ok && evaluated > 0, parts.join("; "))
}

// Criterion 5

fn gt_generator() -> Verdict {
    let mesh = fixtures::cylinder(0.3, 0.9, 64, 40, false).with_vertex_normals();
    let frames = principal_curvatures(&mesh).expect("curvature");
    let gt = generate_gt_field(&mesh, &frames, 50, 1.0).expect("gt field");
    let monotone = gt.energy.windows(2).all(|w| w[1] <= w[0]);
    let ae = gt
        .field
        .samples
        .iter()
        .map(|s| {
            let axial = Vec3::z();
            alignment_deviation(&s.alpha, &axial, &s.normal.cross(&axial))
        })
        .sum::<f64>()
        / gt.field.samples.len() as f64;
    let detail = format!(
        "AE {ae:.5}, energy {:.3} -> {:.3} over {} iterations, monotone {monotone}",
        gt.energy[0],
        gt.energy.last().unwrap(),
        gt.energy.len() - 1
    );
    check(ae < 0.02 && monotone, detail)
}

// Criterion 6

fn geometry() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();

    let (r, radius) = (64u32, 0.35);
    let grid = compute_tsdf(&fixtures::icosphere(radius, 5), r, 0.1).expect("tsdf");
    let mc = marching_cubes(&grid).expect("marching cubes");
    let err = mc.vertices.iter().map(|v| (v.norm() - radius).abs()).fold(0.0, f64::max);
    ok &= err < 1.0 / r as f64;
    parts.push(format!("MC radius error {:.3} cells", err * r as f64));

    let r = 32u32;
    let mut disagree = 0;
    let mut checked = 0;
    for mesh in [fixtures::icosphere(0.35, 3), fixtures::cube(0.6, 8), fixtures::cylinder(0.25, 0.6, 32, 12, true), torus_fixture()] {
        let grid = compute_tsdf(&mesh, r, 0.1).expect("tsdf");
        let bvh = TriangleBvh::new(&mesh);
        for k in 0..r as i64 {
            for j in 0..r as i64 {
                for i in 0..r as i64 {
                    let v = grid.at([i, j, k]);
                    let inside = bvh.winding_number_exact(&vertex_position([i, j, k], r)) > 0.5;
                    checked += 1;
                    if v == 0.0 || (v < 0.0) != inside {
                        disagree += 1;
                    }
                }
            }
        }
    }
    ok &= disagree == 0;
    parts.push(format!("TSDF sign {}/{checked} agree", checked - disagree));

    let err = trilinear_linear_field_error();
    ok &= err < 1e-12;
    parts.push(format!("trilinear on linear fields {err:.1e}"));
    check(ok, parts.join("; "))
}

/// Worst error of trilinear interpolation of linear fields, through the
/// sparse grid query, the network's interpolation map and the dense TSDF.
fn trilinear_linear_field_error() -> f64 {
    let r = 16u32;
    let a = Vec3::new(0.7, -1.3, 2.1);
    let b = -0.4;
    let f = |p: &Vec3| a.dot(p) + b;
    let mut entries = Vec::new();
    let mut keys = Vec::new();
    for k in 0..r as i64 {
        for j in 0..r as i64 {
            for i in 0..r as i64 {
                let key = pack_key([i, j, k]);
                entries.push((key, vec![f(&vertex_position([i, j, k], r))]));
                keys.push(key);
            }
        }
    }
    keys.sort_unstable();
    let grid = SparseVoxelGrid::from_entries(r, 1, entries).expect("grid");
    let dense = DenseSdfGrid::from_fn(r, 10.0, f);
    let values: Vec<f64> = keys.iter().map(|&k| grid.feature(k).unwrap()[0]).collect();
    let lo = -0.5 + 0.5 / r as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let points: Vec<Vec3> = (0..1000).map(|_| Vec3::from_fn(|_, _| rng.random_range(lo..-lo))).collect();
    let map = trilinear_map(&keys, r, &points);
    let mut worst: f64 = 0.0;
    for (q, p) in points.iter().enumerate() {
        let via_map: f64 = (0..8).map(|c| map.weight[8 * q + c] * values[map.idx[8 * q + c] as usize]).sum();
        let want = f(p);
        worst = worst
            .max((grid.trilinear_query(p)[0] - want).abs())
            .max((via_map - want).abs())
            .max((dense.value_at(p) - want).abs());
    }
    worst
}

// Criterion 7: brute-force reference metrics written independently of
// the library (Kahan's triangle area, acos angles, determinant Jacobians).

fn kahan_triangle_area(p: Vec3, q: Vec3, r: Vec3) -> f64 {
    let mut s = [(q - p).norm(), (r - q).norm(), (p - r).norm()];
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let [a, b, c] = s;
    let prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    0.25 * prod.max(0.0).sqrt()
}

fn ref_quad_area(q: &[Vec3; 4]) -> f64 {
    let first = kahan_triangle_area(q[0], q[1], q[2]) + kahan_triangle_area(q[2], q[3], q[0]);
    let second = kahan_triangle_area(q[1], q[2], q[3]) + kahan_triangle_area(q[3], q[0], q[1]);
    (first + second) / 2.0
}

fn ref_area_distortion(m: &QuadMesh) -> f64 {
    let areas: Vec<f64> = (0..m.faces.len()).map(|f| ref_quad_area(&m.corners(f))).collect();
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    let var = areas.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / areas.len() as f64;
    var.sqrt() * 1e4
}

fn ref_angle_distortion(m: &QuadMesh) -> f64 {
    let mut sq = 0.0;
    let mut count = 0.0;
    for f in 0..m.faces.len() {
        let q = m.corners(f);
        for i in 0..4 {
            let u = q[(i + 1) % 4] - q[i];
            let v = q[(i + 3) % 4] - q[i];
            let cos = (u.x * v.x + u.y * v.y + u.z * v.z) / (u.norm() * v.norm());
            let angle = cos.clamp(-1.0, 1.0).acos();
            sq += (angle - FRAC_PI_2).powi(2);
            count += 1.0;
        }
    }
    (sq / count).sqrt()
}

fn det3(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    a.x * (b.y * c.z - b.z * c.y) - a.y * (b.x * c.z - b.z * c.x) + a.z * (b.x * c.y - b.y * c.x)
}

fn ref_jacobian_mean(m: &QuadMesh) -> f64 {
    let mut sum = 0.0;
    for f in 0..m.faces.len() {
        let q = m.corners(f);
        // The diagonal cross product is parallel to the quad's vector area.
        let n = (q[2] - q[0]).cross(&(q[3] - q[1])).normalize();
        let j: Vec<f64> = (0..4).map(|i| det3(q[(i + 1) % 4] - q[i], q[(i + 3) % 4] - q[i], n)).collect();
        let lo = j.iter().cloned().fold(f64::MAX, f64::min);
        let hi = j.iter().cloned().fold(f64::MIN, f64::max);
        sum += if lo > 0.0 { lo / hi } else { 0.0 };
    }
    sum / m.faces.len() as f64
}

/// Jittered, bumpy `n x n` grid of quads.
fn random_quad_mesh(rng: &mut ChaCha8Rng) -> QuadMesh {
    let n = rng.random_range(2..9usize);
    let h = 1.0 / n as f64;
    let mut vertices = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec3::new(
                i as f64 * h + rng.random_range(-0.3..0.3) * h,
                j as f64 * h + rng.random_range(-0.3..0.3) * h,
                rng.random_range(-0.4..0.4) * h,
            ));
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let faces = (0..n)
        .flat_map(|j| (0..n).map(move |i| [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]))
        .collect();
    QuadMesh::new(vertices, faces).expect("quad mesh")
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = random_quad_mesh(&mut rng);
        worst = worst
            .max((area_distortion(&m).unwrap() - ref_area_distortion(&m)).abs())
            .max((angle_distortion(&m).unwrap() - ref_angle_distortion(&m)).abs())
            .max((jacobian_ratio(&m).unwrap().mean - ref_jacobian_mean(&m)).abs());
    }
    let grid = fixtures::quad_grid(8, 1.0);
    let (angle, jr, area) = (
        angle_distortion(&grid).unwrap(),
        jacobian_ratio(&grid).unwrap().mean,
        area_distortion(&grid).unwrap(),
    );
    let cube_sings = quad_singularities(&fixtures::quad_cube(0.6, 4)).unwrap();
    let fixtures_ok = angle.abs() < 1e-9 && (jr - 1.0).abs() < 1e-9 && area.abs() < 1e-9 && cube_sings == 8;
    let detail = format!(
        "worst oracle gap {worst:.1e} on 100 meshes; grid Angle {angle:.1e} JR {jr} Area {area:.1e}; cube {cube_sings} singularities"
    );
    check(worst < 1e-9 && fixtures_ok, detail)
}

// Criterion 8

const DETERMINISM_CONFIG: &str = r#"{
  "seed": 17,
  "grid": {"resolution": 32},
  "tsdf": {"resolution": 32, "shell_samples": 4000, "surface_in_shell": 1000},
  "dataset": {"augmentations": 2, "surface_samples": 6000},
  "network": {"encoder_channels": [4, 8, 8], "decoder_channels": [8, 8], "latent_dim": 4, "head_hidden": 8},
  "train": {"batch_size": 2, "max_steps": 6, "points_per_step": 256, "queries_per_step": 256}
}"#;

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let meshes = dir.path().join("meshes");
    std::fs::create_dir_all(&meshes).unwrap();
    let sources = [
        ("ball", fixtures::icosphere(0.4, 2)),
        ("box", fixtures::cube(0.7, 4)),
        ("tube", fixtures::cylinder(0.2, 0.7, 24, 8, true)),
        ("ring", fixtures::torus(0.3, 0.12, 24, 12)),
    ];
    for (name, mesh) in &sources {
        write_obj(mesh, meshes.join(format!("{name}.obj"))).unwrap();
    }
    let train_sources = sources.iter().filter(|(n, _)| split_of(n) == Split::Train).count();
    let cfg = PipelineConfig::from_json(DETERMINISM_CONFIG).expect("config");
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<Vec<u8>>, Vec<u8>), String> {
        let out = dir.path().join(format!("data_{tag}"));
        cmd_dataset(&meshes, &out, &cfg, 1).map_err(|e| e.to_string())?;
        let manifest = std::fs::read(out.join("manifest.jsonl")).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(out.join("shapes")).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        let shapes = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let ck = dir.path().join(format!("model_{tag}.xgck"));
        cmd_train(&out.join("manifest.jsonl"), &ck, &cfg, &TrainOptions::default()).map_err(|e| e.to_string())?;
        Ok((manifest, shapes, std::fs::read(&ck).unwrap()))
    };
    let (a, b) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let detail = format!(
        "manifest {} bytes identical {}, {} shape files identical {}, checkpoint {} bytes identical {} ({train_sources} training sources)",
        a.0.len(),
        a.0 == b.0,
        a.1.len(),
        a.1 == b.1,
        a.2.len(),
        a.2 == b.2
    );
    check(a == b && train_sources > 0, detail)
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, title: &'static str, v: Verdict| {
        let (tag, detail) = match &v {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} [{tag}] {title}: {detail}");
        results.push((n, title, v));
    };
    report(1, "gradient suite", gradient_suite());
    report(2, "loss identities", loss_identities());
    report(5, "GT generator", gt_generator());
    report(6, "geometry", geometry());
    report(7, "metric oracles", metric_oracles());
    report(8, "determinism", determinism());

    let mut runs = Vec::new();
    for (name, mesh) in genus_zero_fixtures() {
        runs.push(overfit(name, mesh));
    }
    report(3, "single-shape overfit", overfit_criterion(&runs));
    report(9, "noise and drop robustness", robustness(&runs));
    runs.push(overfit("torus", torus_fixture()));
    report(4, "topology", topology(&runs));

    results.sort_by_key(|r| r.0);
    println!("\nsummary");
    for (n, title, v) in &results {
        println!("criterion {n} {}: {title}", if v.is_ok() { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

