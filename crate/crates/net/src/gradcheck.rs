//! Finite-difference verification of the tape's gradients.
//!
//! Each case is a small graph over parameters; the analytic directional
//! derivative `g · d` is compared with the central difference
//! `(f(θ + h d) - f(θ - h d)) / 2h` for random unit directions `d`.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use xgen_core::grid::pack_key;
use xgen_core::mesh::reference_tangent;
use xgen_core::Vec3;

use crate::config::{FieldHeadKind, LossWeights, NetworkConfig, TrainConfig};
use crate::data::{build_step_sample, Augmentation, ShapeSamples, SurfaceSamples, TrainingShape};
use crate::loss::sample_loss;
use crate::mat::Mat;
use crate::model::init_params;
use crate::params::ParamStore;
use crate::sparse::{stride2_map, submanifold_map, trilinear_map, upsample_map};
use crate::tape::{CrossTargets, Tape, Var};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-3;
pub const DIRECTIONS: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub directions: usize,
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares analytic and numeric directional derivatives of `f` over
/// `directions` random unit directions in parameter space.
pub fn check<F>(name: &str, params: &ParamStore<f64>, f: F, directions: usize, seed: u64) -> CheckReport
where
    F: Fn(&mut Tape<'_, f64>) -> Var,
{
    check_with_step(name, params, f, directions, seed, FD_STEP)
}

pub fn check_with_step<F>(name: &str, params: &ParamStore<f64>, f: F, directions: usize, seed: u64, h: f64) -> CheckReport
where
    F: Fn(&mut Tape<'_, f64>) -> Var,
{
    let grads = {
        let mut tape = Tape::new(params);
        let root = f(&mut tape);
        tape.backward(root)
    };
    let eval = |p: &ParamStore<f64>| {
        let mut tape = Tape::new(p);
        let root = f(&mut tape);
        tape.value(root).data[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport {
        name: name.to_string(),
        directions,
        max_rel_error: 0.0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for _ in 0..directions {
        let mut d: Vec<Mat<f64>> = params
            .values()
            .iter()
            .map(|v| Mat::from_fn(v.rows, v.cols, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let norm = d.iter().flat_map(|m| &m.data).map(|v| v * v).sum::<f64>().sqrt();
        for m in &mut d {
            m.scale(1.0 / norm);
        }
        let analytic: f64 = grads
            .params
            .iter()
            .zip(&d)
            .map(|(g, d)| g.data.iter().zip(&d.data).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let shifted = |s: f64| {
            let mut p = params.clone();
            for (id, dm) in d.iter().enumerate() {
                for (v, dv) in p.value_mut(id).data.iter_mut().zip(&dm.data) {
                    *v += s * dv;
                }
            }
            eval(&p)
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let e = rel_error(analytic, numeric);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    report
}

struct Case {
    rng: ChaCha8Rng,
    params: ParamStore<f64>,
}

impl Case {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ParamStore::new(),
        }
    }

    /// Parameter with entries of magnitude in `[lo, hi]` and random sign,
    /// keeping values away from kinks at zero.
    fn away(&mut self, name: &str, rows: usize, cols: usize, lo: f64, hi: f64) {
        let rng = &mut self.rng;
        let m = Mat::from_fn(rows, cols, |_, _| {
            let v = rng.random_range(lo..hi);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        });
        self.params.add(name, m);
    }

    fn normal(&mut self, name: &str, rows: usize, cols: usize) {
        let rng = &mut self.rng;
        let m = Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
        self.params.add(name, m);
    }

    fn weights(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }
}

/// Reduces any matrix to a scalar with fixed random weights.
fn reduce(tape: &mut Tape<'_, f64>, x: Var, w: &[f64]) -> Var {
    let v = tape.value(x);
    let (r, c) = (v.rows, v.cols);
    let right = tape.input(Mat::from_vec(c, 1, w[..c].to_vec()));
    let left = tape.input(Mat::from_vec(1, r, w[c..c + r].to_vec()));
    let col = tape.matmul(x, right);
    tape.matmul(left, col)
}

fn random_keys(rng: &mut ChaCha8Rng, res: i64, count: usize) -> Vec<u64> {
    let mut keys: Vec<u64> = (0..count)
        .map(|_| pack_key([rng.random_range(0..res), rng.random_range(0..res), rng.random_range(0..res)]))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

fn random_targets(rng: &mut ChaCha8Rng, n: usize) -> CrossTargets<f64> {
    let mut t = CrossTargets {
        normal: Vec::new(),
        mu: Vec::new(),
        nu: Vec::new(),
        reference: Vec::new(),
    };
    for _ in 0..n {
        let nrm = random_unit(rng);
        let mu = (random_unit(rng) - nrm * nrm.dot(&random_unit(rng))).cross(&nrm).normalize();
        let nu = mu.cross(&nrm);
        let r = reference_tangent(&nrm);
        t.normal.push([nrm.x, nrm.y, nrm.z]);
        t.mu.push([mu.x, mu.y, mu.z]);
        t.nu.push([nu.x, nu.y, nu.z]);
        t.reference.push([r.x, r.y, r.z]);
    }
    t
}

/// One report per differentiable tape operation.
pub fn op_suite(directions: usize, seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();

    let mut c = Case::new(seed);
    c.normal("a", 4, 3);
    c.normal("b", 3, 5);
    c.normal("bias", 1, 5);
    let w = c.weights(16);
    out.push(check(
        "matmul+add_row",
        &c.params,
        |t| {
            let (a, b, bias) = (t.param_named("a"), t.param_named("b"), t.param_named("bias"));
            let y = t.matmul(a, b);
            let y = t.add_row(y, bias);
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 1);
    c.normal("a", 3, 4);
    c.normal("b", 3, 4);
    let w = c.weights(16);
    out.push(check(
        "add",
        &c.params,
        |t| {
            let (a, b) = (t.param_named("a"), t.param_named("b"));
            let y = t.add(a, b);
            let y = t.add(y, a);
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 2);
    c.away("x", 5, 4, 0.05, 2.0);
    let w = c.weights(16);
    out.push(check(
        "leaky_relu",
        &c.params,
        |t| {
            let x = t.param_named("x");
            let y = t.leaky_relu(x, 0.01);
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    for (name, stride) in [("conv_stride1", 1u32), ("conv_stride2", 2)] {
        let mut c = Case::new(seed + 3 + stride as u64);
        let keys = random_keys(&mut c.rng, 6, 60);
        let (out_rows, map) = if stride == 1 {
            (keys.len(), submanifold_map(&keys, 6))
        } else {
            let (coarse, m) = stride2_map(&keys, 6);
            (coarse.len(), m)
        };
        let map = Rc::new(map);
        c.normal("x", keys.len(), 3);
        c.normal("w", 27 * 3, 2);
        let w = c.weights(2 + out_rows);
        out.push(check(
            name,
            &c.params,
            |t| {
                let (x, k) = (t.param_named("x"), t.param_named("w"));
                let y = t.conv(x, k, Rc::clone(&map));
                reduce(t, y, &w)
            },
            directions,
            seed,
        ));
    }

    let mut c = Case::new(seed + 6);
    let parents = random_keys(&mut c.rng, 4, 6);
    let up = upsample_map(&parents);
    let rows = Rc::new(up.parent.clone());
    let blocks = Rc::new(up.offset.clone());
    c.normal("x", parents.len(), 8 * 2);
    let w = c.weights(2 + up.child_keys.len());
    out.push(check(
        "gather_blocks",
        &c.params,
        |t| {
            let x = t.param_named("x");
            let y = t.gather_blocks(x, Rc::clone(&rows), Rc::clone(&blocks), 2);
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 7);
    c.normal("x", 6, 3);
    let pick = Rc::new(vec![4u32, 0, 4, 2]);
    let w = c.weights(7);
    out.push(check(
        "gather_rows",
        &c.params,
        |t| {
            let x = t.param_named("x");
            let y = t.gather_rows(x, Rc::clone(&pick));
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 8);
    let keys = random_keys(&mut c.rng, 4, 40);
    let pts: Vec<Vec3> = (0..12)
        .map(|_| Vec3::from_fn(|_, _| c.rng.random_range(-0.45..0.45)))
        .collect();
    let tri = Rc::new(trilinear_map(&keys, 4, &pts));
    c.normal("x", keys.len(), 3);
    let w = c.weights(15);
    out.push(check(
        "trilinear",
        &c.params,
        |t| {
            let x = t.param_named("x");
            let y = t.trilinear(x, Rc::clone(&tri));
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 9);
    c.normal("a", 4, 5);
    c.normal("b", 4, 2);
    let w = c.weights(12);
    out.push(check(
        "slice_cols+concat_cols",
        &c.params,
        |t| {
            let (a, b) = (t.param_named("a"), t.param_named("b"));
            let s = t.slice_cols(a, 1, 4);
            let y = t.concat_cols(s, b);
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 10);
    c.away("x", 4, 4, 0.1, 0.9);
    let w = c.weights(8);
    out.push(check(
        "clamp",
        &c.params,
        |t| {
            let x = t.param_named("x");
            let y = t.clamp(x, -0.5, 0.5);
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 11);
    c.normal("m", 3, 4);
    c.normal("lv", 3, 4);
    let eta = c.weights(12);
    let w = c.weights(7);
    out.push(check(
        "reparameterize",
        &c.params,
        |t| {
            let (m, lv) = (t.param_named("m"), t.param_named("lv"));
            let y = t.reparameterize(m, lv, eta.clone());
            reduce(t, y, &w)
        },
        directions,
        seed,
    ));
    out.push(check(
        "kl",
        &c.params,
        |t| {
            let (m, lv) = (t.param_named("m"), t.param_named("lv"));
            t.kl(m, lv)
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 12);
    c.normal("x", 10, 1);
    let labels: Vec<f64> = (0..10).map(|i| (i % 3 == 0) as u8 as f64).collect();
    out.push(check(
        "bce_with_logits",
        &c.params,
        |t| {
            let x = t.param_named("x");
            t.bce_with_logits(x, labels.clone())
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 13);
    c.away("x", 8, 1, 0.05, 1.0);
    out.push(check(
        "l1",
        &c.params,
        |t| {
            let x = t.param_named("x");
            t.l1(x, vec![0.0; 8])
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 14);
    let geo = Rc::new(random_targets(&mut c.rng, 12));
    c.normal("x", 12, 3);
    out.push(check(
        "cross_loss_direction",
        &c.params,
        |t| {
            let x = t.param_named("x");
            t.cross_loss_direction(x, Rc::clone(&geo))
        },
        directions,
        seed,
    ));
    let mut c = Case::new(seed + 15);
    c.normal("x", 12, 1);
    out.push(check(
        "cross_loss_angle",
        &c.params,
        |t| {
            let x = t.param_named("x");
            t.cross_loss_angle(x, Rc::clone(&geo))
        },
        directions,
        seed,
    ));

    let mut c = Case::new(seed + 16);
    c.normal("a", 1, 1);
    c.normal("b", 1, 1);
    out.push(check(
        "weighted_sum",
        &c.params,
        |t| {
            let (a, b) = (t.param_named("a"), t.param_named("b"));
            t.weighted_sum(&[(a, 0.7), (b, -1.3), (a, 0.2)])
        },
        directions,
        seed,
    ));
    out
}

/// Network used by the composite-loss check: resolution 8, two channels.
pub fn tiny_network(kind: FieldHeadKind) -> NetworkConfig {
    NetworkConfig {
        input_resolution: 8,
        encoder_channels: vec![2, 2],
        decoder_channels: vec![2],
        latent_dim: 2,
        head_hidden: 4,
        field_head_kind: kind,
        ..Default::default()
    }
}

/// Analytic sphere data for the tiny network: surface points with
/// tangent frames and shell samples with exact distances.
pub fn sphere_shape(radius: f64, points: usize, seed: u64) -> TrainingShape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut surface = SurfaceSamples::default();
    for _ in 0..points {
        let n = random_unit(&mut rng);
        let mu = reference_tangent(&n);
        surface.points.push(n * radius);
        surface.normals.push(n);
        surface.nu.push(mu.cross(&n));
        surface.mu.push(mu);
    }
    let mut shell = xgen_core::tsdf::SdfSamples {
        shell_epsilon: 0.02,
        ..Default::default()
    };
    for _ in 0..points {
        let d: f64 = rng.random_range(-0.019..0.019);
        shell.points.push(random_unit(&mut rng) * (radius + d));
        shell.values.push(d);
    }
    let tsdf = xgen_core::tsdf::DenseSdfGrid::from_fn(16, 0.1, |p| p.norm() - radius);
    TrainingShape {
        id: "sphere".into(),
        samples: ShapeSamples { surface, shell },
        tsdf,
    }
}

/// Initial weights plus seeded N(0, 0.5²) noise on every entry, biases
/// included. Zero biases make the untrained field head nearly degenerate
/// (tangent lengths below 1e-3), which is a special point rather than a
/// representative one for a derivative check.
pub fn generic_params(net: &NetworkConfig, seed: u64) -> ParamStore<f64> {
    let mut params: ParamStore<f64> = init_params(net, seed).expect("valid network");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in 0..params.len() {
        for v in &mut params.value_mut(id).data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.5 * z;
        }
    }
    params
}

/// Composite loss of the tiny network with teacher-forced gating and a
/// fixed latent noise seed.
pub fn composite_check(kind: FieldHeadKind, directions: usize, seed: u64) -> CheckReport {
    let net = tiny_network(kind);
    let train = TrainConfig {
        points_per_step: 24,
        queries_per_step: 24,
        ..Default::default()
    };
    let shape = sphere_shape(0.3, 64, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = build_step_sample::<f64>(&shape, &net, &train, &Augmentation::identity(), &mut rng)
        .expect("tiny sample");
    let params = generic_params(&net, seed);
    let weights = LossWeights {
        kl: 1e-2,
        ..Default::default()
    };
    let name = match kind {
        FieldHeadKind::Direction => "composite_loss_direction_head",
        FieldHeadKind::RotationAngle => "composite_loss_angle_head",
    };
    check(
        name,
        &params,
        |t| sample_loss(t, &net, &weights, &sample, Some(seed)).expect("tiny loss").0,
        directions,
        seed,
    )
}

/// Every op check plus the composite loss for both field heads.
pub fn full_suite(directions: usize, seed: u64) -> Vec<CheckReport> {
    let mut out = op_suite(directions, seed);
    out.push(composite_check(FieldHeadKind::Direction, directions, seed));
    out.push(composite_check(FieldHeadKind::RotationAngle, directions, seed));
    out
}
