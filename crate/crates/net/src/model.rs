//! Encoder, decoder and heads of the sparse-voxel autoencoder.
//!
//! Parameters live in a [`ParamStore`] under fixed names; every forward
//! function records onto a caller-owned [`Tape`].

use std::collections::BTreeSet;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xgen_core::grid::{pack_key, unpack_key, vertex_position, SparseVoxelGrid, RAW_FEATURE_DIM};
use xgen_core::mesh::reference_tangent;
use xgen_core::Vec3;

use crate::config::{FieldHeadKind, NetworkConfig, LEAKY_SLOPE, LOGVAR_RANGE};
use crate::error::{NetError, Result};
use crate::mat::Mat;
use crate::params::ParamStore;
use crate::real::Real;
use crate::sparse::{stride2_map, submanifold_map, trilinear_map, upsample_map, ConvMap, TrilinearMap, TAPS};
use crate::tape::{angle_direction, project_direction, Tape, Var};

/// Scale applied to the initial weights of the last conv of each residual
/// block so blocks start close to the identity.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn weight<T: Real>(&mut self, rows: usize, cols: usize, scale: f64) -> Mat<T> {
        let std = scale * (2.0 / rows as f64).sqrt();
        Mat::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            T::lit(z * std)
        })
    }
}

fn add_linear<T: Real>(p: &mut ParamStore<T>, init: &mut Init, name: &str, i: usize, o: usize, scale: f64) {
    p.add(format!("{name}.w"), init.weight(i, o, scale));
    p.add(format!("{name}.b"), Mat::zeros(1, o));
}

fn add_conv<T: Real>(p: &mut ParamStore<T>, init: &mut Init, name: &str, i: usize, o: usize, scale: f64) {
    add_linear(p, init, name, TAPS * i, o, scale);
}

fn add_residuals<T: Real>(p: &mut ParamStore<T>, init: &mut Init, prefix: &str, c: usize, count: usize) {
    for r in 0..count {
        add_conv(p, init, &format!("{prefix}.res{r}.conv1"), c, c, 1.0);
        add_conv(p, init, &format!("{prefix}.res{r}.conv2"), c, c, RESIDUAL_INIT_SCALE);
    }
}

fn add_mlp<T: Real>(p: &mut ParamStore<T>, init: &mut Init, name: &str, i: usize, h: usize, o: usize) {
    add_linear(p, init, &format!("{name}.l1"), i, h, 1.0);
    add_linear(p, init, &format!("{name}.l2"), h, h, 1.0);
    add_linear(p, init, &format!("{name}.out"), h, o, 0.5);
}

/// Width of the field-head output for a head kind.
pub fn field_output_dim(kind: FieldHeadKind) -> usize {
    match kind {
        FieldHeadKind::Direction => 3,
        FieldHeadKind::RotationAngle => 1,
    }
}

/// Deterministic He-normal initialization of every parameter; biases start at zero.
pub fn init_params<T: Real>(cfg: &NetworkConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let enc = &cfg.encoder_channels;
    add_linear(&mut p, &mut init, "input", RAW_FEATURE_DIM, enc[0], 1.0);
    for l in 1..enc.len() {
        add_conv(&mut p, &mut init, &format!("enc{l}.down"), enc[l - 1], enc[l], 1.0);
        for j in 1..cfg.encoder_convs_per_level {
            add_conv(&mut p, &mut init, &format!("enc{l}.conv{j}"), enc[l], enc[l], 1.0);
        }
        add_residuals(&mut p, &mut init, &format!("enc{l}"), enc[l], cfg.residual_blocks_per_level);
    }
    add_linear(&mut p, &mut init, "latent", *enc.last().unwrap(), 2 * cfg.latent_dim, 0.5);
    let mut c_in = cfg.latent_dim;
    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        let d = i + 1;
        p.add(format!("dec{d}.up.w"), init.weight(c_in, 8 * c, 1.0));
        p.add(format!("dec{d}.up.b"), Mat::zeros(1, c));
        add_linear(&mut p, &mut init, &format!("dec{d}.occ1"), c, c, 1.0);
        add_linear(&mut p, &mut init, &format!("dec{d}.occ2"), c, 1, 0.5);
        for j in 0..cfg.decoder_convs_per_level {
            add_conv(&mut p, &mut init, &format!("dec{d}.conv{j}"), c, c, 1.0);
        }
        add_residuals(&mut p, &mut init, &format!("dec{d}"), c, cfg.residual_blocks_per_level);
        c_in = c;
    }
    let c = cfg.output_channels();
    add_mlp(&mut p, &mut init, "sdf", c, cfg.head_hidden, 1);
    let field_in = c + if cfg.field_head_uses_normal { 3 } else { 0 };
    add_mlp(&mut p, &mut init, "field", field_in, cfg.head_hidden, field_output_dim(cfg.field_head_kind));
    Ok(p)
}

fn act<T: Real>(tape: &mut Tape<'_, T>, x: Var) -> Var {
    tape.leaky_relu(x, T::lit(LEAKY_SLOPE))
}

fn conv_layer<T: Real>(tape: &mut Tape<'_, T>, x: Var, name: &str, map: &Rc<ConvMap>) -> Var {
    let w = tape.param_named(&format!("{name}.w"));
    let b = tape.param_named(&format!("{name}.b"));
    let y = tape.conv(x, w, Rc::clone(map));
    tape.add_row(y, b)
}

fn residual_blocks<T: Real>(tape: &mut Tape<'_, T>, mut x: Var, prefix: &str, count: usize, map: &Rc<ConvMap>) -> Var {
    for r in 0..count {
        let h = conv_layer(tape, x, &format!("{prefix}.res{r}.conv1"), map);
        let h = act(tape, h);
        let h = conv_layer(tape, h, &format!("{prefix}.res{r}.conv2"), map);
        let s = tape.add(x, h);
        x = act(tape, s);
    }
    x
}

fn mlp<T: Real>(tape: &mut Tape<'_, T>, x: Var, name: &str) -> Var {
    let h = tape.linear(x, &format!("{name}.l1.w"), &format!("{name}.l1.b"));
    let h = act(tape, h);
    let h = tape.linear(h, &format!("{name}.l2.w"), &format!("{name}.l2.b"));
    let h = act(tape, h);
    tape.linear(h, &format!("{name}.out.w"), &format!("{name}.out.b"))
}

/// Per-voxel latent distribution at the coarsest resolution.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub keys: Vec<u64>,
    pub resolution: u32,
    /// `n x latent_dim`.
    pub mean: Var,
    /// `n x latent_dim`, clamped into [`LOGVAR_RANGE`].
    pub logvar: Var,
}

/// Quantized input grid to latent mean and log-variance.
pub fn encode<T: Real>(tape: &mut Tape<'_, T>, cfg: &NetworkConfig, input: &SparseVoxelGrid) -> Result<Encoded> {
    if input.is_empty() {
        return Err(NetError::EmptyShape("quantized input grid has no voxels".into()));
    }
    if input.resolution() != cfg.input_resolution || input.feature_dim() != RAW_FEATURE_DIM {
        return Err(NetError::Shape(format!(
            "input grid is {}^3 with {} channels, expected {}^3 with {RAW_FEATURE_DIM}",
            input.resolution(),
            input.feature_dim(),
            cfg.input_resolution
        )));
    }
    let feats = Mat::from_vec(
        input.len(),
        RAW_FEATURE_DIM,
        input.features().iter().map(|&v| T::lit(v)).collect(),
    );
    let x = tape.input(feats);
    let h = tape.linear(x, "input.w", "input.b");
    let mut h = act(tape, h);
    let mut keys = input.keys().to_vec();
    let mut res = input.resolution();
    for l in 1..cfg.encoder_channels.len() {
        let (coarse, down) = stride2_map(&keys, res);
        h = conv_layer(tape, h, &format!("enc{l}.down"), &Rc::new(down));
        h = act(tape, h);
        keys = coarse;
        res /= 2;
        let map = Rc::new(submanifold_map(&keys, res));
        for j in 1..cfg.encoder_convs_per_level {
            h = conv_layer(tape, h, &format!("enc{l}.conv{j}"), &map);
            h = act(tape, h);
        }
        h = residual_blocks(tape, h, &format!("enc{l}"), cfg.residual_blocks_per_level, &map);
    }
    let stats = tape.linear(h, "latent.w", "latent.b");
    let m = cfg.latent_dim;
    let mean = tape.slice_cols(stats, 0, m);
    let raw = tape.slice_cols(stats, m, 2 * m);
    let logvar = tape.clamp(raw, T::lit(LOGVAR_RANGE.0), T::lit(LOGVAR_RANGE.1));
    Ok(Encoded {
        keys,
        resolution: res,
        mean,
        logvar,
    })
}

/// Standard-normal noise for the reparameterization, one value per latent entry.
pub fn latent_noise<T: Real>(count: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z)
        })
        .collect()
}

/// Latent sample: `mean + exp(logvar / 2) * eta` with noise from `seed`, or
/// exactly the mean when `seed` is `None` (evaluation).
pub fn reparameterize<T: Real>(tape: &mut Tape<'_, T>, latent: &Encoded, seed: Option<u64>) -> Var {
    match seed {
        None => latent.mean,
        Some(s) => {
            let n = tape.value(latent.mean).len();
            tape.reparameterize(latent.mean, latent.logvar, latent_noise(n, s))
        }
    }
}

/// How decoder levels choose which candidate children survive.
#[derive(Debug, Clone, Copy)]
pub enum Gating<'a> {
    /// Keep exactly the given sorted key sets, one per decoder level.
    Teacher(&'a [Vec<u64>]),
    /// Keep candidates whose occupancy logit is positive (probability > 0.5).
    Predicted,
}

#[derive(Debug, Clone)]
pub struct DecodeLevel {
    pub resolution: u32,
    /// All children of the previous level's kept voxels, sorted.
    pub candidates: Vec<u64>,
    /// `candidates.len() x 1` occupancy logits.
    pub logits: Var,
    pub kept: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub levels: Vec<DecodeLevel>,
    /// Features of the finest kept voxels, `keys.len() x output_channels`.
    pub features: Var,
    pub keys: Vec<u64>,
    pub resolution: u32,
}

fn select_kept(candidates: &[u64], gate: Either<'_>) -> Result<Vec<u32>> {
    match gate {
        Either::Keys(gt) => {
            let mut rows = Vec::with_capacity(gt.len());
            for k in gt {
                match candidates.binary_search(k) {
                    Ok(i) => rows.push(i as u32),
                    Err(_) => {
                        return Err(NetError::Shape(format!(
                            "ground-truth voxel {:?} is not a child of a kept parent",
                            unpack_key(*k)
                        )))
                    }
                }
            }
            Ok(rows)
        }
        Either::Logits(l) => Ok((0..candidates.len())
            .filter(|&i| l[i] > 0.0)
            .map(|i| i as u32)
            .collect()),
    }
}

enum Either<'a> {
    Keys(&'a [u64]),
    Logits(Vec<f64>),
}

/// Upsamples the latent sample level by level, gating each level's
/// candidates before its convolutions.
pub fn decode<T: Real>(
    tape: &mut Tape<'_, T>,
    cfg: &NetworkConfig,
    latent_keys: &[u64],
    z: Var,
    gating: Gating<'_>,
) -> Result<Decoded> {
    if let Gating::Teacher(levels) = gating {
        if levels.len() != cfg.decoder_channels.len() {
            return Err(NetError::Shape(format!(
                "{} ground-truth levels for {} decoder levels",
                levels.len(),
                cfg.decoder_channels.len()
            )));
        }
    }
    let mut keys = latent_keys.to_vec();
    let mut h = z;
    let mut res = cfg.latent_resolution();
    let mut levels = Vec::with_capacity(cfg.decoder_channels.len());
    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        let d = i + 1;
        res *= 2;
        let up = upsample_map(&keys);
        let w = tape.param_named(&format!("dec{d}.up.w"));
        let b = tape.param_named(&format!("dec{d}.up.b"));
        let blocks = tape.matmul(h, w);
        let cand = tape.gather_blocks(blocks, Rc::new(up.parent), Rc::new(up.offset), c);
        let cand = tape.add_row(cand, b);
        let cand = act(tape, cand);
        let o = tape.linear(cand, &format!("dec{d}.occ1.w"), &format!("dec{d}.occ1.b"));
        let o = act(tape, o);
        let logits = tape.linear(o, &format!("dec{d}.occ2.w"), &format!("dec{d}.occ2.b"));
        let gate = match gating {
            Gating::Teacher(gt) => Either::Keys(&gt[i]),
            Gating::Predicted => Either::Logits(tape.value(logits).data.iter().map(|v| v.as_f64()).collect()),
        };
        let rows = select_kept(&up.child_keys, gate)?;
        if rows.is_empty() {
            return Err(NetError::EmptyShape(format!("every voxel pruned at decoder level {d} ({res}^3)")));
        }
        let kept: Vec<u64> = rows.iter().map(|&r| up.child_keys[r as usize]).collect();
        h = tape.gather_rows(cand, Rc::new(rows));
        let map = Rc::new(submanifold_map(&kept, res));
        for j in 0..cfg.decoder_convs_per_level {
            h = conv_layer(tape, h, &format!("dec{d}.conv{j}"), &map);
            h = act(tape, h);
        }
        h = residual_blocks(tape, h, &format!("dec{d}"), cfg.residual_blocks_per_level, &map);
        levels.push(DecodeLevel {
            resolution: res,
            candidates: up.child_keys,
            logits,
            kept: kept.clone(),
        });
        keys = kept;
    }
    Ok(Decoded {
        levels,
        features: h,
        keys,
        resolution: res,
    })
}

/// Trilinear features of the finest decoder level at `points`.
pub fn query_features<T: Real>(tape: &mut Tape<'_, T>, decoded: &Decoded, points: &[Vec3]) -> (Var, Rc<TrilinearMap>) {
    let map = Rc::new(trilinear_map(&decoded.keys, decoded.resolution, points));
    (tape.trilinear(decoded.features, Rc::clone(&map)), map)
}

/// SDF values, `n x 1`.
pub fn sdf_head<T: Real>(tape: &mut Tape<'_, T>, features: Var) -> Var {
    mlp(tape, features, "sdf")
}

/// Raw field-head output: `n x 3` directions or `n x 1` angles.
pub fn field_head<T: Real>(tape: &mut Tape<'_, T>, cfg: &NetworkConfig, features: Var, normals: &[Vec3]) -> Var {
    let x = if cfg.field_head_uses_normal {
        let n = Mat::from_fn(normals.len(), 3, |r, c| T::lit(normals[r][c]));
        let n = tape.input(n);
        tape.concat_cols(features, n)
    } else {
        features
    };
    mlp(tape, x, "field")
}

/// Unit tangent `α` per row of a field-head output; `None` where the
/// direction head's tangent part vanishes.
pub fn field_directions<T: Real>(kind: FieldHeadKind, output: &Mat<T>, normals: &[Vec3]) -> Vec<Option<Vec3>> {
    normals
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let nf = [n.x, n.y, n.z];
            let row = output.row(i);
            match kind {
                FieldHeadKind::Direction => {
                    let raw = [row[0].as_f64(), row[1].as_f64(), row[2].as_f64()];
                    project_direction(&raw, &nf).map(|(a, _)| Vec3::new(a[0], a[1], a[2]))
                }
                FieldHeadKind::RotationAngle => {
                    let t = reference_tangent(n);
                    let a = angle_direction(row[0].as_f64(), &[t.x, t.y, t.z], &nf);
                    Some(Vec3::new(a[0], a[1], a[2]))
                }
            }
        })
        .collect()
}

/// Ground-truth occupancy per decoder level. The finest level holds the
/// voxels whose center satisfies `|sdf| < threshold`; coarser levels hold
/// their ancestors, and every level is restricted to children of the level
/// above, starting from `latent_keys`.
pub fn gt_occupancy(
    cfg: &NetworkConfig,
    latent_keys: &[u64],
    sdf: impl Fn(&Vec3) -> f64,
    threshold: f64,
) -> Vec<Vec<u64>> {
    let levels = cfg.decoder_channels.len();
    let fine_res = cfg.output_resolution();
    let latent: BTreeSet<u64> = latent_keys.iter().copied().collect();
    let r = fine_res as i64;
    let shift = levels as i64;
    let mut finest = Vec::new();
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let c = [i, j, k];
                let root = pack_key(c.map(|v| v >> shift));
                if latent.contains(&root) && sdf(&vertex_position(c, fine_res)).abs() < threshold {
                    finest.push(c);
                }
            }
        }
    }
    let mut out: Vec<Vec<u64>> = Vec::with_capacity(levels);
    let mut parents = latent;
    for d in 1..=levels {
        let up = (levels - d) as i64;
        let set: BTreeSet<u64> = finest
            .iter()
            .map(|c| c.map(|v| v >> up))
            .filter(|c| parents.contains(&pack_key(c.map(|v| v >> 1))))
            .map(pack_key)
            .collect();
        out.push(set.iter().copied().collect());
        parents = set;
    }
    out
}
