use std::collections::HashMap;
use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xgen_core::grid::{pack_key, unpack_key};
use xgen_core::mesh::reference_tangent;
use xgen_core::Vec3;
use xgen_net::mat::Mat;
use xgen_net::params::ParamStore;
use xgen_net::sparse::{stride2_map, submanifold_map, tap_offset, TAPS};
use xgen_net::tape::{CrossTargets, Tape};

fn random_keys(rng: &mut ChaCha8Rng, resolution: i64, count: usize) -> Vec<u64> {
    let mut keys: Vec<u64> = (0..count)
        .map(|_| pack_key([0, 1, 2].map(|_| rng.random_range(0..resolution))))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Dense reference: scatter features into a full grid and sum over the
/// 3x3x3 window at `center(o)` directly.
fn dense_conv(
    keys: &[u64],
    x: &Mat<f64>,
    w: &Mat<f64>,
    resolution: i64,
    outputs: &[[i64; 3]],
    stride: i64,
) -> Mat<f64> {
    let c_in = x.cols;
    let mut grid: HashMap<[i64; 3], Vec<f64>> = HashMap::new();
    for (r, &k) in keys.iter().enumerate() {
        grid.insert(unpack_key(k), x.row(r).to_vec());
    }
    let mut out = Mat::zeros(outputs.len(), w.cols);
    for (o, c) in outputs.iter().enumerate() {
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let p = [stride * c[0] + dx, stride * c[1] + dy, stride * c[2] + dz];
                    if p.iter().any(|&v| v < 0 || v >= resolution) {
                        continue;
                    }
                    let Some(f) = grid.get(&p) else { continue };
                    let t = ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize;
                    for co in 0..w.cols {
                        let mut s = out.get(o, co);
                        for ci in 0..c_in {
                            s += f[ci] * w.get(t * c_in + ci, co);
                        }
                        out.row_mut(o)[co] = s;
                    }
                }
            }
        }
    }
    out
}

fn run_conv(keys_in: usize, x: &Mat<f64>, w: &Mat<f64>, map: xgen_net::sparse::ConvMap) -> Mat<f64> {
    assert_eq!(map.in_rows, keys_in);
    let params = ParamStore::<f64>::new();
    let mut tape = Tape::new(&params);
    let xv = tape.input(x.clone());
    let wv = tape.input(w.clone());
    let y = tape.conv(xv, wv, Rc::new(map));
    tape.value(y).clone()
}

fn assert_close(a: &Mat<f64>, b: &Mat<f64>, tol: f64) {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn tap_order_matches_dense_window_order() {
    for t in 0..TAPS {
        let d = tap_offset(t);
        assert_eq!(((d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1)) as usize, t);
    }
}

#[test]
fn submanifold_conv_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let keys = random_keys(&mut rng, 8, 120);
        let x = random_mat(&mut rng, keys.len(), 3);
        let w = random_mat(&mut rng, TAPS * 3, 4);
        let got = run_conv(keys.len(), &x, &w, submanifold_map(&keys, 8));
        let outputs: Vec<[i64; 3]> = keys.iter().map(|&k| unpack_key(k)).collect();
        let want = dense_conv(&keys, &x, &w, 8, &outputs, 1);
        assert_close(&got, &want, 1e-12);
    }
}

#[test]
fn strided_conv_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let keys = random_keys(&mut rng, 16, 300);
        let x = random_mat(&mut rng, keys.len(), 2);
        let w = random_mat(&mut rng, TAPS * 2, 3);
        let (coarse, map) = stride2_map(&keys, 16);
        let got = run_conv(keys.len(), &x, &w, map);
        let mut parents: Vec<[i64; 3]> = keys.iter().map(|&k| unpack_key(k).map(|v| v / 2)).collect();
        parents.sort_unstable_by_key(|c| pack_key(*c));
        parents.dedup();
        assert_eq!(coarse, parents.iter().map(|c| pack_key(*c)).collect::<Vec<_>>());
        let want = dense_conv(&keys, &x, &w, 16, &parents, 2);
        assert_close(&got, &want, 1e-12);
    }
}

fn scalar(f: impl FnOnce(&mut Tape<'_, f64>) -> xgen_net::Var) -> f64 {
    let params = ParamStore::<f64>::new();
    let mut tape = Tape::new(&params);
    let v = f(&mut tape);
    tape.value(v).data[0]
}

fn targets(frames: &[(Vec3, Vec3, Vec3)]) -> Rc<CrossTargets<f64>> {
    let a = |v: &Vec3| [v.x, v.y, v.z];
    Rc::new(CrossTargets {
        normal: frames.iter().map(|f| a(&f.2)).collect(),
        mu: frames.iter().map(|f| a(&f.0)).collect(),
        nu: frames.iter().map(|f| a(&f.1)).collect(),
        reference: frames.iter().map(|f| a(&reference_tangent(&f.2))).collect(),
    })
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn frame(rng: &mut ChaCha8Rng) -> (Vec3, Vec3, Vec3) {
    let n = unit(rng);
    let t = reference_tangent(&n);
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mu = t * a.cos() + n.cross(&t) * a.sin();
    (mu, n.cross(&mu), n)
}

#[test]
fn aligned_field_has_zero_cross_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<_> = (0..64).map(|_| frame(&mut rng)).collect();
    // Any of the four frame directions, with a normal component and a
    // length change the projection must remove.
    let raw = Mat::from_fn(frames.len(), 3, |r, c| {
        let (mu, nu, n) = frames[r];
        let d = [mu, nu, -mu, -nu][r % 4];
        (d * 2.5 + n * 0.7)[c]
    });
    let l = scalar(|t| {
        let x = t.input(raw);
        t.cross_loss_direction(x, targets(&frames))
    });
    assert!(l.abs() < 1e-6, "{l}");
}

#[test]
fn rotation_head_angle_zero_is_the_reference_tangent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames: Vec<_> = (0..16)
        .map(|_| {
            let n = unit(&mut rng);
            let mu = reference_tangent(&n);
            (mu, n.cross(&mu), n)
        })
        .collect();
    let zero = scalar(|t| {
        let x = t.input(Mat::zeros(frames.len(), 1));
        t.cross_loss_angle(x, targets(&frames))
    });
    assert!(zero.abs() < 1e-12, "{zero}");
    let quarter = scalar(|t| {
        let x = t.input(Mat::from_fn(frames.len(), 1, |_, _| std::f64::consts::FRAC_PI_4));
        t.cross_loss_angle(x, targets(&frames))
    });
    assert!((quarter - (2f64.sqrt() - 1.0)).abs() < 1e-12, "{quarter}");
}

#[test]
fn standard_normal_latent_has_zero_kl() {
    let l = scalar(|t| {
        let m = t.input(Mat::zeros(5, 7));
        let v = t.input(Mat::zeros(5, 7));
        t.kl(m, v)
    });
    assert!(l.abs() < 1e-9);
    // One unit mean out of four entries: 0.5 / 4.
    let l = scalar(|t| {
        let m = t.input(Mat::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]));
        let v = t.input(Mat::zeros(1, 4));
        t.kl(m, v)
    });
    assert!((l - 0.125).abs() < 1e-12);
}

#[test]
fn zero_logits_cost_ln2() {
    for labels in [vec![0.0; 9], vec![1.0; 9], vec![0.0, 1.0, 1.0, 0.0, 1.0]] {
        let n = labels.len();
        let l = scalar(|t| {
            let x = t.input(Mat::zeros(n, 1));
            t.bce_with_logits(x, labels)
        });
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
    }
}

#[test]
fn bce_is_stable_for_large_logits() {
    let l = scalar(|t| {
        let x = t.input(Mat::from_vec(2, 1, vec![800.0, -800.0]));
        t.bce_with_logits(x, vec![0.0, 1.0])
    });
    assert!((l - 800.0).abs() < 1e-9);
}

#[test]
fn reparameterize_examples() {
    let eta = vec![1.0, -2.0, 0.5];
    let params = ParamStore::<f64>::new();
    let mut tape = Tape::new(&params);
    let m = tape.input(Mat::from_vec(1, 3, vec![0.0, 1.0, -1.0]));
    let v = tape.input(Mat::from_vec(1, 3, vec![0.0, 2f64.ln() * 2.0, -100.0]));
    let z = tape.reparameterize(m, v, eta);
    let z = tape.value(z).data.clone();
    assert!((z[0] - 1.0).abs() < 1e-12);
    // exp(ln 2) = 2: 1 + 2 * -2.
    assert!((z[1] + 3.0).abs() < 1e-12);
    assert!((z[2] + 1.0).abs() < 1e-20);
}

proptest! {
    #[test]
    fn cross_loss_is_nonnegative_and_zero_only_on_the_cross(seed in any::<u64>(), turn in 0.0f64..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = frame(&mut rng);
        let (mu, _, n) = f;
        let a = mu * turn.cos() + n.cross(&mu) * turn.sin();
        let l = scalar(|t| {
            let x = t.input(Mat::from_vec(1, 3, vec![a.x, a.y, a.z]));
            t.cross_loss_direction(x, targets(&[f]))
        });
        prop_assert!(l >= 0.0);
        let quarter = std::f64::consts::FRAC_PI_2;
        let off = (turn / quarter - (turn / quarter).round()).abs() * quarter;
        if off > 1e-3 {
            prop_assert!(l > 1e-7);
        } else if off < 1e-9 {
            prop_assert!(l < 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative(m in prop::collection::vec(-20.0f64..20.0, 6), v in prop::collection::vec(-10.0f64..10.0, 6)) {
        let l = scalar(|t| {
            let mv = t.input(Mat::from_vec(2, 3, m));
            let lv = t.input(Mat::from_vec(2, 3, v));
            t.kl(mv, lv)
        });
        prop_assert!(l >= 0.0);
    }
}
