//! Define-by-run reverse-mode differentiation over row-major matrices.
//!
//! Every forward pass records its operations on a fresh [`Tape`]; parameters
//! are read from a borrowed [`ParamStore`] and [`Tape::backward`] returns one
//! gradient per parameter.

use std::rc::Rc;

use crate::mat::{gemm, Mat};
use crate::params::ParamStore;
use crate::real::Real;
use crate::sparse::{ConvMap, TrilinearMap, MISSING, TAPS};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-point geometry for the cross-field loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTargets<T> {
    pub normal: Vec<[T; 3]>,
    pub mu: Vec<[T; 3]>,
    pub nu: Vec<[T; 3]>,
    /// Reference tangent for the rotation-angle head (angle 0).
    pub reference: Vec<[T; 3]>,
}

impl<T: Real> CrossTargets<T> {
    pub fn len(&self) -> usize {
        self.normal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normal.is_empty()
    }
}

enum Op<T> {
    Input,
    Param(usize),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    LeakyRelu(usize, T),
    Conv { x: usize, w: usize, map: Rc<ConvMap>, cols: Vec<T> },
    GatherBlocks { x: usize, rows: Rc<Vec<u32>>, blocks: Rc<Vec<u8>> },
    GatherRows { x: usize, rows: Rc<Vec<u32>> },
    Trilinear { x: usize, map: Rc<TrilinearMap> },
    SliceCols { x: usize, start: usize },
    ConcatCols(usize, usize),
    Clamp { x: usize, lo: T, hi: T },
    Reparam { mean: usize, logvar: usize, eta: Vec<T> },
    Bce { x: usize, labels: Vec<T> },
    L1 { x: usize, target: Vec<T> },
    CrossDirection { x: usize, geo: Rc<CrossTargets<T>> },
    CrossAngle { x: usize, geo: Rc<CrossTargets<T>> },
    Kl { mean: usize, logvar: usize },
    Weighted(Vec<(usize, T)>),
}

struct Node<T> {
    value: Option<Mat<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Gradients with respect to every parameter of the store (zeros for
/// parameters the graph did not touch).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub params: Vec<Mat<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            params: store.values().iter().map(|v| Mat::zeros(v.rows, v.cols)).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Grads<T>, scale: T) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y * scale;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|m| m.all_finite())
    }

    pub fn norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|m| m.data.iter())
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn dot3<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus_neg_abs<T: Real>(x: T) -> T {
    (-x.abs()).exp().ln_1p()
}

/// Below this tangent length the direction head output is treated as
/// degenerate: the point costs the maximum deviation and passes no gradient.
pub const DEGENERATE_TANGENT: f64 = 1e-8;

/// Per-point cross loss `max(|α·μ| + |α·ν| - 1, 0)` and its gradient with
/// respect to `α`.
fn cross_term<T: Real>(alpha: &[T; 3], mu: &[T; 3], nu: &[T; 3]) -> (T, [T; 3]) {
    let (am, an) = (dot3(alpha, mu), dot3(alpha, nu));
    let v = am.abs() + an.abs() - T::one();
    if v <= T::zero() {
        return (T::zero(), [T::zero(); 3]);
    }
    let (sm, sn) = (am.signum(), an.signum());
    (v, [sm * mu[0] + sn * nu[0], sm * mu[1] + sn * nu[1], sm * mu[2] + sn * nu[2]])
}

/// Tangent direction from a raw 3-vector: returns `α` and `|t|`, or `None`
/// when the tangent part vanishes.
pub fn project_direction<T: Real>(raw: &[T; 3], n: &[T; 3]) -> Option<([T; 3], T)> {
    let d = dot3(raw, n);
    let t = [raw[0] - n[0] * d, raw[1] - n[1] * d, raw[2] - n[2] * d];
    let len = dot3(&t, &t).sqrt();
    if !(len.as_f64() > DEGENERATE_TANGENT) {
        return None;
    }
    Some(([t[0] / len, t[1] / len, t[2] / len], len))
}

/// `α = cos θ t1 + sin θ (n × t1)`.
pub fn angle_direction<T: Real>(theta: T, t1: &[T; 3], n: &[T; 3]) -> [T; 3] {
    let t2 = cross3(n, t1);
    let (s, c) = theta.sin_cos();
    [c * t1[0] + s * t2[0], c * t1[1] + s * t2[1], c * t1[2] + s * t2[2]]
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        self.val(v.0)
    }

    fn val(&self, i: usize) -> &Mat<T> {
        match (&self.nodes[i].op, &self.nodes[i].value) {
            (Op::Param(p), _) => self.params.value(*p),
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: usize) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, w) = (self.val(a.0), self.val(b.0));
        assert_eq!(x.cols, w.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(x.rows, w.cols);
        gemm(x.rows, x.cols, w.cols, &x.data, false, &w.data, false, T::zero(), &mut out.data);
        self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.val(x.0), self.val(b.0));
        assert_eq!((bv.rows, bv.cols), (1, xv.cols), "bias shape mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += *b;
            }
        }
        self.push(out, Op::AddRow(x.0, b.0), &[x.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.val(a.0).clone();
        out.add_assign(self.val(b.0));
        self.push(out, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let mut out = self.val(x.0).clone();
        for v in &mut out.data {
            if *v < T::zero() {
                *v = *v * slope;
            }
        }
        self.push(out, Op::LeakyRelu(x.0, slope), &[x.0])
    }

    /// Sparse 3x3x3 convolution: `w` has `TAPS * c_in` rows (tap-major) and
    /// `c_out` columns.
    pub fn conv(&mut self, x: Var, w: Var, map: Rc<ConvMap>) -> Var {
        let (xv, wv) = (self.val(x.0), self.val(w.0));
        let c = xv.cols;
        assert_eq!(xv.rows, map.in_rows, "conv input rows");
        assert_eq!(wv.rows, TAPS * c, "conv weight rows");
        let k = TAPS * c;
        let mut cols = vec![T::zero(); map.out_rows * k];
        for (o, taps) in map.idx.chunks(TAPS).enumerate() {
            let dst = &mut cols[o * k..(o + 1) * k];
            for (t, &i) in taps.iter().enumerate() {
                if i != MISSING {
                    dst[t * c..(t + 1) * c].copy_from_slice(xv.row(i as usize));
                }
            }
        }
        let mut out = Mat::zeros(map.out_rows, wv.cols);
        gemm(map.out_rows, k, wv.cols, &cols, false, &wv.data, false, T::zero(), &mut out.data);
        self.push(out, Op::Conv { x: x.0, w: w.0, map, cols }, &[x.0, w.0])
    }

    /// Row `i` of the output is block `blocks[i]` (of width `width`) of row
    /// `rows[i]` of `x`.
    pub fn gather_blocks(&mut self, x: Var, rows: Rc<Vec<u32>>, blocks: Rc<Vec<u8>>, width: usize) -> Var {
        let xv = self.val(x.0);
        assert_eq!(rows.len(), blocks.len());
        let mut out = Mat::zeros(rows.len(), width);
        for (i, (&r, &b)) in rows.iter().zip(blocks.iter()).enumerate() {
            let b = b as usize;
            out.row_mut(i)
                .copy_from_slice(&xv.row(r as usize)[b * width..(b + 1) * width]);
        }
        self.push(out, Op::GatherBlocks { x: x.0, rows, blocks }, &[x.0])
    }

    pub fn gather_rows(&mut self, x: Var, rows: Rc<Vec<u32>>) -> Var {
        let xv = self.val(x.0);
        let mut out = Mat::zeros(rows.len(), xv.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(r as usize));
        }
        self.push(out, Op::GatherRows { x: x.0, rows }, &[x.0])
    }

    pub fn trilinear(&mut self, x: Var, map: Rc<TrilinearMap>) -> Var {
        let xv = self.val(x.0);
        assert_eq!(xv.rows, map.in_rows, "trilinear input rows");
        let mut out = Mat::zeros(map.queries(), xv.cols);
        for q in 0..map.queries() {
            let dst = out.row_mut(q);
            for s in q * 8..q * 8 + 8 {
                let i = map.idx[s];
                if i == MISSING {
                    continue;
                }
                let w = T::lit(map.weight[s]);
                for (d, v) in dst.iter_mut().zip(xv.row(i as usize)) {
                    *d += w * *v;
                }
            }
        }
        self.push(out, Op::Trilinear { x: x.0, map }, &[x.0])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.val(x.0);
        assert!(start <= end && end <= xv.cols);
        let out = Mat::from_fn(xv.rows, end - start, |r, c| xv.get(r, start + c));
        self.push(out, Op::SliceCols { x: x.0, start }, &[x.0])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        assert_eq!(av.rows, bv.rows);
        let out = Mat::from_fn(av.rows, av.cols + bv.cols, |r, c| {
            if c < av.cols {
                av.get(r, c)
            } else {
                bv.get(r, c - av.cols)
            }
        });
        self.push(out, Op::ConcatCols(a.0, b.0), &[a.0, b.0])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let mut out = self.val(x.0).clone();
        for v in &mut out.data {
            *v = v.max(lo).min(hi);
        }
        self.push(out, Op::Clamp { x: x.0, lo, hi }, &[x.0])
    }

    /// `mean + exp(logvar / 2) * eta`.
    pub fn reparameterize(&mut self, mean: Var, logvar: Var, eta: Vec<T>) -> Var {
        let (m, lv) = (self.val(mean.0), self.val(logvar.0));
        assert_eq!(m.len(), lv.len());
        assert_eq!(m.len(), eta.len());
        let mut out = m.clone();
        for ((o, l), e) in out.data.iter_mut().zip(&lv.data).zip(&eta) {
            *o += (*l * T::lit(0.5)).exp() * *e;
        }
        self.push(out, Op::Reparam { mean: mean.0, logvar: logvar.0, eta }, &[mean.0, logvar.0])
    }

    /// Mean binary cross-entropy of logits against 0/1 labels.
    pub fn bce_with_logits(&mut self, x: Var, labels: Vec<T>) -> Var {
        let xv = self.val(x.0);
        assert_eq!(xv.len(), labels.len());
        assert!(!labels.is_empty(), "empty occupancy batch");
        let sum: T = xv
            .data
            .iter()
            .zip(&labels)
            .map(|(&x, &y)| x.max(T::zero()) - x * y + softplus_neg_abs(x))
            .sum();
        let out = Mat::scalar(sum / T::lit(labels.len() as f64));
        self.push(out, Op::Bce { x: x.0, labels }, &[x.0])
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, x: Var, target: Vec<T>) -> Var {
        let xv = self.val(x.0);
        assert_eq!(xv.len(), target.len());
        assert!(!target.is_empty(), "empty SDF batch");
        let sum: T = xv.data.iter().zip(&target).map(|(a, b)| (*a - *b).abs()).sum();
        let out = Mat::scalar(sum / T::lit(target.len() as f64));
        self.push(out, Op::L1 { x: x.0, target }, &[x.0])
    }

    /// Mean cross deviation of directions given as raw 3-vectors (one row
    /// per point), projected to the tangent plane of each normal.
    pub fn cross_loss_direction(&mut self, x: Var, geo: Rc<CrossTargets<T>>) -> Var {
        let xv = self.val(x.0);
        assert_eq!((xv.rows, xv.cols), (geo.len(), 3));
        assert!(!geo.is_empty(), "empty cross-field batch");
        let worst = T::lit(std::f64::consts::SQRT_2 - 1.0);
        let mut sum = T::zero();
        for i in 0..geo.len() {
            let r = xv.row(i);
            sum += match project_direction(&[r[0], r[1], r[2]], &geo.normal[i]) {
                Some((a, _)) => cross_term(&a, &geo.mu[i], &geo.nu[i]).0,
                None => worst,
            };
        }
        let out = Mat::scalar(sum / T::lit(geo.len() as f64));
        self.push(out, Op::CrossDirection { x: x.0, geo }, &[x.0])
    }

    /// Mean cross deviation of directions given as one angle per point about
    /// the normal, measured from the reference tangent.
    pub fn cross_loss_angle(&mut self, x: Var, geo: Rc<CrossTargets<T>>) -> Var {
        let xv = self.val(x.0);
        assert_eq!((xv.rows, xv.cols), (geo.len(), 1));
        assert!(!geo.is_empty(), "empty cross-field batch");
        let mut sum = T::zero();
        for i in 0..geo.len() {
            let a = angle_direction(xv.data[i], &geo.reference[i], &geo.normal[i]);
            sum += cross_term(&a, &geo.mu[i], &geo.nu[i]).0;
        }
        let out = Mat::scalar(sum / T::lit(geo.len() as f64));
        self.push(out, Op::CrossAngle { x: x.0, geo }, &[x.0])
    }

    /// Mean over entries of the KL divergence of `N(mean, exp(logvar))` to `N(0, 1)`.
    pub fn kl(&mut self, mean: Var, logvar: Var) -> Var {
        let (m, lv) = (self.val(mean.0), self.val(logvar.0));
        assert_eq!(m.len(), lv.len());
        assert!(!m.is_empty(), "empty latent");
        let half = T::lit(0.5);
        let sum: T = m
            .data
            .iter()
            .zip(&lv.data)
            .map(|(&m, &l)| half * (m * m + l.exp() - l - T::one()))
            .sum();
        let out = Mat::scalar(sum / T::lit(m.len() as f64));
        self.push(out, Op::Kl { mean: mean.0, logvar: logvar.0 }, &[mean.0, logvar.0])
    }

    /// `Σ w_i x_i` over 1x1 values.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut s = T::zero();
        for (v, w) in terms {
            let m = self.val(v.0);
            assert_eq!(m.len(), 1, "weighted_sum takes scalars");
            s += m.data[0] * *w;
        }
        let ids: Vec<usize> = terms.iter().map(|(v, _)| v.0).collect();
        self.push(
            Mat::scalar(s),
            Op::Weighted(terms.iter().map(|(v, w)| (v.0, *w)).collect()),
            &ids,
        )
    }

    /// Linear layer `x W + b` with parameters looked up by name.
    pub fn linear(&mut self, x: Var, weight: &str, bias: &str) -> Var {
        let w = self.param_named(weight);
        let b = self.param_named(bias);
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn backward(&self, root: Var) -> Grads<T> {
        let rv = self.val(root.0);
        assert_eq!(rv.len(), 1, "backward starts from a scalar");
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::scalar(T::one()));
        let mut out = Grads::zeros_like(self.params);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        out
    }

    fn backward_node(&self, i: usize, g: Mat<T>, grads: &mut [Option<Mat<T>>], out: &mut Grads<T>) {
        let wants = |j: usize| self.nodes[j].needs_grad;
        macro_rules! slot {
            ($j:expr) => {{
                let v = self.val($j);
                let (r, c) = (v.rows, v.cols);
                grads[$j].get_or_insert_with(|| Mat::zeros(r, c))
            }};
        }
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(p) => out.params[*p].add_assign(&g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if wants(*a) {
                    let da = slot!(*a);
                    gemm(av.rows, bv.cols, av.cols, &g.data, false, &bv.data, true, T::one(), &mut da.data);
                }
                if wants(*b) {
                    let db = slot!(*b);
                    gemm(av.cols, av.rows, bv.cols, &av.data, true, &g.data, false, T::one(), &mut db.data);
                }
            }
            Op::AddRow(x, b) => {
                if wants(*b) {
                    let db = slot!(*b);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += *v;
                        }
                    }
                }
                if wants(*x) {
                    slot!(*x).add_assign(&g);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot!(*a).add_assign(&g);
                }
                if wants(*b) {
                    slot!(*b).add_assign(&g);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.val(*x);
                let dx = slot!(*x);
                for ((d, gv), xv) in dx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                    *d += if *xv < T::zero() { *gv * *slope } else { *gv };
                }
            }
            Op::Conv { x, w, map, cols } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let c = xv.cols;
                let k = TAPS * c;
                if wants(*w) {
                    let dw = slot!(*w);
                    gemm(k, map.out_rows, wv.cols, cols, true, &g.data, false, T::one(), &mut dw.data);
                }
                if wants(*x) {
                    let mut dcols = vec![T::zero(); map.out_rows * k];
                    gemm(map.out_rows, wv.cols, k, &g.data, false, &wv.data, true, T::zero(), &mut dcols);
                    let dx = slot!(*x);
                    for (o, taps) in map.idx.chunks(TAPS).enumerate() {
                        for (t, &src) in taps.iter().enumerate() {
                            if src != MISSING {
                                let from = &dcols[o * k + t * c..o * k + (t + 1) * c];
                                for (d, v) in dx.row_mut(src as usize).iter_mut().zip(from) {
                                    *d += *v;
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherBlocks { x, rows, blocks } => {
                let width = g.cols;
                let dx = slot!(*x);
                for (i, (&r, &b)) in rows.iter().zip(blocks.iter()).enumerate() {
                    let b = b as usize;
                    let dst = &mut dx.row_mut(r as usize)[b * width..(b + 1) * width];
                    for (d, v) in dst.iter_mut().zip(g.row(i)) {
                        *d += *v;
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let dx = slot!(*x);
                for (i, &r) in rows.iter().enumerate() {
                    for (d, v) in dx.row_mut(r as usize).iter_mut().zip(g.row(i)) {
                        *d += *v;
                    }
                }
            }
            Op::Trilinear { x, map } => {
                let dx = slot!(*x);
                for q in 0..map.queries() {
                    for s in q * 8..q * 8 + 8 {
                        let src = map.idx[s];
                        if src == MISSING {
                            continue;
                        }
                        let w = T::lit(map.weight[s]);
                        for (d, v) in dx.row_mut(src as usize).iter_mut().zip(g.row(q)) {
                            *d += w * *v;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let dx = slot!(*x);
                for r in 0..g.rows {
                    for (c, v) in g.row(r).iter().enumerate() {
                        dx.data[r * dx.cols + start + c] += *v;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ac = self.val(*a).cols;
                if wants(*a) {
                    let da = slot!(*a);
                    for r in 0..g.rows {
                        for (d, v) in da.row_mut(r).iter_mut().zip(&g.row(r)[..ac]) {
                            *d += *v;
                        }
                    }
                }
                if wants(*b) {
                    let db = slot!(*b);
                    for r in 0..g.rows {
                        for (d, v) in db.row_mut(r).iter_mut().zip(&g.row(r)[ac..]) {
                            *d += *v;
                        }
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.val(*x);
                let dx = slot!(*x);
                for ((d, gv), xv) in dx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                    if *xv >= *lo && *xv <= *hi {
                        *d += *gv;
                    }
                }
            }
            Op::Reparam { mean, logvar, eta } => {
                if wants(*mean) {
                    slot!(*mean).add_assign(&g);
                }
                if wants(*logvar) {
                    let lv = self.val(*logvar);
                    let dl = slot!(*logvar);
                    let half = T::lit(0.5);
                    for (((d, gv), l), e) in dl.data.iter_mut().zip(&g.data).zip(&lv.data).zip(eta) {
                        *d += *gv * *e * half * (*l * half).exp();
                    }
                }
            }
            Op::Bce { x, labels } => {
                let xv = self.val(*x);
                let s = g.data[0] / T::lit(labels.len() as f64);
                let dx = slot!(*x);
                for ((d, xv), y) in dx.data.iter_mut().zip(&xv.data).zip(labels) {
                    *d += (sigmoid(*xv) - *y) * s;
                }
            }
            Op::L1 { x, target } => {
                let xv = self.val(*x);
                let s = g.data[0] / T::lit(target.len() as f64);
                let dx = slot!(*x);
                for ((d, xv), t) in dx.data.iter_mut().zip(&xv.data).zip(target) {
                    let diff = *xv - *t;
                    if diff != T::zero() {
                        *d += diff.signum() * s;
                    }
                }
            }
            Op::CrossDirection { x, geo } => {
                let xv = self.val(*x);
                let s = g.data[0] / T::lit(geo.len() as f64);
                let dx = slot!(*x);
                for i in 0..geo.len() {
                    let r = xv.row(i);
                    let n = &geo.normal[i];
                    let Some((a, len)) = project_direction(&[r[0], r[1], r[2]], n) else { continue };
                    let (_, da) = cross_term(&a, &geo.mu[i], &geo.nu[i]);
                    // d/dt of t/|t| is (I - a aᵀ)/|t|; then remove the normal part.
                    let ad = dot3(&a, &da);
                    let dt = [
                        (da[0] - a[0] * ad) / len,
                        (da[1] - a[1] * ad) / len,
                        (da[2] - a[2] * ad) / len,
                    ];
                    let nd = dot3(n, &dt);
                    let row = dx.row_mut(i);
                    for c in 0..3 {
                        row[c] += (dt[c] - n[c] * nd) * s;
                    }
                }
            }
            Op::CrossAngle { x, geo } => {
                let xv = self.val(*x);
                let s = g.data[0] / T::lit(geo.len() as f64);
                let dx = slot!(*x);
                for i in 0..geo.len() {
                    let theta = xv.data[i];
                    let n = &geo.normal[i];
                    let t1 = &geo.reference[i];
                    let a = angle_direction(theta, t1, n);
                    let (_, da) = cross_term(&a, &geo.mu[i], &geo.nu[i]);
                    let t2 = cross3(n, t1);
                    let (sn, cs) = theta.sin_cos();
                    let dadt = [
                        -sn * t1[0] + cs * t2[0],
                        -sn * t1[1] + cs * t2[1],
                        -sn * t1[2] + cs * t2[2],
                    ];
                    dx.data[i] += dot3(&da, &dadt) * s;
                }
            }
            Op::Kl { mean, logvar } => {
                let n = T::lit(self.val(*mean).len() as f64);
                let s = g.data[0] / n;
                if wants(*mean) {
                    let m = self.val(*mean);
                    let dm = slot!(*mean);
                    for (d, m) in dm.data.iter_mut().zip(&m.data) {
                        *d += *m * s;
                    }
                }
                if wants(*logvar) {
                    let lv = self.val(*logvar);
                    let dl = slot!(*logvar);
                    let half = T::lit(0.5);
                    for (d, l) in dl.data.iter_mut().zip(&lv.data) {
                        *d += half * (l.exp() - T::one()) * s;
                    }
                }
            }
            Op::Weighted(terms) => {
                for (j, w) in terms {
                    if wants(*j) {
                        slot!(*j).data[0] += g.data[0] * *w;
                    }
                }
            }
        }
    }
}
