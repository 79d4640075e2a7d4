//! A small reverse-mode tape over [`Matrix`] values.
//!
//! Every op evaluates eagerly when it is recorded, so a tape doubles as the
//! forward pass. [`Tape::backward`] walks the recorded nodes in reverse and
//! accumulates gradients for every node that influences the output.

use crate::compose::{self, PhiKind};
use crate::tensor::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Shape of a valid (no padding, stride 1) single-channel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.in_h + 1 - self.k_h
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 1 - self.k_w
    }

    pub fn out_len(&self) -> usize {
        self.filters * self.out_h() * self.out_w()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    RowScale(Var, Vec<f64>),
    Tanh(Var),
    Relu(Var),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    VStack(Vec<Var>),
    ConcatCols(Var, Var),
    Reshape(Var),
    Phi(Var, Var, PhiKind),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    MaskedMeanPool {
        x: Var,
        seq_len: usize,
        mask: Vec<bool>,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    BceWithLogits {
        logits: Var,
        targets: Matrix,
        col_mask: Vec<bool>,
        count: usize,
    },
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads[var.0].take()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(bias), (1, cols), "bias must be a 1x{cols} row");
        let mut v = self.value(a).clone();
        let b = self.value(bias).as_slice().to_vec();
        for r in 0..rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let v = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(v, Op::MulConst(a, c))
    }

    /// Multiplies row `i` of `a` by `factors[i]`.
    pub fn row_scale(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(factors.len(), v.rows());
        for (r, &f) in factors.iter().enumerate() {
            for x in v.row_mut(r) {
                *x *= f;
            }
        }
        self.push(v, Op::RowScale(a, factors))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn identity(&mut self, a: Var) -> Var {
        a
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Var {
        let v = self.value(a).select_rows(&index);
        self.push(v, Op::Gather(a, index))
    }

    /// Output has `rows` rows; row `i` of `a` is added into row `index[i]`,
    /// visiting `a` in row order.
    pub fn scatter_add(&mut self, a: Var, index: Vec<usize>, rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), index.len());
        let mut v = Matrix::zeros(rows, src.cols());
        for (i, &dst) in index.iter().enumerate() {
            let row = src.row(i);
            for (o, x) in v.row_mut(dst).iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push(v, Op::ScatterAdd(a, index))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "vstack column mismatch");
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::VStack(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.rows(), mb.rows(), "concat_cols row mismatch");
        let cols = ma.cols() + mb.cols();
        let mut v = Matrix::zeros(ma.rows(), cols);
        for r in 0..ma.rows() {
            let row = v.row_mut(r);
            row[..ma.cols()].copy_from_slice(ma.row(r));
            row[ma.cols()..].copy_from_slice(mb.row(r));
        }
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshape(rows, cols);
        self.push(v, Op::Reshape(a))
    }

    /// Row-wise φ.
    pub fn phi(&mut self, e: Var, r: Var, kind: PhiKind) -> Var {
        let (me, mr) = (self.value(e), self.value(r));
        assert_eq!(me.shape(), mr.shape(), "phi operands differ in shape");
        assert!(
            kind != PhiKind::Rotate || me.cols() % 2 == 0,
            "rotate needs an even width"
        );
        let mut v = Matrix::zeros(me.rows(), me.cols());
        for i in 0..me.rows() {
            compose::phi_into(me.row(i), mr.row(i), kind, v.row_mut(i));
        }
        self.push(v, Op::Phi(e, r, kind))
    }

    /// Row-wise layer normalisation with learned `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let mx = self.value(x);
        let (rows, cols) = mx.shape();
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut normalized = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = mx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let n = (row[c] - mean) * is;
                normalized.set(r, c, n);
                out.set(r, c, n * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    /// Scaled dot-product multi-head attention over consecutive blocks of
    /// `seq_len` rows. `key_mask[row]` is `false` for padding positions,
    /// which are never attended to. Inputs are already projected.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize, key_mask: &[bool]) -> Var {
        let (mq, mk, mv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = mq.shape();
        assert_eq!(mk.shape(), (rows, d));
        assert_eq!(mv.shape(), (rows, d));
        assert_eq!(rows % seq_len, 0, "rows must be a multiple of the sequence length");
        assert_eq!(d % heads, 0, "model width must be divisible by the head count");
        assert_eq!(key_mask.len(), rows);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let batch = rows / seq_len;
        let mut probs = vec![0.0; batch * heads * seq_len * seq_len];
        let mut out = Matrix::zeros(rows, d);
        let mut logits = vec![0.0; seq_len];
        for b in 0..batch {
            let base = b * seq_len;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..seq_len {
                    let qi = &mq.row(base + i)[cols.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq_len {
                        logits[j] = if key_mask[base + j] {
                            let s = dot(qi, &mk.row(base + j)[cols.clone()]) * scale;
                            max = max.max(s);
                            s
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    let p = &mut probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let mut z = 0.0;
                    for j in 0..seq_len {
                        p[j] = if key_mask[base + j] {
                            (logits[j] - max).exp()
                        } else {
                            0.0
                        };
                        z += p[j];
                    }
                    for pj in p.iter_mut() {
                        *pj /= z;
                    }
                    let orow = &mut out.row_mut(base + i)[cols.clone()];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        for (o, x) in orow.iter_mut().zip(&mv.row(base + j)[cols.clone()]) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            },
        )
    }

    /// Mean over the `true` rows of each block of `seq_len` rows.
    pub fn masked_mean_pool(&mut self, x: Var, seq_len: usize, mask: &[bool]) -> Var {
        let mx = self.value(x);
        let (rows, d) = mx.shape();
        assert_eq!(rows % seq_len, 0);
        assert_eq!(mask.len(), rows);
        let batch = rows / seq_len;
        let mut out = Matrix::zeros(batch, d);
        for b in 0..batch {
            let count = mask[b * seq_len..(b + 1) * seq_len].iter().filter(|&&m| m).count();
            assert!(count > 0, "sequence {b} has no real positions");
            let inv = 1.0 / count as f64;
            for i in 0..seq_len {
                if mask[b * seq_len + i] {
                    for (o, v) in out.row_mut(b).iter_mut().zip(mx.row(b * seq_len + i)) {
                        *o += v;
                    }
                }
            }
            for o in out.row_mut(b) {
                *o *= inv;
            }
        }
        self.push(
            out,
            Op::MaskedMeanPool {
                x,
                seq_len,
                mask: mask.to_vec(),
            },
        )
    }

    /// `input` is `B x (in_h·in_w)`, `kernels` is `filters x (k_h·k_w)`,
    /// `bias` is `1 x filters`; output is `B x (filters·out_h·out_w)` laid
    /// out filter-major.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, geom: ConvGeometry) -> Var {
        let (mi, mk, mb) = (self.value(input), self.value(kernels), self.value(bias));
        assert_eq!(mi.cols(), geom.in_h * geom.in_w, "conv input width");
        assert_eq!(mk.shape(), (geom.filters, geom.k_h * geom.k_w), "conv kernel shape");
        assert_eq!(mb.shape(), (1, geom.filters), "conv bias shape");
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut out = Matrix::zeros(mi.rows(), geom.out_len());
        for b in 0..mi.rows() {
            let img = mi.row(b);
            let orow = out.row_mut(b);
            for f in 0..geom.filters {
                let ker = mk.row(f);
                let bf = mb.as_slice()[f];
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..geom.k_h {
                            let src = &img[(y + ky) * geom.in_w + x..][..geom.k_w];
                            acc += dot(src, &ker[ky * geom.k_w..(ky + 1) * geom.k_w]);
                        }
                        orow[(f * oh + y) * ow + x] = acc + bf;
                    }
                }
            }
        }
        self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            },
        )
    }

    /// Mean binary cross entropy on logits over the columns where
    /// `col_mask` is `true`, in the stable form
    /// `max(x, 0) − x·t + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Matrix, col_mask: &[bool]) -> Var {
        let ml = self.value(logits);
        assert_eq!(ml.shape(), targets.shape());
        assert_eq!(col_mask.len(), ml.cols());
        let kept = col_mask.iter().filter(|&&m| m).count();
        let count = kept * ml.rows();
        assert!(count > 0, "loss over zero entries");
        let mut total = 0.0;
        for r in 0..ml.rows() {
            for (c, (&x, &t)) in ml.row(r).iter().zip(targets.row(r)).enumerate() {
                if col_mask[c] {
                    total += bce_term(x, t);
                }
            }
        }
        let v = Matrix::from_vec(1, 1, vec![total / count as f64]);
        self.push(
            v,
            Op::BceWithLogits {
                logits,
                targets,
                col_mask: col_mask.to_vec(),
                count,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push(v, Op::Sum(a))
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_nt(self.value(*b));
                let gb = self.value(*a).matmul_tn(g);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MatMulNt(a, b) => {
                let ga = g.matmul(self.value(*b));
                let gb = g.matmul_tn(self.value(*a));
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, gb);
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y);
                let gb = g.zip_map(self.value(*a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.scale(*f)),
            Op::MulConst(a, c) => accumulate(grads, *a, g.zip_map(c, |x, y| x * y)),
            Op::RowScale(a, factors) => {
                let mut ga = g.clone();
                for (r, &f) in factors.iter().enumerate() {
                    for x in ga.row_mut(r) {
                        *x *= f;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                accumulate(grads, *a, ga);
            }
            Op::Gather(a, index) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Matrix::zeros(rows, cols);
                for (i, &src) in index.iter().enumerate() {
                    for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ScatterAdd(a, index) => {
                accumulate(grads, *a, g.select_rows(index));
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(grads, p, Matrix::from_vec(rows, cols, slice));
                    offset += rows;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(grads, *a, g.clone().reshape(rows, cols));
            }
            Op::Phi(e, r, kind) => {
                let (me, mr) = (self.value(*e), self.value(*r));
                let mut ge = Matrix::zeros(me.rows(), me.cols());
                let mut gr = Matrix::zeros(mr.rows(), mr.cols());
                for i in 0..me.rows() {
                    compose::phi_backward_into(me.row(i), mr.row(i), *kind, g.row(i), ge.row_mut(i), gr.row_mut(i));
                }
                accumulate(grads, *e, ge);
                accumulate(grads, *r, gr);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (rows, cols) = normalized.shape();
                let gvec = self.value(*gain).as_slice();
                let mut gx = Matrix::zeros(rows, cols);
                let mut gg = Matrix::zeros(1, cols);
                let mut gbias = Matrix::zeros(1, cols);
                let mut dxhat = vec![0.0; cols];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let gr = g.row(r);
                    let xh = normalized.row(r);
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for c in 0..cols {
                        dxhat[c] = gr[c] * gvec[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xh[c];
                        gg.as_mut_slice()[c] += gr[c] * xh[c];
                        gbias.as_mut_slice()[c] += gr[c];
                    }
                    mean_d /= cols as f64;
                    mean_dx /= cols as f64;
                    let out = gx.row_mut(r);
                    for c in 0..cols {
                        out[c] = inv * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, gg);
                accumulate(grads, *bias, gbias);
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => {
                let (mq, mk, mv) = (self.value(*q), self.value(*k), self.value(*v));
                let (rows, d) = mq.shape();
                let (seq_len, heads) = (*seq_len, *heads);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Matrix::zeros(rows, d);
                let mut gk = Matrix::zeros(rows, d);
                let mut gv = Matrix::zeros(rows, d);
                let mut dp = vec![0.0; seq_len];
                for b in 0..rows / seq_len {
                    let base = b * seq_len;
                    for h in 0..heads {
                        let cols = h * dh..(h + 1) * dh;
                        for i in 0..seq_len {
                            let p = &probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                            let go = &g.row(base + i)[cols.clone()];
                            let mut weighted = 0.0;
                            for j in 0..seq_len {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                dp[j] = dot(go, &mv.row(base + j)[cols.clone()]);
                                weighted += p[j] * dp[j];
                                for (o, x) in gv.row_mut(base + j)[cols.clone()].iter_mut().zip(go) {
                                    *o += p[j] * x;
                                }
                            }
                            for j in 0..seq_len {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - weighted) * scale;
                                for (o, x) in gq.row_mut(base + i)[cols.clone()]
                                    .iter_mut()
                                    .zip(&mk.row(base + j)[cols.clone()])
                                {
                                    *o += ds * x;
                                }
                                for (o, x) in gk.row_mut(base + j)[cols.clone()]
                                    .iter_mut()
                                    .zip(&mq.row(base + i)[cols.clone()])
                                {
                                    *o += ds * x;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::MaskedMeanPool { x, seq_len, mask } => {
                let (rows, d) = self.shape(*x);
                let mut gx = Matrix::zeros(rows, d);
                for b in 0..rows / seq_len {
                    let span = &mask[b * seq_len..(b + 1) * seq_len];
                    let inv = 1.0 / span.iter().filter(|&&m| m).count() as f64;
                    for (i, &m) in span.iter().enumerate() {
                        if m {
                            for (o, x) in gx.row_mut(b * seq_len + i).iter_mut().zip(g.row(b)) {
                                *o = x * inv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            } => {
                let (mi, mk) = (self.value(*input), self.value(*kernels));
                let (oh, ow) = (geom.out_h(), geom.out_w());
                let mut gi = Matrix::zeros(mi.rows(), mi.cols());
                let mut gk = Matrix::zeros(mk.rows(), mk.cols());
                let mut gb = Matrix::zeros(1, geom.filters);
                for b in 0..mi.rows() {
                    let img = mi.row(b);
                    let grow = g.row(b);
                    for f in 0..geom.filters {
                        for y in 0..oh {
                            for x in 0..ow {
                                let go = grow[(f * oh + y) * ow + x];
                                if go == 0.0 {
                                    continue;
                                }
                                gb.as_mut_slice()[f] += go;
                                for ky in 0..geom.k_h {
                                    for kx in 0..geom.k_w {
                                        let pos = (y + ky) * geom.in_w + x + kx;
                                        let kpos = ky * geom.k_w + kx;
                                        gk.row_mut(f)[kpos] += go * img[pos];
                                        gi.row_mut(b)[pos] += go * mk.row(f)[kpos];
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *input, gi);
                accumulate(grads, *kernels, gk);
                accumulate(grads, *bias, gb);
            }
            Op::BceWithLogits {
                logits,
                targets,
                col_mask,
                count,
            } => {
                let ml = self.value(*logits);
                let scale = g.as_slice()[0] / *count as f64;
                let mut gl = Matrix::zeros(ml.rows(), ml.cols());
                for r in 0..ml.rows() {
                    let out = gl.row_mut(r);
                    for (c, (&x, &t)) in ml.row(r).iter().zip(targets.row(r)).enumerate() {
                        if col_mask[c] {
                            out[c] = (sigmoid(x) - t) * scale;
                        }
                    }
                }
                accumulate(grads, *logits, gl);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(rows, cols, g.as_slice()[0]));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−[t·ln σ(x) + (1−t)·ln(1−σ(x))]` without overflow.
pub fn bce_term(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Central differences of `f` around every entry of `inputs[which]`.
    fn numeric_grad(inputs: &[Matrix], which: usize, f: &dyn Fn(&[Matrix]) -> f64) -> Matrix {
        let h = 1e-6;
        let mut probe = inputs.to_vec();
        let mut out = Matrix::zeros(inputs[which].rows(), inputs[which].cols());
        for i in 0..inputs[which].len() {
            let orig = probe[which].as_slice()[i];
            probe[which].as_mut_slice()[i] = orig + h;
            let plus = f(&probe);
            probe[which].as_mut_slice()[i] = orig - h;
            let minus = f(&probe);
            probe[which].as_mut_slice()[i] = orig;
            out.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
        }
        out
    }

    /// Builds the graph with `build` on fresh leaves and compares analytic
    /// gradients with central differences for every input.
    fn check(inputs: Vec<Matrix>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let eval = |ms: &[Matrix]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ms.iter().map(|m| t.leaf(m.clone())).collect();
            let out = build(&mut t, &vars);
            t.value(out).as_slice()[0]
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        for (i, &v) in vars.iter().enumerate() {
            let analytic = grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(inputs[i].rows(), inputs[i].cols()));
            let numeric = numeric_grad(&inputs, i, &eval);
            let err = analytic.max_abs_diff(&numeric);
            assert!(err < 1e-6, "input {i}: max abs error {err}\n{analytic:?}\n{numeric:?}");
        }
    }

    fn rand(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::random_normal(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn matmul_and_bias() {
        check(vec![rand(3, 4, 1), rand(4, 2, 2), rand(1, 2, 3)], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let b = t.add_row(m, v[2]);
            let s = t.tanh(b);
            t.sum(s)
        });
    }

    #[test]
    fn matmul_nt_mul_scale() {
        check(vec![rand(3, 4, 4), rand(5, 4, 5)], |t, v| {
            let m = t.matmul_nt(v[0], v[1]);
            let sq = t.mul(m, m);
            let s = t.scale(sq, 0.3);
            t.sum(s)
        });
    }

    #[test]
    fn gather_scatter_stack() {
        check(vec![rand(4, 3, 6), rand(2, 3, 7)], |t, v| {
            let st = t.vstack(&[v[0], v[1]]);
            let g = t.gather(st, vec![5, 0, 0, 3, 4]);
            let sc = t.scatter_add(g, vec![1, 1, 0, 2, 1], 3);
            let c = t.concat_cols(sc, sc);
            let rs = t.row_scale(c, vec![0.5, -1.0, 2.0]);
            let th = t.tanh(rs);
            let r = t.reshape(th, 1, 18);
            t.sum(r)
        });
    }

    #[test]
    fn phi_rows_all_kinds() {
        for kind in [PhiKind::Mult, PhiKind::Ccorr, PhiKind::Rotate] {
            check(vec![rand(3, 4, 8), rand(3, 4, 9), rand(3, 4, 10)], |t, v| {
                let p = t.phi(v[0], v[1], kind);
                let w = t.mul(p, v[2]);
                t.sum(w)
            });
        }
    }

    #[test]
    fn layer_norm_grad() {
        check(
            vec![rand(3, 5, 11), rand(1, 5, 12), rand(1, 5, 13), rand(3, 5, 14)],
            |t, v| {
                let n = t.layer_norm(v[0], v[1], v[2]);
                let w = t.mul(n, v[3]);
                t.sum(w)
            },
        );
    }

    #[test]
    fn attention_grad_with_padding() {
        let mask = vec![true, true, false, true, true, true];
        check(
            vec![rand(6, 4, 15), rand(6, 4, 16), rand(6, 4, 17), rand(6, 4, 18)],
            move |t, v| {
                let a = t.attention(v[0], v[1], v[2], 3, 2, &mask);
                let w = t.mul(a, v[3]);
                t.sum(w)
            },
        );
    }

    #[test]
    fn pool_and_relu() {
        let mask = vec![true, false, true, true, true, false];
        check(vec![rand(6, 3, 19), rand(2, 3, 20)], move |t, v| {
            let r = t.relu(v[0]);
            let p = t.masked_mean_pool(r, 3, &mask);
            let w = t.mul(p, v[1]);
            t.sum(w)
        });
    }

    #[test]
    fn conv_grad() {
        let geom = ConvGeometry {
            in_h: 4,
            in_w: 5,
            k_h: 2,
            k_w: 3,
            filters: 2,
        };
        check(
            vec![
                rand(2, 20, 21),
                rand(2, 6, 22),
                rand(1, 2, 23),
                rand(2, geom.out_len(), 24),
            ],
            move |t, v| {
                let c = t.conv2d(v[0], v[1], v[2], geom);
                let w = t.mul(c, v[3]);
                t.sum(w)
            },
        );
    }

    #[test]
    fn bce_grad() {
        let targets = Matrix::from_rows(&[vec![0.9, 0.1, 0.5], vec![0.0, 1.0, 0.2]]);
        let mask = vec![true, false, true];
        check(vec![rand(2, 3, 25)], move |t, v| {
            t.bce_with_logits(v[0], targets.clone(), &mask)
        });
    }

    #[test]
    fn bce_term_is_stable() {
        assert!((bce_term(0.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_term(800.0, 1.0) < 1e-300);
        assert!(bce_term(-800.0, 0.0) < 1e-300);
        assert!(bce_term(800.0, 0.0).is_finite());
    }
}
