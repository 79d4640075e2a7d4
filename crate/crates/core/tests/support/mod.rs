//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numeric kernels.

#![allow(dead_code)]

use std::collections::HashSet;

/// `out_k = Σ_i a_i · b_{(i+k) mod d}`, evaluated directly.
pub fn ccorr(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|k| (0..d).map(|i| a[i] * b[(i + k) % d]).sum()).collect()
}

#[derive(Clone, Copy, Debug)]
struct Complex {
    re: f64,
    im: f64,
}

impl std::ops::Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

/// Hadamard product in ℂ^{d/2}: the first half holds real parts, the
/// second half imaginary parts.
pub fn rotate(e: &[f64], r: &[f64]) -> Vec<f64> {
    let h = e.len() / 2;
    let prod: Vec<Complex> = (0..h)
        .map(|i| Complex { re: e[i], im: e[h + i] } * Complex { re: r[i], im: r[h + i] })
        .collect();
    prod.iter().map(|c| c.re).chain(prod.iter().map(|c| c.im)).collect()
}

pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max) / scale
}

/// Filtered rank doubled so it stays an integer: `2 + 2·greater + ties`,
/// counting only unmasked, unfiltered candidates other than the gold.
pub fn doubled_rank(scores: &[f64], gold: usize, filter: &HashSet<usize>, mask: &[bool]) -> u64 {
    let g = scores[gold];
    let mut greater = 0;
    let mut ties = 0;
    for (e, &s) in scores.iter().enumerate() {
        if e == gold || !mask[e] || filter.contains(&e) {
            continue;
        }
        if s > g {
            greater += 1;
        } else if s == g {
            ties += 1;
        }
    }
    2 + 2 * greater + ties
}

/// Row vector times matrix, accumulating from zero in ascending k.
pub fn vecmat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for (k, xk) in x.iter().enumerate() {
        for (o, wkj) in out.iter_mut().zip(&w[k]) {
            *o += xk * wkj;
        }
    }
    out
}

pub struct ReferenceEdge {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    /// 0 original, 1 inverse, 2 self-loop.
    pub direction: usize,
}

/// A plain relational graph-convolution layer over triples:
/// `h'_v = tanh(Σ_{(u,r,v)} φ(h_u, h_r) W_{dir})`, `R' = R W_rel`.
/// Messages are summed per object in edge order.
pub fn compgcn_layer(
    edges: &[ReferenceEdge],
    h: &[Vec<f64>],
    r: &[Vec<f64>],
    w_dir: [&[Vec<f64>]; 3],
    w_rel: &[Vec<f64>],
    phi: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = w_rel[0].len();
    let mut acc = vec![vec![0.0; d]; h.len()];
    for e in edges {
        let msg = vecmat(&phi(&h[e.subject], &r[e.relation]), w_dir[e.direction]);
        for (a, m) in acc[e.object].iter_mut().zip(msg) {
            *a += m;
        }
    }
    let h_next = acc
        .into_iter()
        .map(|row| row.into_iter().map(f64::tanh).collect())
        .collect();
    let r_next = r.iter().map(|row| vecmat(row, w_rel)).collect();
    (h_next, r_next)
}
