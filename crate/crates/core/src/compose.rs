//! Entity–relation composition (φ) and relation–qualifier merge (γ) kernels.
//!
//! Vectors are plain slices. `Rotate` reads a vector of even length `d` as
//! `d/2` complex numbers packed half/half: real parts first, imaginary parts
//! second. `Ccorr` is circular correlation, `[φ]_k = Σ_i e_i · r_{(i+k) mod d}`,
//! evaluated through an FFT.
//!
//! Additive (TransE-style) composition is not provided; a new [`PhiKind`]
//! variant plus its forward/backward pair is all it would take.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    Mult,
    Ccorr,
    Rotate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    WeightedSum,
    Concat,
    Mul,
}

impl GammaKind {
    /// Output width of γ for inputs of width `dim`.
    pub fn output_dim(self, dim: usize) -> usize {
        match self {
            GammaKind::Concat => 2 * dim,
            GammaKind::WeightedSum | GammaKind::Mul => dim,
        }
    }
}

impl fmt::Display for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhiKind::Mult => "mult",
            PhiKind::Ccorr => "ccorr",
            PhiKind::Rotate => "rotate",
        })
    }
}

impl FromStr for PhiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mult" => Ok(PhiKind::Mult),
            "ccorr" => Ok(PhiKind::Ccorr),
            "rotate" => Ok(PhiKind::Rotate),
            other => Err(Error::Config(format!(
                "unknown composition `{other}` (expected mult, ccorr or rotate)"
            ))),
        }
    }
}

impl fmt::Display for GammaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GammaKind::WeightedSum => "weighted_sum",
            GammaKind::Concat => "concat",
            GammaKind::Mul => "mul",
        })
    }
}

impl FromStr for GammaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted_sum" => Ok(GammaKind::WeightedSum),
            "concat" => Ok(GammaKind::Concat),
            "mul" => Ok(GammaKind::Mul),
            other => Err(Error::Config(format!(
                "unknown gamma `{other}` (expected weighted_sum, concat or mul)"
            ))),
        }
    }
}

fn check_dims(kind: PhiKind, e: &[f64], r: &[f64]) -> Result<()> {
    if e.len() != r.len() {
        return Err(Error::Dimension(format!(
            "composition inputs have lengths {} and {}",
            e.len(),
            r.len()
        )));
    }
    if kind == PhiKind::Rotate && !e.len().is_multiple_of(2) {
        return Err(Error::OddDimension(e.len()));
    }
    Ok(())
}

/// φ(e, r).
pub fn phi(e: &[f64], r: &[f64], kind: PhiKind) -> Result<Vec<f64>> {
    check_dims(kind, e, r)?;
    let mut out = vec![0.0; e.len()];
    phi_into(e, r, kind, &mut out);
    Ok(out)
}

/// Unchecked φ writing into `out`; callers guarantee the shapes.
pub(crate) fn phi_into(e: &[f64], r: &[f64], kind: PhiKind, out: &mut [f64]) {
    match kind {
        PhiKind::Mult => {
            for ((o, a), b) in out.iter_mut().zip(e).zip(r) {
                *o = a * b;
            }
        }
        PhiKind::Ccorr => circular_correlation(e, r, out),
        PhiKind::Rotate => {
            let h = e.len() / 2;
            let (e_re, e_im) = e.split_at(h);
            let (r_re, r_im) = r.split_at(h);
            for i in 0..h {
                out[i] = e_re[i] * r_re[i] - e_im[i] * r_im[i];
                out[h + i] = e_re[i] * r_im[i] + e_im[i] * r_re[i];
            }
        }
    }
}

/// Gradients of `upstream · φ(e, r)` with respect to `e` and `r`.
pub fn phi_backward(e: &[f64], r: &[f64], kind: PhiKind, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(kind, e, r)?;
    if upstream.len() != e.len() {
        return Err(Error::Dimension(format!(
            "upstream gradient has length {}, expected {}",
            upstream.len(),
            e.len()
        )));
    }
    let mut grad_e = vec![0.0; e.len()];
    let mut grad_r = vec![0.0; e.len()];
    phi_backward_into(e, r, kind, upstream, &mut grad_e, &mut grad_r);
    Ok((grad_e, grad_r))
}

/// Accumulates (`+=`) the φ gradients into `grad_e` and `grad_r`.
pub(crate) fn phi_backward_into(
    e: &[f64],
    r: &[f64],
    kind: PhiKind,
    g: &[f64],
    grad_e: &mut [f64],
    grad_r: &mut [f64],
) {
    match kind {
        PhiKind::Mult => {
            for i in 0..e.len() {
                grad_e[i] += g[i] * r[i];
                grad_r[i] += g[i] * e[i];
            }
        }
        PhiKind::Ccorr => {
            // ∂/∂e_i = Σ_k g_k r_{i+k}   (correlation of g with r)
            // ∂/∂r_j = Σ_k g_k e_{j-k}   (convolution of g with e)
            let d = e.len();
            let mut ge = vec![0.0; d];
            let mut gr = vec![0.0; d];
            circular_correlation(g, r, &mut ge);
            circular_convolution(g, e, &mut gr);
            for i in 0..d {
                grad_e[i] += ge[i];
                grad_r[i] += gr[i];
            }
        }
        PhiKind::Rotate => {
            let h = e.len() / 2;
            for i in 0..h {
                let (a, b) = (e[i], e[h + i]);
                let (c, d) = (r[i], r[h + i]);
                let (g_re, g_im) = (g[i], g[h + i]);
                grad_e[i] += g_re * c + g_im * d;
                grad_e[h + i] += -g_re * d + g_im * c;
                grad_r[i] += g_re * a + g_im * b;
                grad_r[h + i] += -g_re * b + g_im * a;
            }
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn spectra(a: &[f64], b: &[f64]) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
    let d = a.len();
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(d);
        fft.process(&mut fa);
        fft.process(&mut fb);
    });
    (fa, fb)
}

fn inverse_real(mut spectrum: Vec<Complex<f64>>, out: &mut [f64]) {
    let d = spectrum.len();
    PLANNER.with(|p| {
        let ifft = p.borrow_mut().plan_fft_inverse(d);
        ifft.process(&mut spectrum);
    });
    let norm = 1.0 / d as f64;
    for (o, c) in out.iter_mut().zip(spectrum) {
        *o = c.re * norm;
    }
}

/// `out_k = Σ_i a_i · b_{(i+k) mod d}`.
fn circular_correlation(a: &[f64], b: &[f64], out: &mut [f64]) {
    if a.is_empty() {
        return;
    }
    let (fa, fb) = spectra(a, b);
    let prod = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inverse_real(prod, out);
}

/// `out_j = Σ_k a_k · b_{(j-k) mod d}`.
fn circular_convolution(a: &[f64], b: &[f64], out: &mut [f64]) {
    if a.is_empty() {
        return;
    }
    let (fa, fb) = spectra(a, b);
    let prod = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    inverse_real(prod, out);
}

/// γ(h_r, h_q). `alpha` is only read by [`GammaKind::WeightedSum`] but must
/// always lie in `[0, 1]`.
pub fn gamma(h_r: &[f64], h_q: &[f64], kind: GammaKind, alpha: f64) -> Result<Vec<f64>> {
    if h_r.len() != h_q.len() {
        return Err(Error::Dimension(format!(
            "gamma inputs have lengths {} and {}",
            h_r.len(),
            h_q.len()
        )));
    }
    check_alpha(alpha)?;
    Ok(match kind {
        GammaKind::WeightedSum => h_r
            .iter()
            .zip(h_q)
            .map(|(r, q)| alpha * r + (1.0 - alpha) * q)
            .collect(),
        GammaKind::Concat => h_r.iter().chain(h_q).copied().collect(),
        GammaKind::Mul => h_r.iter().zip(h_q).map(|(r, q)| r * q).collect(),
    })
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ccorr_direct(e: &[f64], r: &[f64]) -> Vec<f64> {
        let d = e.len();
        (0..d).map(|k| (0..d).map(|i| e[i] * r[(i + k) % d]).sum()).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn mult_definition() {
        assert_eq!(phi(&[1.0, 2.0], &[3.0, 4.0], PhiKind::Mult).unwrap(), vec![3.0, 8.0]);
    }

    #[test]
    fn rotate_by_i() {
        let out = phi(&[1.0, 0.0], &[0.0, 1.0], PhiKind::Rotate).unwrap();
        assert_eq!(out, vec![0.0, 1.0]);
    }

    #[test]
    fn ccorr_two_dim() {
        let e = [1.0, 0.0];
        let r = [2.0, 3.0];
        assert_eq!(ccorr_direct(&e, &r), vec![2.0, 3.0]);
        let out = phi(&e, &r, PhiKind::Ccorr).unwrap();
        assert!(close(&out, &[2.0, 3.0], 1e-12), "{out:?}");
    }

    #[test]
    fn rotate_rejects_odd_dimension() {
        assert!(matches!(
            phi(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], PhiKind::Rotate),
            Err(Error::OddDimension(3))
        ));
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(
            phi(&[1.0], &[1.0, 2.0], PhiKind::Mult),
            Err(Error::Dimension(_))
        ));
        assert!(phi_backward(&[1.0, 2.0], &[1.0, 2.0], PhiKind::Mult, &[1.0]).is_err());
    }

    #[test]
    fn mult_backward_is_product_rule() {
        let (ge, gr) = phi_backward(&[1.0, 2.0], &[3.0, 4.0], PhiKind::Mult, &[0.5, -1.0]).unwrap();
        assert_eq!(ge, vec![0.5 * 3.0, -4.0]);
        assert_eq!(gr, vec![0.5 * 1.0, -2.0]);
    }

    #[test]
    fn gamma_examples() {
        let h_r = [1.0, 1.0];
        let h_q = [0.0, 2.0];
        assert_eq!(gamma(&h_r, &h_q, GammaKind::WeightedSum, 1.0).unwrap(), h_r.to_vec());
        let ws = gamma(&h_r, &h_q, GammaKind::WeightedSum, 0.8).unwrap();
        assert!(close(&ws, &[0.8, 1.2], 1e-15));
        assert_eq!(
            gamma(&[3.0, -2.0], &[1.0, 1.0], GammaKind::Mul, 0.8).unwrap(),
            vec![3.0, -2.0]
        );
        assert_eq!(
            gamma(&h_r, &h_q, GammaKind::Concat, 0.8).unwrap(),
            vec![1.0, 1.0, 0.0, 2.0]
        );
        assert!(matches!(
            gamma(&h_r, &h_q, GammaKind::WeightedSum, 1.5),
            Err(Error::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for k in [PhiKind::Mult, PhiKind::Ccorr, PhiKind::Rotate] {
            assert_eq!(k.to_string().parse::<PhiKind>().unwrap(), k);
        }
        for k in [GammaKind::WeightedSum, GammaKind::Concat, GammaKind::Mul] {
            assert_eq!(k.to_string().parse::<GammaKind>().unwrap(), k);
        }
    }
}
