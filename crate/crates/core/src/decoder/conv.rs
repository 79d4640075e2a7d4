use rand::{Rng, RngCore};

use super::{zero_pads, DecoderConfig, DecoderKind};
use crate::autograd::{ConvGeometry, Tape, Var};
use crate::encoder::dropout;
use crate::params::{Bindings, ParamId, ParamSet};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// Reshape the stacked sequence into an `H x W` image, square-ish kernels.
    ConvE,
    /// Keep the `L_Q x d` layout and slide `L_Q x k_w` kernels along `d`.
    ConvKb,
}

/// Convolution, rectifier, flatten and a fully-connected map back to `d`.
/// Padding rows are zeroed before the convolution.
#[derive(Clone, Debug)]
pub struct ConvDecoder {
    config: DecoderConfig,
    kind: ConvKind,
    geom: ConvGeometry,
    kernels: ParamId,
    bias: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl ConvDecoder {
    pub(super) fn new<R: Rng + ?Sized>(config: DecoderConfig, dim: usize, params: &mut ParamSet, rng: &mut R) -> Self {
        let (kind, geom) = match config.kind {
            DecoderKind::ConvE => {
                let (h, w) = config.image.expect("validated");
                (
                    ConvKind::ConvE,
                    ConvGeometry {
                        in_h: h,
                        in_w: w,
                        k_h: config.kernel_h,
                        k_w: config.kernel_w,
                        filters: config.filters,
                    },
                )
            }
            _ => (
                ConvKind::ConvKb,
                ConvGeometry {
                    in_h: config.max_len,
                    in_w: dim,
                    k_h: config.max_len,
                    k_w: config.kernel_w,
                    filters: config.filters,
                },
            ),
        };
        let kernels = params.add(
            "dec.conv.kernels",
            Matrix::xavier(geom.filters, geom.k_h * geom.k_w, rng),
        );
        let bias = params.add("dec.conv.bias", Matrix::zeros(1, geom.filters));
        let fc_w = params.add("dec.fc.w", Matrix::xavier(geom.out_len(), dim, rng));
        let fc_b = params.add("dec.fc.b", Matrix::zeros(1, dim));
        Self {
            config,
            kind,
            geom,
            kernels,
            bias,
            fc_w,
            fc_b,
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn kind(&self) -> ConvKind {
        self.kind
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geom
    }

    pub(super) fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        seq: Var,
        mask: &[bool],
        batch: usize,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Var {
        let clean = zero_pads(tape, seq, mask);
        let images = tape.reshape(clean, batch, self.geom.in_h * self.geom.in_w);
        let conv = tape.conv2d(images, bind.var(self.kernels), bind.var(self.bias), self.geom);
        let mut features = tape.relu(conv);
        if let (Some(rng), true) = (dropout_rng, self.config.dropout > 0.0) {
            let (r, c) = tape.shape(features);
            features = dropout(tape, features, r, c, self.config.dropout, rng);
        }
        let out = tape.matmul(features, bind.var(self.fc_w));
        tape.add_row(out, bind.var(self.fc_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conve_output_arithmetic() {
        let g = ConvGeometry {
            in_h: 40,
            in_w: 70,
            k_h: 7,
            k_w: 7,
            filters: 200,
        };
        assert_eq!((g.out_h(), g.out_w()), (34, 64));
        let kb = ConvGeometry {
            in_h: 14,
            in_w: 200,
            k_h: 14,
            k_w: 7,
            filters: 200,
        };
        assert_eq!((kb.out_h(), kb.out_w()), (1, 194));
        let toy = ConvGeometry {
            in_h: 3,
            in_w: 8,
            k_h: 3,
            k_w: 3,
            filters: 1,
        };
        assert_eq!(toy.out_w(), 6);
    }
}
