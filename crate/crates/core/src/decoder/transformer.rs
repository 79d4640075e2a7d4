use rand::{Rng, RngCore};

use super::{DecoderConfig, DecoderKind};
use crate::autograd::{Tape, Var};
use crate::encoder::dropout;
use crate::params::{Bindings, ParamId, ParamSet};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn register<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: params.add(format!("{name}.w"), Matrix::xavier(input, output, rng)),
            b: params.add(format!("{name}.b"), Matrix::zeros(1, output)),
        }
    }

    pub(crate) fn apply(&self, tape: &mut Tape, bind: &Bindings, x: Var) -> Var {
        let y = tape.matmul(x, bind.var(self.w));
        tape.add_row(y, bind.var(self.b))
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn register(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Matrix::filled(1, dim, 1.0)),
            bias: params.add(format!("{name}.bias"), Matrix::zeros(1, dim)),
        }
    }

    fn apply(&self, tape: &mut Tape, bind: &Bindings, x: Var) -> Var {
        tape.layer_norm(x, bind.var(self.gain), bind.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

/// Post-norm transformer encoder over the linearised query, followed either
/// by mean pooling over real positions or by reading the MASK position.
#[derive(Clone, Debug)]
pub struct TransformerDecoder {
    config: DecoderConfig,
    positions: ParamId,
    blocks: Vec<Block>,
    head: Linear,
}

const MASK_POSITION: usize = 2;

impl TransformerDecoder {
    pub(super) fn new<R: Rng + ?Sized>(config: DecoderConfig, dim: usize, params: &mut ParamSet, rng: &mut R) -> Self {
        let positions = params.add("dec.pos", Matrix::xavier(config.max_len, dim, rng));
        let blocks = (0..config.layers)
            .map(|i| {
                let p = format!("dec.layer{i}");
                Block {
                    q: Linear::register(params, &format!("{p}.q"), dim, dim, rng),
                    k: Linear::register(params, &format!("{p}.k"), dim, dim, rng),
                    v: Linear::register(params, &format!("{p}.v"), dim, dim, rng),
                    o: Linear::register(params, &format!("{p}.o"), dim, dim, rng),
                    norm1: Norm::register(params, &format!("{p}.norm1"), dim),
                    ff1: Linear::register(params, &format!("{p}.ff1"), dim, config.hidden, rng),
                    ff2: Linear::register(params, &format!("{p}.ff2"), config.hidden, dim, rng),
                    norm2: Norm::register(params, &format!("{p}.norm2"), dim),
                }
            })
            .collect();
        let head = Linear::register(params, "dec.fc", dim, dim, rng);
        Self {
            config,
            positions,
            blocks,
            head,
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub(super) fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        seq: Var,
        mask: &[bool],
        batch: usize,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Var {
        let l = self.config.max_len;
        let pos = tape.gather(bind.var(self.positions), (0..batch * l).map(|i| i % l).collect());
        let mut x = tape.add(seq, pos);
        let p = self.config.dropout;
        for block in &self.blocks {
            let q = block.q.apply(tape, bind, x);
            let k = block.k.apply(tape, bind, x);
            let v = block.v.apply(tape, bind, x);
            let att = tape.attention(q, k, v, l, self.config.heads, mask);
            let mut att = block.o.apply(tape, bind, att);
            if let (Some(rng), true) = (dropout_rng.as_mut(), p > 0.0) {
                let (r, c) = tape.shape(att);
                att = dropout(tape, att, r, c, p, &mut **rng);
            }
            let res = tape.add(x, att);
            let x1 = block.norm1.apply(tape, bind, res);
            let h = block.ff1.apply(tape, bind, x1);
            let h = tape.relu(h);
            let mut ff = block.ff2.apply(tape, bind, h);
            if let (Some(rng), true) = (dropout_rng.as_mut(), p > 0.0) {
                let (r, c) = tape.shape(ff);
                ff = dropout(tape, ff, r, c, p, &mut **rng);
            }
            let res = tape.add(x1, ff);
            x = block.norm2.apply(tape, bind, res);
        }
        let summary = match self.config.kind {
            DecoderKind::MaskedTransformer => tape.gather(x, (0..batch).map(|b| b * l + MASK_POSITION).collect()),
            _ => tape.masked_mean_pool(x, l, mask),
        };
        self.head.apply(tape, bind, summary)
    }
}
