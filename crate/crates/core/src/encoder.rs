//! The qualifier-aware message-passing encoder.
//!
//! For a fact `(u, r, v, Q)` the node `v` receives
//! `W_λ(r) · φ_r(h_u, γ(h_r, h_q))` with `h_q = W_q Σ φ_q(h_qr, h_qv)`.
//! Facts without qualifiers skip γ entirely and use `h_r` as is, which makes
//! a qualifier-free graph behave exactly like a CompGCN layer. Relations are
//! updated linearly, `h_r' = W_rel · h_r`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::compose::{self, check_alpha, GammaKind, PhiKind};
use crate::error::{Error, Result};
use crate::graph::{EdgeDirection, HyperGraph};
use crate::params::{Bindings, ParamId, ParamSet};
use crate::tensor::{vecmat, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualifierAggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl fmt::Display for QualifierAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
        })
    }
}

impl FromStr for QualifierAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown qualifier aggregation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(0.0),
            Self::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub dim: usize,
    pub phi_r: PhiKind,
    pub phi_q: PhiKind,
    pub gamma: GammaKind,
    pub alpha: f64,
    pub aggregation: QualifierAggregation,
    pub dropout: f64,
    pub activation: Activation,
    /// Divide each node's message sum by its in-degree.
    pub degree_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            dim: 200,
            phi_r: PhiKind::Rotate,
            phi_q: PhiKind::Rotate,
            gamma: GammaKind::WeightedSum,
            alpha: 0.8,
            aggregation: QualifierAggregation::Sum,
            dropout: 0.3,
            activation: Activation::Tanh,
            degree_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if (self.phi_r == PhiKind::Rotate || self.phi_q == PhiKind::Rotate) && !self.dim.is_multiple_of(2) {
            return Err(Error::OddDimension(self.dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        check_alpha(self.alpha)
    }

    /// Width of the vectors φ_r sees, and so the input width of `W_λ`.
    pub fn message_width(&self) -> usize {
        self.gamma.output_dim(self.dim)
    }
}

/// Per-layer weights. All maps act on row vectors: `m = x · W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub w_out: ParamId,
    pub w_in: ParamId,
    pub w_self: ParamId,
    pub w_q: ParamId,
    pub w_rel: ParamId,
}

impl LayerParams {
    pub fn direction(&self, dir: EdgeDirection) -> ParamId {
        match dir {
            EdgeDirection::Outgoing => self.w_out,
            EdgeDirection::Incoming => self.w_in,
            EdgeDirection::SelfLoop => self.w_self,
        }
    }

    fn register<R: Rng + ?Sized>(params: &mut ParamSet, layer: usize, config: &EncoderConfig, rng: &mut R) -> Self {
        let (w, d) = (config.message_width(), config.dim);
        let mut add = |name: &str, rows, cols, rng: &mut R| {
            params.add(format!("layer{layer}.{name}"), Matrix::xavier(rows, cols, rng))
        };
        Self {
            w_out: add("w_out", w, d, rng),
            w_in: add("w_in", w, d, rng),
            w_self: add("w_self", w, d, rng),
            w_q: add("w_q", d, d, rng),
            w_rel: add("w_rel", d, d, rng),
        }
    }
}

/// Entity table `v` (`entity_rows x d`, reserved rows last) and relation
/// table `r` (`|ℛ_aug| x d`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingStore {
    pub entities: ParamId,
    pub relations: ParamId,
}

impl EmbeddingStore {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        entity_rows: usize,
        num_relations: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            entities: params.add("v", Matrix::xavier(entity_rows, dim, rng)),
            relations: params.add("r", Matrix::xavier(num_relations, dim, rng)),
        }
    }
}

/// Edge lists of a [`HyperGraph`] rearranged for batched message passing.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    num_entities: usize,
    subject: Vec<usize>,
    object: Vec<usize>,
    relation: Vec<usize>,
    has_qualifiers: Vec<bool>,
    qualifier_counts: Vec<usize>,
    /// Triple rows of each direction, ascending.
    by_direction: [Vec<usize>; 3],
    /// Position of each triple row inside the direction-grouped stack.
    grouped_position: Vec<usize>,
    qual_relation: Vec<usize>,
    qual_value: Vec<usize>,
    qual_row: Vec<usize>,
    in_degree: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(graph: &HyperGraph) -> Self {
        let t = graph.triples();
        let mut by_direction: [Vec<usize>; 3] = Default::default();
        for (row, dir) in graph.directions().iter().enumerate() {
            by_direction[dir.index()].push(row);
        }
        let mut grouped_position = vec![0; t.len()];
        for (pos, &row) in by_direction.iter().flatten().enumerate() {
            grouped_position[row] = pos;
        }
        let q = graph.qualifiers();
        let qual_row = q
            .fact
            .iter()
            .map(|&k| graph.row_of_fact(k).expect("validated graph"))
            .collect();
        let mut in_degree = vec![0; graph.num_entities()];
        for &o in &t.object {
            in_degree[o] += 1;
        }
        Self {
            num_entities: graph.num_entities(),
            subject: t.subject.clone(),
            object: t.object.clone(),
            relation: t.relation.clone(),
            has_qualifiers: graph.qualifier_counts().iter().map(|&c| c > 0).collect(),
            qualifier_counts: graph.qualifier_counts().to_vec(),
            by_direction,
            grouped_position,
            qual_relation: q.relation.clone(),
            qual_value: q.value.clone(),
            qual_row,
            in_degree,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.subject.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn in_degree(&self) -> &[usize] {
        &self.in_degree
    }
}

/// The (possibly absent) aggregated qualifier vector of one fact.
#[derive(Clone, Debug, PartialEq)]
pub enum QualifierVector {
    Empty,
    Vector(Vec<f64>),
}

/// `h_q` for fact `k`, summing φ_q over its qualifier rows in row order.
pub fn aggregate_qualifiers(
    k: usize,
    graph: &HyperGraph,
    entities: &Matrix,
    relations: &Matrix,
    w_q: &Matrix,
    config: &EncoderConfig,
) -> Result<QualifierVector> {
    if graph.row_of_fact(k).is_none() {
        return Err(Error::UnknownId {
            kind: "fact",
            id: k,
            len: graph.num_facts(),
        });
    }
    let q = graph.qualifiers();
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for row in graph.qualifier_rows_of(k) {
        let term = compose::phi(relations.row(q.relation[row]), entities.row(q.value[row]), config.phi_q)?;
        match &mut acc {
            None => acc = Some(term.iter().map(|x| 0.0 + x).collect()),
            Some(a) => a.iter_mut().zip(&term).for_each(|(a, t)| *a += t),
        }
        count += 1;
    }
    let Some(mut sum) = acc else {
        return Ok(QualifierVector::Empty);
    };
    if config.aggregation == QualifierAggregation::Mean {
        let inv = 1.0 / count as f64;
        sum.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(QualifierVector::Vector(vecmat(&sum, w_q)))
}

/// `W_λ · φ_r(h_u, γ(h_r, h_q))`, or `W_λ · φ_r(h_u, h_r)` for an empty
/// qualifier set. Under concatenation the entity side is tiled to
/// `[h_u ‖ h_u]` so both φ_r operands are `2d` wide.
pub fn message(
    h_u: &[f64],
    h_r: &[f64],
    h_q: &QualifierVector,
    w: &Matrix,
    config: &EncoderConfig,
) -> Result<Vec<f64>> {
    if h_u.len() != h_r.len() {
        return Err(Error::Dimension(format!(
            "h_u has {} entries, h_r has {}",
            h_u.len(),
            h_r.len()
        )));
    }
    let concat = config.gamma == GammaKind::Concat;
    let relation_side = match (h_q, concat) {
        (QualifierVector::Vector(hq), _) => compose::gamma(h_r, hq, config.gamma, config.alpha)?,
        (QualifierVector::Empty, false) => h_r.to_vec(),
        (QualifierVector::Empty, true) => h_r.iter().copied().chain(std::iter::repeat_n(0.0, h_r.len())).collect(),
    };
    let entity_side: Vec<f64> = if concat {
        h_u.iter().chain(h_u).copied().collect()
    } else {
        h_u.to_vec()
    };
    let composed = compose::phi(&entity_side, &relation_side, config.phi_r)?;
    if w.rows() != composed.len() {
        return Err(Error::Dimension(format!(
            "W_λ has {} rows, composed message has {} entries",
            w.rows(),
            composed.len()
        )));
    }
    Ok(vecmat(&composed, w))
}

/// The encoder: a stack of layers over a shared [`EmbeddingStore`].
#[derive(Clone, Debug)]
pub struct StarEEncoder {
    config: EncoderConfig,
    layers: Vec<LayerParams>,
}

impl StarEEncoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|i| LayerParams::register(params, i, &config, rng))
            .collect();
        Ok(Self { config, layers })
    }

    /// Rebinds an encoder to weights already present in `params`.
    pub fn from_params(config: EncoderConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let get = |layer: usize, name: &str| {
            params
                .id(&format!("layer{layer}.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter layer{layer}.{name}")))
        };
        let layers = (0..config.num_layers)
            .map(|i| {
                Ok(LayerParams {
                    w_out: get(i, "w_out")?,
                    w_in: get(i, "w_in")?,
                    w_self: get(i, "w_self")?,
                    w_q: get(i, "w_q")?,
                    w_rel: get(i, "w_rel")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Runs every layer. `h` holds the real entity rows only; `dropout_rng`
    /// switches training mode on.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        edges: &EdgeIndex,
        mut h: Var,
        mut r: Var,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> (Var, Var) {
        for layer in &self.layers {
            let rng = dropout_rng.as_mut().map(|rng| &mut **rng as &mut dyn RngCore);
            (h, r) = layer_forward(tape, bind, edges, h, r, layer, &self.config, rng);
        }
        (h, r)
    }

    /// Encodes the full entity table: real rows pass through the layers,
    /// reserved rows are appended unchanged.
    pub fn encode_store(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        edges: &EdgeIndex,
        store: &EmbeddingStore,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> (Var, Var) {
        let v = bind.var(store.entities);
        let rows = tape.shape(v).0;
        let n = edges.num_entities();
        let real = tape.gather(v, (0..n).collect());
        let reserved = tape.gather(v, (n..rows).collect());
        let (h, r) = self.forward(tape, bind, edges, real, bind.var(store.relations), dropout_rng);
        let full = tape.vstack(&[h, reserved]);
        (full, r)
    }
}

/// One batched layer on the tape.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward(
    tape: &mut Tape,
    bind: &Bindings,
    edges: &EdgeIndex,
    h: Var,
    r: Var,
    layer: &LayerParams,
    config: &EncoderConfig,
    dropout_rng: Option<&mut dyn RngCore>,
) -> (Var, Var) {
    let d = config.dim;
    let e = edges.num_edges();
    let hr = tape.gather(r, edges.relation.clone());
    let relation_side = if edges.qual_row.is_empty() {
        if config.gamma == GammaKind::Concat {
            let zeros = tape.leaf(Matrix::zeros(e, d));
            tape.concat_cols(hr, zeros)
        } else {
            hr
        }
    } else {
        let qr = tape.gather(r, edges.qual_relation.clone());
        let qv = tape.gather(h, edges.qual_value.clone());
        let terms = tape.phi(qr, qv, config.phi_q);
        let mut summed = tape.scatter_add(terms, edges.qual_row.clone(), e);
        if config.aggregation == QualifierAggregation::Mean {
            let factors = edges
                .qualifier_counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                .collect();
            summed = tape.row_scale(summed, factors);
        }
        let hq = tape.matmul(summed, bind.var(layer.w_q));
        combine(tape, hr, hq, &edges.has_qualifiers, config)
    };
    let hu = tape.gather(h, edges.subject.clone());
    let entity_side = if config.gamma == GammaKind::Concat {
        tape.concat_cols(hu, hu)
    } else {
        hu
    };
    let composed = tape.phi(entity_side, relation_side, config.phi_r);

    let mut groups = Vec::with_capacity(3);
    for dir in EdgeDirection::ALL {
        let rows = &edges.by_direction[dir.index()];
        if rows.is_empty() {
            continue;
        }
        let part = tape.gather(composed, rows.clone());
        groups.push(tape.matmul(part, bind.var(layer.direction(dir))));
    }
    let stacked = tape.vstack(&groups);
    let messages = tape.gather(stacked, edges.grouped_position.clone());
    let mut agg = tape.scatter_add(messages, edges.object.clone(), edges.num_entities);
    if config.degree_norm {
        let factors = edges
            .in_degree
            .iter()
            .map(|&c| if c == 0 { 1.0 } else { 1.0 / c as f64 })
            .collect();
        agg = tape.row_scale(agg, factors);
    }
    let mut out = match config.activation {
        Activation::Tanh => tape.tanh(agg),
        Activation::Relu => tape.relu(agg),
        Activation::Identity => agg,
    };
    if let Some(rng) = dropout_rng {
        if config.dropout > 0.0 {
            let (rows, cols) = tape.shape(out);
            out = dropout(tape, out, rows, cols, config.dropout, rng);
        }
    }
    let r_next = tape.matmul(r, bind.var(layer.w_rel));
    (out, r_next)
}

/// γ on the rows that have qualifiers; rows without them keep `h_r`
/// unchanged (or `[h_r ‖ 0]` under concatenation).
fn combine(tape: &mut Tape, hr: Var, hq: Var, has_q: &[bool], config: &EncoderConfig) -> Var {
    match config.gamma {
        GammaKind::WeightedSum => {
            let a = config.alpha;
            let keep: Vec<f64> = has_q.iter().map(|&q| if q { a } else { 1.0 }).collect();
            let mix: Vec<f64> = has_q.iter().map(|&q| if q { 1.0 - a } else { 0.0 }).collect();
            let left = tape.row_scale(hr, keep);
            let right = tape.row_scale(hq, mix);
            tape.add(left, right)
        }
        GammaKind::Mul => {
            let (rows, cols) = tape.shape(hq);
            let mut ones = Matrix::zeros(rows, cols);
            for (i, &q) in has_q.iter().enumerate() {
                if !q {
                    ones.row_mut(i).fill(1.0);
                }
            }
            let ones = tape.leaf(ones);
            let factor = tape.add(hq, ones);
            tape.mul(hr, factor)
        }
        GammaKind::Concat => tape.concat_cols(hr, hq),
    }
}

/// Inverted dropout: kept entries are scaled by `1/(1-p)`.
pub fn dropout(tape: &mut Tape, x: Var, rows: usize, cols: usize, p: f64, rng: &mut dyn RngCore) -> Var {
    let keep = 1.0 / (1.0 - p);
    let mut mask = Matrix::zeros(rows, cols);
    for v in mask.as_mut_slice() {
        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    tape.mul_const(x, mask)
}

/// Eager single-layer forward over plain matrices (eval mode).
pub fn layer_forward_eval(
    edges: &EdgeIndex,
    entities: &Matrix,
    relations: &Matrix,
    params: &ParamSet,
    layer: &LayerParams,
    config: &EncoderConfig,
) -> (Matrix, Matrix) {
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let h = tape.leaf(entities.clone());
    let r = tape.leaf(relations.clone());
    let (h2, r2) = layer_forward(&mut tape, &bind, edges, h, r, layer, config, None);
    (tape.value(h2).clone(), tape.value(r2).clone())
}
