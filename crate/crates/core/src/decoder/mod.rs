//! Query linearisation and the decoders that score a query against every
//! entity row.

mod conv;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationId, Statement, Vocabulary};
use crate::params::{Bindings, ParamSet};

pub use conv::{ConvDecoder, ConvKind};
pub use transformer::TransformerDecoder;

/// Which end of a fact a query asks for. Subject queries are answered as
/// object queries over the inverse relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Object,
    Subject,
}

impl Target {
    pub const BOTH: [Target; 2] = [Target::Object, Target::Subject];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Object => "object",
            Target::Subject => "subject",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rewrites a base fact so that the requested end is in object position:
/// `(s, r, o, Q)` for objects, `(o, r⁻¹, s, Q)` for subjects.
pub fn orient(st: &Statement, target: Target, vocab: &Vocabulary) -> Result<Statement> {
    match target {
        Target::Object => Ok(st.clone()),
        Target::Subject => {
            let inverse = vocab.inverse_of(st.relation).ok_or(Error::NotAugmented)?;
            Ok(Statement {
                subject: st.object,
                relation: inverse,
                object: st.subject,
                qualifiers: st.qualifiers.clone(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Entity(EntityId),
    Relation(RelationId),
}

/// A padded token sequence `[s, r, (MASK,) qr₁, qv₁, …, PAD, …]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Query {
    pub tokens: Vec<Token>,
    /// `true` at real positions.
    pub mask: Vec<bool>,
    pub target: EntityId,
}

impl Query {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn real_positions(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryStyle {
    /// `[s, r, qr₁, qv₁, …]`
    Plain,
    /// `[s, r, MASK, qr₁, qv₁, …]`
    Masked,
}

impl QueryStyle {
    fn prefix(self) -> usize {
        match self {
            QueryStyle::Plain => 2,
            QueryStyle::Masked => 3,
        }
    }

    /// Most qualifier pairs that fit in `max_len` positions.
    pub fn max_qualifiers(self, max_len: usize) -> usize {
        max_len.saturating_sub(self.prefix()) / 2
    }
}

/// Linearises an oriented statement whose object is the prediction target.
/// Qualifier pairs are sorted by `(qr, qv)`.
pub fn linearize_query(st: &Statement, vocab: &Vocabulary, max_len: usize, style: QueryStyle) -> Result<Query> {
    vocab.check_statement(st)?;
    let needed = style.prefix() + 2 * st.qualifiers.len();
    if needed > max_len {
        return Err(Error::QueryTooLong { needed, max_len });
    }
    let mut tokens = Vec::with_capacity(max_len);
    tokens.push(Token::Entity(st.subject));
    tokens.push(Token::Relation(st.relation));
    if style == QueryStyle::Masked {
        tokens.push(Token::Entity(vocab.mask_id()));
    }
    for q in st.sorted_qualifiers() {
        tokens.push(Token::Relation(q.relation));
        tokens.push(Token::Entity(q.value));
    }
    let mut mask = vec![true; tokens.len()];
    tokens.resize(max_len, Token::Entity(vocab.pad_id()));
    mask.resize(max_len, false);
    Ok(Query {
        tokens,
        mask,
        target: st.object,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    PooledTransformer,
    ConvE,
    ConvKb,
    MaskedTransformer,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PooledTransformer => "transformer",
            Self::ConvE => "conve",
            Self::ConvKb => "convkb",
            Self::MaskedTransformer => "masked_transformer",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" | "pooled_transformer" => Ok(Self::PooledTransformer),
            "conve" => Ok(Self::ConvE),
            "convkb" => Ok(Self::ConvKb),
            "masked_transformer" => Ok(Self::MaskedTransformer),
            other => Err(Error::Config(format!("unknown decoder {other:?}"))),
        }
    }
}

impl DecoderKind {
    pub fn query_style(self) -> QueryStyle {
        match self {
            Self::MaskedTransformer => QueryStyle::Masked,
            _ => QueryStyle::Plain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    /// Padded query length `L_Q`.
    pub max_len: usize,
    pub layers: usize,
    /// Feed-forward width of each transformer layer.
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// ConvE image shape; `H · W` must equal `max_len · dim`.
    pub image: Option<(usize, usize)>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            kind: DecoderKind::PooledTransformer,
            max_len: 15,
            layers: 2,
            hidden: 512,
            heads: 4,
            dropout: 0.1,
            filters: 200,
            kernel_h: 7,
            kernel_w: 7,
            image: None,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let style = self.kind.query_style();
        if self.max_len < style.prefix() {
            return Err(Error::Config(format!("query length {} is too short", self.max_len)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "decoder dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        match self.kind {
            DecoderKind::PooledTransformer | DecoderKind::MaskedTransformer => {
                if self.heads == 0 || !dim.is_multiple_of(self.heads) {
                    return Err(Error::Config(format!(
                        "{} heads do not divide dimension {dim}",
                        self.heads
                    )));
                }
                if self.layers == 0 || self.hidden == 0 {
                    return Err(Error::Config("transformer needs layers and a hidden width".into()));
                }
            }
            DecoderKind::ConvE => {
                let (h, w) = self
                    .image
                    .ok_or_else(|| Error::Config("ConvE needs an image shape".into()))?;
                if h * w != self.max_len * dim {
                    return Err(Error::Dimension(format!(
                        "cannot reshape {}x{dim} into a {h}x{w} image",
                        self.max_len
                    )));
                }
                if self.kernel_h > h || self.kernel_w > w || self.filters == 0 {
                    return Err(Error::Dimension(format!(
                        "{}x{} kernel does not fit a {h}x{w} image",
                        self.kernel_h, self.kernel_w
                    )));
                }
            }
            DecoderKind::ConvKb => {
                if dim < self.kernel_w || self.filters == 0 {
                    return Err(Error::Dimension(format!(
                        "kernel width {} exceeds dimension {dim}",
                        self.kernel_w
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Any of the four decoders.
#[derive(Clone, Debug)]
pub enum Decoder {
    Transformer(TransformerDecoder),
    Conv(ConvDecoder),
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(config: DecoderConfig, dim: usize, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        config.validate(dim)?;
        Ok(match config.kind {
            DecoderKind::PooledTransformer | DecoderKind::MaskedTransformer => {
                Decoder::Transformer(TransformerDecoder::new(config, dim, params, rng))
            }
            DecoderKind::ConvE | DecoderKind::ConvKb => Decoder::Conv(ConvDecoder::new(config, dim, params, rng)),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        match self {
            Decoder::Transformer(t) => t.config(),
            Decoder::Conv(c) => c.config(),
        }
    }

    /// Scores `queries` against all rows of `entities` (`entity_rows x d`,
    /// reserved rows included); returns `B x entity_rows` logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        entities: Var,
        relations: Var,
        queries: &[Query],
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let max_len = self.config().max_len;
        if let Some(q) = queries.iter().find(|q| q.len() != max_len) {
            return Err(Error::Dimension(format!(
                "query of length {} for L_Q = {max_len}",
                q.len()
            )));
        }
        if queries.is_empty() {
            return Err(Error::Empty("query batch"));
        }
        let seq = embed_tokens(tape, entities, relations, queries)?;
        let mask: Vec<bool> = queries.iter().flat_map(|q| q.mask.iter().copied()).collect();
        let out = match self {
            Decoder::Transformer(t) => t.forward(tape, bind, seq, &mask, queries.len(), dropout_rng),
            Decoder::Conv(c) => c.forward(tape, bind, seq, &mask, queries.len(), dropout_rng),
        };
        Ok(tape.matmul_nt(out, entities))
    }
}

/// Looks up every token of every query, giving a `(B·L_Q) x d` matrix.
fn embed_tokens(tape: &mut Tape, entities: Var, relations: Var, queries: &[Query]) -> Result<Var> {
    let (entity_rows, d) = tape.shape(entities);
    let (relation_rows, dr) = tape.shape(relations);
    if d != dr {
        return Err(Error::Dimension(format!("entity width {d}, relation width {dr}")));
    }
    let table = tape.vstack(&[entities, relations]);
    let mut index = Vec::with_capacity(queries.len() * queries[0].len());
    for q in queries {
        for t in &q.tokens {
            index.push(match *t {
                Token::Entity(e) if e.0 < entity_rows => e.0,
                Token::Relation(r) if r.0 < relation_rows => entity_rows + r.0,
                Token::Entity(e) => {
                    return Err(Error::UnknownId {
                        kind: "entity",
                        id: e.0,
                        len: entity_rows,
                    })
                }
                Token::Relation(r) => {
                    return Err(Error::UnknownId {
                        kind: "relation",
                        id: r.0,
                        len: relation_rows,
                    })
                }
            });
        }
    }
    Ok(tape.gather(table, index))
}

/// Zeroes the rows of padding positions.
pub(crate) fn zero_pads(tape: &mut Tape, seq: Var, mask: &[bool]) -> Var {
    tape.row_scale(seq, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
}
