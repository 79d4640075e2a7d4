//! Embeddings, optional encoder and decoder bundled with their parameters.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::decoder::{Decoder, DecoderConfig, Query};
use crate::encoder::{EdgeIndex, EmbeddingStore, EncoderConfig, StarEEncoder};
use crate::error::{Error, Result};
use crate::graph::Vocabulary;
use crate::params::{Bindings, ParamSet};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Without the encoder the decoder reads the raw embedding tables.
    pub use_encoder: bool,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            use_encoder: true,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        self.encoder.dim
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    store: EmbeddingStore,
    encoder: Option<StarEEncoder>,
    decoder: Decoder,
    num_entities: usize,
    entity_rows: usize,
}

impl Model {
    /// Builds and initialises a model for an augmented vocabulary.
    pub fn new(config: ModelConfig, vocab: &Vocabulary) -> Result<Self> {
        if !vocab.is_augmented() {
            return Err(Error::NotAugmented);
        }
        config.encoder.validate()?;
        let dim = config.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let store = EmbeddingStore::register(&mut params, vocab.entity_rows(), vocab.num_relations(), dim, &mut rng);
        let encoder = if config.use_encoder {
            Some(StarEEncoder::new(config.encoder.clone(), &mut params, &mut rng)?)
        } else {
            None
        };
        let decoder = Decoder::new(config.decoder.clone(), dim, &mut params, &mut rng)?;
        Ok(Self {
            config,
            params,
            store,
            encoder,
            decoder,
            num_entities: vocab.num_entities(),
            entity_rows: vocab.entity_rows(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn encoder(&self) -> Option<&StarEEncoder> {
        self.encoder.as_ref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn entity_rows(&self) -> usize {
        self.entity_rows
    }

    /// `true` for score columns of real entities, `false` for PAD and MASK.
    pub fn column_mask(&self) -> Vec<bool> {
        (0..self.entity_rows).map(|c| c < self.num_entities).collect()
    }

    /// Encoder (if any) followed by the decoder; returns `B x entity_rows`
    /// logits. `dropout_rng` switches training mode on.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        edges: &EdgeIndex,
        queries: &[Query],
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let (v, r) = self.encode_on(
            tape,
            bind,
            edges,
            dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
        )?;
        self.decoder.forward(tape, bind, v, r, queries, dropout_rng)
    }

    fn encode_on(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        edges: &EdgeIndex,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var)> {
        match &self.encoder {
            Some(enc) => {
                if edges.num_entities() != self.num_entities {
                    return Err(Error::Dimension(format!(
                        "graph has {} entities, model has {}",
                        edges.num_entities(),
                        self.num_entities
                    )));
                }
                Ok(enc.encode_store(tape, bind, edges, &self.store, dropout_rng))
            }
            None => Ok((bind.var(self.store.entities), bind.var(self.store.relations))),
        }
    }

    /// Eval-mode `(V̄, R̄)`.
    pub fn encode(&self, edges: &EdgeIndex) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let (v, r) = self.encode_on(&mut tape, &bind, edges, None)?;
        Ok((tape.value(v).clone(), tape.value(r).clone()))
    }

    /// Eval-mode logits from precomputed `(V̄, R̄)`.
    pub fn score_encoded(&self, entities: &Matrix, relations: &Matrix, queries: &[Query]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let v = tape.leaf(entities.clone());
        let r = tape.leaf(relations.clone());
        let s = self.decoder.forward(&mut tape, &bind, v, r, queries, None)?;
        Ok(tape.value(s).clone())
    }

    pub fn score(&self, edges: &EdgeIndex, queries: &[Query]) -> Result<Matrix> {
        let (v, r) = self.encode(edges)?;
        self.score_encoded(&v, &r, queries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path)
    }

    /// Replaces all weights with a checkpoint written by [`Model::save`].
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let loaded = ParamSet::load(path)?;
        self.params.assign_from(&loaded)
    }
}
