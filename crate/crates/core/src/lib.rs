//! Hyper-relational knowledge graph embeddings with a qualifier-aware
//! message-passing encoder and transformer or CNN decoders.

pub mod autograd;
pub mod compose;
pub mod dataset;
pub mod decoder;
pub mod encoder;
mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use compose::{gamma, phi, GammaKind, PhiKind};
pub use dataset::Dataset;
pub use decoder::{linearize_query, orient, Decoder, DecoderConfig, DecoderKind, Query, QueryStyle, Target};
pub use encoder::{EdgeIndex, EmbeddingStore, EncoderConfig, StarEEncoder};
pub use error::{Error, Result};
pub use eval::{compute_metrics, evaluate_model, filtered_rank, FilterIndex, Metrics, Rank, RankReport};
pub use graph::{
    augment_edges, build_vocabulary, to_sparse, EdgeDirection, EntityId, HyperGraph, Qualifier, RawStatement,
    RelationId, Statement, Vocabulary,
};
pub use model::{Model, ModelConfig};
pub use params::{ParamId, ParamSet};
pub use tensor::Matrix;
pub use train::{TrainConfig, TrainingData};
