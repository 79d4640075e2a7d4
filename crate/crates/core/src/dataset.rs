//! Encoded train/valid/test splits over one shared vocabulary.

use std::path::Path;

use crate::error::Result;
use crate::graph::format::read_statements;
use crate::graph::{augment_edges, build_vocabulary, to_sparse, HyperGraph, RawStatement, Statement, Vocabulary};

#[derive(Clone, Debug)]
pub struct Dataset {
    base_vocab: Vocabulary,
    vocab: Vocabulary,
    pub train: Vec<Statement>,
    pub valid: Vec<Statement>,
    pub test: Vec<Statement>,
}

impl Dataset {
    /// Ids are assigned by first occurrence over train, then valid, then test.
    pub fn from_raw(train: &[RawStatement], valid: &[RawStatement], test: &[RawStatement]) -> Result<Self> {
        let all: Vec<RawStatement> = train.iter().chain(valid).chain(test).cloned().collect();
        let base_vocab = build_vocabulary(&all)?;
        let (_, vocab) = augment_edges(&[], &base_vocab)?;
        Ok(Self {
            train: base_vocab.encode_all(train)?,
            valid: base_vocab.encode_all(valid)?,
            test: base_vocab.encode_all(test)?,
            base_vocab,
            vocab,
        })
    }

    /// Reads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let train = read_statements(dir.join("train.txt"))?;
        let valid = read_statements(dir.join("valid.txt"))?;
        let test = read_statements(dir.join("test.txt"))?;
        Self::from_raw(&train, &valid, &test)
    }

    /// The augmented vocabulary (inverse and self-loop relations included).
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn base_vocab(&self) -> &Vocabulary {
        &self.base_vocab
    }

    /// Augmented message-passing graph over `facts`.
    pub fn graph_of(&self, facts: &[Statement]) -> Result<HyperGraph> {
        let (aug, vocab) = augment_edges(facts, &self.base_vocab)?;
        to_sparse(&aug, &vocab)
    }

    pub fn train_graph(&self) -> Result<HyperGraph> {
        self.graph_of(&self.train)
    }

    pub fn all_statements(&self) -> impl Iterator<Item = &Statement> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}
