//! Statements, vocabulary, edge augmentation and the twin-COO graph layout.

mod augment;
pub mod format;
mod sparse;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use augment::augment_edges;
pub use sparse::{to_sparse, HyperGraph, QualifierMatrix, TripleMatrix};
pub use vocab::{build_vocabulary, Vocabulary, INVERSE_SUFFIX, SELF_LOOP_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Qualifier {
    pub relation: RelationId,
    pub value: EntityId,
}

impl Qualifier {
    pub fn new(relation: RelationId, value: EntityId) -> Self {
        Self { relation, value }
    }
}

/// One hyper-relational fact over vocabulary ids. Qualifier order is kept
/// as given.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Statement {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub qualifiers: Vec<Qualifier>,
}

impl Statement {
    pub fn triple(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
            qualifiers: Vec::new(),
        }
    }

    pub fn with_qualifiers(
        subject: EntityId,
        relation: RelationId,
        object: EntityId,
        qualifiers: Vec<Qualifier>,
    ) -> Self {
        Self {
            subject,
            relation,
            object,
            qualifiers,
        }
    }

    pub fn main_triple(&self) -> (EntityId, RelationId, EntityId) {
        (self.subject, self.relation, self.object)
    }

    /// Qualifiers sorted by `(relation, value)`.
    pub fn sorted_qualifiers(&self) -> Vec<Qualifier> {
        let mut q = self.qualifiers.clone();
        q.sort_unstable();
        q
    }

    /// A copy with qualifiers in canonical order.
    pub fn canonicalized(&self) -> Statement {
        Statement {
            qualifiers: self.sorted_qualifiers(),
            ..self.clone()
        }
    }

    /// The same fact without its qualifiers.
    pub fn without_qualifiers(&self) -> Statement {
        Statement::triple(self.subject, self.relation, self.object)
    }
}

/// A statement over string labels, as read from a statement file.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawStatement {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub qualifiers: Vec<(String, String)>,
}

impl RawStatement {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            qualifiers: Vec::new(),
        }
    }

    pub fn qualifier(mut self, relation: impl Into<String>, value: impl Into<String>) -> Self {
        self.qualifiers.push((relation.into(), value.into()));
        self
    }

    pub fn main_triple(&self) -> (&str, &str, &str) {
        (&self.subject, &self.relation, &self.object)
    }

    pub fn has_qualifiers(&self) -> bool {
        !self.qualifiers.is_empty()
    }

    /// Every entity label in the statement: subject, object, qualifier values.
    pub fn entities(&self) -> impl Iterator<Item = &str> {
        [self.subject.as_str(), self.object.as_str()]
            .into_iter()
            .chain(self.qualifiers.iter().map(|(_, v)| v.as_str()))
    }

    /// Every relation label in the statement: main relation, qualifier relations.
    pub fn relations(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.relation.as_str()).chain(self.qualifiers.iter().map(|(r, _)| r.as_str()))
    }

    pub fn canonicalized(&self) -> RawStatement {
        let mut out = self.clone();
        out.qualifiers.sort();
        out
    }
}

/// Edge direction λ(r), a pure function of the relation id block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeDirection {
    Outgoing,
    Incoming,
    SelfLoop,
}

impl EdgeDirection {
    pub const ALL: [EdgeDirection; 3] = [
        EdgeDirection::Outgoing,
        EdgeDirection::Incoming,
        EdgeDirection::SelfLoop,
    ];

    pub fn index(self) -> usize {
        match self {
            EdgeDirection::Outgoing => 0,
            EdgeDirection::Incoming => 1,
            EdgeDirection::SelfLoop => 2,
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::RawStatement;

    /// The two Albert Einstein education statements.
    pub fn einstein() -> Vec<RawStatement> {
        vec![
            RawStatement::new("Albert Einstein", "educated at", "ETH Zurich")
                .qualifier("academic degree", "Bachelor")
                .qualifier("academic major", "Physics"),
            RawStatement::new("Albert Einstein", "educated at", "University of Zurich")
                .qualifier("academic degree", "Doctorate")
                .qualifier("academic major", "Physics"),
        ]
    }
}
