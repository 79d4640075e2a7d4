use std::collections::HashMap;

use super::{EdgeDirection, EntityId, Qualifier, RelationId, Statement, Vocabulary};
use crate::error::{Error, Result};

/// Main-triple COO matrix, one row per fact: columns `(s, o, r, k)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleMatrix {
    pub subject: Vec<usize>,
    pub object: Vec<usize>,
    pub relation: Vec<usize>,
    pub fact: Vec<usize>,
}

/// Qualifier COO matrix, one row per qualifier pair: columns `(qr, qv, k)`.
/// Rows of the same fact share `k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QualifierMatrix {
    pub relation: Vec<usize>,
    pub value: Vec<usize>,
    pub fact: Vec<usize>,
}

impl TripleMatrix {
    pub fn len(&self) -> usize {
        self.fact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fact.is_empty()
    }
}

impl QualifierMatrix {
    pub fn len(&self) -> usize {
        self.fact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fact.is_empty()
    }
}

/// A hyper-relational graph in twin coordinate-list form. Memory is linear
/// in facts plus qualifier pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperGraph {
    triples: TripleMatrix,
    qualifiers: QualifierMatrix,
    /// Triple row of each fact index.
    fact_row: HashMap<usize, usize>,
    qualifier_counts: Vec<usize>,
    directions: Vec<EdgeDirection>,
    num_entities: usize,
    num_relations: usize,
}

/// Packs augmented statements; fact `k` is the statement's position.
pub fn to_sparse(statements: &[Statement], vocab: &Vocabulary) -> Result<HyperGraph> {
    if !vocab.is_augmented() {
        return Err(Error::NotAugmented);
    }
    let mut triples = TripleMatrix::default();
    let mut qualifiers = QualifierMatrix::default();
    for (k, st) in statements.iter().enumerate() {
        vocab.check_statement(st)?;
        triples.subject.push(st.subject.0);
        triples.object.push(st.object.0);
        triples.relation.push(st.relation.0);
        triples.fact.push(k);
        for q in &st.qualifiers {
            qualifiers.relation.push(q.relation.0);
            qualifiers.value.push(q.value.0);
            qualifiers.fact.push(k);
        }
    }
    HyperGraph::from_parts(triples, qualifiers, vocab)
}

impl HyperGraph {
    /// Validates and indexes raw COO columns.
    pub fn from_parts(triples: TripleMatrix, qualifiers: QualifierMatrix, vocab: &Vocabulary) -> Result<Self> {
        let n = triples.fact.len();
        if triples.subject.len() != n || triples.object.len() != n || triples.relation.len() != n {
            return Err(Error::Dimension("triple matrix columns differ in length".into()));
        }
        let q = qualifiers.fact.len();
        if qualifiers.relation.len() != q || qualifiers.value.len() != q {
            return Err(Error::Dimension("qualifier matrix columns differ in length".into()));
        }
        let mut fact_row = HashMap::with_capacity(n);
        for (row, &k) in triples.fact.iter().enumerate() {
            if fact_row.insert(k, row).is_some() {
                return Err(Error::DuplicateFact(k));
            }
            vocab.check_entity(EntityId(triples.subject[row]))?;
            vocab.check_entity(EntityId(triples.object[row]))?;
            vocab.check_relation(RelationId(triples.relation[row]))?;
        }
        let mut qualifier_counts = vec![0; n];
        for (row, &k) in qualifiers.fact.iter().enumerate() {
            let Some(&t) = fact_row.get(&k) else {
                return Err(Error::DanglingFact { row, fact: k });
            };
            vocab.check_relation(RelationId(qualifiers.relation[row]))?;
            vocab.check_entity(EntityId(qualifiers.value[row]))?;
            qualifier_counts[t] += 1;
        }
        let directions = triples
            .relation
            .iter()
            .map(|&r| vocab.direction(RelationId(r)))
            .collect();
        Ok(Self {
            triples,
            qualifiers,
            fact_row,
            qualifier_counts,
            directions,
            num_entities: vocab.num_entities(),
            num_relations: vocab.num_relations(),
        })
    }

    pub fn triples(&self) -> &TripleMatrix {
        &self.triples
    }

    pub fn qualifiers(&self) -> &QualifierMatrix {
        &self.qualifiers
    }

    pub fn num_facts(&self) -> usize {
        self.triples.len()
    }

    pub fn num_qualifier_rows(&self) -> usize {
        self.qualifiers.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Triple row holding fact `k`.
    pub fn row_of_fact(&self, k: usize) -> Option<usize> {
        self.fact_row.get(&k).copied()
    }

    /// Qualifier count per triple row.
    pub fn qualifier_counts(&self) -> &[usize] {
        &self.qualifier_counts
    }

    /// λ(r) per triple row.
    pub fn directions(&self) -> &[EdgeDirection] {
        &self.directions
    }

    /// Qualifier rows of fact `k`, in row order.
    pub fn qualifier_rows_of(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.qualifiers
            .fact
            .iter()
            .enumerate()
            .filter(move |(_, &f)| f == k)
            .map(|(row, _)| row)
    }

    /// Rebuilds statements in triple-row order, qualifiers in row order.
    pub fn to_statements(&self) -> Vec<Statement> {
        let mut out: Vec<Statement> = (0..self.num_facts())
            .map(|row| {
                Statement::triple(
                    EntityId(self.triples.subject[row]),
                    RelationId(self.triples.relation[row]),
                    EntityId(self.triples.object[row]),
                )
            })
            .collect();
        for row in 0..self.qualifiers.len() {
            let t = self.fact_row[&self.qualifiers.fact[row]];
            out[t].qualifiers.push(Qualifier::new(
                RelationId(self.qualifiers.relation[row]),
                EntityId(self.qualifiers.value[row]),
            ));
        }
        out
    }
}
