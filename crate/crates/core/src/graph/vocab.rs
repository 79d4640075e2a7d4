use std::collections::HashMap;

use super::{EdgeDirection, EntityId, Qualifier, RawStatement, RelationId, Statement};
use crate::error::{Error, Result};

/// Appended to a base relation label to name its inverse.
pub const INVERSE_SUFFIX: &str = "⁻¹";
/// Label of the single self-loop relation.
pub const SELF_LOOP_LABEL: &str = "⟲self";

/// Bidirectional label ↔ id maps for entities and relations.
///
/// Relation ids are laid out as base relations `[0, n)`, inverses `[n, 2n)`
/// and the self-loop relation `2n` once [`augment_edges`](super::augment_edges)
/// has run. Two reserved entity ids, PAD and MASK, sit right after the real
/// entities; they never appear in statements.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    base_relations: usize,
    augmented: bool,
}

/// Assigns ids in order of first occurrence (subject, relation, object, then
/// qualifier pairs left to right).
pub fn build_vocabulary(statements: &[RawStatement]) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::default();
    for st in statements {
        vocab.intern_entity(&st.subject)?;
        vocab.intern_relation(&st.relation)?;
        vocab.intern_entity(&st.object)?;
        for (qr, qv) in &st.qualifiers {
            vocab.intern_relation(qr)?;
            vocab.intern_entity(qv)?;
        }
    }
    vocab.base_relations = vocab.relations.len();
    Ok(vocab)
}

impl Vocabulary {
    fn intern_entity(&mut self, label: &str) -> Result<EntityId> {
        if let Some(&id) = self.entity_index.get(label) {
            return Ok(id);
        }
        if self.relation_index.contains_key(label) {
            return Err(Error::NamespaceCollision(label.to_owned()));
        }
        let id = EntityId(self.entities.len());
        self.entities.push(label.to_owned());
        self.entity_index.insert(label.to_owned(), id);
        Ok(id)
    }

    fn intern_relation(&mut self, label: &str) -> Result<RelationId> {
        if let Some(&id) = self.relation_index.get(label) {
            return Ok(id);
        }
        if self.entity_index.contains_key(label) {
            return Err(Error::NamespaceCollision(label.to_owned()));
        }
        let id = RelationId(self.relations.len());
        self.relations.push(label.to_owned());
        self.relation_index.insert(label.to_owned(), id);
        Ok(id)
    }

    /// Adds `n` inverse relations and one self-loop relation.
    pub(crate) fn augment(&mut self) -> Result<()> {
        if self.augmented {
            return Err(Error::AlreadyAugmented);
        }
        let n = self.base_relations;
        for i in 0..n {
            let label = format!("{}{}", self.relations[i], INVERSE_SUFFIX);
            if self.relation_index.contains_key(&label) || self.entity_index.contains_key(&label) {
                return Err(Error::NamespaceCollision(label));
            }
            self.intern_relation(&label)?;
        }
        if self.relation_index.contains_key(SELF_LOOP_LABEL) || self.entity_index.contains_key(SELF_LOOP_LABEL) {
            return Err(Error::NamespaceCollision(SELF_LOOP_LABEL.to_owned()));
        }
        self.intern_relation(SELF_LOOP_LABEL)?;
        self.augmented = true;
        Ok(())
    }

    /// Number of real entities (reserved ids excluded).
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Entity rows including the reserved PAD and MASK ids.
    pub fn entity_rows(&self) -> usize {
        self.entities.len() + 2
    }

    pub fn pad_id(&self) -> EntityId {
        EntityId(self.entities.len())
    }

    pub fn mask_id(&self) -> EntityId {
        EntityId(self.entities.len() + 1)
    }

    pub fn is_reserved(&self, id: EntityId) -> bool {
        id.0 >= self.entities.len()
    }

    /// All relation ids, derived ones included.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn num_derived_relations(&self) -> usize {
        self.relations.len() - self.base_relations
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn entity_label(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.0).map(String::as_str)
    }

    pub fn relation_label(&self, id: RelationId) -> Option<&str> {
        self.relations.get(id.0).map(String::as_str)
    }

    pub fn self_loop(&self) -> Option<RelationId> {
        self.augmented.then_some(RelationId(2 * self.base_relations))
    }

    /// Maps a base relation to its inverse and an inverse back to its base.
    pub fn inverse_of(&self, r: RelationId) -> Option<RelationId> {
        if !self.augmented {
            return None;
        }
        let n = self.base_relations;
        match r.0 {
            i if i < n => Some(RelationId(i + n)),
            i if i < 2 * n => Some(RelationId(i - n)),
            _ => None,
        }
    }

    /// λ(r). Unaugmented vocabularies classify every relation as outgoing.
    pub fn direction(&self, r: RelationId) -> EdgeDirection {
        let n = self.base_relations;
        if r.0 < n {
            EdgeDirection::Outgoing
        } else if r.0 < 2 * n {
            EdgeDirection::Incoming
        } else {
            EdgeDirection::SelfLoop
        }
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.0 < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "entity",
                id: id.0,
                len: self.entities.len(),
            })
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.0 < self.relations.len() {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "relation",
                id: id.0,
                len: self.relations.len(),
            })
        }
    }

    pub fn check_statement(&self, st: &Statement) -> Result<()> {
        self.check_entity(st.subject)?;
        self.check_relation(st.relation)?;
        self.check_entity(st.object)?;
        for q in &st.qualifiers {
            self.check_relation(q.relation)?;
            self.check_entity(q.value)?;
        }
        Ok(())
    }

    fn lookup_entity(&self, label: &str) -> Result<EntityId> {
        self.entity(label).ok_or_else(|| Error::UnknownLabel {
            kind: "entity",
            label: label.to_owned(),
        })
    }

    fn lookup_relation(&self, label: &str) -> Result<RelationId> {
        self.relation(label).ok_or_else(|| Error::UnknownLabel {
            kind: "relation",
            label: label.to_owned(),
        })
    }

    pub fn encode(&self, st: &RawStatement) -> Result<Statement> {
        let qualifiers = st
            .qualifiers
            .iter()
            .map(|(qr, qv)| Ok(Qualifier::new(self.lookup_relation(qr)?, self.lookup_entity(qv)?)))
            .collect::<Result<_>>()?;
        Ok(Statement {
            subject: self.lookup_entity(&st.subject)?,
            relation: self.lookup_relation(&st.relation)?,
            object: self.lookup_entity(&st.object)?,
            qualifiers,
        })
    }

    pub fn encode_all(&self, statements: &[RawStatement]) -> Result<Vec<Statement>> {
        statements.iter().map(|s| self.encode(s)).collect()
    }

    pub fn decode(&self, st: &Statement) -> Result<RawStatement> {
        self.check_statement(st)?;
        Ok(RawStatement {
            subject: self.entities[st.subject.0].clone(),
            relation: self.relations[st.relation.0].clone(),
            object: self.entities[st.object.0].clone(),
            qualifiers: st
                .qualifiers
                .iter()
                .map(|q| (self.relations[q.relation.0].clone(), self.entities[q.value.0].clone()))
                .collect(),
        })
    }
}
