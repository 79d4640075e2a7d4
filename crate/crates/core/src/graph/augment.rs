use super::{EntityId, Statement, Vocabulary};
use crate::error::{Error, Result};

/// Appends a qualifier-preserving inverse `(o, r⁻¹, s, Q)` for every base
/// fact, then one `(v, r_self, v)` fact per real entity. `n` facts over `m`
/// entities become `2n + m` facts.
pub fn augment_edges(statements: &[Statement], vocab: &Vocabulary) -> Result<(Vec<Statement>, Vocabulary)> {
    if vocab.is_augmented() {
        return Err(Error::AlreadyAugmented);
    }
    for st in statements {
        vocab.check_statement(st)?;
    }
    let mut out_vocab = vocab.clone();
    out_vocab.augment()?;

    let mut out = Vec::with_capacity(2 * statements.len() + vocab.num_entities());
    out.extend_from_slice(statements);
    for st in statements {
        let inverse = out_vocab.inverse_of(st.relation).expect("base relation has an inverse");
        out.push(Statement {
            subject: st.object,
            relation: inverse,
            object: st.subject,
            qualifiers: st.qualifiers.clone(),
        });
    }
    let self_loop = out_vocab.self_loop().expect("augmented");
    for v in 0..vocab.num_entities() {
        out.push(Statement::triple(EntityId(v), self_loop, EntityId(v)));
    }
    Ok((out, out_vocab))
}
