//! Seeded synthetic knowledge graphs for tests, benchmarks and demos.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::RawStatement;
use crate::pipeline::Split;

fn entity(i: usize) -> String {
    format!("e{i}")
}

fn relation(i: usize) -> String {
    format!("r{i}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomGraphConfig {
    pub entities: usize,
    pub relations: usize,
    pub statements: usize,
    /// Share of statements that carry qualifiers.
    pub qualified_fraction: f64,
    pub max_qualifiers: usize,
}

impl Default for RandomGraphConfig {
    fn default() -> Self {
        Self {
            entities: 50,
            relations: 5,
            statements: 200,
            qualified_fraction: 0.5,
            max_qualifiers: 3,
        }
    }
}

/// Distinct random statements. The first `entities` subjects cycle through
/// every entity so the vocabulary always has exactly `entities` entries
/// when `statements >= entities`. Qualifier relations within a statement
/// are distinct.
pub fn random_statements(config: &RandomGraphConfig, seed: u64) -> Vec<RawStatement> {
    assert!(config.entities >= 2 && config.relations >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qualified = (config.statements as f64 * config.qualified_fraction).round() as usize;
    let max_q = config.max_qualifiers.min(config.relations).max(1);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(config.statements);
    while out.len() < config.statements {
        let i = out.len();
        let s = if i < config.entities {
            i
        } else {
            rng.random_range(0..config.entities)
        };
        let mut o = rng.random_range(0..config.entities - 1);
        if o >= s {
            o += 1;
        }
        let mut st = RawStatement::new(entity(s), relation(rng.random_range(0..config.relations)), entity(o));
        if i < qualified {
            let n = rng.random_range(1..=max_q);
            let mut rels: Vec<usize> = (0..config.relations).collect();
            rels.shuffle(&mut rng);
            for &qr in &rels[..n] {
                st = st.qualifier(relation(qr), entity(rng.random_range(0..config.entities)));
            }
        }
        if seen.insert(st.canonicalized()) {
            out.push(st);
        }
    }
    out.shuffle(&mut rng);
    out
}

/// Distinct random triples without qualifiers.
pub fn random_triples(entities: usize, relations: usize, count: usize, seed: u64) -> Vec<RawStatement> {
    random_statements(
        &RandomGraphConfig {
            entities,
            relations,
            statements: count,
            qualified_fraction: 0.0,
            max_qualifiers: 1,
        },
        seed,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualifierSignalConfig {
    pub subjects: usize,
    pub relations: usize,
    /// Qualifier values per relation; every `(s, r)` pair appears once
    /// with each of them.
    pub values: usize,
    pub objects: usize,
    pub test_fraction: f64,
}

impl Default for QualifierSignalConfig {
    fn default() -> Self {
        Self {
            subjects: 30,
            relations: 3,
            values: 4,
            objects: 12,
            test_fraction: 0.2,
        }
    }
}

/// A graph where the object of `(s, r, o, {(q, v)})` is `f(r, v)` for a
/// random table `f` that is injective in `v`. Each `(s, r)` pair therefore
/// has `values` different objects, and only the qualifier value says which.
/// Statements are split into train and test; valid is left empty.
pub fn qualifier_signal(config: &QualifierSignalConfig, seed: u64) -> Split {
    assert!(config.objects >= config.values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Vec::with_capacity(config.relations);
    for _ in 0..config.relations {
        let mut objects: Vec<usize> = (0..config.objects).collect();
        objects.shuffle(&mut rng);
        objects.truncate(config.values);
        table.push(objects);
    }
    let mut all = Vec::new();
    for s in 0..config.subjects {
        for (r, row) in table.iter().enumerate() {
            for (v, &o) in row.iter().enumerate() {
                all.push(
                    RawStatement::new(format!("s{s}"), relation(r), format!("o{o}")).qualifier("q", format!("v{v}")),
                );
            }
        }
    }
    all.shuffle(&mut rng);
    let test = (all.len() as f64 * config.test_fraction).round() as usize;
    let train = all.split_off(test);
    Split {
        train,
        valid: Vec::new(),
        test: all,
    }
}
