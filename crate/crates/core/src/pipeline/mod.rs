//! Cleaning, auditing and variant generation over label-level statements.
//!
//! The cleaning order is rarity filter → split → leakage removal → unseen
//! filter. Every operation is a pure function of its input (and seed) and
//! preserves the relative order of the statements it keeps.

mod stats;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::format::{read_statements, write_statements};
use crate::graph::RawStatement;

pub use stats::{compute_stats, DatasetStats};

pub const SPLIT_NAMES: [&str; 3] = ["train", "valid", "test"];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<RawStatement>,
    pub valid: Vec<RawStatement>,
    pub test: Vec<RawStatement>,
}

impl Split {
    pub fn parts(&self) -> [&Vec<RawStatement>; 3] {
        [&self.train, &self.valid, &self.test]
    }

    pub fn parts_mut(&mut self) -> [&mut Vec<RawStatement>; 3] {
        [&mut self.train, &mut self.valid, &mut self.test]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &RawStatement> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Applies `f` to each part independently.
    pub fn map(&self, mut f: impl FnMut(&[RawStatement]) -> Result<Vec<RawStatement>>) -> Result<Split> {
        Ok(Split {
            train: f(&self.train)?,
            valid: f(&self.valid)?,
            test: f(&self.test)?,
        })
    }

    /// Reads `train.txt`, `valid.txt` and `test.txt`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Split {
            train: read_statements(dir.join("train.txt"))?,
            valid: read_statements(dir.join("valid.txt"))?,
            test: read_statements(dir.join("test.txt"))?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, part) in SPLIT_NAMES.iter().zip(self.parts()) {
            write_statements(dir.join(format!("{name}.txt")), part)?;
        }
        Ok(())
    }
}

/// Label-pattern literal detector.
#[derive(Clone, Debug)]
pub struct LiteralDetector {
    pattern: Regex,
}

/// Quoted strings, numbers (optionally signed, decimal or exponent) and
/// ISO-style dates.
pub const DEFAULT_LITERAL_PATTERN: &str =
    r#"^(?:".*"|[+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?|[+-]?\d{1,4}-\d{2}-\d{2}(?:T.*)?)$"#;

impl Default for LiteralDetector {
    fn default() -> Self {
        Self::new(DEFAULT_LITERAL_PATTERN).expect("default pattern compiles")
    }
}

impl LiteralDetector {
    pub fn new(pattern: &str) -> Result<Self> {
        let pattern = Regex::new(pattern).map_err(|e| Error::Config(format!("literal pattern: {e}")))?;
        Ok(Self { pattern })
    }

    pub fn is_literal(&self, label: &str) -> bool {
        self.pattern.is_match(label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralMode {
    /// Drop any statement with a literal object or qualifier value.
    DropStatement,
    /// Drop statements with a literal object; drop only the literal
    /// qualifiers otherwise.
    DropQualifiers,
}

pub fn strip_literal_statements(
    statements: &[RawStatement],
    detector: &LiteralDetector,
    mode: LiteralMode,
) -> Vec<RawStatement> {
    statements
        .iter()
        .filter(|st| !detector.is_literal(&st.object))
        .filter_map(|st| match mode {
            LiteralMode::DropStatement => {
                (!st.qualifiers.iter().any(|(_, v)| detector.is_literal(v))).then(|| st.clone())
            }
            LiteralMode::DropQualifiers => {
                let mut kept = st.clone();
                kept.qualifiers.retain(|(_, v)| !detector.is_literal(v));
                Some(kept)
            }
        })
        .collect()
}

fn entity_mentions(st: &RawStatement) -> impl Iterator<Item = &str> {
    st.entities()
}

/// Drops statements mentioning an entity seen fewer than `min_count` times.
/// With `fixed_point` the filter repeats until nothing changes.
pub fn rarity_filter(statements: &[RawStatement], min_count: usize, fixed_point: bool) -> Vec<RawStatement> {
    let mut current = statements.to_vec();
    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for st in &current {
            for e in entity_mentions(st) {
                *counts.entry(e).or_default() += 1;
            }
        }
        let kept: Vec<RawStatement> = current
            .iter()
            .filter(|st| entity_mentions(st).all(|e| counts[e] >= min_count))
            .cloned()
            .collect();
        let changed = kept.len() != current.len();
        current = kept;
        if !fixed_point || !changed {
            return current;
        }
    }
}

/// Seeded shuffle, then cut into train/valid/test by fractions.
pub fn split_statements(statements: &[RawStatement], train_frac: f64, valid_frac: f64, seed: u64) -> Result<Split> {
    if train_frac < 0.0 || valid_frac < 0.0 || train_frac + valid_frac > 1.0 {
        return Err(Error::Config(format!(
            "invalid split fractions {train_frac}/{valid_frac}"
        )));
    }
    let mut order: Vec<usize> = (0..statements.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = statements.len();
    let n_train = (n as f64 * train_frac).round() as usize;
    let n_valid = ((n as f64 * valid_frac).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| statements[i].clone()).collect()
    };
    Ok(Split {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub train_removed: usize,
    pub valid_removed: usize,
}

fn main_triple(st: &RawStatement) -> (&str, &str, &str) {
    st.main_triple()
}

/// Number of `statements` whose main triple is also a test main triple.
pub fn count_shared_main_triples(statements: &[RawStatement], test: &[RawStatement]) -> usize {
    let test_triples: HashSet<_> = test.iter().map(main_triple).collect();
    statements
        .iter()
        .filter(|s| test_triples.contains(&main_triple(s)))
        .count()
}

/// Deletes train/valid statements sharing a main triple with a test
/// statement.
pub fn remove_leakage(split: &Split) -> (Split, LeakageReport) {
    let test_triples: HashSet<_> = split.test.iter().map(main_triple).collect();
    let keep = |part: &[RawStatement]| -> Vec<RawStatement> {
        part.iter()
            .filter(|s| !test_triples.contains(&main_triple(s)))
            .cloned()
            .collect()
    };
    let train = keep(&split.train);
    let valid = keep(&split.valid);
    let report = LeakageReport {
        train_removed: split.train.len() - train.len(),
        valid_removed: split.valid.len() - valid.len(),
    };
    (
        Split {
            train,
            valid,
            test: split.test.clone(),
        },
        report,
    )
}

/// Deletes test statements that mention an entity or relation (qualifiers
/// included) absent from train ∪ valid. Returns the removal count.
pub fn filter_unseen(split: &Split) -> (Split, usize) {
    let seen_e: HashSet<&str> = split
        .train
        .iter()
        .chain(&split.valid)
        .flat_map(|s| s.entities())
        .collect();
    let seen_r: HashSet<&str> = split
        .train
        .iter()
        .chain(&split.valid)
        .flat_map(|s| s.relations())
        .collect();
    let test: Vec<RawStatement> = split
        .test
        .iter()
        .filter(|s| s.entities().all(|e| seen_e.contains(e)) && s.relations().all(|r| seen_r.contains(r)))
        .cloned()
        .collect();
    let removed = split.test.len() - test.len();
    (
        Split {
            train: split.train.clone(),
            valid: split.valid.clone(),
            test,
        },
        removed,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub leakage: LeakageReport,
    pub unseen_removed: usize,
}

/// Leakage removal followed by the unseen filter.
pub fn clean(split: &Split) -> (Split, CleanReport) {
    let (no_leak, leakage) = remove_leakage(split);
    let (out, unseen_removed) = filter_unseen(&no_leak);
    (
        out,
        CleanReport {
            leakage,
            unseen_removed,
        },
    )
}

/// Keeps every qualified statement plus `round(q(1-t)/t)` seeded-random
/// triple-only ones, so that `q / total ≈ t`.
pub fn sample_by_qualifier_ratio(statements: &[RawStatement], ratio: f64, seed: u64) -> Result<Vec<RawStatement>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::UnreachableRatio {
            requested: ratio,
            reason: "ratio must lie in (0, 1]".into(),
        });
    }
    let plain: Vec<usize> = (0..statements.len())
        .filter(|&i| !statements[i].has_qualifiers())
        .collect();
    let q = statements.len() - plain.len();
    if q == 0 {
        return Err(Error::UnreachableRatio {
            requested: ratio,
            reason: "no statement has qualifiers".into(),
        });
    }
    let wanted = (q as f64 * (1.0 - ratio) / ratio).round() as usize;
    if wanted > plain.len() {
        return Err(Error::UnreachableRatio {
            requested: ratio,
            reason: format!("needs {wanted} triple-only statements, only {} available", plain.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> = index::sample(&mut rng, plain.len(), wanted)
        .into_iter()
        .map(|i| plain[i])
        .collect();
    Ok(statements
        .iter()
        .enumerate()
        .filter(|(i, st)| st.has_qualifiers() || chosen.contains(i))
        .map(|(_, st)| st.clone())
        .collect())
}

/// Statements with more than `n` qualifiers keep a seeded choice of `n`,
/// in their original order.
pub fn truncate_qualifiers(statements: &[RawStatement], n: usize, seed: u64) -> Vec<RawStatement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    statements
        .iter()
        .map(|st| {
            if st.qualifiers.len() <= n {
                return st.clone();
            }
            let mut keep = index::sample(&mut rng, st.qualifiers.len(), n).into_vec();
            keep.sort_unstable();
            let mut out = st.clone();
            out.qualifiers = keep.into_iter().map(|i| st.qualifiers[i].clone()).collect();
            out
        })
        .collect()
}

/// Strips qualifiers and keeps the first statement of each main triple.
pub fn reduce_to_triples(statements: &[RawStatement]) -> Vec<RawStatement> {
    let mut seen = HashSet::new();
    statements
        .iter()
        .filter(|st| seen.insert(main_triple(st)))
        .map(|st| RawStatement::new(st.subject.clone(), st.relation.clone(), st.object.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str, r: &str, o: &str) -> RawStatement {
        RawStatement::new(s, r, o)
    }

    #[test]
    fn literal_modes() {
        let d = LiteralDetector::default();
        assert!(d.is_literal("1879"));
        assert!(d.is_literal("-3.5e2"));
        assert!(d.is_literal("\"hello\""));
        assert!(d.is_literal("1879-03-14"));
        assert!(!d.is_literal("Q937"));
        let input = vec![
            st("Q1", "P1", "42"),
            st("Q1", "P2", "Q2").qualifier("P3", "1999").qualifier("P4", "Q3"),
            st("Q2", "P1", "Q3"),
        ];
        let wp = strip_literal_statements(&input, &d, LiteralMode::DropStatement);
        assert_eq!(wp, vec![input[2].clone()]);
        let wd = strip_literal_statements(&input, &d, LiteralMode::DropQualifiers);
        assert_eq!(wd.len(), 2);
        assert_eq!(wd[0].qualifiers, vec![("P4".to_owned(), "Q3".to_owned())]);
        let clean = vec![input[2].clone()];
        assert_eq!(strip_literal_statements(&clean, &d, LiteralMode::DropStatement), clean);
    }

    #[test]
    fn rarity_reaches_fixed_point() {
        // "d" is rare; dropping its statement makes "c" rare too.
        let input = vec![
            st("a", "r", "b"),
            st("a", "r", "b"),
            st("b", "r", "c"),
            st("c", "r", "d"),
        ];
        let once = rarity_filter(&input, 2, false);
        assert_eq!(once.len(), 3);
        let fixed = rarity_filter(&input, 2, true);
        assert_eq!(fixed, vec![input[0].clone(), input[1].clone()]);
        assert_eq!(rarity_filter(&fixed, 2, true), fixed);
    }

    #[test]
    fn leakage_rules() {
        let split = Split {
            train: vec![st("a", "r", "b").qualifier("q", "c"), st("a", "r", "c")],
            valid: vec![st("a", "r", "b")],
            test: vec![st("a", "r", "b").qualifier("q", "d")],
        };
        let (out, rep) = remove_leakage(&split);
        assert_eq!(out.train, vec![st("a", "r", "c")]);
        assert!(out.valid.is_empty());
        assert_eq!(
            rep,
            LeakageReport {
                train_removed: 1,
                valid_removed: 1
            }
        );
        assert_eq!(count_shared_main_triples(&out.train, &out.test), 0);
        let disjoint = Split {
            train: vec![st("a", "r", "c")],
            valid: vec![],
            test: vec![st("c", "r", "a")],
        };
        assert_eq!(remove_leakage(&disjoint).0, disjoint);
    }

    #[test]
    fn unseen_qualifier_value_is_removed() {
        let split = Split {
            train: vec![st("a", "r", "b").qualifier("q", "c")],
            valid: vec![],
            test: vec![
                st("b", "r", "a").qualifier("q", "z"),
                st("b", "r", "a").qualifier("q", "c"),
            ],
        };
        let (out, removed) = filter_unseen(&split);
        assert_eq!(removed, 1);
        assert_eq!(out.test, vec![split.test[1].clone()]);
    }

    #[test]
    fn ratio_sampler() {
        let mut input = Vec::new();
        for i in 0..100 {
            input.push(st(&format!("e{i}"), "r", "x").qualifier("q", "y"));
            input.push(st(&format!("p{i}"), "r", "x"));
        }
        let half = sample_by_qualifier_ratio(&input, 0.5, 1).unwrap();
        assert_eq!(half.len(), 200);
        let all = sample_by_qualifier_ratio(&input, 1.0, 1).unwrap();
        assert!(all.iter().all(RawStatement::has_qualifiers));
        assert_eq!(all.len(), 100);
        let two_thirds = sample_by_qualifier_ratio(&input, 0.66, 1).unwrap();
        assert_eq!(two_thirds.len(), 100 + 52);
        assert_ne!(two_thirds, sample_by_qualifier_ratio(&input, 0.66, 7).unwrap());
        assert_eq!(two_thirds, sample_by_qualifier_ratio(&input, 0.66, 1).unwrap());
        assert!(matches!(
            sample_by_qualifier_ratio(&input, 0.33, 1),
            Err(Error::UnreachableRatio { .. })
        ));
    }

    #[test]
    fn truncation_is_seeded() {
        let mut s = st("a", "r", "b");
        for i in 0..8 {
            s = s.qualifier(format!("q{i}"), format!("v{i}"));
        }
        let input = vec![s, st("c", "r", "d").qualifier("q", "v")];
        let a = truncate_qualifiers(&input, 6, 11);
        let b = truncate_qualifiers(&input, 6, 11);
        assert_eq!(a, b);
        assert_eq!(a[0].qualifiers.len(), 6);
        assert_eq!(a[1], input[1]);
        let zero = truncate_qualifiers(&input, 0, 11);
        assert_eq!(zero.len(), input.len());
        assert!(zero.iter().all(|s| s.qualifiers.is_empty()));
    }

    #[test]
    fn triple_reduction() {
        let input = vec![
            st("a", "r", "b").qualifier("q", "c"),
            st("a", "r", "b").qualifier("q", "d"),
            st("b", "r", "c"),
        ];
        assert_eq!(reduce_to_triples(&input), vec![st("a", "r", "b"), st("b", "r", "c")]);
        let plain = vec![st("a", "r", "b"), st("b", "r", "c")];
        assert_eq!(reduce_to_triples(&plain), plain);
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let input: Vec<_> = (0..50).map(|i| st(&format!("e{i}"), "r", "x")).collect();
        let a = split_statements(&input, 0.7, 0.1, 3).unwrap();
        assert_eq!(a, split_statements(&input, 0.7, 0.1, 3).unwrap());
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (35, 5, 10));
        let mut all: Vec<_> = a.all().cloned().collect();
        all.sort_by(|x, y| x.subject.cmp(&y.subject));
        let mut sorted = input.clone();
        sorted.sort_by(|x, y| x.subject.cmp(&y.subject));
        assert_eq!(all, sorted);
    }
}
