//! Filtered ranking, MRR and Hits@k.
//!
//! Ties are resolved by averaging the optimistic and pessimistic rank, so a
//! rank is always a multiple of one half. It is stored as twice its value
//! to stay exact.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::decoder::{linearize_query, orient, Query, QueryStyle, Target};
use crate::error::{Error, Result};
use crate::graph::{EntityId, Statement, Vocabulary};
use crate::model::Model;
use crate::tensor::Matrix;
use crate::train::QueryKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rank {
    twice: u64,
}

impl Rank {
    pub fn from_bounds(optimistic: u64, pessimistic: u64) -> Self {
        assert!(optimistic >= 1 && pessimistic >= optimistic);
        Self {
            twice: optimistic + pessimistic,
        }
    }

    /// `2 · rank`.
    pub fn twice(self) -> u64 {
        self.twice
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    pub fn reciprocal(self) -> f64 {
        2.0 / self.twice as f64
    }

    pub fn within(self, k: u64) -> bool {
        self.twice <= 2 * k
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.twice.is_multiple_of(2) {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}.5", self.twice / 2)
        }
    }
}

/// Rank of `gold` among the unmasked columns that are not other known
/// answers. `mask[c]` is `false` for reserved columns.
pub fn filtered_rank(scores: &[f64], gold: EntityId, filter: &HashSet<EntityId>, mask: &[bool]) -> Result<Rank> {
    if scores.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} scores, {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    if gold.0 >= scores.len() || !mask[gold.0] {
        return Err(Error::GoldMasked(gold.0));
    }
    let g = scores[gold.0];
    if !g.is_finite() {
        return Err(Error::NonFinite(format!("gold score {g}")));
    }
    let mut greater = 0u64;
    let mut equal = 0u64;
    for (c, &s) in scores.iter().enumerate() {
        if c == gold.0 || !mask[c] || filter.contains(&EntityId(c)) {
            continue;
        }
        if s > g {
            greater += 1;
        } else if s == g {
            equal += 1;
        }
    }
    Ok(Rank::from_bounds(1 + greater, 1 + greater + equal))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
}

impl Metrics {
    fn entries(&self) -> [(&'static str, f64); 4] {
        [
            ("mrr", self.mrr),
            ("hits@1", self.hits1),
            ("hits@5", self.hits5),
            ("hits@10", self.hits10),
        ]
    }

    /// Unweighted mean of two metric sets.
    pub fn mean(a: &Metrics, b: &Metrics) -> Metrics {
        Metrics {
            count: a.count + b.count,
            mrr: (a.mrr + b.mrr) / 2.0,
            hits1: (a.hits1 + b.hits1) / 2.0,
            hits5: (a.hits5 + b.hits5) / 2.0,
            hits10: (a.hits10 + b.hits10) / 2.0,
        }
    }
}

pub fn compute_metrics(ranks: &[Rank]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    let n = ranks.len() as f64;
    let frac = |k| ranks.iter().filter(|r| r.within(k)).count() as f64 / n;
    Ok(Metrics {
        count: ranks.len(),
        mrr: ranks.iter().map(|r| r.reciprocal()).sum::<f64>() / n,
        hits1: frac(1),
        hits5: frac(5),
        hits10: frac(10),
    })
}

/// All true completions of every oriented query key over a set of splits.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    sets: HashMap<(QueryKey, Target), HashSet<EntityId>>,
}

impl FilterIndex {
    pub fn build<'a>(statements: impl IntoIterator<Item = &'a Statement>, vocab: &Vocabulary) -> Result<Self> {
        let mut sets: HashMap<(QueryKey, Target), HashSet<EntityId>> = HashMap::new();
        for st in statements {
            for target in Target::BOTH {
                let o = orient(st, target, vocab)?;
                sets.entry((QueryKey::of(&o), target)).or_default().insert(o.object);
            }
        }
        Ok(Self { sets })
    }

    pub fn get(&self, key: &QueryKey, target: Target) -> Option<&HashSet<EntityId>> {
        self.sets.get(&(key.clone(), target))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Anything that maps a batch of queries to `B x entity_rows` scores.
pub trait Scorer {
    fn score(&self, queries: &[Query]) -> Result<Matrix>;
    /// `true` for rankable columns.
    fn column_mask(&self) -> Vec<bool>;
}

/// A model with its graph encoding computed once.
pub struct ModelScorer<'a> {
    model: &'a Model,
    entities: Matrix,
    relations: Matrix,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, edges: &crate::encoder::EdgeIndex) -> Result<Self> {
        let (entities, relations) = model.encode(edges)?;
        Ok(Self {
            model,
            entities,
            relations,
        })
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, queries: &[Query]) -> Result<Matrix> {
        self.model.score_encoded(&self.entities, &self.relations, queries)
    }

    fn column_mask(&self) -> Vec<bool> {
        self.model.column_mask()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub max_len: usize,
    pub style: QueryStyle,
    pub batch_size: usize,
    /// Linearise queries without their qualifiers (filter keys keep them).
    pub drop_qualifiers: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_len: 15,
            style: QueryStyle::Plain,
            batch_size: 128,
            drop_qualifiers: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub statement: usize,
    pub target: Target,
    pub rank: Rank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub object: Metrics,
    pub subject: Metrics,
    pub mean: Metrics,
    pub ranks: Vec<QueryRank>,
}

#[derive(Serialize)]
struct MetricRecord<'a> {
    metric: &'a str,
    direction: &'a str,
    value: f64,
}

impl RankReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "direction", "count", "mrr", "hits@1", "hits@5", "hits@10"
        );
        for (name, m) in [
            ("object", &self.object),
            ("subject", &self.subject),
            ("mean", &self.mean),
        ] {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name, m.count, m.mrr, m.hits1, m.hits5, m.hits10
            );
        }
        out
    }

    /// One JSON object per line: `{"metric", "direction", "value"}`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (direction, m) in [
            ("object", &self.object),
            ("subject", &self.subject),
            ("mean", &self.mean),
        ] {
            for (metric, value) in m.entries() {
                let rec = MetricRecord {
                    metric,
                    direction,
                    value,
                };
                out.push_str(&serde_json::to_string(&rec).expect("plain record"));
                out.push('\n');
            }
        }
        out
    }
}

/// Ranks both ends of every statement in `statements`.
pub fn evaluate_model(
    scorer: &dyn Scorer,
    statements: &[Statement],
    vocab: &Vocabulary,
    filter: &FilterIndex,
    options: &EvalOptions,
) -> Result<RankReport> {
    let mask = scorer.column_mask();
    let mut ranks = Vec::with_capacity(2 * statements.len());
    let mut per_target: [Vec<Rank>; 2] = Default::default();
    for (ti, target) in Target::BOTH.into_iter().enumerate() {
        let mut pending: Vec<(usize, Query, &HashSet<EntityId>)> = Vec::new();
        let mut flush = |pending: &mut Vec<(usize, Query, &HashSet<EntityId>)>| -> Result<()> {
            if pending.is_empty() {
                return Ok(());
            }
            let queries: Vec<Query> = pending.iter().map(|(_, q, _)| q.clone()).collect();
            let scores = scorer.score(&queries)?;
            for (row, (idx, q, known)) in pending.drain(..).enumerate() {
                let rank = filtered_rank(scores.row(row), q.target, known, &mask)?;
                per_target[ti].push(rank);
                ranks.push(QueryRank {
                    statement: idx,
                    target,
                    rank,
                });
            }
            Ok(())
        };
        for (idx, st) in statements.iter().enumerate() {
            let oriented = orient(st, target, vocab)?;
            let key = QueryKey::of(&oriented);
            let known = filter
                .get(&key, target)
                .ok_or_else(|| Error::MissingFilterKey(format!("{target} query for statement {idx}")))?;
            if !known.contains(&oriented.object) {
                return Err(Error::MissingFilterKey(format!(
                    "gold {} of statement {idx} absent from its filter set",
                    oriented.object
                )));
            }
            let shown = if options.drop_qualifiers {
                oriented.without_qualifiers()
            } else {
                oriented
            };
            pending.push((
                idx,
                linearize_query(&shown, vocab, options.max_len, options.style)?,
                known,
            ));
            if pending.len() >= options.batch_size.max(1) {
                flush(&mut pending)?;
            }
        }
        flush(&mut pending)?;
    }
    let object = compute_metrics(&per_target[0])?;
    let subject = compute_metrics(&per_target[1])?;
    Ok(RankReport {
        mean: Metrics::mean(&object, &subject),
        object,
        subject,
        ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> HashSet<EntityId> {
        ids.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn rank_examples() {
        let s = [0.9, 0.5, 0.1];
        let m = [true; 3];
        assert_eq!(filtered_rank(&s, EntityId(0), &set(&[]), &m).unwrap().value(), 1.0);
        assert_eq!(filtered_rank(&s, EntityId(2), &set(&[1]), &m).unwrap().value(), 2.0);
        let flat = [0.3; 3];
        for g in 0..3 {
            assert_eq!(filtered_rank(&flat, EntityId(g), &set(&[]), &m).unwrap().value(), 2.0);
        }
    }

    #[test]
    fn gold_may_sit_in_its_own_filter() {
        let r = filtered_rank(&[0.1, 0.9], EntityId(0), &set(&[0, 1]), &[true, true]).unwrap();
        assert_eq!(r.value(), 1.0);
    }

    #[test]
    fn masked_gold_is_an_error() {
        assert!(matches!(
            filtered_rank(&[0.1, 0.9], EntityId(1), &set(&[]), &[true, false]),
            Err(Error::GoldMasked(1))
        ));
    }

    #[test]
    fn metric_arithmetic() {
        let ranks = [
            Rank::from_bounds(1, 1),
            Rank::from_bounds(2, 2),
            Rank::from_bounds(10, 10),
        ];
        let m = compute_metrics(&ranks).unwrap();
        assert!((m.mrr - (1.0 + 0.5 + 0.1) / 3.0).abs() < 1e-15);
        assert!((m.hits1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.hits10, 1.0);
        let ones = compute_metrics(&[Rank::from_bounds(1, 1); 4]).unwrap();
        assert_eq!((ones.mrr, ones.hits1, ones.hits5, ones.hits10), (1.0, 1.0, 1.0, 1.0));
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn half_ranks_display_and_cutoffs() {
        let r = Rank::from_bounds(1, 2);
        assert_eq!(r.to_string(), "1.5");
        assert!(!r.within(1));
        assert!(r.within(2));
    }
}
