use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{count_shared_main_triples, Split};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub statements: usize,
    pub qualified: usize,
    pub qualified_pct: f64,
    pub entities: usize,
    pub relations: usize,
    /// Entities that never occur as a subject or object.
    pub qualifier_only_entities: usize,
    /// Relations that never occur as a main relation.
    pub qualifier_only_relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Qualifier count → number of statements.
    pub qualifier_histogram: BTreeMap<usize, usize>,
    /// In-degree (statements with the entity as object) → number of
    /// entities, over all entities including qualifier-only ones.
    pub in_degree_histogram: BTreeMap<usize, usize>,
    /// Train/valid statements sharing a main triple with a test statement.
    pub shared_main_triples: usize,
    /// Test statements `(s, r, o)` whose direct inverse `(o, r, s)` is a
    /// train main triple.
    pub inverse_leakage: usize,
    pub inverse_leakage_pct: f64,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

pub fn compute_stats(split: &Split) -> DatasetStats {
    let statements = split.len();
    let qualified = split.all().filter(|s| s.has_qualifiers()).count();
    let mut main_entities: HashSet<&str> = HashSet::new();
    let mut all_entities: HashSet<&str> = HashSet::new();
    let mut main_relations: HashSet<&str> = HashSet::new();
    let mut all_relations: HashSet<&str> = HashSet::new();
    let mut in_degree: HashMap<&str, usize> = HashMap::new();
    let mut qualifier_histogram = BTreeMap::new();
    for st in split.all() {
        main_entities.insert(&st.subject);
        main_entities.insert(&st.object);
        main_relations.insert(&st.relation);
        all_entities.extend(st.entities());
        all_relations.extend(st.relations());
        *in_degree.entry(&st.object).or_default() += 1;
        *qualifier_histogram.entry(st.qualifiers.len()).or_default() += 1;
    }
    let mut in_degree_histogram = BTreeMap::new();
    for e in &all_entities {
        *in_degree_histogram
            .entry(in_degree.get(e).copied().unwrap_or(0))
            .or_default() += 1;
    }
    let train_triples: HashSet<(&str, &str, &str)> = split.train.iter().map(|s| s.main_triple()).collect();
    let inverse_leakage = split
        .test
        .iter()
        .filter(|s| train_triples.contains(&(s.object.as_str(), s.relation.as_str(), s.subject.as_str())))
        .count();
    DatasetStats {
        statements,
        qualified,
        qualified_pct: pct(qualified, statements),
        entities: all_entities.len(),
        relations: all_relations.len(),
        qualifier_only_entities: all_entities.difference(&main_entities).count(),
        qualifier_only_relations: all_relations.difference(&main_relations).count(),
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
        qualifier_histogram,
        in_degree_histogram,
        shared_main_triples: count_shared_main_triples(&split.train, &split.test)
            + count_shared_main_triples(&split.valid, &split.test),
        inverse_leakage,
        inverse_leakage_pct: pct(inverse_leakage, split.test.len()),
    }
}

#[derive(Serialize)]
struct Record<'a> {
    stat: &'a str,
    value: f64,
}

impl DatasetStats {
    /// A one-row table in the layout of the usual dataset summary.
    pub fn to_table(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>18} {:>9} {:>6} {:>11} {:>11} {:>9} {:>9} {:>9}",
            "dataset",
            "statements",
            "w/quals (%)",
            "entities",
            "rels",
            "E in quals",
            "R in quals",
            "train",
            "valid",
            "test"
        );
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>18} {:>9} {:>6} {:>11} {:>11} {:>9} {:>9} {:>9}",
            name,
            self.statements,
            format!("{} ({:.1}%)", self.qualified, self.qualified_pct),
            self.entities,
            self.relations,
            self.qualifier_only_entities,
            self.qualifier_only_relations,
            self.train,
            self.valid,
            self.test
        );
        let _ = writeln!(
            out,
            "shared main triples: {}   inverse leakage: {} ({:.2}% of test)",
            self.shared_main_triples, self.inverse_leakage, self.inverse_leakage_pct
        );
        out
    }

    /// One JSON object per line: `{"stat", "value"}`; histograms become
    /// `qualifiers=<k>` and `in_degree=<k>` records.
    pub fn to_json_lines(&self) -> String {
        let mut records: Vec<(String, f64)> = vec![
            ("statements".into(), self.statements as f64),
            ("qualified".into(), self.qualified as f64),
            ("qualified_pct".into(), self.qualified_pct),
            ("entities".into(), self.entities as f64),
            ("relations".into(), self.relations as f64),
            ("qualifier_only_entities".into(), self.qualifier_only_entities as f64),
            ("qualifier_only_relations".into(), self.qualifier_only_relations as f64),
            ("train".into(), self.train as f64),
            ("valid".into(), self.valid as f64),
            ("test".into(), self.test as f64),
            ("shared_main_triples".into(), self.shared_main_triples as f64),
            ("inverse_leakage".into(), self.inverse_leakage as f64),
            ("inverse_leakage_pct".into(), self.inverse_leakage_pct),
        ];
        records.extend(
            self.qualifier_histogram
                .iter()
                .map(|(k, v)| (format!("qualifiers={k}"), *v as f64)),
        );
        records.extend(
            self.in_degree_histogram
                .iter()
                .map(|(k, v)| (format!("in_degree={k}"), *v as f64)),
        );
        let mut out = String::new();
        for (stat, value) in &records {
            out.push_str(&serde_json::to_string(&Record { stat, value: *value }).expect("plain record"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::RawStatement;

    #[test]
    fn empty_split() {
        let s = compute_stats(&Split::default());
        assert_eq!(s, DatasetStats::default());
    }

    #[test]
    fn counts_and_histograms() {
        let split = Split {
            train: vec![
                RawStatement::new("a", "r", "b").qualifier("q", "c"),
                RawStatement::new("b", "r", "a"),
            ],
            valid: vec![RawStatement::new("a", "r", "c")],
            test: vec![RawStatement::new("a", "r", "b"), RawStatement::new("c", "s", "a")],
        };
        let s = compute_stats(&split);
        assert_eq!((s.statements, s.qualified), (5, 1));
        assert_eq!((s.entities, s.relations), (3, 3));
        assert_eq!((s.qualifier_only_entities, s.qualifier_only_relations), (0, 1));
        assert_eq!(s.qualifier_histogram.values().sum::<usize>(), 5);
        assert_eq!(s.in_degree_histogram.values().sum::<usize>(), 3);
        assert_eq!(s.shared_main_triples, 1);
        // (a, r, b) in test has its inverse (b, r, a) in train
        assert_eq!(s.inverse_leakage, 1);
        assert!((s.inverse_leakage_pct - 50.0).abs() < 1e-12);
        assert!(s.to_table("toy").contains("1 (20.0%)"));
        assert_eq!(s.to_json_lines().lines().count(), 13 + 2 + s.in_degree_histogram.len());
    }
}
