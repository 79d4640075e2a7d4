//! Named parameter storage and the text checkpoint format.
//!
//! A checkpoint starts with the line `stare-checkpoint 1`, followed by one
//! block per parameter: a `name rows cols` header line and `rows` lines of
//! `cols` space-separated values in row-major order. Values are written with
//! the shortest representation that parses back to the same `f64`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &str = "stare-checkpoint 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, ParamId>,
}

/// Tape leaves for every parameter of a [`ParamSet`].
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// programming error in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings {
            vars: self.values.iter().map(|m| tape.leaf(m.clone())).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (name, m) in self.iter() {
            let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing checkpoint header".into()));
        }
        let mut set = ParamSet::new();
        while let Some(header) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad(format!("malformed block header {header:?}")));
            };
            let parse = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{name}: {e}")));
            let (rows, cols) = (parse(rows)?, parse(cols)?);
            if set.index.contains_key(name) {
                return Err(bad(format!("duplicate parameter {name}")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("{name}: truncated at row {r}")))?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|e| bad(format!("{name}: {e}")))?);
                }
                if data.len() - before != cols {
                    return Err(bad(format!(
                        "{name}: row {r} has {} values, expected {cols}",
                        data.len() - before
                    )));
                }
            }
            set.add(name, Matrix::from_vec(rows, cols, data));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Overwrites every parameter with the same-named entry of `other`,
    /// requiring identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                other.len(),
                self.len()
            )));
        }
        for i in 0..self.len() {
            let name = &self.names[i];
            let src = other
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
            if src.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    src.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        p.add("v", Matrix::random_normal(3, 4, 1.0, &mut rng));
        p.add(
            "layer0.w_in",
            Matrix::from_rows(&[vec![1e-300, -0.0], vec![f64::MAX, 1.0 / 3.0]]),
        );
        let back = ParamSet::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn assign_checks_shapes() {
        let mut a = ParamSet::new();
        a.add("w", Matrix::zeros(2, 2));
        let mut b = ParamSet::new();
        b.add("w", Matrix::zeros(2, 3));
        assert!(a.assign_from(&b).is_err());
        let mut c = ParamSet::new();
        c.add("w", Matrix::filled(2, 2, 1.5));
        a.assign_from(&c).unwrap();
        assert_eq!(a.by_name("w").unwrap().get(1, 1), 1.5);
    }

    #[test]
    fn rejects_truncated_payload() {
        let text = format!("{MAGIC}\nw 2 2\n1 2\n");
        assert!(matches!(ParamSet::from_text(&text), Err(Error::Checkpoint(_))));
        let text = format!("{MAGIC}\nw 1 2\n1 2 3\n");
        assert!(ParamSet::from_text(&text).is_err());
    }
}
