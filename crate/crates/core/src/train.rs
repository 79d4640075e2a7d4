//! 1-N training with label-smoothed binary cross entropy, Adam, and a
//! finite-difference gradient checker.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{bce_term, Tape, Var};
use crate::decoder::{linearize_query, orient, Query, QueryStyle, Target};
use crate::encoder::EdgeIndex;
use crate::error::{Error, Result};
use crate::graph::{EntityId, Qualifier, RelationId, Statement, Vocabulary};
use crate::model::Model;
use crate::params::{Bindings, ParamSet};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 128,
            learning_rate: 1e-4,
            label_smoothing: 0.1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1]",
                self.label_smoothing
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// `(anchor, relation, sorted qualifiers)` of an oriented query; subject
/// queries carry the inverse relation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryKey {
    pub anchor: EntityId,
    pub relation: RelationId,
    pub qualifiers: Vec<Qualifier>,
}

impl QueryKey {
    pub fn of(oriented: &Statement) -> Self {
        Self {
            anchor: oriented.subject,
            relation: oriented.relation,
            qualifiers: oriented.sorted_qualifiers(),
        }
    }
}

/// True completions of every query key, in first-seen order.
#[derive(Clone, Debug, Default)]
pub struct LabelIndex {
    keys: Vec<QueryKey>,
    answers: HashMap<QueryKey, Vec<EntityId>>,
}

impl LabelIndex {
    /// Indexes both directions of every base statement.
    pub fn build(statements: &[Statement], vocab: &Vocabulary) -> Result<Self> {
        let mut index = Self::default();
        for st in statements {
            for target in Target::BOTH {
                let o = orient(st, target, vocab)?;
                index.insert(QueryKey::of(&o), o.object);
            }
        }
        Ok(index)
    }

    fn insert(&mut self, key: QueryKey, answer: EntityId) {
        match self.answers.get_mut(&key) {
            Some(list) => {
                if !list.contains(&answer) {
                    list.push(answer);
                }
            }
            None => {
                self.keys.push(key.clone());
                self.answers.insert(key, vec![answer]);
            }
        }
    }

    pub fn keys(&self) -> &[QueryKey] {
        &self.keys
    }

    pub fn answers(&self, key: &QueryKey) -> Option<&[EntityId]> {
        self.answers.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Smoothed 1-N targets over `entity_rows` columns: `(1-ε)·y + ε/|𝒱|`
/// where `|𝒱|` counts real entities. Reserved columns get the negative
/// value and are masked out of the loss elsewhere.
pub fn build_labels(
    key: &QueryKey,
    index: &LabelIndex,
    num_entities: usize,
    entity_rows: usize,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let answers = index.answers(key).filter(|a| !a.is_empty()).ok_or(Error::NoPositive)?;
    let base = epsilon / num_entities as f64;
    let mut labels = vec![base; entity_rows];
    for a in answers {
        labels[a.0] = (1.0 - epsilon) + base;
    }
    Ok(labels)
}

/// Mean stable BCE over the columns where `col_mask` is `true`.
pub fn bce_loss(scores: &[f64], labels: &[f64], col_mask: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.len() != col_mask.len() {
        return Err(Error::Dimension(format!(
            "{} scores, {} labels, {} mask entries",
            scores.len(),
            labels.len(),
            col_mask.len()
        )));
    }
    if let Some(x) = scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("score {x}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((&x, &t), &m) in scores.iter().zip(labels).zip(col_mask) {
        if m {
            total += bce_term(x, t);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("loss columns"));
    }
    Ok(total / count as f64)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|(_, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads[i]` is `None` for parameters that did not
    /// influence the loss, which are treated as zero-gradient.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Option<Matrix>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let (m, v) = (self.m[i].as_mut_slice(), self.v[i].as_mut_slice());
            let g = grads[i].as_ref().map(Matrix::as_slice);
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p.as_mut_slice()[j] -= update;
            }
        }
    }
}

/// One training example: a linearised query and its smoothed targets.
#[derive(Clone, Debug)]
pub struct Example {
    pub key: QueryKey,
    pub query: Query,
    pub labels: Vec<f64>,
}

/// Everything a training run needs besides the model.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub edges: EdgeIndex,
    pub examples: Vec<Example>,
}

/// Builds one example per distinct query key of `train` (both directions).
pub fn prepare_examples(
    train: &[Statement],
    vocab: &Vocabulary,
    max_len: usize,
    style: QueryStyle,
    epsilon: f64,
) -> Result<Vec<Example>> {
    let index = LabelIndex::build(train, vocab)?;
    index
        .keys()
        .iter()
        .map(|key| {
            let st = Statement {
                subject: key.anchor,
                relation: key.relation,
                object: index.answers(key).ok_or(Error::NoPositive)?[0],
                qualifiers: key.qualifiers.clone(),
            };
            Ok(Example {
                key: key.clone(),
                query: linearize_query(&st, vocab, max_len, style)?,
                labels: build_labels(key, &index, vocab.num_entities(), vocab.entity_rows(), epsilon)?,
            })
        })
        .collect()
}

fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    bind: &Bindings,
    edges: &EdgeIndex,
    batch: &[&Example],
    col_mask: &[bool],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let queries: Vec<Query> = batch.iter().map(|e| e.query.clone()).collect();
    let rows: Vec<Vec<f64>> = batch.iter().map(|e| e.labels.clone()).collect();
    let logits = model.forward(
        tape,
        bind,
        edges,
        &queries,
        dropout_rng.map(|r| r as &mut dyn rand::RngCore),
    )?;
    Ok(tape.bce_with_logits(logits, Matrix::from_rows(&rows), col_mask))
}

/// Forward over the full training graph plus `batch`, backward, Adam.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    edges: &EdgeIndex,
    batch: &[&Example],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let col_mask = model.column_mask();
    let mut tape = Tape::new();
    let bind = model.params().bind(&mut tape);
    let loss = batch_loss(model, &mut tape, &bind, edges, batch, &col_mask, Some(rng))?;
    let value = tape.value(loss).as_slice()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let mut grads = tape.backward(loss);
    let per_param: Vec<Option<Matrix>> = bind.vars().iter().map(|&v| grads.take(v)).collect();
    adam.update(model.params_mut(), &per_param, lr);
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Runs `config.epochs` epochs over shuffled mini-batches. `on_epoch` sees
/// each epoch's log and the current model.
pub fn train(
    model: &mut Model,
    data: &TrainingData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if data.examples.is_empty() && config.epochs > 0 {
        return Err(Error::Empty("training examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.params());
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.examples[i]).collect();
            total += train_step(model, &mut adam, &data.edges, &batch, config.learning_rate, &mut rng)?;
            batches += 1;
        }
        let log = EpochLog {
            epoch,
            mean_loss: total / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() <= tolerance
    }
}

/// Loss value and per-parameter gradients from one reverse pass.
pub fn analytic_gradients(
    params: &ParamSet,
    build: impl Fn(&mut Tape, &Bindings) -> Result<Var>,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let loss = build(&mut tape, &bind)?;
    let mut grads = tape.backward(loss);
    let out = params
        .iter()
        .zip(bind.vars())
        .map(|((_, p), &v)| grads.take(v).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    Ok((tape.value(loss).as_slice()[0], out))
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` for every scalar.
pub fn numeric_gradients(params: &ParamSet, step: f64, loss: impl Fn(&ParamSet) -> Result<f64>) -> Result<Vec<Matrix>> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let (rows, cols) = params.get(id).shape();
        let mut g = Matrix::zeros(rows, cols);
        for j in 0..rows * cols {
            let orig = probe.get(id).as_slice()[j];
            probe.get_mut(id).as_mut_slice()[j] = orig + step;
            let plus = loss(&probe)?;
            probe.get_mut(id).as_mut_slice()[j] = orig - step;
            let minus = loss(&probe)?;
            probe.get_mut(id).as_mut_slice()[j] = orig;
            g.as_mut_slice()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Per-parameter maximum relative error between two gradient sets.
pub fn compare_gradients(params: &ParamSet, loss: f64, analytic: &[Matrix], numeric: &[Matrix]) -> GradCheckReport {
    let checks = params
        .ids()
        .zip(analytic.iter().zip(numeric))
        .map(|(id, (a, n))| ParamCheck {
            name: params.name(id).to_owned(),
            scalars: a.len(),
            max_relative_error: a
                .as_slice()
                .iter()
                .zip(n.as_slice())
                .map(|(&a, &n)| relative_error(a, n))
                .fold(0.0, f64::max),
        })
        .collect();
    GradCheckReport { loss, params: checks }
}

/// Checks every model parameter on one batch. Dropout is off, so the loss
/// is a deterministic function of the parameters.
pub fn grad_check(model: &Model, edges: &EdgeIndex, batch: &[Example], step: f64) -> Result<GradCheckReport> {
    let col_mask = model.column_mask();
    let refs: Vec<&Example> = batch.iter().collect();
    let build = |tape: &mut Tape, bind: &Bindings| batch_loss(model, tape, bind, edges, &refs, &col_mask, None);
    let (loss, analytic) = analytic_gradients(model.params(), build)?;
    let numeric = numeric_gradients(model.params(), step, |p| {
        let mut tape = Tape::new();
        let bind = p.bind(&mut tape);
        let l = build(&mut tape, &bind)?;
        Ok(tape.value(l).as_slice()[0])
    })?;
    Ok(compare_gradients(model.params(), loss, &analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(a: usize) -> QueryKey {
        QueryKey {
            anchor: EntityId(a),
            relation: RelationId(0),
            qualifiers: vec![],
        }
    }

    #[test]
    fn smoothed_labels() {
        let mut index = LabelIndex::default();
        index.insert(key(0), EntityId(0));
        let l = build_labels(&key(0), &index, 4, 4, 0.1).unwrap();
        let expect = [0.925, 0.025, 0.025, 0.025];
        for (a, b) in l.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            build_labels(&key(0), &index, 4, 6, 0.0).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            build_labels(&key(1), &index, 4, 4, 0.1),
            Err(Error::NoPositive)
        ));
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(&[0.0, 0.0], &[0.5, 0.5], &[true, true]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[50.0], &[1.0], &[true]).unwrap() < 1e-20);
        assert!(bce_loss(&[f64::NAN], &[1.0], &[true]).is_err());
        let masked = bce_loss(&[0.0, 1e6], &[0.5, 0.0], &[true, false]).unwrap();
        assert!((masked - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut p = ParamSet::new();
        p.add("w", Matrix::filled(2, 2, 0.5));
        let before = p.clone();
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &[Some(Matrix::zeros(2, 2))], 0.1);
        assert_eq!(p, before);
        adam.update(&mut p, &[Some(Matrix::filled(2, 2, 3.0))], 0.0);
        assert_eq!(p, before);
        adam.update(&mut p, &[Some(Matrix::filled(2, 2, 3.0))], 0.1);
        assert!(p.by_name("w").unwrap().get(0, 0) < 0.5);
    }

    #[test]
    fn linear_model_gradients_are_exact() {
        let mut p = ParamSet::new();
        let w = p.add("w", Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]));
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.5]]);
        let build = |tape: &mut Tape, bind: &Bindings| {
            let xv = tape.leaf(x.clone());
            let y = tape.matmul(xv, bind.var(w));
            Ok(tape.sum(y))
        };
        let (loss, analytic) = analytic_gradients(&p, build).unwrap();
        let numeric = numeric_gradients(&p, 1e-5, |q| {
            let mut t = Tape::new();
            let b = q.bind(&mut t);
            let l = build(&mut t, &b)?;
            Ok(t.value(l).as_slice()[0])
        })
        .unwrap();
        let report = compare_gradients(&p, loss, &analytic, &numeric);
        assert!(report.max_relative_error() <= 1e-8, "{report:?}");
        let flipped: Vec<Matrix> = analytic.iter().map(|g| g.scale(-1.0)).collect();
        let bad = compare_gradients(&p, loss, &flipped, &numeric);
        assert!((bad.max_relative_error() - 2.0).abs() < 1e-6);
    }
}
