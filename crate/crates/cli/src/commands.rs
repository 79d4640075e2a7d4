use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use stare::eval::{evaluate_model, FilterIndex, ModelScorer};
use stare::graph::format::read_statements;
use stare::pipeline::{
    clean, compute_stats, rarity_filter, reduce_to_triples, sample_by_qualifier_ratio, split_statements,
    strip_literal_statements, truncate_qualifiers, LiteralDetector, Split,
};
use stare::train::{grad_check, prepare_examples, TrainingData};
use stare::{Dataset, EdgeIndex, Model};

use crate::config::RunConfig;
use crate::{Mode, SplitName};

/// Exit status of a gradient check that ran but exceeded its tolerance.
const GRADCHECK_FAILED: u8 = 3;

fn output_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    Dataset::load(&config.data_dir).with_context(|| format!("loading dataset from {}", config.data_dir.display()))
}

fn load_split(config: &RunConfig) -> Result<Split> {
    Split::load(&config.data_dir).with_context(|| format!("loading splits from {}", config.data_dir.display()))
}

pub fn preprocess(config: &RunConfig, mode: Mode) -> Result<ExitCode> {
    let p = &config.preprocess;
    let seed = config.seed;
    let (split, report) = match mode {
        Mode::Clean => {
            let split = match &p.input {
                Some(input) => {
                    let mut statements =
                        read_statements(input).with_context(|| format!("reading {}", input.display()))?;
                    if p.strip_literals {
                        let detector = LiteralDetector::new(&p.literal_pattern)?;
                        statements = strip_literal_statements(&statements, &detector, p.literal_mode);
                    }
                    let statements = rarity_filter(&statements, p.min_count, p.fixed_point);
                    split_statements(&statements, p.train_frac, p.valid_frac, seed)?
                }
                None => load_split(config)?,
            };
            let (cleaned, report) = clean(&split);
            let text = format!(
                "leakage removed from train: {}\nleakage removed from valid: {}\nunseen removed: {}\n",
                report.leakage.train_removed, report.leakage.valid_removed, report.unseen_removed
            );
            (cleaned, text)
        }
        Mode::Ratio => {
            let split = load_split(config)?;
            let out = split.map(|part| sample_by_qualifier_ratio(part, p.ratio, seed))?;
            (out, format!("qualifier ratio: {}\n", p.ratio))
        }
        Mode::Truncate => {
            let split = load_split(config)?;
            let out = split.map(|part| Ok(truncate_qualifiers(part, p.truncate, seed)))?;
            (out, format!("max qualifiers: {}\n", p.truncate))
        }
        Mode::Triples => {
            let split = load_split(config)?;
            let out = split.map(|part| Ok(reduce_to_triples(part)))?;
            (out, "qualifiers removed\n".to_owned())
        }
    };
    let name = format!("{mode:?}").to_lowercase();
    let dir = output_dir(config)?.join(&name);
    split
        .save(&dir)
        .with_context(|| format!("writing splits to {}", dir.display()))?;
    let report = format!(
        "{report}train: {}\nvalid: {}\ntest: {}\n",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    write(&dir.join("report.txt"), &report)?;
    print!("{report}");
    println!("wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

pub fn stats(config: &RunConfig) -> Result<ExitCode> {
    let split = load_split(config)?;
    let stats = compute_stats(&split);
    let name = config
        .data_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_owned());
    let table = stats.to_table(&name);
    let dir = output_dir(config)?;
    write(&dir.join("stats.txt"), &table)?;
    write(&dir.join("stats.jsonl"), &stats.to_json_lines())?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn training_data(config: &RunConfig, ds: &Dataset) -> Result<TrainingData> {
    let graph = ds.train_graph()?;
    let decoder = &config.model.decoder;
    let examples = prepare_examples(
        &ds.train,
        ds.vocab(),
        decoder.max_len,
        decoder.kind.query_style(),
        config.train.label_smoothing,
    )?;
    Ok(TrainingData {
        edges: EdgeIndex::new(&graph),
        examples,
    })
}

pub fn train(config: &RunConfig) -> Result<ExitCode> {
    let ds = load_dataset(config)?;
    let data = training_data(config, &ds)?;
    let dir = output_dir(config)?;
    write(&dir.join("config.txt"), &config.to_text())?;
    let mut model = Model::new(config.model.clone(), ds.vocab())?;
    let log_path = dir.join("train_log.tsv");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(log, "epoch\tloss\tseconds")?;
    let every = config.train.checkpoint_every;
    stare::train::train(&mut model, &data, &config.train, |entry, model| {
        writeln!(log, "{}\t{:.6}\t{:.3}", entry.epoch, entry.mean_loss, entry.seconds)?;
        if every > 0 && entry.epoch % every == 0 {
            model.save(dir.join(format!("checkpoint_epoch{}.ckpt", entry.epoch)))?;
        }
        Ok(())
    })?;
    let ckpt = dir.join("model.ckpt");
    model.save(&ckpt)?;
    println!(
        "trained {} epochs on {} examples ({} parameters); wrote {}",
        config.train.epochs,
        data.examples.len(),
        model.params().num_scalars(),
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn evaluate(config: &RunConfig, split: SplitName) -> Result<ExitCode> {
    let ds = load_dataset(config)?;
    let ckpt = config
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.output_dir.join("model.ckpt"));
    let mut model = Model::new(config.model.clone(), ds.vocab())?;
    model
        .load_weights(&ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let edges = EdgeIndex::new(&ds.train_graph()?);
    let filter = FilterIndex::build(ds.all_statements(), ds.vocab())?;
    let (name, statements) = match split {
        SplitName::Valid => ("valid", &ds.valid),
        SplitName::Test => ("test", &ds.test),
    };
    if statements.is_empty() {
        bail!("the {name} split is empty");
    }
    let scorer = ModelScorer::new(&model, &edges)?;
    let report = evaluate_model(&scorer, statements, ds.vocab(), &filter, &config.eval)?;
    let dir = output_dir(config)?;
    let table = report.to_table();
    write(&dir.join(format!("eval_{name}.txt")), &table)?;
    write(&dir.join(format!("eval_{name}.jsonl")), &report.to_json_lines())?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(config: &RunConfig) -> Result<ExitCode> {
    let ds = load_dataset(config)?;
    let data = training_data(config, &ds)?;
    let model = Model::new(config.model.clone(), ds.vocab())?;
    let batch: Vec<_> = data.examples.iter().take(config.gradcheck.batch).cloned().collect();
    if batch.is_empty() {
        bail!("no training examples to check");
    }
    let report = grad_check(&model, &data.edges, &batch, config.gradcheck.step)?;
    let mut text = String::from("param\tscalars\tmax_relative_error\n");
    for p in &report.params {
        let _ = writeln!(text, "{}\t{}\t{:.3e}", p.name, p.scalars, p.max_relative_error);
    }
    write(&output_dir(config)?.join("gradcheck.tsv"), &text)?;
    let worst = report.max_relative_error();
    let tol = config.gradcheck.tolerance;
    println!(
        "loss {:.6}, {} parameters, max relative error {worst:.3e} (tolerance {tol:e})",
        report.loss,
        report.params.len()
    );
    if report.passes(tol) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed");
        Ok(ExitCode::from(GRADCHECK_FAILED))
    }
}
