//! Flat `key = value` run configuration with dotted keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stare::eval::EvalOptions;
use stare::pipeline::{LiteralMode, DEFAULT_LITERAL_PATTERN};
use stare::{DecoderConfig, EncoderConfig, ModelConfig, TrainConfig};

#[derive(Debug)]
pub enum ConfigError {
    Syntax { origin: String, line: usize, text: String },
    UnknownKey { origin: String, key: String },
    InvalidValue { key: String, value: String, reason: String },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { origin, line, text } => {
                write!(f, "{origin}:{line}: expected `key = value`, found `{text}`")
            }
            ConfigError::UnknownKey { origin, key } => write!(f, "{origin}: unknown config key `{key}`"),
            ConfigError::InvalidValue { key, value, reason } => {
                write!(f, "invalid value `{value}` for `{key}`: {reason}")
            }
            ConfigError::Invalid(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    /// A single statement file to filter and split; without it the splits
    /// under `data.dir` are processed.
    pub input: Option<PathBuf>,
    pub strip_literals: bool,
    pub literal_pattern: String,
    pub literal_mode: LiteralMode,
    pub min_count: usize,
    pub fixed_point: bool,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub ratio: f64,
    pub truncate: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            input: None,
            strip_literals: true,
            literal_pattern: DEFAULT_LITERAL_PATTERN.to_owned(),
            literal_mode: LiteralMode::DropQualifiers,
            min_count: 2,
            fixed_point: true,
            train_frac: 0.7,
            valid_frac: 0.1,
            ratio: 0.33,
            truncate: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub batch: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            batch: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Checkpoint read by `evaluate`; defaults to `<output>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub preprocess: PreprocessOptions,
    pub gradcheck: GradCheckOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            checkpoint: None,
            preprocess: PreprocessOptions::default(),
            gradcheck: GradCheckOptions::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

fn parse_image(key: &str, value: &str) -> Result<Option<(usize, usize)>, ConfigError> {
    if value == "none" {
        return Ok(None);
    }
    let (h, w) = value.split_once('x').ok_or_else(|| ConfigError::InvalidValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: "expected HxW or none".to_owned(),
    })?;
    Ok(Some((parse(key, h)?, parse(key, w)?)))
}

fn parse_literal_mode(key: &str, value: &str) -> Result<LiteralMode, ConfigError> {
    match value {
        "drop_statement" => Ok(LiteralMode::DropStatement),
        "drop_qualifiers" => Ok(LiteralMode::DropQualifiers),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_owned(),
            value: value.to_owned(),
            reason: "expected drop_statement or drop_qualifiers".to_owned(),
        }),
    }
}

impl RunConfig {
    /// Reads `path` (if any), then applies `overrides` in order. Relative
    /// paths in the file resolve against the file's directory; relative
    /// paths in overrides resolve against the working directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        if let Some(path) = path {
            let origin = path.display().to_string();
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Invalid(format!("cannot read {origin}: {e}")))?;
            let base = path.parent().unwrap_or(Path::new(""));
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                    origin: origin.clone(),
                    line: i + 1,
                    text: raw.to_owned(),
                })?;
                config.set(key.trim(), value.trim(), base, &origin)?;
            }
        }
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: "command line".to_owned(),
                line: 0,
                text: item.clone(),
            })?;
            config.set(key.trim(), value.trim(), Path::new(""), "command line")?;
        }
        config.model.seed = config.seed;
        config.train.seed = config.seed;
        config.eval.max_len = config.model.decoder.max_len;
        config.eval.style = config.model.decoder.kind.query_style();
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path, origin: &str) -> Result<(), ConfigError> {
        let path = || base.join(value);
        let enc = &mut self.model.encoder;
        let dec = &mut self.model.decoder;
        let pre = &mut self.preprocess;
        match key {
            "data.dir" => self.data_dir = path(),
            "output.dir" => self.output_dir = path(),
            "seed" => self.seed = parse(key, value)?,
            "encoder.enabled" => self.model.use_encoder = parse(key, value)?,
            "encoder.layers" => enc.num_layers = parse(key, value)?,
            "encoder.dim" => enc.dim = parse(key, value)?,
            "encoder.phi_r" => enc.phi_r = parse(key, value)?,
            "encoder.phi_q" => enc.phi_q = parse(key, value)?,
            "encoder.gamma" => enc.gamma = parse(key, value)?,
            "encoder.alpha" => enc.alpha = parse(key, value)?,
            "encoder.aggregation" => enc.aggregation = parse(key, value)?,
            "encoder.dropout" => enc.dropout = parse(key, value)?,
            "encoder.activation" => enc.activation = parse(key, value)?,
            "encoder.degree_norm" => enc.degree_norm = parse(key, value)?,
            "decoder.kind" => dec.kind = parse(key, value)?,
            "decoder.max_len" => dec.max_len = parse(key, value)?,
            "decoder.layers" => dec.layers = parse(key, value)?,
            "decoder.hidden" => dec.hidden = parse(key, value)?,
            "decoder.heads" => dec.heads = parse(key, value)?,
            "decoder.dropout" => dec.dropout = parse(key, value)?,
            "decoder.filters" => dec.filters = parse(key, value)?,
            "decoder.kernel_h" => dec.kernel_h = parse(key, value)?,
            "decoder.kernel_w" => dec.kernel_w = parse(key, value)?,
            "decoder.image" => dec.image = parse_image(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.label_smoothing" => self.train.label_smoothing = parse(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "eval.batch_size" => self.eval.batch_size = parse(key, value)?,
            "eval.drop_qualifiers" => self.eval.drop_qualifiers = parse(key, value)?,
            "eval.checkpoint" => self.checkpoint = Some(path()),
            "preprocess.input" => pre.input = Some(path()),
            "preprocess.strip_literals" => pre.strip_literals = parse(key, value)?,
            "preprocess.literal_pattern" => pre.literal_pattern = value.to_owned(),
            "preprocess.literal_mode" => pre.literal_mode = parse_literal_mode(key, value)?,
            "preprocess.min_count" => pre.min_count = parse(key, value)?,
            "preprocess.fixed_point" => pre.fixed_point = parse(key, value)?,
            "preprocess.train_frac" => pre.train_frac = parse(key, value)?,
            "preprocess.valid_frac" => pre.valid_frac = parse(key, value)?,
            "preprocess.ratio" => pre.ratio = parse(key, value)?,
            "preprocess.truncate" => pre.truncate = parse(key, value)?,
            "gradcheck.step" => self.gradcheck.step = parse(key, value)?,
            "gradcheck.tolerance" => self.gradcheck.tolerance = parse(key, value)?,
            "gradcheck.batch" => self.gradcheck.batch = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    origin: origin.to_owned(),
                    key: key.to_owned(),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: stare::Error| ConfigError::Invalid(e.to_string());
        self.model.encoder.validate().map_err(invalid)?;
        self.model.decoder.validate(self.model.dim()).map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        if self.gradcheck.step <= 0.0 || self.gradcheck.batch == 0 {
            return Err(ConfigError::Invalid(
                "gradcheck.step and gradcheck.batch must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The resolved configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let EncoderConfig {
            num_layers,
            dim,
            phi_r,
            phi_q,
            gamma,
            alpha,
            aggregation,
            dropout,
            activation,
            degree_norm,
        } = &self.model.encoder;
        let DecoderConfig {
            kind,
            max_len,
            layers,
            hidden,
            heads,
            dropout: dec_dropout,
            filters,
            kernel_h,
            kernel_w,
            image,
        } = &self.model.decoder;
        let image = image.map_or("none".to_owned(), |(h, w)| format!("{h}x{w}"));
        let p = &self.preprocess;
        let literal_mode = match p.literal_mode {
            LiteralMode::DropStatement => "drop_statement",
            LiteralMode::DropQualifiers => "drop_qualifiers",
        };
        let mut lines = vec![
            format!("data.dir = {}", self.data_dir.display()),
            format!("output.dir = {}", self.output_dir.display()),
            format!("seed = {}", self.seed),
            format!("encoder.enabled = {}", self.model.use_encoder),
            format!("encoder.layers = {num_layers}"),
            format!("encoder.dim = {dim}"),
            format!("encoder.phi_r = {phi_r}"),
            format!("encoder.phi_q = {phi_q}"),
            format!("encoder.gamma = {gamma}"),
            format!("encoder.alpha = {alpha}"),
            format!("encoder.aggregation = {aggregation}"),
            format!("encoder.dropout = {dropout}"),
            format!("encoder.activation = {activation}"),
            format!("encoder.degree_norm = {degree_norm}"),
            format!("decoder.kind = {kind}"),
            format!("decoder.max_len = {max_len}"),
            format!("decoder.layers = {layers}"),
            format!("decoder.hidden = {hidden}"),
            format!("decoder.heads = {heads}"),
            format!("decoder.dropout = {dec_dropout}"),
            format!("decoder.filters = {filters}"),
            format!("decoder.kernel_h = {kernel_h}"),
            format!("decoder.kernel_w = {kernel_w}"),
            format!("decoder.image = {image}"),
            format!("train.epochs = {}", self.train.epochs),
            format!("train.batch_size = {}", self.train.batch_size),
            format!("train.learning_rate = {}", self.train.learning_rate),
            format!("train.label_smoothing = {}", self.train.label_smoothing),
            format!("train.checkpoint_every = {}", self.train.checkpoint_every),
            format!("eval.batch_size = {}", self.eval.batch_size),
            format!("eval.drop_qualifiers = {}", self.eval.drop_qualifiers),
        ];
        if let Some(c) = &self.checkpoint {
            lines.push(format!("eval.checkpoint = {}", c.display()));
        }
        if let Some(i) = &p.input {
            lines.push(format!("preprocess.input = {}", i.display()));
        }
        lines.extend([
            format!("preprocess.strip_literals = {}", p.strip_literals),
            format!("preprocess.literal_pattern = {}", p.literal_pattern),
            format!("preprocess.literal_mode = {literal_mode}"),
            format!("preprocess.min_count = {}", p.min_count),
            format!("preprocess.fixed_point = {}", p.fixed_point),
            format!("preprocess.train_frac = {}", p.train_frac),
            format!("preprocess.valid_frac = {}", p.valid_frac),
            format!("preprocess.ratio = {}", p.ratio),
            format!("preprocess.truncate = {}", p.truncate),
            format!("gradcheck.step = {}", self.gradcheck.step),
            format!("gradcheck.tolerance = {}", self.gradcheck.tolerance),
            format!("gradcheck.batch = {}", self.gradcheck.batch),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_selected_hyperparameters() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c.model.encoder, EncoderConfig::default());
        assert_eq!(c.model.decoder, DecoderConfig::default());
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::load(
            None,
            &["encoder.dim=32".into(), "encoder.dim=64".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(c.model.encoder.dim, 64);
        assert_eq!((c.model.seed, c.train.seed), (9, 9));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::load(None, &["encoder.width=3".into()]).unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey { key, .. } if key == "encoder.width"));
        assert!(err.to_string().contains("encoder.width"));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(matches!(
            RunConfig::load(None, &["train.epochs=many".into()]),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            RunConfig::load(None, &["encoder.alpha=2".into()]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["noequals".into()]),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let c = RunConfig::load(
            None,
            &[
                "decoder.kind=conve".into(),
                "decoder.image=20x150".into(),
                "seed=4".into(),
            ],
        )
        .unwrap();
        std::fs::write(&path, c.to_text()).unwrap();
        let again = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(
            again.to_text().lines().skip(2).collect::<Vec<_>>(),
            c.to_text().lines().skip(2).collect::<Vec<_>>()
        );
        assert_eq!(again.model, c.model);
    }
}
