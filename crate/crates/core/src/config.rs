//! Run configuration: a sectioned TOML file covering task, model, training,
//! BPE, contextual source, and paths, plus ablation grids over its keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LabelSpace, SplitConfig, SplitName, TaskMode};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pair_level::{PairConfig, POOL_K};
use crate::sentence_level::{BlockType, EncoderConfig};
use crate::training::TrainConfig;
use crate::word_level::{EmbeddingParts, SubwordConfig, ToyLmConfig, WordLevelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    /// `eleven-way`, `four-way`, or `binary:<class>`.
    pub mode: String,
    /// `pdtb-lin` or `pdtb-ji`.
    pub split: String,
    /// Retained eleven-way types; the built-in list when absent.
    pub retained_types: Option<Vec<String>>,
    /// Arguments are padded or truncated to this length.
    pub max_len: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            mode: "eleven-way".into(),
            split: "pdtb-ji".into(),
            retained_types: None,
            max_len: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub block: BlockType,
    pub layers: usize,
    pub kernel_size: usize,
    /// One parameter set for both arguments instead of one each.
    pub shared: bool,
    /// Residual connection inside each block.
    pub res1: bool,
    /// Every layer, not just the last, feeds the pair representation.
    pub res2: bool,
    pub attention: bool,
    pub mask_padding: bool,
    pub word: bool,
    pub subword: bool,
    pub contextual: bool,
    pub word_dim: usize,
    pub subword_embed_dim: usize,
    pub subword_kernels: Vec<usize>,
    pub subword_dim: usize,
    pub contextual_dim: usize,
    /// Hidden tanh width in each classifier head; 0 for a single affine layer.
    pub classifier_hidden: usize,
    pub connective_loss: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            block: BlockType::Conv,
            layers: 4,
            kernel_size: 5,
            shared: false,
            res1: true,
            res2: true,
            attention: true,
            mask_padding: false,
            word: true,
            subword: true,
            contextual: true,
            word_dim: 300,
            subword_embed_dim: 50,
            subword_kernels: vec![2, 3],
            subword_dim: 100,
            contextual_dim: 300,
            classifier_hidden: 0,
            connective_loss: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpeSection {
    pub merges: usize,
}

impl Default for BpeSection {
    fn default() -> Self {
        BpeSection { merges: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextualSource {
    /// Train the stand-in language model on the training split.
    Toy,
    /// Replay vectors from `paths.contextual`.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextualSection {
    pub source: ContextualSource,
    pub toy: ToyLmConfig,
}

impl Default for ContextualSection {
    fn default() -> Self {
        ContextualSection {
            source: ContextualSource::Toy,
            toy: ToyLmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    /// Learned from the training split when absent.
    pub merges: Option<PathBuf>,
    pub contextual: Option<PathBuf>,
    /// Relative paths land under the output root.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub bpe: BpeSection,
    pub contextual: ContextualSection,
    pub paths: PathsSection,
}

fn toml_error(text: &str, origin: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        path: origin.into(),
        line,
        message: e.message().to_string(),
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, origin, e))
    }

    /// Loads and validates a file; relative paths inside it resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Makes every relative input path relative to `base`. The output path is
    /// left alone; it resolves against the output root.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.corpus, &mut p.word_vectors, &mut p.merges, &mut p.contextual] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn task_mode(&self) -> Result<TaskMode> {
        self.task
            .mode
            .parse()
            .map_err(|e: Error| Error::config("task.mode", e.to_string()))
    }

    pub fn split(&self) -> Result<SplitConfig> {
        let name: SplitName = self
            .task
            .split
            .parse()
            .map_err(|e: Error| Error::config("task.split", e.to_string()))?;
        Ok(SplitConfig::new(name))
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        let mode = self.task_mode()?;
        LabelSpace::for_mode(&mode, self.task.retained_types.clone())
            .map_err(|e| Error::config("task.retained_types", e.to_string()))
    }

    pub fn parts(&self) -> EmbeddingParts {
        EmbeddingParts {
            word: self.model.word,
            subword: self.model.subword,
            contextual: self.model.contextual,
        }
    }

    /// Checks every key that can be checked without touching the filesystem;
    /// errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let mode = self.task_mode()?;
        self.split()?;
        if self.task.retained_types.is_some() && mode != TaskMode::ElevenWay {
            return Err(Error::config("task.retained_types", "only applies to eleven-way runs"));
        }
        self.label_space()?;
        if self.task.max_len < POOL_K {
            return Err(Error::config(
                "task.max_len",
                format!("must be at least {POOL_K} for 2-max pooling"),
            ));
        }
        let m = &self.model;
        if m.layers == 0 {
            return Err(Error::config("model.layers", "must be at least 1"));
        }
        if m.block == BlockType::Conv && m.kernel_size % 2 == 0 {
            return Err(Error::config("model.kernel_size", "must be odd for same-length padding"));
        }
        for (key, v) in [
            ("model.word_dim", m.word_dim),
            ("model.subword_embed_dim", m.subword_embed_dim),
            ("model.subword_dim", m.subword_dim),
            ("model.contextual_dim", m.contextual_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        self.subword_config()
            .validate()
            .map_err(|msg| Error::config("model.subword_kernels", msg))?;
        self.train.validate()?;
        if m.word && self.paths.word_vectors.is_none() {
            return Err(Error::config(
                "paths.word_vectors",
                "required while model.word is enabled",
            ));
        }
        if m.contextual {
            match self.contextual.source {
                ContextualSource::File if self.paths.contextual.is_none() => {
                    return Err(Error::config(
                        "paths.contextual",
                        "required while contextual.source = \"file\"",
                    ));
                }
                ContextualSource::Toy => self
                    .contextual
                    .toy
                    .validate()
                    .map_err(|msg| Error::config("contextual.toy", msg))?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn subword_config(&self) -> SubwordConfig {
        SubwordConfig {
            embed_dim: self.model.subword_embed_dim,
            kernels: self.model.subword_kernels.clone(),
            output_dim: self.model.subword_dim,
        }
    }

    /// Model dimensions for a contextual source of width `contextual_input_dim`.
    pub fn model_config(&self, contextual_input_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            word_level: WordLevelConfig {
                word_dim: m.word_dim,
                subword: self.subword_config(),
                contextual_input_dim,
                contextual_dim: m.contextual_dim,
                parts: self.parts(),
            },
            encoder: EncoderConfig {
                block: m.block,
                layers: m.layers,
                kernel_size: m.kernel_size,
                shared: m.shared,
                residual: m.res1,
                dropout: self.train.encoder_dropout,
            },
            pair: PairConfig {
                attention: m.attention,
                residual: m.res2,
                mask_padding: m.mask_padding,
            },
            max_len: self.task.max_len,
            classifier_hidden: (m.classifier_hidden > 0).then_some(m.classifier_hidden),
            connective_loss: m.connective_loss,
            embedding_dropout: self.train.embedding_dropout,
            classifier_dropout: self.train.classifier_dropout,
        }
    }

    /// Stacked convolutional blocks at the configured depth without residual
    /// connections, word vectors only, last layer only, 2-max pooling without
    /// attention.
    pub fn baseline(&self) -> Self {
        let mut cfg = self.clone();
        let m = &mut cfg.model;
        m.block = BlockType::Conv;
        m.res1 = false;
        m.res2 = false;
        m.attention = false;
        m.word = true;
        m.subword = false;
        m.contextual = false;
        cfg
    }

    /// Returns `key = value` applied to a copy, where `key` is `section.field`.
    pub fn with_override(&self, key: &str, value: &toml::Value) -> Result<Self> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::config(key, "grid keys have the form section.field"))?;
        let mut root = toml::Value::try_from(self).expect("run config serializes");
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::config(key, format!("unknown section `{section}`")))?;
        if section != "paths" && !table.contains_key(field) && !optional_field(section, field) {
            return Err(Error::config(key, "unknown key"));
        }
        table.insert(field.to_string(), value.clone());
        let cfg: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))?;
        Ok(cfg)
    }
}

/// Optional keys that serialize to nothing when unset.
fn optional_field(section: &str, field: &str) -> bool {
    matches!(
        (section, field),
        ("task", "retained_types") | ("train", "max_steps")
    )
}

/// Named row sets reproducing the analysis tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ladder {
    /// Baseline, then attention, residuals, subwords, contextual vectors added
    /// one at a time.
    Accumulative,
}

/// An ablation grid: an optional ladder times the Cartesian product of axes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub ladder: Option<Ladder>,
    /// `section.field` → values, iterated in key order.
    pub axes: BTreeMap<String, Vec<toml::Value>>,
}

/// One configuration of a grid and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub label: String,
    pub config: RunConfig,
}

impl GridSpec {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, origin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid serializes")
    }

    /// Residual on/off for both connections: 4 rows.
    pub fn residual_grid() -> Self {
        let flags = || vec![toml::Value::Boolean(false), toml::Value::Boolean(true)];
        GridSpec {
            ladder: None,
            axes: BTreeMap::from([("model.res1".into(), flags()), ("model.res2".into(), flags())]),
        }
    }

    /// Both block types at depths `layers`.
    pub fn layer_sweep(layers: std::ops::RangeInclusive<usize>) -> Self {
        let blocks = ["conv", "recurrent"].map(|b| toml::Value::String(b.into())).to_vec();
        let depths = layers.map(|l| toml::Value::Integer(l as i64)).collect();
        GridSpec {
            ladder: None,
            axes: BTreeMap::from([("model.block".into(), blocks), ("model.layers".into(), depths)]),
        }
    }

    pub fn accumulative() -> Self {
        GridSpec {
            ladder: Some(Ladder::Accumulative),
            axes: BTreeMap::new(),
        }
    }

    /// Expands against `base`; every row is validated.
    pub fn rows(&self, base: &RunConfig) -> Result<Vec<GridRow>> {
        let mut rows = match self.ladder {
            None => vec![GridRow {
                label: "base".into(),
                config: base.clone(),
            }],
            Some(Ladder::Accumulative) => accumulative_ladder(base),
        };
        for (key, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::config(key, "axis has no values"));
            }
            let mut next = Vec::with_capacity(rows.len() * values.len());
            for row in &rows {
                for v in values {
                    next.push(GridRow {
                        label: format!("{} {key}={v}", row.label),
                        config: row.config.with_override(key, v)?,
                    });
                }
            }
            rows = next;
        }
        for row in &mut rows {
            row.label = row.label.trim_start_matches("base ").to_string();
            row.config.validate()?;
        }
        Ok(rows)
    }
}

fn accumulative_ladder(base: &RunConfig) -> Vec<GridRow> {
    let mut cfg = base.baseline();
    let mut rows = vec![GridRow {
        label: "baseline".into(),
        config: cfg.clone(),
    }];
    let steps: [(&str, fn(&mut ModelSection)); 4] = [
        ("+bi-attention", |m| m.attention = true),
        ("+res", |m| {
            m.res1 = true;
            m.res2 = true;
        }),
        ("+subword", |m| m.subword = true),
        ("+contextual", |m| m.contextual = true),
    ];
    for (label, apply) in steps {
        apply(&mut cfg.model);
        rows.push(GridRow {
            label: label.into(),
            config: cfg.clone(),
        });
    }
    rows
}
