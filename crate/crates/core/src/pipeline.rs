//! End-to-end runs on files: resource preparation, training into a run
//! directory, reloading a run, evaluation, ablation grids, attention export.
//!
//! A run directory holds `checkpoint.bin`, `manifest.json`, `trace.csv`,
//! `config.toml`, `merges.txt`, and `contextual.jsonl` when the stand-in
//! language model supplied the contextual vectors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention_export::{attention_dumps, write_dumps};
use crate::bpe::{learn_bpe, MergeTable, WordFrequency};
use crate::config::{ContextualSource, GridSpec, RunConfig};
use crate::data::synthetic::{generate, SyntheticSpec};
use crate::data::{
    load_corpus, make_splits, save_corpus, Instance, InstanceRecord, LabelSpace, SplitConfig,
    SplitName, Splits,
};
use crate::error::{Error, Result};
use crate::model::{Model, Resources};
use crate::tensor::{read_checkpoint, write_checkpoint};
use crate::training::{evaluate, trace_csv, train, EvalReport, TrainOutcome};
use crate::word_level::{
    train_toy_contextual, ContextualEmbedder, PrecomputedContextual, SubwordVocab, ToyLmConfig,
    WordEmbeddingTable,
};

/// Environment variable naming the directory relative outputs land in.
pub const OUTPUT_ROOT_ENV: &str = "IDRR_OUTPUT_ROOT";

/// Connective class used when the training split carries none.
pub const NO_CONNECTIVE: &str = "<none>";

pub const MANIFEST_FORMAT: &str = "idrr-run";

/// `$IDRR_OUTPUT_ROOT`, or `runs` when unset.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Absolute paths pass through; relative ones land under the output root.
pub fn resolve_output(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        output_root().join(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn corpus_path(config: &RunConfig) -> Result<&Path> {
    config
        .paths
        .corpus
        .as_deref()
        .ok_or_else(|| Error::config("paths.corpus", "required"))
}

fn training_records<'a>(records: &'a [InstanceRecord], split: &SplitConfig) -> Vec<&'a InstanceRecord> {
    records.iter().filter(|r| split.train.contains(&r.section)).collect()
}

/// Token counts over both arguments of the training-section records.
pub fn training_word_frequency(records: &[InstanceRecord], split: &SplitConfig) -> WordFrequency {
    WordFrequency::from_tokens(
        training_records(records, split)
            .into_iter()
            .flat_map(|r| r.arg1.iter().chain(&r.arg2))
            .map(String::as_str),
    )
}

/// Both arguments of every training-section record, as sentences.
pub fn training_sentences(records: &[InstanceRecord], split: &SplitConfig) -> Vec<Vec<String>> {
    training_records(records, split)
        .into_iter()
        .flat_map(|r| [r.arg1.clone(), r.arg2.clone()])
        .collect()
}

/// Trains the stand-in language model on the training split and captures its
/// layer outputs for every record. Returns the vectors and the perplexity trace.
pub fn prep_toy_contextual(
    config: &RunConfig,
    records: &[InstanceRecord],
) -> Result<(PrecomputedContextual, Vec<f64>)> {
    let split = config.split()?;
    let (lm, trace) = train_toy_contextual(&training_sentences(records, &split), &config.contextual.toy)?;
    Ok((PrecomputedContextual::capture(&lm, records)?, trace))
}

/// Sorted distinct connectives of `train`; a single placeholder class when
/// there are none.
pub fn connective_vocab(train: &[Instance]) -> Vec<String> {
    let set: BTreeSet<String> = train.iter().filter_map(|i| i.connective.clone()).collect();
    if set.is_empty() {
        vec![NO_CONNECTIVE.to_string()]
    } else {
        set.into_iter().collect()
    }
}

/// Corpus, splits, and frozen resources for one configuration.
pub struct Prepared {
    pub records: Vec<InstanceRecord>,
    pub labels: LabelSpace,
    pub splits: Splits,
    pub resources: Resources,
    /// Width of the contextual layers; the stand-in's width without a source,
    /// so the unused mixer keeps a valid shape.
    pub contextual_dim: usize,
    /// Perplexity trace of the stand-in language model when one was trained.
    pub lm_trace: Option<Vec<f64>>,
}

impl Prepared {
    /// Contextual vectors captured from the stand-in language model, if any.
    pub fn captured_contextual(&self) -> Option<&PrecomputedContextual> {
        self.lm_trace.as_ref()?;
        self.resources
            .contextual
            .as_ref()
            .and_then(|c| c.as_precomputed())
    }
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let records = load_corpus(corpus_path(config)?)?;
    let split = config.split()?;
    let labels = config.label_space()?;
    let splits = make_splits(&records, &split, &labels)?;
    let freq = training_word_frequency(&records, &split);
    let table = match &config.paths.merges {
        Some(path) => MergeTable::load(path)?,
        None => learn_bpe(&freq, config.bpe.merges)?,
    };
    let subwords = SubwordVocab::new(table, freq.iter().map(|(w, _)| w));
    let words = match (&config.paths.word_vectors, config.model.word) {
        (Some(path), true) => WordEmbeddingTable::load(path)?,
        _ => WordEmbeddingTable::new(config.model.word_dim),
    };
    let (contextual, lm_trace): (Option<Box<dyn ContextualEmbedder>>, _) = if !config.model.contextual {
        (None, None)
    } else {
        match config.contextual.source {
            ContextualSource::File => {
                let path = config
                    .paths
                    .contextual
                    .as_deref()
                    .ok_or_else(|| Error::config("paths.contextual", "required"))?;
                (Some(Box::new(PrecomputedContextual::load(path)?)), None)
            }
            ContextualSource::Toy => {
                let (vectors, trace) = prep_toy_contextual(config, &records)?;
                (Some(Box::new(vectors)), Some(trace))
            }
        }
    };
    let contextual_dim = contextual
        .as_ref()
        .map_or(config.contextual.toy.dim, |c| c.dim());
    Ok(Prepared {
        records,
        labels,
        splits,
        resources: Resources {
            words,
            subwords,
            contextual,
        },
        contextual_dim,
        lm_trace,
    })
}

/// Everything needed to rebuild a trained model besides its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub labels: LabelSpace,
    pub connectives: Vec<String>,
    pub subword_symbols: Vec<String>,
    pub contextual_dim: usize,
    /// Contextual vector file; relative paths are inside the run directory.
    pub contextual_file: Option<PathBuf>,
    pub word_vectors_checksum: String,
    pub contextual_checksum: Option<String>,
    pub pair_dim: usize,
    pub parameters: usize,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub steps: usize,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if m.format != MANIFEST_FORMAT || m.version != 1 {
            return Err(Error::Input(format!(
                "{}: unsupported manifest {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub manifest: Manifest,
    /// Checksums of the frozen resources before and after training.
    pub frozen_before: (String, Option<String>),
    pub frozen_after: (String, Option<String>),
}

fn frozen_checksums(res: &Resources) -> (String, Option<String>) {
    (res.words.checksum(), res.contextual.as_ref().map(|c| c.checksum()))
}

/// Builds a freshly initialized model for `prepared`.
pub fn build_model(config: &RunConfig, prepared: &Prepared) -> Result<Model> {
    Model::new(
        config.model_config(prepared.contextual_dim),
        prepared.labels.clone(),
        connective_vocab(&prepared.splits.train),
        prepared.resources.subwords.len(),
        config.train.seed,
    )
}

/// Trains from already prepared resources and writes the run directory.
pub fn train_prepared(config: &RunConfig, prepared: &Prepared, out_dir: &Path) -> Result<RunSummary> {
    let mut model = build_model(config, prepared)?;
    let res = &prepared.resources;
    let frozen_before = frozen_checksums(res);
    let outcome = train(
        &mut model,
        res,
        &prepared.splits.train,
        &prepared.splits.dev,
        &config.train,
    )?;
    let frozen_after = frozen_checksums(res);
    if frozen_before != frozen_after {
        return Err(Error::Contract("a frozen resource changed during training".into()));
    }

    create_dir(out_dir)?;
    res.subwords.table().save(&out_dir.join("merges.txt"))?;
    let contextual_file = match (prepared.captured_contextual(), &config.paths.contextual) {
        (Some(captured), _) => {
            captured.save(&out_dir.join("contextual.jsonl"))?;
            Some(PathBuf::from("contextual.jsonl"))
        }
        (None, path) if config.model.contextual => path.clone(),
        _ => None,
    };
    write_checkpoint(&model.params, &out_dir.join("checkpoint.bin"))?;
    write_file(&out_dir.join("trace.csv"), trace_csv(&outcome.trace))?;
    config.save(&out_dir.join("config.toml"))?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        config: config.clone(),
        seed: config.train.seed,
        labels: model.labels.clone(),
        connectives: model.connectives.clone(),
        subword_symbols: res.subwords.symbols().to_vec(),
        contextual_dim: prepared.contextual_dim,
        contextual_file,
        word_vectors_checksum: frozen_after.0.clone(),
        contextual_checksum: frozen_after.1.clone(),
        pair_dim: model.config.pair_dim(),
        parameters: model.params.num_scalars(),
        best_epoch: outcome.best_epoch,
        best_dev_accuracy: outcome.best_dev_accuracy,
        steps: outcome.steps,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out_dir.join("manifest.json"), json + "\n")?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        outcome,
        manifest,
        frozen_before,
        frozen_after,
    })
}

pub fn run_train(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    let prepared = prepare(config)?;
    train_prepared(config, &prepared, out_dir)
}

/// A trained model reloaded from its run directory.
pub struct LoadedRun {
    pub manifest: Manifest,
    pub model: Model,
    pub resources: Resources,
    pub records: Vec<InstanceRecord>,
    pub splits: Splits,
}

pub fn load_run(run_dir: &Path) -> Result<LoadedRun> {
    let manifest = Manifest::load(run_dir)?;
    let config = &manifest.config;
    let records = load_corpus(corpus_path(config)?)?;
    let splits = make_splits(&records, &config.split()?, &manifest.labels)?;
    let table = MergeTable::load(&run_dir.join("merges.txt"))?;
    let subwords = SubwordVocab::from_symbols(table, manifest.subword_symbols.clone())?;
    let words = match (&config.paths.word_vectors, config.model.word) {
        (Some(path), true) => WordEmbeddingTable::load(path)?,
        _ => WordEmbeddingTable::new(config.model.word_dim),
    };
    if words.checksum() != manifest.word_vectors_checksum {
        return Err(Error::Data("word vectors differ from the ones the run was trained with".into()));
    }
    let contextual: Option<Box<dyn ContextualEmbedder>> = match &manifest.contextual_file {
        Some(path) => {
            let full = if path.is_relative() { run_dir.join(path) } else { path.clone() };
            let c = PrecomputedContextual::load(&full)?;
            if Some(c.checksum()) != manifest.contextual_checksum {
                return Err(Error::Data(format!("{}: contextual vectors changed", full.display())));
            }
            Some(Box::new(c))
        }
        None => None,
    };
    let mut model = Model::new(
        config.model_config(manifest.contextual_dim),
        manifest.labels.clone(),
        manifest.connectives.clone(),
        subwords.len(),
        manifest.seed,
    )?;
    model
        .params
        .load_values(read_checkpoint(&run_dir.join("checkpoint.bin"))?)?;
    Ok(LoadedRun {
        manifest,
        model,
        resources: Resources {
            words,
            subwords,
            contextual,
        },
        records,
        splits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Dev,
    Test,
}

impl FromStr for SplitChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitChoice::Train),
            "dev" => Ok(SplitChoice::Dev),
            "test" => Ok(SplitChoice::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`; use train, dev or test"))),
        }
    }
}

impl SplitChoice {
    pub fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Dev => "dev",
            SplitChoice::Test => "test",
        }
    }

    pub fn select(self, splits: &Splits) -> &[Instance] {
        match self {
            SplitChoice::Train => &splits.train,
            SplitChoice::Dev => &splits.dev,
            SplitChoice::Test => &splits.test,
        }
    }
}

impl LoadedRun {
    pub fn evaluate(&self, split: SplitChoice) -> Result<EvalReport> {
        let batch = self.manifest.config.train.batch_size;
        evaluate(&self.model, &self.resources, split.select(&self.splits), batch)
    }

    /// Finds `id` among the split instances, then among all records.
    pub fn instance(&self, id: &str) -> Result<Instance> {
        let s = &self.splits;
        if let Some(i) = s.train.iter().chain(&s.dev).chain(&s.test).find(|i| i.id == id) {
            return Ok(i.clone());
        }
        self.records
            .iter()
            .find(|r| r.id == id)
            .map(|r| Instance {
                id: r.id.clone(),
                arg1: r.arg1.clone(),
                arg2: r.arg2.clone(),
                labels: Vec::new(),
                connective: r.connective.clone(),
                section: r.section,
            })
            .ok_or_else(|| Error::Lookup(format!("no instance with id `{id}`")))
    }

    /// Writes heatmaps for `ids`; every id is checked before anything is written.
    pub fn export_attention(&self, ids: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
        let instances = ids.iter().map(|id| self.instance(id)).collect::<Result<Vec<_>>>()?;
        let mut written = Vec::new();
        for inst in &instances {
            let dumps = attention_dumps(&self.model, &self.resources, inst)?;
            written.extend(write_dumps(&dumps, out_dir)?);
        }
        Ok(written)
    }
}

/// Report line for an evaluation: `task split metric value`.
pub fn metrics_report(task: &str, split: SplitChoice, report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "{task}\t{}\taccuracy\t{:.6}", split.name(), report.accuracy).unwrap();
    if report.metric != "accuracy" {
        writeln!(out, "{task}\t{}\t{}\t{:.4}", split.name(), report.metric, report.value).unwrap();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub pair_dim: usize,
    pub best_epoch: usize,
    pub metric: String,
    pub dev: f64,
    pub test: f64,
}

/// Trains every grid row into `out_dir/row-<i>` and writes `ablation.csv`.
pub fn run_ablation(base: &RunConfig, grid: &GridSpec, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let rows = grid.rows(base)?;
    create_dir(out_dir)?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let prepared = prepare(&row.config)?;
        let summary = train_prepared(&row.config, &prepared, &out_dir.join(format!("row-{i}")))?;
        let run = load_run(&summary.out_dir)?;
        let dev = run.evaluate(SplitChoice::Dev)?;
        let test = run.evaluate(SplitChoice::Test)?;
        out.push(AblationRow {
            label: row.label.clone(),
            pair_dim: summary.manifest.pair_dim,
            best_epoch: summary.outcome.best_epoch,
            metric: dev.metric.clone(),
            dev: dev.value,
            test: test.value,
        });
    }
    write_file(&out_dir.join("ablation.csv"), ablation_csv(&out))?;
    Ok(out)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("row,label,pair_dim,best_epoch,metric,dev,test\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            out,
            "{i},\"{}\",{},{},{},{:?},{:?}",
            r.label.replace('"', "\"\""),
            r.pair_dim,
            r.best_epoch,
            r.metric,
            r.dev,
            r.test
        )
        .unwrap();
    }
    out
}

/// Writes `corpus.jsonl` and `vectors.txt` for `spec` into `dir` and returns a
/// toy-scale configuration over them: `d_e = 16`, two layers, `N = 10`.
pub fn write_synthetic_workspace(dir: &Path, spec: &SyntheticSpec) -> Result<RunConfig> {
    create_dir(dir)?;
    let split = SplitConfig::new(SplitName::Ji);
    let records = generate(spec, &split);
    let corpus = dir.join("corpus.jsonl");
    save_corpus(&records, &corpus)?;
    let words: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.arg1.iter().chain(&r.arg2))
        .map(String::as_str)
        .collect();
    let vectors = dir.join("vectors.txt");
    WordEmbeddingTable::synthesize(words, 8, spec.seed).save(&vectors)?;

    let mut cfg = RunConfig::default();
    cfg.task.split = split.name.to_string();
    cfg.task.max_len = spec.max_len + 2;
    let m = &mut cfg.model;
    m.layers = 2;
    m.kernel_size = 3;
    m.word_dim = 8;
    m.subword_embed_dim = 4;
    m.subword_dim = 4;
    m.contextual_dim = 4;
    cfg.contextual.toy = ToyLmConfig {
        dim: 8,
        char_dim: 4,
        epochs: 2,
        ..ToyLmConfig::default()
    };
    cfg.bpe.merges = 50;
    cfg.train.epochs = 30;
    cfg.train.patience = 5;
    cfg.paths.corpus = Some(corpus);
    cfg.paths.word_vectors = Some(vectors);
    cfg.validate()?;
    Ok(cfg)
}
