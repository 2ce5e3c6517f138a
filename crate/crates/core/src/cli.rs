//! Command implementations behind the `idrr` binary. Each returns report
//! lines for humans and a JSON summary the binary prints as its final line.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::bpe::{learn_bpe, WordFrequency};
use crate::config::{GridSpec, RunConfig};
use crate::data::load_corpus;
use crate::error::{Error, Result};
use crate::pipeline::{
    ablation_csv, load_run, metrics_report, prep_toy_contextual, resolve_output,
    run_ablation, run_train, SplitChoice,
};
use crate::word_level::SubwordVocab;

#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutput {
    pub lines: Vec<String>,
    pub summary: Value,
}

/// Final line of a failed command.
pub fn error_summary(command: &str, err: &Error) -> Value {
    json!({ "status": "error", "command": command, "error": err.to_string() })
}

fn ok(command: &str, fields: Value) -> Value {
    let mut v = json!({ "status": "ok", "command": command });
    if let (Some(out), Value::Object(extra)) = (v.as_object_mut(), fields) {
        out.extend(extra);
    }
    v
}

/// An existing path as given, otherwise the same path under the output root.
pub fn locate(path: &Path) -> PathBuf {
    if path.exists() {
        path.to_path_buf()
    } else {
        resolve_output(path)
    }
}

/// Learns merges from a `word count` frequency file.
pub fn cmd_learn_bpe(frequencies: &Path, merges: usize, out: &Path) -> Result<CommandOutput> {
    let freq = WordFrequency::load(frequencies)?;
    let table = learn_bpe(&freq, merges)?;
    let out = resolve_output(out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    table.save(&out)?;
    let vocab = SubwordVocab::new(table.clone(), freq.iter().map(|(w, _)| w));
    // PAD and UNK are not learned symbols.
    let vocab_size = vocab.len() - 2;
    Ok(CommandOutput {
        lines: vec![format!(
            "{} merges performed, {} subword symbols, written to {}",
            table.len(),
            vocab_size,
            out.display()
        )],
        summary: ok(
            "learn-bpe",
            json!({ "merges": table.len(), "vocab_size": vocab_size, "out": out }),
        ),
    })
}

/// Trains the stand-in language model per `config` and writes the vectors of
/// every corpus record.
pub fn cmd_prep_contextual(config: &Path, out: &Path) -> Result<CommandOutput> {
    let cfg = RunConfig::load(config)?;
    let corpus = cfg
        .paths
        .corpus
        .as_deref()
        .ok_or_else(|| Error::config("paths.corpus", "required"))?;
    let records = load_corpus(corpus)?;
    let (vectors, trace) = prep_toy_contextual(&cfg, &records)?;
    let out = resolve_output(out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    vectors.save(&out)?;
    let lines = trace
        .iter()
        .enumerate()
        .map(|(e, p)| format!("epoch {e}: perplexity {p:.4}"))
        .collect();
    Ok(CommandOutput {
        lines,
        summary: ok(
            "prep-contextual",
            json!({
                "dim": cfg.contextual.toy.dim,
                "entries": vectors.len(),
                "perplexity_initial": trace.first(),
                "perplexity_final": trace.last(),
                "out": out,
            }),
        ),
    })
}

/// Trains per `config` into `out`, else `paths.output`, else `run`.
pub fn cmd_train(config: &Path, out: Option<&Path>) -> Result<CommandOutput> {
    let cfg = RunConfig::load(config)?;
    let out_dir = resolve_output(
        out.or(cfg.paths.output.as_deref())
            .unwrap_or_else(|| Path::new("run")),
    );
    let summary = run_train(&cfg, &out_dir)?;
    let lines = summary
        .outcome
        .trace
        .iter()
        .map(|r| {
            format!(
                "epoch {}: train loss {:.6}, dev accuracy {:.4}",
                r.epoch, r.train_loss, r.dev_accuracy
            )
        })
        .collect();
    Ok(CommandOutput {
        lines,
        summary: ok(
            "train",
            json!({
                "run_dir": out_dir,
                "epochs": summary.outcome.trace.len(),
                "steps": summary.outcome.steps,
                "best_epoch": summary.outcome.best_epoch,
                "best_dev_accuracy": summary.outcome.best_dev_accuracy,
                "parameters": summary.manifest.parameters,
            }),
        ),
    })
}

pub fn cmd_eval(run_dir: &Path, split: SplitChoice) -> Result<CommandOutput> {
    let run = load_run(&locate(run_dir))?;
    let report = run.evaluate(split)?;
    let task = run.manifest.config.task.mode.clone();
    Ok(CommandOutput {
        lines: metrics_report(&task, split, &report).lines().map(String::from).collect(),
        summary: ok(
            "eval",
            json!({
                "task": task,
                "split": split.name(),
                "instances": report.instances,
                "accuracy": report.accuracy,
                "metric": report.metric,
                "value": report.value,
            }),
        ),
    })
}

/// Named grids accepted in place of a grid file.
pub fn preset_grid(name: &str) -> Result<GridSpec> {
    match name {
        "accumulative" => Ok(GridSpec::accumulative()),
        "residual" => Ok(GridSpec::residual_grid()),
        "layers" => Ok(GridSpec::layer_sweep(1..=7)),
        "none" => Ok(GridSpec::default()),
        other => Err(Error::Argument(format!(
            "unknown grid preset `{other}`; use accumulative, residual, layers or none"
        ))),
    }
}

pub fn cmd_ablate(config: &Path, grid: &GridSpec, out: Option<&Path>) -> Result<CommandOutput> {
    let cfg = RunConfig::load(config)?;
    let out_dir = resolve_output(out.unwrap_or_else(|| Path::new("ablation")));
    let rows = run_ablation(&cfg, grid, &out_dir)?;
    Ok(CommandOutput {
        lines: ablation_csv(&rows).lines().map(String::from).collect(),
        summary: ok(
            "ablate",
            json!({ "rows": rows.len(), "report": out_dir.join("ablation.csv") }),
        ),
    })
}

pub fn cmd_export_attention(run_dir: &Path, ids: &[String], out: &Path) -> Result<CommandOutput> {
    let run = load_run(&locate(run_dir))?;
    let out = resolve_output(out);
    let files = run.export_attention(ids, &out)?;
    Ok(CommandOutput {
        lines: files.iter().map(|f| f.display().to_string()).collect(),
        summary: ok(
            "export-attention",
            json!({
                "instances": ids.len(),
                "layers": run.model.config.encoder.layers,
                "files": files.len(),
                "out": out,
            }),
        ),
    })
}
