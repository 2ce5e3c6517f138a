//! Exports the per-layer Arg1-to-Arg2 attention of one test instance as CSV
//! and PGM, and draws the last layer in the terminal.
//! Shading is relative to each row's maximum.

use idrr::attention_export::attention_dumps;
use idrr::data::synthetic::SyntheticSpec;
use idrr::pipeline::{load_run, resolve_output, run_train, write_synthetic_workspace};

const SHADES: [char; 5] = [' ', '.', ':', '*', '#'];

fn main() -> idrr::Result<()> {
    let dir = resolve_output(std::path::Path::new("examples/attention_heatmap"));
    let mut cfg = write_synthetic_workspace(&dir.join("data"), &SyntheticSpec::two_label(5))?;
    cfg.train.learning_rate = 0.01;
    cfg.train.epochs = 15;
    let summary = run_train(&cfg, &dir.join("run"))?;
    let run = load_run(&summary.out_dir)?;

    let inst = run.splits.test[0].clone();
    let files = run.export_attention(&[inst.id.clone()], &dir.join("maps"))?;
    let dumps = attention_dumps(&run.model, &run.resources, &inst)?;
    let last = dumps.last().expect("at least one layer");
    println!("{:>10} {}", "", last.arg2.iter().map(|w| &w[..1]).collect::<String>());
    for (i, word) in last.arg1.iter().enumerate() {
        let probs = last.matrix.row(i);
        // shade relative to the row maximum; rows are close to uniform early on
        let top = probs.iter().copied().fold(f64::MIN, f64::max);
        let row: String = probs
            .iter()
            .map(|&p| SHADES[((p / top * 4.0).round() as usize).min(SHADES.len() - 1)])
            .collect();
        println!("{word:>10} {row}");
    }
    println!("id={} layers={} files={}", inst.id, dumps.len(), files.len());
    Ok(())
}
