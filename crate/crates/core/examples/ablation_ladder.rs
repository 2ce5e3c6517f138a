//! Runs the accumulative component ladder and the residual on/off grid on a
//! synthetic corpus and prints both result tables.

use idrr::config::GridSpec;
use idrr::data::synthetic::SyntheticSpec;
use idrr::pipeline::{ablation_csv, resolve_output, run_ablation, write_synthetic_workspace};

fn main() -> idrr::Result<()> {
    let dir = resolve_output(std::path::Path::new("examples/ablation_ladder"));
    let mut cfg = write_synthetic_workspace(&dir.join("data"), &SyntheticSpec::two_label(11))?;
    cfg.train.learning_rate = 0.01;
    cfg.train.epochs = 8;

    let ladder = run_ablation(&cfg, &GridSpec::accumulative(), &dir.join("ladder"))?;
    print!("{}", ablation_csv(&ladder));
    let residual = run_ablation(&cfg, &GridSpec::residual_grid(), &dir.join("residual"))?;
    print!("{}", ablation_csv(&residual));
    println!("ladder_rows={} residual_rows={}", ladder.len(), residual.len());
    Ok(())
}
