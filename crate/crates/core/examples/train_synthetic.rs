//! Trains the full model on a synthetic corpus whose senses are marked by cue
//! words, then reloads the run directory and scores every split.

use idrr::data::synthetic::SyntheticSpec;
use idrr::pipeline::{load_run, resolve_output, run_train, write_synthetic_workspace, SplitChoice};

fn main() -> idrr::Result<()> {
    let dir = resolve_output(std::path::Path::new("examples/train_synthetic"));
    let mut cfg = write_synthetic_workspace(&dir.join("data"), &SyntheticSpec::two_label(7))?;
    cfg.train.learning_rate = 0.01;
    cfg.train.epochs = 60;
    cfg.train.patience = 20;

    let summary = run_train(&cfg, &dir.join("run"))?;
    for row in summary.outcome.trace.iter().step_by(10) {
        println!(
            "epoch {:>3}: loss {:.4} dev {:.3}",
            row.epoch, row.train_loss, row.dev_accuracy
        );
    }
    let run = load_run(&summary.out_dir)?;
    for split in [SplitChoice::Train, SplitChoice::Dev, SplitChoice::Test] {
        println!("{:>5} accuracy {:.3}", split.name(), run.evaluate(split)?.accuracy);
    }
    println!(
        "best_epoch={} pair_dim={} run={}",
        summary.outcome.best_epoch,
        summary.manifest.pair_dim,
        summary.out_dir.display()
    );
    Ok(())
}
