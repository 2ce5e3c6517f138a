//! Trains the small bidirectional language model that stands in for a
//! pretrained contextual encoder, then freezes its layer outputs to a file.

use idrr::data::synthetic::SyntheticSpec;
use idrr::data::load_corpus;
use idrr::pipeline::{prep_toy_contextual, resolve_output, write_synthetic_workspace};
use idrr::word_level::PrecomputedContextual;

fn main() -> idrr::Result<()> {
    let dir = resolve_output(std::path::Path::new("examples/toy_contextual"));
    let mut cfg = write_synthetic_workspace(&dir, &SyntheticSpec::two_label(3))?;
    cfg.contextual.toy.epochs = 3;
    let records = load_corpus(cfg.paths.corpus.as_deref().unwrap())?;

    let (vectors, trace) = prep_toy_contextual(&cfg, &records)?;
    for (epoch, ppl) in trace.iter().enumerate() {
        println!("epoch {epoch}: perplexity {ppl:.3}");
    }
    let path = dir.join("contextual.jsonl");
    vectors.save(&path)?;
    let replayed = PrecomputedContextual::load(&path)?;
    assert_eq!(replayed.len(), vectors.len());
    println!("entries={} dim={} path={}", vectors.len(), cfg.contextual.toy.dim, path.display());
    Ok(())
}
