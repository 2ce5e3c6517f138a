//! Learns merges from a word-frequency table and segments seen and unseen words.

use idrr::bpe::{apply_bpe, learn_bpe, MergeTable, WordFrequency};
use idrr::pipeline::resolve_output;

fn main() -> idrr::Result<()> {
    let corpus = WordFrequency::parse("low 5\nlower 2\nnewest 6\nwidest 3\n", "inline")?;
    let table = learn_bpe(&corpus, 10)?;
    for (i, (a, b)) in table.merges().iter().enumerate() {
        println!("merge {i:>2}: {a} + {b}");
    }
    for word in ["lowest", "newer", "wide", "zebra"] {
        println!("{word:>8} -> {}", apply_bpe(word, &table).join(" "));
    }

    let dir = resolve_output(std::path::Path::new("examples/learn_bpe"));
    std::fs::create_dir_all(&dir).map_err(|e| idrr::Error::io(&dir, e))?;
    let path = dir.join("merges.txt");
    table.save(&path)?;
    // the file round-trips to the same table
    assert_eq!(MergeTable::load(&path)?, table);
    println!("merges={} path={}", table.len(), path.display());
    Ok(())
}
