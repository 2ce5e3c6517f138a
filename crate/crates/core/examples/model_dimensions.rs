//! Prints the tensor widths of the full-size configuration for each embedding
//! part combination.

use idrr::model::ModelConfig;

fn main() {
    let full = ModelConfig::full_size();
    let wl = &full.word_level;
    println!(
        "word {} + subword {} + contextual {} = d_e {}",
        wl.word_dim,
        wl.subword.output_dim,
        wl.contextual_dim,
        full.embedding_dim()
    );
    for layers in 1..=full.encoder.layers {
        let mut cfg = full.clone();
        cfg.encoder.layers = layers;
        println!("layers {layers}: pair representation {}", cfg.pair_dim());
    }
    println!("max_len={} pair_dim={}", full.max_len, full.pair_dim());
}
