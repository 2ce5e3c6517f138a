//! Fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod bpe_oracle;
pub mod checks;
pub mod grad_cases;
pub mod metric_oracle;

use idrr::bpe::MergeTable;
use idrr::data::{ArgRole, Instance, LabelSpace};
use idrr::model::{Model, ModelConfig, Resources};
use idrr::pair_level::PairConfig;
use idrr::sentence_level::{BlockType, EncoderConfig};
use idrr::tensor::Tensor;
use idrr::word_level::{
    ContextualLayers, EmbeddingParts, PrecomputedContextual, SubwordConfig, SubwordVocab,
    WordEmbeddingTable, WordLevelConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 8] = ["the", "cat", "sat", "because", "rain", "fell", "but", "dry"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries drawn from U[−1, 1).
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn tokens(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

/// Two instances; the second Arg2 is longer than `N = 5` and gets truncated,
/// and one Arg2 token is out of vocabulary.
pub fn toy_batch() -> Vec<Instance> {
    vec![
        Instance {
            id: "a".into(),
            arg1: tokens(&["the", "cat", "sat"]),
            arg2: tokens(&["because", "rain", "fell", "zzz"]),
            labels: vec![1],
            connective: Some("because".into()),
            section: 2,
        },
        Instance {
            id: "b".into(),
            arg1: tokens(&["dry", "cat"]),
            arg2: tokens(&["but", "the", "cat", "sat", "fell", "dry"]),
            labels: vec![0],
            connective: Some("but".into()),
            section: 3,
        },
    ]
}

pub fn toy_config(block: BlockType, layers: usize) -> ModelConfig {
    ModelConfig {
        word_level: WordLevelConfig {
            word_dim: 4,
            subword: SubwordConfig {
                embed_dim: 3,
                kernels: vec![2, 3],
                output_dim: 4,
            },
            contextual_input_dim: 6,
            contextual_dim: 4,
            parts: EmbeddingParts::default(),
        },
        encoder: EncoderConfig {
            block,
            layers,
            kernel_size: 3,
            shared: false,
            residual: true,
            dropout: 0.4,
        },
        pair: PairConfig::default(),
        max_len: 5,
        classifier_hidden: None,
        connective_loss: true,
        embedding_dropout: 0.4,
        classifier_dropout: 0.3,
    }
}

pub fn toy_resources(batch: &[Instance], seed: u64) -> Resources {
    let mut r = rng(seed);
    let words = WordEmbeddingTable::synthesize(WORDS, 4, seed);
    let subwords = SubwordVocab::new(MergeTable::new(vec![("a".into(), "t".into())]), WORDS);
    let mut contextual = PrecomputedContextual::new(6);
    for inst in batch {
        for (role, toks) in [(ArgRole::Arg1, &inst.arg1), (ArgRole::Arg2, &inst.arg2)] {
            let layers = ContextualLayers {
                h0: uniform(&mut r, &[toks.len(), 6]),
                h1: uniform(&mut r, &[toks.len(), 6]),
            };
            contextual.insert(&inst.id, role, layers).unwrap();
        }
    }
    Resources {
        words,
        subwords,
        contextual: Some(Box::new(contextual)),
    }
}

/// A `d_e = 12` model whose every parameter, biases and mixer weights
/// included, is moved off its structured initial value.
pub fn toy_model(config: ModelConfig, seed: u64) -> (Model, Resources, Vec<Instance>) {
    let batch = toy_batch();
    let res = toy_resources(&batch, seed);
    let mut model = Model::new(
        config,
        LabelSpace::four_way(),
        tokens(&["because", "but", "so"]),
        res.subwords.len(),
        seed,
    )
    .unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in model.params.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += r.gen_range(-0.1..0.1);
        }
    }
    (model, res, batch)
}

/// Synthetic two-type workspace trained for a few epochs; seconds per run.
pub fn quick_workspace(dir: &std::path::Path) -> idrr::config::RunConfig {
    let mut cfg = idrr::pipeline::write_synthetic_workspace(
        dir,
        &idrr::data::synthetic::SyntheticSpec::two_label(7),
    )
    .unwrap();
    cfg.train.epochs = 3;
    cfg.train.patience = 3;
    cfg.train.batch_size = 16;
    cfg.train.learning_rate = 0.01;
    cfg
}

/// The overfit setting: 64 training pairs, full-size dropouts, 200 epochs, and a
/// patience that never cuts the run short.
pub fn overfit_workspace(dir: &std::path::Path) -> idrr::config::RunConfig {
    let mut cfg = idrr::pipeline::write_synthetic_workspace(
        dir,
        &idrr::data::synthetic::SyntheticSpec::two_label(7),
    )
    .unwrap();
    cfg.train.learning_rate = 0.01;
    cfg.train.epochs = 200;
    cfg.train.patience = 200;
    cfg
}
