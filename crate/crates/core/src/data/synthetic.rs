//! Synthetic corpora with planted lexical cues, for sanity runs and examples.
//!
//! Each record's Arg2 contains exactly one cue word tied to its sense; every
//! other token is filler drawn uniformly from a pseudo-word vocabulary that
//! never contains a cue.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InstanceRecord, SplitConfig};

const SYLLABLES: [&str; 12] = [
    "ka", "lo", "mi", "ren", "tu", "sa", "vo", "pel", "ni", "dor", "fi", "gu",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SenseCue {
    pub sense: String,
    pub cue: String,
    pub connective: String,
}

impl SenseCue {
    pub fn new(sense: &str, cue: &str, connective: &str) -> Self {
        SenseCue {
            sense: sense.into(),
            cue: cue.into(),
            connective: connective.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub cues: Vec<SenseCue>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Inclusive argument length range, cue included.
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two eleven-way types, 64 records per split.
    pub fn two_label(seed: u64) -> Self {
        SyntheticSpec {
            cues: vec![
                SenseCue::new("Contingency.Cause", "because", "because"),
                SenseCue::new("Comparison.Contrast", "however", "but"),
            ],
            train: 64,
            dev: 64,
            test: 64,
            min_len: 4,
            max_len: 8,
            vocab_size: 40,
            seed,
        }
    }

    /// One type per top-level class, so it serves four-way and binary tasks.
    pub fn four_class(seed: u64) -> Self {
        SyntheticSpec {
            cues: vec![
                SenseCue::new("Comparison.Contrast", "however", "but"),
                SenseCue::new("Contingency.Cause", "because", "because"),
                SenseCue::new("Expansion.Instantiation", "example", "for example"),
                SenseCue::new("Temporal.Asynchronous", "later", "then"),
            ],
            train: 96,
            dev: 48,
            test: 48,
            ..SyntheticSpec::two_label(seed)
        }
    }
}

/// Deterministic pseudo-word for filler index `i`: its base-12 digits, at least
/// two, spelled as syllables. The syllable set is prefix-free, so distinct
/// indices give distinct words.
pub fn filler_word(i: usize) -> String {
    let s = SYLLABLES.len();
    let mut w = String::new();
    let mut n = i;
    let mut digits = 0;
    while n > 0 || digits < 2 {
        w.push_str(SYLLABLES[n % s]);
        n /= s;
        digits += 1;
    }
    w
}

/// Builds train, dev and test records placed in sections of `split`.
pub fn generate(spec: &SyntheticSpec, split: &SplitConfig) -> Vec<InstanceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab: Vec<String> = (0..spec.vocab_size.max(1)).map(filler_word).collect();
    let mut out = Vec::with_capacity(spec.train + spec.dev + spec.test);
    let parts = [
        ("train", spec.train, &split.train),
        ("dev", spec.dev, &split.dev),
        ("test", spec.test, &split.test),
    ];
    for (name, count, sections) in parts {
        let sections: Vec<u8> = sections.iter().copied().collect();
        for i in 0..count {
            let cue = &spec.cues[i % spec.cues.len()];
            let filler = |len: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
                (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect()
            };
            let len1 = rng.gen_range(spec.min_len..=spec.max_len);
            let len2 = rng.gen_range(spec.min_len..=spec.max_len);
            let arg1 = filler(len1, &mut rng);
            let mut arg2 = filler(len2 - 1, &mut rng);
            let at = rng.gen_range(0..=arg2.len());
            arg2.insert(at, cue.cue.clone());
            out.push(InstanceRecord {
                id: format!("{name}-{i:04}"),
                arg1,
                arg2,
                senses: vec![cue.sense.clone()],
                connective: Some(cue.connective.clone()),
                section: *sections.choose(&mut rng).expect("split has sections"),
            });
        }
    }
    out
}
