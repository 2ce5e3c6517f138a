//! Brute-force BPE: recounts every bigram from scratch at each step.

use std::collections::BTreeMap;

use idrr::bpe::{learn_bpe, WordFrequency};
use rand::Rng;

use super::rng;

/// Reference learner over `(word, count)` pairs.
pub fn oracle(corpus: &[(String, u64)], num_merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = corpus
        .iter()
        .map(|(w, c)| (w.chars().map(|ch| ch.to_string()).collect(), *c))
        .collect();
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        // BTreeMap iterates pairs in ascending order, so the first maximum
        // seen is the lexicographically smallest one.
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (symbols, c) in &words {
            for i in 1..symbols.len() {
                *counts.entry((symbols[i - 1].clone(), symbols[i].clone())).or_default() += c;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &c) in &counts {
            if best.map_or(true, |(_, b)| c > b) {
                best = Some((pair, c));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let pair = pair.clone();
        for (symbols, _) in &mut words {
            let mut merged = Vec::new();
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
                    merged.push(format!("{}{}", pair.0, pair.1));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            *symbols = merged;
        }
        merges.push(pair);
    }
    merges
}

/// At most 20 word tokens over an alphabet of at most 5 characters.
pub fn random_corpus(seed: u64) -> Vec<(String, u64)> {
    let mut r = rng(seed);
    let alphabet: Vec<char> = "abcde".chars().take(r.gen_range(1..=5)).collect();
    let tokens = r.gen_range(1..=20);
    let mut table: BTreeMap<String, u64> = BTreeMap::new();
    for _ in 0..tokens {
        let len = r.gen_range(1..=7);
        let word: String = (0..len).map(|_| alphabet[r.gen_range(0..alphabet.len())]).collect();
        *table.entry(word).or_default() += r.gen_range(1..=3);
    }
    table.into_iter().collect()
}

/// Compares the learner against the oracle on `n` corpora; returns the number
/// of corpora on which learning stopped before the requested merge count.
pub fn compare(n: u64) -> Result<usize, String> {
    let mut early_stops = 0;
    for seed in 0..n {
        let corpus = random_corpus(seed);
        let mut wf = WordFrequency::new();
        for (w, c) in &corpus {
            wf.add(w, *c);
        }
        let requested = (seed % 40) as usize;
        let expected = oracle(&corpus, requested);
        let got = learn_bpe(&wf, requested).map_err(|e| e.to_string())?;
        if got.merges() != expected.as_slice() {
            return Err(format!(
                "corpus {seed} {corpus:?}: learned {:?}, oracle {expected:?}",
                got.merges()
            ));
        }
        if expected.len() < requested {
            early_stops += 1;
        }
    }
    Ok(early_stops)
}
