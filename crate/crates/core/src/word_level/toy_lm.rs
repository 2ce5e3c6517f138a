//! A small bidirectional language model used as a stand-in contextual embedder.
//!
//! Each token is read as characters through a CNN with max pooling, then fed
//! to two independent directional stacks of two GRU layers. The forward stack
//! predicts the next word and the backward stack the previous one through a
//! shared softmax. After training the model is frozen: its layer outputs are
//! `h⁰ = [fwd₁; bwd₁]` and `h¹ = [fwd₂; bwd₂]`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::contextual::{ContextualEmbedder, ContextualLayers};
use super::embedding::hex;
use crate::data::ArgRole;
use crate::error::{Error, Result};
use crate::layers::{Forward, Gru, Linear};
use crate::tensor::{encode_checkpoint, AdaGrad, Init, ParamId, ParamStore, Tape, Var};

const PAD_CHAR: usize = 0;
const UNK_CHAR: usize = 1;
const UNK_WORD: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyLmConfig {
    /// Layer output width `d_c′`; each direction gets half.
    pub dim: usize,
    pub char_dim: usize,
    pub char_kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            dim: 64,
            char_dim: 16,
            char_kernel: 3,
            epochs: 5,
            batch_size: 8,
            lr: 0.05,
            seed: 13,
        }
    }
}

impl ToyLmConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(format!("dim {} must be even and at least 2", self.dim));
        }
        if self.char_dim == 0 || self.char_kernel == 0 || self.batch_size == 0 {
            return Err("char_dim, char_kernel and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return Err("lr must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Network {
    char_embedding: ParamId,
    char_kernel: ParamId,
    char_bias: ParamId,
    fwd1: Gru,
    fwd2: Gru,
    bwd1: Gru,
    bwd2: Gru,
    output: Linear,
}

/// Directional layer outputs for one sentence, each `n × dim/2`.
struct Stacks<'t> {
    fwd1: Var<'t>,
    bwd1: Var<'t>,
    fwd2: Var<'t>,
    bwd2: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct ToyContextualEmbedder {
    config: ToyLmConfig,
    chars: BTreeMap<char, usize>,
    words: BTreeMap<String, usize>,
    params: ParamStore,
    net: Network,
}

impl ToyContextualEmbedder {
    pub fn config(&self) -> &ToyLmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn word_vocab_size(&self) -> usize {
        self.words.len() + 1
    }

    fn char_ids(&self, word: &str) -> Vec<usize> {
        word.chars()
            .map(|c| self.chars.get(&c).copied().unwrap_or(UNK_CHAR))
            .collect()
    }

    fn word_id(&self, word: &str) -> usize {
        self.words.get(word).copied().unwrap_or(UNK_WORD)
    }

    fn token_vector<'t>(&self, fwd: &Forward<'t>, word: &str) -> Result<Var<'t>> {
        fwd.memo(&format!("char\u{0}{word}"), || {
            let k = self.config.char_kernel;
            let mut seq = vec![PAD_CHAR; k - 1];
            seq.extend(self.char_ids(word));
            seq.extend(std::iter::repeat(PAD_CHAR).take(k - 1));
            fwd.param(self.net.char_embedding)
                .select_rows(&seq)?
                .conv1d(
                    fwd.param(self.net.char_kernel),
                    Some(fwd.param(self.net.char_bias)),
                    0,
                )?
                .tanh()
                .topk_pool(1)?
                .reshape([1, self.config.dim / 2])
        })
    }

    fn run<'t>(&self, fwd: &Forward<'t>, tokens: &[String]) -> Result<Stacks<'t>> {
        if tokens.is_empty() {
            return Err(Error::Input("contextual embedder needs at least one token".into()));
        }
        let rows = tokens
            .iter()
            .map(|t| self.token_vector(fwd, t))
            .collect::<Result<Vec<_>>>()?;
        let x = Var::concat_rows(&rows)?;
        let fwd1 = self.net.fwd1.forward(fwd, x, false)?;
        let bwd1 = self.net.bwd1.forward(fwd, x, true)?;
        Ok(Stacks {
            fwd2: self.net.fwd2.forward(fwd, fwd1, false)?,
            bwd2: self.net.bwd2.forward(fwd, bwd1, true)?,
            fwd1,
            bwd1,
        })
    }

    /// Summed next/previous-word negative log-likelihood and prediction count.
    fn sentence_nll<'t>(&self, fwd: &Forward<'t>, tokens: &[String]) -> Result<(Var<'t>, usize)> {
        let n = tokens.len();
        let s = self.run(fwd, tokens)?;
        let ids: Vec<usize> = tokens.iter().map(|t| self.word_id(t)).collect();
        let head: Vec<usize> = (0..n - 1).collect();
        let tail: Vec<usize> = (1..n).collect();
        let next = self
            .net
            .output
            .forward(fwd, s.fwd2.select_rows(&head)?)?
            .cross_entropy(&ids[1..])?;
        let prev = self
            .net
            .output
            .forward(fwd, s.bwd2.select_rows(&tail)?)?
            .cross_entropy(&ids[..n - 1])?;
        // cross_entropy is a mean; rescale to a sum over both directions
        let total = next.add(prev)?.affine((n - 1) as f64, 0.0);
        Ok((total, 2 * (n - 1)))
    }

    /// Perplexity of `sentences` under the frozen parameters.
    pub fn perplexity(&self, sentences: &[Vec<String>]) -> Result<f64> {
        self.perplexity_with(&self.params, sentences)
    }

    fn perplexity_with(&self, params: &ParamStore, sentences: &[Vec<String>]) -> Result<f64> {
        let mut nll = 0.0;
        let mut count = 0;
        for s in sentences.iter().filter(|s| s.len() >= 2) {
            let tape = Tape::new();
            let fwd = Forward::eval(&tape, params);
            let (loss, c) = self.sentence_nll(&fwd, s)?;
            nll += loss.to_vec()[0];
            count += c;
        }
        Ok((nll / count.max(1) as f64).exp())
    }
}

impl ContextualEmbedder for ToyContextualEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn layers(&self, _id: &str, _role: ArgRole, tokens: &[String]) -> Result<ContextualLayers> {
        let tape = Tape::new();
        let fwd = Forward::eval(&tape, &self.params);
        let s = self.run(&fwd, tokens)?;
        Ok(ContextualLayers {
            h0: Var::concat_cols(&[s.fwd1, s.bwd1])?.value(),
            h1: Var::concat_cols(&[s.fwd2, s.bwd2])?.value(),
        })
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(encode_checkpoint(&self.params));
        for (c, i) in &self.chars {
            h.update(c.to_string().as_bytes());
            h.update((*i as u64).to_le_bytes());
        }
        for (w, i) in &self.words {
            h.update(w.as_bytes());
            h.update((*i as u64).to_le_bytes());
        }
        hex(&h.finalize())
    }
}

/// Trains the stand-in embedder on tokenized sentences.
///
/// Returns the frozen embedder and the training perplexity after each epoch,
/// preceded by the perplexity at initialization.
pub fn train_toy_contextual(
    sentences: &[Vec<String>],
    config: &ToyLmConfig,
) -> Result<(ToyContextualEmbedder, Vec<f64>)> {
    config
        .validate()
        .map_err(|m| Error::config("contextual.toy", m))?;
    let usable: Vec<Vec<String>> = sentences.iter().filter(|s| s.len() >= 2).cloned().collect();
    let word_set: BTreeSet<&str> = usable.iter().flatten().map(String::as_str).collect();
    if usable.is_empty() || word_set.len() < 2 {
        return Err(Error::Input(
            "corpus too small: need a sentence of two tokens and two distinct words".into(),
        ));
    }
    let chars: BTreeMap<char, usize> = word_set
        .iter()
        .flat_map(|w| w.chars())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i + 2))
        .collect();
    let words: BTreeMap<String, usize> = word_set
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_string(), i + 1))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::new();
    let half = config.dim / 2;
    let (c, k) = (config.char_dim, config.char_kernel);
    let net = Network {
        char_embedding: params.init("lm.char_embedding", [chars.len() + 2, c], Init::Uniform(0.5), &mut rng),
        char_kernel: params.init("lm.char_conv.kernel", [k, c, half], Init::FanIn(k * c), &mut rng),
        char_bias: params.init("lm.char_conv.bias", [half], Init::Zeros, &mut rng),
        fwd1: Gru::new(&mut params, "lm.fwd1", half, half, &mut rng),
        fwd2: Gru::new(&mut params, "lm.fwd2", half, half, &mut rng),
        bwd1: Gru::new(&mut params, "lm.bwd1", half, half, &mut rng),
        bwd2: Gru::new(&mut params, "lm.bwd2", half, half, &mut rng),
        output: Linear::new(&mut params, "lm.output", half, words.len() + 1, &mut rng),
    };
    let mut model = ToyContextualEmbedder {
        config: config.clone(),
        chars,
        words,
        params: ParamStore::new(),
        net,
    };

    let optimizer = AdaGrad::new(config.lr, 1e-8);
    let mut trace = vec![model.perplexity_with(&params, &usable)?];
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let grads = {
                let fwd = Forward::eval(&tape, &params);
                let mut total: Option<Var<'_>> = None;
                let mut count = 0;
                for &i in batch {
                    let (nll, c) = model.sentence_nll(&fwd, &usable[i])?;
                    total = Some(match total {
                        Some(t) => t.add(nll)?,
                        None => nll,
                    });
                    count += c;
                }
                let loss = total.expect("batch is non-empty").affine(1.0 / count as f64, 0.0);
                tape.backward(loss)?
            };
            params.accumulate(&tape, &grads);
            optimizer.step(&mut params)?;
        }
        trace.push(model.perplexity_with(&params, &usable)?);
    }
    model.params = params;
    Ok((model, trace))
}

/// Word counts per sentence, handy for sizing toy runs.
pub fn token_count(sentences: &[Vec<String>]) -> usize {
    sentences.iter().map(Vec::len).sum()
}
