use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{apply_bpe, MergeTable};
use crate::error::{Error, Result};
use crate::layers::{Forward, Linear};
use crate::tensor::{Init, ParamId, ParamStore, Var};

pub const PAD_SUBWORD: usize = 0;
pub const UNK_SUBWORD: usize = 1;

/// Subword symbol ids: PAD, UNK, the characters of the vocabulary words, then
/// every merged symbol in merge order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordVocab {
    table: MergeTable,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl SubwordVocab {
    pub fn new<'a>(table: MergeTable, words: impl IntoIterator<Item = &'a str>) -> Self {
        let chars: BTreeSet<String> = words
            .into_iter()
            .flat_map(|w| w.chars().map(String::from).collect::<Vec<_>>())
            .collect();
        let mut symbols = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut index = HashMap::new();
        for s in chars.into_iter().chain(table.merged_symbols()) {
            if !index.contains_key(&s) {
                index.insert(s.clone(), symbols.len());
                symbols.push(s);
            }
        }
        SubwordVocab {
            table,
            symbols,
            index,
        }
    }

    /// Rebuilds a vocabulary from a stored symbol list, which must begin with
    /// PAD and UNK and hold no duplicates.
    pub fn from_symbols(table: MergeTable, symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 2 || symbols[PAD_SUBWORD] != "<pad>" || symbols[UNK_SUBWORD] != "<unk>" {
            return Err(Error::Input("subword symbols must begin with <pad>, <unk>".into()));
        }
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate subword symbol `{s}`")));
            }
        }
        Ok(SubwordVocab {
            table,
            symbols,
            index,
        })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn table(&self) -> &MergeTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK_SUBWORD)
    }

    pub fn segment(&self, word: &str) -> Vec<usize> {
        apply_bpe(word, &self.table)
            .iter()
            .map(|s| self.id(s))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordConfig {
    pub embed_dim: usize,
    pub kernels: Vec<usize>,
    /// Highway width; split evenly across kernels as conv channels.
    pub output_dim: usize,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        SubwordConfig {
            embed_dim: 50,
            kernels: vec![2, 3],
            output_dim: 100,
        }
    }
}

impl SubwordConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return Err("kernel sizes must be a non-empty list of positive sizes".into());
        }
        if self.embed_dim == 0 || self.output_dim == 0 {
            return Err("dimensions must be positive".into());
        }
        if self.output_dim % self.kernels.len() != 0 {
            return Err(format!(
                "output_dim {} is not divisible by {} kernels",
                self.output_dim,
                self.kernels.len()
            ));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.output_dim / self.kernels.len()
    }

    pub fn max_kernel(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Clone, Debug)]
pub struct SubwordConv {
    pub width: usize,
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// Subword CNN with tanh, max-over-time pooling, and a highway layer.
///
/// Every subword sequence is framed by `max_kernel − 1` PAD symbols on each
/// side and convolved without further padding. Pooling only sees windows that
/// overlap at least one real subword, so extra leading PADs change nothing.
#[derive(Clone, Debug)]
pub struct SubwordEncoder {
    pub config: SubwordConfig,
    pub embedding: ParamId,
    pub convs: Vec<SubwordConv>,
    pub gate: Linear,
    pub transform: Linear,
}

impl SubwordEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: SubwordConfig,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config
            .validate()
            .map_err(|m| Error::config("model.subword", m))?;
        let e = config.embed_dim;
        let ch = config.channels();
        let embedding = store.init(
            format!("{name}.embedding"),
            [vocab_size, e],
            Init::Uniform(0.5),
            rng,
        );
        let convs = config
            .kernels
            .iter()
            .map(|&k| SubwordConv {
                width: k,
                kernel: store.init(
                    format!("{name}.conv{k}.kernel"),
                    [k, e, ch],
                    Init::FanIn(k * e),
                    rng,
                ),
                bias: store.init(format!("{name}.conv{k}.bias"), [ch], Init::Zeros, rng),
            })
            .collect();
        let d = config.output_dim;
        let gate = Linear::new(store, &format!("{name}.highway_gate"), d, d, rng);
        let transform = Linear::new(store, &format!("{name}.highway_transform"), d, d, rng);
        Ok(SubwordEncoder {
            config,
            embedding,
            convs,
            gate,
            transform,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Pooled conv features `u` (`1×d_s`) with `left_pad` leading PADs.
    pub fn pool<'t>(&self, fwd: &Forward<'t>, ids: &[usize], left_pad: usize) -> Result<Var<'t>> {
        if ids.is_empty() {
            return Err(Error::Input("empty subword sequence".into()));
        }
        let frame = self.config.max_kernel() - 1;
        if left_pad < frame {
            return Err(Error::Argument(format!(
                "left padding {left_pad} is shorter than the kernel reach {frame}"
            )));
        }
        let mut seq = vec![PAD_SUBWORD; left_pad];
        seq.extend_from_slice(ids);
        seq.extend(std::iter::repeat(PAD_SUBWORD).take(frame));
        let embedded = fwd.param(self.embedding).select_rows(&seq)?;

        let mut pooled = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let k = conv.width;
            let maps = embedded
                .conv1d(fwd.param(conv.kernel), Some(fwd.param(conv.bias)), 0)?
                .tanh();
            // windows starting in [left_pad − k + 1, left_pad + L − 1] overlap the word
            let first = left_pad + 1 - k;
            let touching: Vec<usize> = (first..left_pad + ids.len()).collect();
            pooled.push(maps.select_rows(&touching)?.topk_pool(1)?);
        }
        Var::concat(&pooled)?.reshape([1, self.config.output_dim])
    }

    /// `g ⊙ relu(u·W_h + b_h) + (1 − g) ⊙ u` with `g = σ(u·W_g + b_g)`.
    pub fn highway<'t>(&self, fwd: &Forward<'t>, u: Var<'t>) -> Result<Var<'t>> {
        let g = self.gate.forward(fwd, u)?.sigmoid();
        let t = self.transform.forward(fwd, u)?.relu();
        u.add(g.mul(t.sub(u)?)?)
    }

    pub fn encode_ids<'t>(&self, fwd: &Forward<'t>, ids: &[usize]) -> Result<Var<'t>> {
        let u = self.pool(fwd, ids, self.config.max_kernel() - 1)?;
        self.highway(fwd, u)
    }

    /// Encoding of one word, shared by every occurrence within the pass.
    pub fn encode_word<'t>(
        &self,
        fwd: &Forward<'t>,
        vocab: &SubwordVocab,
        word: &str,
    ) -> Result<Var<'t>> {
        fwd.memo(&format!("subword\u{0}{word}"), || {
            self.encode_ids(fwd, &vocab.segment(word))
        })
    }
}
