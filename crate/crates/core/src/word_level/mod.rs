//! Token embeddings `e = [e^w; e^s; e^c]`: a frozen word vector, a subword
//! CNN encoding, and a projected mix of two contextual layers.
//!
//! Each part can be switched off; a disabled part contributes zero columns of
//! its usual width, so `d_e` never changes. Padding positions are zero across
//! all three parts.

pub mod contextual;
pub mod embedding;
pub mod subword;
pub mod toy_lm;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{pad_truncate, ArgRole, PAD};
use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::tensor::{ParamStore, Tensor, Var};

pub use contextual::{ContextualEmbedder, ContextualLayers, ContextualMixer, PrecomputedContextual};
pub use embedding::WordEmbeddingTable;
pub use subword::{SubwordConfig, SubwordEncoder, SubwordVocab};
pub use toy_lm::{train_toy_contextual, ToyContextualEmbedder, ToyLmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingParts {
    pub word: bool,
    pub subword: bool,
    pub contextual: bool,
}

impl Default for EmbeddingParts {
    fn default() -> Self {
        EmbeddingParts {
            word: true,
            subword: true,
            contextual: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordLevelConfig {
    pub word_dim: usize,
    pub subword: SubwordConfig,
    /// Width `d_c′` of the contextual layer outputs.
    pub contextual_input_dim: usize,
    pub contextual_dim: usize,
    pub parts: EmbeddingParts,
}

impl WordLevelConfig {
    /// `d_w = 300`, `d_s = 100`, `d_c = 300` over 1024-wide contextual layers.
    pub fn full_size() -> Self {
        WordLevelConfig {
            word_dim: 300,
            subword: SubwordConfig::default(),
            contextual_input_dim: 1024,
            contextual_dim: 300,
            parts: EmbeddingParts::default(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.word_dim + self.subword.output_dim + self.contextual_dim
    }
}

/// Read-only inputs the embedder consults besides its own parameters.
#[derive(Clone, Copy)]
pub struct WordLevelResources<'a> {
    pub words: &'a WordEmbeddingTable,
    pub subwords: &'a SubwordVocab,
    pub contextual: Option<&'a dyn ContextualEmbedder>,
}

#[derive(Clone, Debug)]
pub struct TokenEmbedder {
    pub config: WordLevelConfig,
    pub subword: SubwordEncoder,
    pub mixer: ContextualMixer,
}

impl TokenEmbedder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: WordLevelConfig,
        subword_vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let subword = SubwordEncoder::new(
            store,
            &format!("{name}.subword"),
            config.subword.clone(),
            subword_vocab_size,
            rng,
        )?;
        let mixer = ContextualMixer::new(
            store,
            &format!("{name}.contextual"),
            config.contextual_input_dim,
            config.contextual_dim,
            rng,
        );
        Ok(TokenEmbedder {
            config,
            subword,
            mixer,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// `n × d_e` embeddings of `tokens` after padding or truncation to `n`.
    pub fn embed_argument<'t>(
        &self,
        fwd: &Forward<'t>,
        res: &WordLevelResources<'_>,
        id: &str,
        role: ArgRole,
        tokens: &[String],
        n: usize,
    ) -> Result<Var<'t>> {
        let cfg = &self.config;
        let padded = pad_truncate(tokens, n);
        let real = tokens.len().min(n);

        let word = if cfg.parts.word {
            if res.words.dim() != cfg.word_dim {
                return Err(Error::Dimension {
                    op: "embed_word",
                    lhs: vec![res.words.dim()],
                    rhs: vec![cfg.word_dim],
                });
            }
            fwd.constant(res.words.embed_sequence(&padded)?)
        } else {
            fwd.constant(Tensor::zeros([n, cfg.word_dim]))
        };

        let d_s = cfg.subword.output_dim;
        let subword = if cfg.parts.subword {
            let zero = fwd.constant(Tensor::zeros([1, d_s]));
            let rows = padded
                .iter()
                .map(|t| {
                    if t == PAD {
                        Ok(zero)
                    } else {
                        self.subword.encode_word(fwd, res.subwords, t)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Var::concat_rows(&rows)?
        } else {
            fwd.constant(Tensor::zeros([n, d_s]))
        };

        let contextual = if cfg.parts.contextual {
            let source = res.contextual.ok_or_else(|| {
                Error::config("model.parts.contextual", "enabled without a contextual source")
            })?;
            if source.dim() != cfg.contextual_input_dim {
                return Err(Error::Dimension {
                    op: "contextual_layers",
                    lhs: vec![source.dim()],
                    rhs: vec![cfg.contextual_input_dim],
                });
            }
            let layers = source.layers(id, role, tokens)?;
            let fit = |t: &Tensor| -> Result<Tensor> {
                let d = t.cols();
                let mut data = vec![0.0; n * d];
                data[..real * d].copy_from_slice(&t.data()[..real * d]);
                Tensor::matrix(n, d, data)
            };
            let h0 = fwd.constant(fit(&layers.h0)?);
            let h1 = fwd.constant(fit(&layers.h1)?);
            self.mixer.mix_and_project(fwd, h0, h1)?
        } else {
            fwd.constant(Tensor::zeros([n, cfg.contextual_dim]))
        };

        let e = Var::concat_cols(&[word, subword, contextual])?;
        if real == n {
            return Ok(e);
        }
        let d_e = cfg.output_dim();
        let mut mask = vec![1.0; n * d_e];
        mask[real * d_e..].iter_mut().for_each(|m| *m = 0.0);
        e.mul_const(&Tensor::matrix(n, d_e, mask)?)
    }
}
