//! The full network: token embeddings, argument encoders, bi-attention, and
//! the relation and connective classifier heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ArgRole, Instance, LabelSpace};
use crate::error::{Error, Result};
use crate::layers::{Forward, Linear};
use crate::pair_level::{build_pair_representation, BiAttention, PairConfig, PairOutput, RealLengths, POOL_K};
use crate::sentence_level::{EncoderConfig, EncoderStack};
use crate::tensor::{softmax_in_place, ParamStore, Tape, Var};
use crate::word_level::{
    ContextualEmbedder, SubwordVocab, TokenEmbedder, WordEmbeddingTable, WordLevelConfig,
    WordLevelResources,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_level: WordLevelConfig,
    pub encoder: EncoderConfig,
    pub pair: PairConfig,
    /// Arguments are padded or truncated to this many tokens.
    pub max_len: usize,
    /// Width of an optional tanh layer in each classifier head.
    pub classifier_hidden: Option<usize>,
    /// Train the connective head alongside the relation head.
    pub connective_loss: bool,
    pub embedding_dropout: f64,
    pub classifier_dropout: f64,
}

impl ModelConfig {
    /// Full-size dimensions: `d_e = 700`, `l = 4`, `N = 100`.
    pub fn full_size() -> Self {
        ModelConfig {
            word_level: WordLevelConfig::full_size(),
            encoder: EncoderConfig::default(),
            pair: PairConfig::default(),
            max_len: 100,
            classifier_hidden: None,
            connective_loss: true,
            embedding_dropout: 0.4,
            classifier_dropout: 0.3,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.word_level.output_dim()
    }

    /// Length of the pair representation, `4·l·d_e`.
    pub fn pair_dim(&self) -> usize {
        2 * POOL_K * self.encoder.layers * self.embedding_dim()
    }
}

/// Affine classifier with an optional tanh hidden layer.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: Option<Linear>,
    pub output: Linear,
}

impl Head {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: Option<usize>,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let hidden_layer = hidden.map(|h| Linear::new(store, &format!("{name}.hidden"), input, h, rng));
        let width = hidden.unwrap_or(input);
        Head {
            hidden: hidden_layer,
            output: Linear::new(store, &format!("{name}.output"), width, classes, rng),
        }
    }

    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let x = match &self.hidden {
            Some(h) => h.forward(fwd, x)?.tanh(),
            None => x,
        };
        self.output.forward(fwd, x)
    }
}

/// Frozen inputs shared by every forward pass.
pub struct Resources {
    pub words: WordEmbeddingTable,
    pub subwords: SubwordVocab,
    pub contextual: Option<Box<dyn ContextualEmbedder>>,
}

impl Resources {
    pub fn view(&self) -> WordLevelResources<'_> {
        WordLevelResources {
            words: &self.words,
            subwords: &self.subwords,
            contextual: self.contextual.as_deref(),
        }
    }
}

/// Loss terms of one batch.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub relation: Var<'t>,
    pub connective: Option<Var<'t>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

pub struct Model {
    pub config: ModelConfig,
    pub labels: LabelSpace,
    pub connectives: Vec<String>,
    pub params: ParamStore,
    pub embedder: TokenEmbedder,
    pub encoder: EncoderStack,
    pub attention: BiAttention,
    pub relation_head: Head,
    pub connective_head: Head,
}

impl Model {
    /// Builds and initializes a model. `connectives` is the connective head's
    /// class list; it needs at least one entry.
    pub fn new(
        config: ModelConfig,
        labels: LabelSpace,
        connectives: Vec<String>,
        subword_vocab_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if config.max_len < POOL_K {
            return Err(Error::config(
                "task.max_len",
                format!("must be at least {POOL_K} for 2-max pooling"),
            ));
        }
        if connectives.is_empty() {
            return Err(Error::Data("connective vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embedder = TokenEmbedder::new(
            &mut params,
            "embed",
            config.word_level.clone(),
            subword_vocab_size,
            &mut rng,
        )?;
        let d = config.embedding_dim();
        let encoder = EncoderStack::new(&mut params, "encoder", config.encoder.clone(), d, &mut rng)?;
        let attention = BiAttention::new(&mut params, "attention", d, &mut rng);
        let pair = config.pair_dim();
        let relation_head = Head::new(
            &mut params,
            "relation",
            pair,
            config.classifier_hidden,
            labels.len(),
            &mut rng,
        );
        let connective_head = Head::new(
            &mut params,
            "connective",
            pair,
            config.classifier_hidden,
            connectives.len(),
            &mut rng,
        );
        Ok(Model {
            config,
            labels,
            connectives,
            params,
            embedder,
            encoder,
            attention,
            relation_head,
            connective_head,
        })
    }

    pub fn connective_index(&self, connective: &str) -> Option<usize> {
        self.connectives.iter().position(|c| c == connective)
    }

    /// Pair representation of one instance plus its attention maps.
    pub fn encode<'t>(
        &self,
        fwd: &Forward<'t>,
        res: &Resources,
        inst: &Instance,
    ) -> Result<PairOutput<'t>> {
        let n = self.config.max_len;
        let view = res.view();
        let mut layers = Vec::with_capacity(2);
        for (role, tokens) in [(ArgRole::Arg1, &inst.arg1), (ArgRole::Arg2, &inst.arg2)] {
            let e = self
                .embedder
                .embed_argument(fwd, &view, &inst.id, role, tokens, n)?;
            let e = fwd.dropout(e, self.config.embedding_dropout)?;
            layers.push(self.encoder.stack_forward(fwd, e, role)?);
        }
        let real = RealLengths {
            arg1: inst.arg1.len().min(n),
            arg2: inst.arg2.len().min(n),
        };
        build_pair_representation(
            fwd,
            &layers[0],
            &layers[1],
            &self.attention,
            &self.config.pair,
            real,
        )
    }

    /// `B × 4·l·d_e` matrix of pair representations, classifier dropout applied.
    pub fn representations<'t>(
        &self,
        fwd: &Forward<'t>,
        res: &Resources,
        batch: &[Instance],
    ) -> Result<Var<'t>> {
        let width = self.config.pair_dim();
        let rows = batch
            .iter()
            .map(|inst| self.encode(fwd, res, inst)?.representation.reshape([1, width]))
            .collect::<Result<Vec<_>>>()?;
        fwd.dropout(Var::concat_rows(&rows)?, self.config.classifier_dropout)
    }

    /// Relation cross-entropy plus, when enabled and `fwd` is training,
    /// connective cross-entropy over the same representations.
    pub fn joint_loss<'t>(
        &self,
        fwd: &Forward<'t>,
        res: &Resources,
        batch: &[Instance],
    ) -> Result<LossParts<'t>> {
        let gold: Vec<usize> = batch
            .iter()
            .map(|i| {
                i.labels.first().copied().ok_or_else(|| {
                    Error::Data(format!("instance `{}` has no relation label", i.id))
                })
            })
            .collect::<Result<_>>()?;
        let rep = self.representations(fwd, res, batch)?;
        let relation = self.relation_head.forward(fwd, rep)?.cross_entropy(&gold)?;
        if !(self.config.connective_loss && fwd.is_training()) {
            return Ok(LossParts {
                total: relation,
                relation,
                connective: None,
            });
        }
        let conn_gold: Vec<usize> = batch
            .iter()
            .map(|i| {
                let c = i.connective.as_deref().ok_or_else(|| {
                    Error::Data(format!("training instance `{}` has no connective", i.id))
                })?;
                self.connective_index(c).ok_or_else(|| {
                    Error::Data(format!("connective `{c}` of `{}` is not in the vocabulary", i.id))
                })
            })
            .collect::<Result<_>>()?;
        let connective = self.connective_head.forward(fwd, rep)?.cross_entropy(&conn_gold)?;
        Ok(LossParts {
            total: relation.add(connective)?,
            relation,
            connective: Some(connective),
        })
    }

    /// Relation logits for a batch, inference mode.
    pub fn relation_logits(&self, res: &Resources, batch: &[Instance]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let fwd = Forward::eval(&tape, &self.params);
        let rep = self.representations(&fwd, res, batch)?;
        let logits = self.relation_head.forward(&fwd, rep)?.value();
        Ok((0..batch.len()).map(|r| logits.row(r).to_vec()).collect())
    }

    pub fn predict_batch(&self, res: &Resources, batch: &[Instance]) -> Result<Vec<Prediction>> {
        Ok(self
            .relation_logits(res, batch)?
            .into_iter()
            .map(prediction_from_logits)
            .collect())
    }

    pub fn predict(&self, res: &Resources, inst: &Instance) -> Result<Prediction> {
        let mut out = self.predict_batch(res, std::slice::from_ref(inst))?;
        Ok(out.remove(0))
    }
}

/// Softmax probabilities and the first arg-max class.
pub fn prediction_from_logits(mut logits: Vec<f64>) -> Prediction {
    softmax_in_place(&mut logits);
    let label = logits
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > logits[best] { i } else { best });
    Prediction {
        label,
        probabilities: logits,
    }
}
