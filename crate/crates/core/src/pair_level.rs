//! Bi-attention between the two arguments at every encoder layer, 2-max
//! pooling, and layer-wise concatenation into the pair representation.
//!
//! For layer outputs `v1`, `v2` (`N × d`):
//!
//! ```text
//! M  = FFN(v1) · v2ᵀ
//! w2 = softmax_rows(M)  · v2
//! w1 = softmax_rows(Mᵀ) · v1
//! o_j = [top2(w1); top2(w2)]          (4d values)
//! o   = [o_1; …; o_l]                 (4·l·d values)
//! ```
//!
//! One FFN serves every layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Forward, Linear};
use crate::tensor::{ParamStore, Tensor, Var};

/// Values per feature kept by the pooling step.
pub const POOL_K: usize = 2;

/// Logit offset that sends masked positions to exactly zero weight.
const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConfig {
    pub attention: bool,
    /// Res 2: keep every layer's pooled slice, not only the last one.
    pub residual: bool,
    /// Exclude padding positions from attention.
    pub mask_padding: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            attention: true,
            residual: true,
            mask_padding: false,
        }
    }
}

/// Real (non-padding) lengths of the two arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RealLengths {
    pub arg1: usize,
    pub arg2: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended<'t> {
    pub w1: Var<'t>,
    pub w2: Var<'t>,
    /// `softmax_rows(M)`: row `i` weighs Arg2 positions for Arg1 position `i`.
    pub attention: Var<'t>,
    /// `softmax_rows(Mᵀ)`.
    pub attention_t: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct BiAttention {
    pub ffn: Linear,
    pub dim: usize,
}

fn column_mask(rows: usize, cols: usize, real: usize) -> Result<Tensor> {
    let data = (0..rows * cols)
        .map(|i| if i % cols < real { 0.0 } else { MASKED })
        .collect();
    Tensor::matrix(rows, cols, data)
}

impl BiAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        BiAttention {
            ffn: Linear::new(store, &format!("{name}.ffn"), dim, dim, rng),
            dim,
        }
    }

    pub fn bi_attend<'t>(
        &self,
        fwd: &Forward<'t>,
        v1: Var<'t>,
        v2: Var<'t>,
        mask: Option<RealLengths>,
    ) -> Result<Attended<'t>> {
        let (s1, s2) = (v1.shape(), v2.shape());
        if s1 != s2 || s1.len() != 2 || s1[1] != self.dim {
            return Err(Error::Dimension {
                op: "bi_attend",
                lhs: s1,
                rhs: s2,
            });
        }
        let n = s1[0];
        let mut m = self.ffn.forward(fwd, v1)?.matmul(v2.transpose()?)?;
        let mut mt = m.transpose()?;
        if let Some(real) = mask {
            m = m.add_const(&column_mask(n, n, real.arg2)?)?;
            mt = mt.add_const(&column_mask(n, n, real.arg1)?)?;
        }
        let attention = m.softmax_rows()?;
        let attention_t = mt.softmax_rows()?;
        Ok(Attended {
            w1: attention_t.matmul(v1)?,
            w2: attention.matmul(v2)?,
            attention,
            attention_t,
        })
    }
}

/// `[top2(w1); top2(w2)]`, `4d` values.
pub fn pool_layer<'t>(w1: Var<'t>, w2: Var<'t>) -> Result<Var<'t>> {
    for w in [w1, w2] {
        let shape = w.shape();
        if shape.len() == 2 && shape[0] < POOL_K {
            return Err(Error::Window {
                op: "pool_layer",
                window: POOL_K,
                length: shape[0],
            });
        }
    }
    Var::concat(&[w1.topk_pool(POOL_K)?, w2.topk_pool(POOL_K)?])
}

pub struct PairOutput<'t> {
    /// `4·l·d` values.
    pub representation: Var<'t>,
    /// Per layer; empty when attention is disabled.
    pub attention: Vec<Attended<'t>>,
}

/// Concatenates pooled slices over all layers.
///
/// Without attention a layer pools its raw outputs. Without Res 2 every slice
/// but the last is zero, which keeps the representation width fixed.
pub fn build_pair_representation<'t>(
    fwd: &Forward<'t>,
    layers1: &[Var<'t>],
    layers2: &[Var<'t>],
    attention: &BiAttention,
    config: &PairConfig,
    real: RealLengths,
) -> Result<PairOutput<'t>> {
    if layers1.len() != layers2.len() || layers1.is_empty() {
        return Err(Error::config(
            "model.layers",
            format!(
                "argument stacks returned {} and {} layers",
                layers1.len(),
                layers2.len()
            ),
        ));
    }
    let l = layers1.len();
    let width = 2 * POOL_K * attention.dim;
    let mask = config.mask_padding.then_some(real);
    let mut slices = Vec::with_capacity(l);
    let mut maps = Vec::new();
    for (j, (&v1, &v2)) in layers1.iter().zip(layers2).enumerate() {
        if !config.residual && j + 1 < l {
            slices.push(fwd.constant(Tensor::zeros([width])));
            continue;
        }
        let (w1, w2) = if config.attention {
            let a = attention.bi_attend(fwd, v1, v2, mask)?;
            maps.push(a);
            (a.w1, a.w2)
        } else {
            (v1, v2)
        };
        slices.push(pool_layer(w1, w2)?);
    }
    Ok(PairOutput {
        representation: Var::concat(&slices)?,
        attention: maps,
    })
}
