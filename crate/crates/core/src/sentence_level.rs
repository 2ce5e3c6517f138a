//! Stacked residual encoder blocks over `N × d_e` argument matrices.
//!
//! A convolutional block is a GLU over a same-length convolution; a recurrent
//! block is a biGRU followed by an affine map back to `d_e`. Both add their
//! input back (Res 1) when the residual is enabled, so a block whose output
//! projection is zero is an exact identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ArgRole;
use crate::error::{Error, Result};
use crate::layers::{BiGru, Forward, Linear};
use crate::tensor::{Init, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Conv,
    Recurrent,
}

impl std::str::FromStr for BlockType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(BlockType::Conv),
            "recurrent" => Ok(BlockType::Recurrent),
            other => Err(Error::config("model.block", format!("unknown block type `{other}`"))),
        }
    }
}

impl std::fmt::Display for BlockType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockType::Conv => "conv",
            BlockType::Recurrent => "recurrent",
        })
    }
}

fn check_width(op: &'static str, x: Var<'_>, dim: usize) -> Result<()> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != dim {
        return Err(Error::Dimension {
            op,
            lhs: shape,
            rhs: vec![dim],
        });
    }
    Ok(())
}

/// `A ⊙ σ(B) (+ x)` where `[A B]` is a same-length convolution of `x`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    /// `k × d × 2d`
    pub kernel: ParamId,
    /// `2d`
    pub bias: ParamId,
    pub width: usize,
    pub dim: usize,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::config(
                "model.kernel_size",
                format!("kernel size {width} must be odd for same-length padding"),
            ));
        }
        Ok(ConvBlock {
            kernel: store.init(
                format!("{name}.kernel"),
                [width, dim, 2 * dim],
                Init::FanIn(width * dim),
                rng,
            ),
            bias: store.init(format!("{name}.bias"), [2 * dim], Init::Zeros, rng),
            width,
            dim,
        })
    }

    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>, residual: bool) -> Result<Var<'t>> {
        check_width("conv_block", x, self.dim)?;
        let y = x.conv1d(
            fwd.param(self.kernel),
            Some(fwd.param(self.bias)),
            (self.width - 1) / 2,
        )?;
        let a = y.slice_cols(0, self.dim)?;
        let b = y.slice_cols(self.dim, 2 * self.dim)?;
        let z = a.mul(b.sigmoid())?;
        if residual {
            z.add(x)
        } else {
            Ok(z)
        }
    }
}

/// `biGRU(x)·W_r + b_r (+ x)`.
#[derive(Clone, Debug)]
pub struct RecurrentBlock {
    pub gru: BiGru,
    pub ffn: Linear,
    pub dim: usize,
}

impl RecurrentBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        RecurrentBlock {
            gru: BiGru::new(store, &format!("{name}.gru"), dim, dim, rng),
            ffn: Linear::new(store, &format!("{name}.ffn"), 2 * dim, dim, rng),
            dim,
        }
    }

    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>, residual: bool) -> Result<Var<'t>> {
        check_width("recurrent_block", x, self.dim)?;
        let z = self.ffn.forward(fwd, self.gru.forward(fwd, x)?)?;
        if residual {
            z.add(x)
        } else {
            Ok(z)
        }
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Conv(ConvBlock),
    Recurrent(RecurrentBlock),
}

impl Block {
    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>, residual: bool) -> Result<Var<'t>> {
        match self {
            Block::Conv(b) => b.forward(fwd, x, residual),
            Block::Recurrent(b) => b.forward(fwd, x, residual),
        }
    }

    /// Parameters that map into the block's output; zeroing them makes a
    /// residual block the identity.
    pub fn output_params(&self) -> Vec<ParamId> {
        match self {
            Block::Conv(b) => vec![b.kernel, b.bias],
            Block::Recurrent(b) => vec![b.ffn.weight, b.ffn.bias],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub block: BlockType,
    pub layers: usize,
    pub kernel_size: usize,
    /// One parameter set for both arguments instead of one per argument.
    pub shared: bool,
    /// Res 1: add each block's input to its output.
    pub residual: bool,
    /// Dropout rate on every block input.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            block: BlockType::Conv,
            layers: 4,
            kernel_size: 5,
            shared: false,
            residual: true,
            dropout: 0.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub dim: usize,
    pub arg1: Vec<Block>,
    /// Empty in shared mode.
    pub arg2: Vec<Block>,
}

impl EncoderStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: EncoderConfig,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::config("model.layers", "at least one layer is required"));
        }
        let mut build = |prefix: &str, rng: &mut _| -> Result<Vec<Block>> {
            (0..config.layers)
                .map(|j| {
                    let n = format!("{name}.{prefix}.layer{j}");
                    Ok(match config.block {
                        BlockType::Conv => {
                            Block::Conv(ConvBlock::new(store, &n, dim, config.kernel_size, rng)?)
                        }
                        BlockType::Recurrent => {
                            Block::Recurrent(RecurrentBlock::new(store, &n, dim, rng))
                        }
                    })
                })
                .collect()
        };
        let (arg1, arg2) = if config.shared {
            (build("shared", rng)?, Vec::new())
        } else {
            (build("arg1", rng)?, build("arg2", rng)?)
        };
        Ok(EncoderStack {
            config,
            dim,
            arg1,
            arg2,
        })
    }

    pub fn blocks(&self, role: ArgRole) -> &[Block] {
        match role {
            ArgRole::Arg2 if !self.config.shared => &self.arg2,
            _ => &self.arg1,
        }
    }

    /// Every layer's output, in order; layer `j` reads layer `j − 1`.
    pub fn stack_forward<'t>(
        &self,
        fwd: &Forward<'t>,
        e: Var<'t>,
        role: ArgRole,
    ) -> Result<Vec<Var<'t>>> {
        let mut x = e;
        let mut outputs = Vec::with_capacity(self.config.layers);
        for block in self.blocks(role) {
            let input = fwd.dropout(x, self.config.dropout)?;
            x = block.forward(fwd, input, self.config.residual)?;
            outputs.push(x);
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn zero(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn conv_block_with_zero_gate_halves_the_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let block = ConvBlock::new(&mut store, "c", 2, 3, &mut rng).unwrap();
        // zero every kernel column feeding B
        let k = store.get_mut(block.kernel).tensor.data_mut();
        for (i, v) in k.iter_mut().enumerate() {
            if i % 4 >= 2 {
                *v = 0.0;
            }
        }
        let x = random(4, 2, &mut rng);
        let tape = Tape::new();
        let fwd = Forward::eval(&tape, &store);
        let xv = fwd.constant(x.clone());
        let y = xv
            .conv1d(fwd.param(block.kernel), Some(fwd.param(block.bias)), 1)
            .unwrap()
            .value();
        let out = block.forward(&fwd, xv, true).unwrap().value();
        for t in 0..4 {
            for d in 0..2 {
                let want = 0.5 * y.at(t, d) + x.at(t, d);
                assert!((out.at(t, d) - want).abs() < 1e-15);
            }
        }
        assert!(ConvBlock::new(&mut store, "even", 2, 4, &mut rng).is_err());
    }

    #[test]
    fn zeroed_stacks_are_identities() {
        for block in [BlockType::Conv, BlockType::Recurrent] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut store = ParamStore::new();
            let config = EncoderConfig {
                block,
                layers: 5,
                kernel_size: 3,
                ..EncoderConfig::default()
            };
            let stack = EncoderStack::new(&mut store, "enc", config, 3, &mut rng).unwrap();
            for b in stack.arg1.iter().chain(&stack.arg2) {
                zero(&mut store, &b.output_params());
            }
            let e = random(6, 3, &mut rng);
            let tape = Tape::new();
            let fwd = Forward::eval(&tape, &store);
            let outs = stack
                .stack_forward(&fwd, fwd.constant(e.clone()), ArgRole::Arg2)
                .unwrap();
            assert_eq!(outs.len(), 5);
            assert!(outs.iter().all(|o| o.value() == e));
        }
    }

    #[test]
    fn swapped_directions_reverse_the_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, "g", 2, 2, &mut rng);
        let swapped = BiGru {
            forward: bi.backward.clone(),
            backward: bi.forward.clone(),
        };
        let x = random(3, 2, &mut rng);
        let rev = Tensor::from_rows(&[x.row(2).to_vec(), x.row(1).to_vec(), x.row(0).to_vec()]).unwrap();
        let tape = Tape::new();
        let fwd = Forward::eval(&tape, &store);
        let a = bi.forward(&fwd, fwd.constant(x)).unwrap().value();
        let b = swapped.forward(&fwd, fwd.constant(rev)).unwrap().value();
        for t in 0..3 {
            let (ar, br) = (a.row(t), b.row(2 - t));
            assert!((ar[0] - br[2]).abs() < 1e-15 && (ar[1] - br[3]).abs() < 1e-15);
            assert!((ar[2] - br[0]).abs() < 1e-15 && (ar[3] - br[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn argument_stacks_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let config = EncoderConfig {
            layers: 2,
            kernel_size: 3,
            ..EncoderConfig::default()
        };
        let stack = EncoderStack::new(&mut store, "enc", config, 3, &mut rng).unwrap();
        let e = random(5, 3, &mut rng);
        let run = |store: &ParamStore| {
            let tape = Tape::new();
            let fwd = Forward::eval(&tape, store);
            let outs = stack.stack_forward(&fwd, fwd.constant(e.clone()), ArgRole::Arg1).unwrap();
            outs.iter().map(|o| o.value()).collect::<Vec<_>>()
        };
        let before = run(&store);
        for b in &stack.arg2 {
            for id in b.output_params() {
                store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v += 0.3);
            }
        }
        assert_eq!(run(&store), before);
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let block = RecurrentBlock::new(&mut store, "r", 3, &mut rng);
        let tape = Tape::new();
        let fwd = Forward::eval(&tape, &store);
        let x = fwd.constant(Tensor::zeros([2, 4]));
        assert!(matches!(block.forward(&fwd, x, true), Err(Error::Dimension { .. })));
    }
}
