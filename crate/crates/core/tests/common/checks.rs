//! Structural checks shared by the property tests and the acceptance run.

use idrr::data::ArgRole;
use idrr::layers::Forward;
use idrr::pair_level::{build_pair_representation, BiAttention, PairConfig, RealLengths};
use idrr::sentence_level::{BlockType, EncoderConfig, EncoderStack};
use idrr::tensor::{ParamStore, Tape, Tensor};
use idrr::Result;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{rng, uniform};

/// Whether a `depth`-block residual stack with zeroed output parameters
/// returns its input bit for bit at every layer.
pub fn residual_identity(block: BlockType, depth: usize, dim: usize, len: usize, seed: u64) -> Result<bool> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let config = EncoderConfig {
        block,
        layers: depth,
        kernel_size: 3,
        shared: true,
        residual: true,
        dropout: 0.4,
    };
    let stack = EncoderStack::new(&mut store, "enc", config, dim, &mut r)?;
    for b in stack.blocks(ArgRole::Arg1) {
        for id in b.output_params() {
            store.get_mut(id).tensor.data_mut().fill(0.0);
        }
    }
    let x = uniform(&mut r, &[len, dim]);
    let tape = Tape::new();
    let fwd = Forward::eval(&tape, &store);
    let outputs = stack.stack_forward(&fwd, fwd.constant(x.clone()), ArgRole::Arg1)?;
    Ok(outputs.len() == depth
        && outputs
            .iter()
            .all(|o| o.value().data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits())))
}

fn attention(dim: usize, seed: u64) -> (ParamStore, BiAttention) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let att = BiAttention::new(&mut store, "att", dim, &mut r);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += r.gen_range(-0.5..0.5);
        }
    }
    (store, att)
}

/// Largest deviation from the simplex over every row of both attention maps,
/// with and without padding masks: `max(|Σ row − 1|, −min entry)`.
pub fn simplex_deviation(n: usize, dim: usize, layers: usize, seed: u64) -> Result<f64> {
    let (store, att) = attention(dim, seed);
    let mut r = rng(seed + 1);
    let tape = Tape::new();
    let fwd = Forward::eval(&tape, &store);
    let mut worst: f64 = 0.0;
    for _ in 0..layers {
        let v1 = fwd.constant(uniform(&mut r, &[n, dim]));
        let v2 = fwd.constant(uniform(&mut r, &[n, dim]));
        let real = RealLengths {
            arg1: r.gen_range(1..=n),
            arg2: r.gen_range(1..=n),
        };
        for mask in [None, Some(real)] {
            let a = att.bi_attend(&fwd, v1, v2, mask)?;
            for map in [a.attention.value(), a.attention_t.value()] {
                for i in 0..map.rows() {
                    let row = map.row(i);
                    let sum: f64 = row.iter().sum();
                    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                    worst = worst.max((sum - 1.0).abs()).max(-min);
                }
            }
        }
    }
    Ok(worst)
}

fn permute(t: &Tensor, order: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

/// Max change in `o` when the rows of both arguments' layer outputs are
/// permuted by one shared permutation.
pub fn permutation_deviation(n: usize, dim: usize, layers: usize, seed: u64) -> Result<f64> {
    let (store, att) = attention(dim, seed);
    let mut r = rng(seed + 2);
    let v1: Vec<Tensor> = (0..layers).map(|_| uniform(&mut r, &[n, dim])).collect();
    let v2: Vec<Tensor> = (0..layers).map(|_| uniform(&mut r, &[n, dim])).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let real = RealLengths { arg1: n, arg2: n };
    let pair = |a: &[Tensor], b: &[Tensor]| -> Result<Tensor> {
        let tape = Tape::new();
        let fwd = Forward::eval(&tape, &store);
        let a: Vec<_> = a.iter().map(|t| fwd.constant(t.clone())).collect();
        let b: Vec<_> = b.iter().map(|t| fwd.constant(t.clone())).collect();
        Ok(build_pair_representation(&fwd, &a, &b, &att, &PairConfig::default(), real)?
            .representation
            .value())
    };
    let base = pair(&v1, &v2)?;
    let p1: Vec<Tensor> = v1.iter().map(|t| permute(t, &order)).collect();
    let p2: Vec<Tensor> = v2.iter().map(|t| permute(t, &order)).collect();
    Ok(base.max_abs_diff(&pair(&p1, &p2)?))
}
