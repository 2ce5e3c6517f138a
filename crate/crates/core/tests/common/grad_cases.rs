//! Central-finite-difference cases for every differentiable op, each block,
//! the attention and pooling step, and the composed model.

use idrr::layers::{BiGru, Forward, Linear};
use idrr::model::ModelConfig;
use idrr::pair_level::{pool_layer, BiAttention, RealLengths};
use idrr::sentence_level::{BlockType, ConvBlock, RecurrentBlock};
use idrr::tensor::gradcheck::{check_inputs, check_params, GradReport};
use idrr::tensor::{ParamStore, Tape, Tensor, Var};
use idrr::word_level::{ContextualMixer, SubwordConfig, SubwordEncoder};
use idrr::Result;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{rng, toy_config, toy_model, uniform};

pub const TOLERANCE: f64 = 1e-4;

pub struct GradCase {
    pub name: &'static str,
    pub run: fn() -> Result<GradReport>,
}

/// `Σ w ⊙ v` with fixed random `w`, so every output entry carries its own weight.
fn project<'t>(v: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(v.mul_const(&w.reshape(v.shape())?)?.sum())
}

fn weights(seed: u64, len: usize) -> Tensor {
    uniform(&mut rng(seed), &[len])
}

/// Columns whose values sit at least 0.09 apart, so no top-k choice flips
/// within a finite-difference step.
fn untied(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut r = rng(seed);
    let mut data = vec![0.0; rows * cols];
    for c in 0..cols {
        let mut levels: Vec<usize> = (0..rows).collect();
        levels.shuffle(&mut r);
        for (row, level) in levels.into_iter().enumerate() {
            data[row * cols + c] = -1.0 + 0.1 * level as f64 + r.gen_range(0.0..0.01);
        }
    }
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Entries drawn from ±[0.05, 1), away from the ReLU kink.
fn off_kink(seed: u64, shape: &[usize]) -> Tensor {
    let mut t = uniform(&mut rng(seed), shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + 0.95 * v.abs());
    }
    t
}

/// Shifts every parameter so zero-initialized biases are exercised too.
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
}

fn op_matmul() -> Result<GradReport> {
    let mut r = rng(1);
    let w = weights(2, 6);
    check_inputs(&[uniform(&mut r, &[3, 4]), uniform(&mut r, &[4, 2])], |_, v| {
        project(v[0].matmul(v[1])?, &w)
    })
}

fn op_conv1d() -> Result<GradReport> {
    let mut r = rng(3);
    let inputs = [
        uniform(&mut r, &[7, 4]),
        uniform(&mut r, &[3, 4, 5]),
        uniform(&mut r, &[5]),
    ];
    let same = weights(4, 7 * 5);
    let valid = weights(5, 5 * 5);
    check_inputs(&inputs, |_, v| {
        let padded = project(v[0].conv1d(v[1], Some(v[2]), 1)?, &same)?;
        let unpadded = project(v[0].conv1d(v[1], None, 0)?, &valid)?;
        padded.add(unpadded)
    })
}

fn op_softmax_rows() -> Result<GradReport> {
    let w = weights(7, 15);
    check_inputs(&[uniform(&mut rng(6), &[3, 5])], |_, v| project(v[0].softmax_rows()?, &w))
}

fn op_topk_pool() -> Result<GradReport> {
    let w2 = weights(9, 8);
    let w1 = weights(10, 4);
    check_inputs(&[untied(8, 6, 4)], |_, v| {
        project(v[0].topk_pool(2)?, &w2)?.add(project(v[0].topk_pool(1)?, &w1)?)
    })
}

fn op_elementwise() -> Result<GradReport> {
    let mut r = rng(11);
    let inputs = [uniform(&mut r, &[3, 4]), uniform(&mut r, &[3, 4]), off_kink(12, &[3, 4])];
    let w: Vec<Tensor> = (0..7).map(|i| weights(20 + i, 12)).collect();
    check_inputs(&inputs, |_, v| {
        let terms = [
            project(v[0].add(v[1])?, &w[0])?,
            project(v[0].sub(v[1])?, &w[1])?,
            project(v[0].mul(v[1])?, &w[2])?,
            project(v[0].sigmoid(), &w[3])?,
            project(v[1].tanh(), &w[4])?,
            project(v[2].relu(), &w[5])?,
            project(v[0].affine(-1.5, 0.25), &w[6])?,
        ];
        terms[1..].iter().try_fold(terms[0], |acc, &t| acc.add(t))
    })
}

fn op_tanh() -> Result<GradReport> {
    let w = weights(31, 20);
    check_inputs(&[uniform(&mut rng(30), &[4, 5])], |_, v| project(v[0].tanh(), &w))
}

fn op_constants_and_broadcasts() -> Result<GradReport> {
    let mut r = rng(40);
    let inputs = [uniform(&mut r, &[3, 4]), uniform(&mut r, &[4]), uniform(&mut r, &[1])];
    let mask = uniform(&mut r, &[3, 4]);
    let offset = uniform(&mut r, &[3, 4]);
    let w: Vec<Tensor> = (0..4).map(|i| weights(41 + i, 12)).collect();
    check_inputs(&inputs, |_, v| {
        let terms = [
            project(v[0].mul_const(&mask)?, &w[0])?,
            project(v[0].add_const(&offset)?.tanh(), &w[1])?,
            project(v[0].add_row(v[1])?.sigmoid(), &w[2])?,
            project(v[0].scale(v[2])?.tanh(), &w[3])?,
        ];
        terms[1..].iter().try_fold(terms[0], |acc, &t| acc.add(t))
    })
}

fn op_shapes() -> Result<GradReport> {
    let mut r = rng(50);
    let inputs = [uniform(&mut r, &[3, 4]), uniform(&mut r, &[2, 4]), uniform(&mut r, &[3, 2])];
    let w: Vec<Tensor> = (0..6).map(|i| weights(51 + i, 20)).collect();
    check_inputs(&inputs, |_, v| {
        let terms = [
            project(v[0].transpose()?.tanh(), &prefix(&w[0], 12))?,
            project(Var::concat_rows(&[v[0], v[1]])?.sigmoid(), &w[1])?,
            project(Var::concat_cols(&[v[0], v[2]])?.tanh(), &prefix(&w[2], 18))?,
            project(Var::concat(&[v[1], v[2]])?.tanh(), &prefix(&w[3], 14))?,
            project(v[0].slice_cols(1, 3)?.sigmoid(), &prefix(&w[4], 6))?,
            project(v[0].select_rows(&[2, 0, 2])?.reshape([2, 6])?.tanh(), &prefix(&w[5], 12))?,
        ];
        terms[1..].iter().try_fold(terms[0], |acc, &t| acc.add(t))
    })
}

fn prefix(t: &Tensor, len: usize) -> Tensor {
    Tensor::vector(t.data()[..len].to_vec()).unwrap()
}

fn op_cross_entropy() -> Result<GradReport> {
    check_inputs(&[uniform(&mut rng(60), &[3, 4])], |_, v| v[0].cross_entropy(&[0, 3, 1]))
}

fn block_conv_stacked() -> Result<GradReport> {
    let mut r = rng(70);
    let mut store = ParamStore::new();
    let b1 = ConvBlock::new(&mut store, "b1", 3, 3, &mut r)?;
    let b2 = ConvBlock::new(&mut store, "b2", 3, 3, &mut r)?;
    jitter(&mut store, 71);
    let x = uniform(&mut r, &[5, 3]);
    let w = weights(72, 15);
    check_params(&mut store, None, |tape, store| {
        let fwd = Forward::eval(tape, store);
        let h = b1.forward(&fwd, fwd.constant(x.clone()), true)?;
        project(b2.forward(&fwd, h, false)?, &w)
    })
}

fn block_recurrent() -> Result<GradReport> {
    let mut r = rng(80);
    let mut store = ParamStore::new();
    let block = RecurrentBlock::new(&mut store, "rec", 3, &mut r);
    jitter(&mut store, 81);
    let x = uniform(&mut r, &[4, 3]);
    let w = weights(82, 12);
    check_params(&mut store, None, |tape, store| {
        let fwd = Forward::eval(tape, store);
        project(block.forward(&fwd, fwd.constant(x.clone()), true)?, &w)
    })
}

fn block_bigru_inputs() -> Result<GradReport> {
    let mut r = rng(85);
    let mut store = ParamStore::new();
    let gru = BiGru::new(&mut store, "gru", 3, 2, &mut r);
    let x = store.add("x", uniform(&mut r, &[4, 3]));
    jitter(&mut store, 86);
    let w = weights(87, 16);
    check_params(&mut store, None, |tape, store| {
        let fwd = Forward::eval(tape, store);
        project(gru.forward(&fwd, fwd.param(x))?, &w)
    })
}

fn bi_attention_and_pool() -> Result<GradReport> {
    let mut r = rng(90);
    let mut store = ParamStore::new();
    let att = BiAttention::new(&mut store, "att", 3, &mut r);
    let v1 = store.add("v1", uniform(&mut r, &[4, 3]));
    let v2 = store.add("v2", uniform(&mut r, &[4, 3]));
    jitter(&mut store, 91);
    let w = weights(92, 12);
    let masked = weights(93, 12);
    let real = RealLengths { arg1: 3, arg2: 2 };
    let report = check_params(&mut store, None, |tape, store| {
        let fwd = Forward::eval(tape, store);
        let (a, b) = (fwd.param(v1), fwd.param(v2));
        let open = att.bi_attend(&fwd, a, b, None)?;
        let shut = att.bi_attend(&fwd, a, b, Some(real))?;
        project(pool_layer(open.w1, open.w2)?, &w)?
            .add(project(pool_layer(shut.w1, shut.w2)?, &masked)?)
    })?;
    // 2-max pooling is only differentiable away from ties.
    let tape = Tape::new();
    let fwd = Forward::eval(&tape, &store);
    let a = att.bi_attend(&fwd, fwd.param(v1), fwd.param(v2), None)?;
    for w in [a.w1.value(), a.w2.value()] {
        assert!(min_rank_gap(&w) > 1e-4, "pooling input has near-ties");
    }
    Ok(report)
}

/// Smallest gap between the 2nd and 3rd largest entries of any column.
fn min_rank_gap(t: &Tensor) -> f64 {
    (0..t.cols())
        .map(|c| {
            let mut col: Vec<f64> = (0..t.rows()).map(|r| t.at(r, c)).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            col[1] - col[2]
        })
        .fold(f64::INFINITY, f64::min)
}

fn subword_highway() -> Result<GradReport> {
    let mut r = rng(100);
    let mut store = ParamStore::new();
    let cfg = SubwordConfig {
        embed_dim: 3,
        kernels: vec![2, 3],
        output_dim: 4,
    };
    let enc = SubwordEncoder::new(&mut store, "sub", cfg, 7, &mut r)?;
    jitter(&mut store, 101);
    let w = weights(102, 4);
    check_params(&mut store, None, |tape, store| {
        let fwd = Forward::eval(tape, store);
        project(enc.encode_ids(&fwd, &[2, 5, 3, 6])?, &w)?.add(project(enc.encode_ids(&fwd, &[4])?, &w)?)
    })
}

fn contextual_mixer() -> Result<GradReport> {
    let mut r = rng(110);
    let mut store = ParamStore::new();
    let mixer = ContextualMixer::new(&mut store, "mix", 5, 3, &mut r);
    let head = Linear::new(&mut store, "head", 3, 2, &mut r);
    jitter(&mut store, 111);
    let (h0, h1) = (uniform(&mut r, &[4, 5]), uniform(&mut r, &[4, 5]));
    let w = weights(112, 8);
    check_params(&mut store, None, |tape, store| {
        let fwd = Forward::eval(tape, store);
        let e = mixer.mix_and_project(&fwd, fwd.constant(h0.clone()), fwd.constant(h1.clone()))?;
        project(head.forward(&fwd, e.tanh())?, &w)
    })
}

/// Joint loss of the two-instance toy batch against every model parameter.
pub fn full_model(config: ModelConfig, seed: u64) -> Result<GradReport> {
    let (mut model, res, batch) = toy_model(config, seed);
    let mut params = std::mem::take(&mut model.params);
    check_params(&mut params, None, |tape, store| {
        let fwd = Forward::train_without_dropout(tape, store);
        Ok(model.joint_loss(&fwd, &res, &batch)?.total)
    })
}

fn model_conv_1() -> Result<GradReport> {
    full_model(toy_config(BlockType::Conv, 1), 120)
}

fn model_conv_2() -> Result<GradReport> {
    full_model(toy_config(BlockType::Conv, 2), 121)
}

fn model_recurrent_1() -> Result<GradReport> {
    full_model(toy_config(BlockType::Recurrent, 1), 122)
}

fn model_recurrent_2() -> Result<GradReport> {
    full_model(toy_config(BlockType::Recurrent, 2), 123)
}

/// Shared stacks, masked attention, a hidden classifier layer, and Res 2 off.
fn model_variant() -> Result<GradReport> {
    let mut cfg = toy_config(BlockType::Conv, 2);
    cfg.encoder.shared = true;
    cfg.pair.mask_padding = true;
    cfg.pair.residual = false;
    cfg.classifier_hidden = Some(5);
    full_model(cfg, 124)
}

pub const CASES: &[GradCase] = &[
    GradCase { name: "matmul", run: op_matmul },
    GradCase { name: "conv1d", run: op_conv1d },
    GradCase { name: "softmax_rows", run: op_softmax_rows },
    GradCase { name: "topk_pool", run: op_topk_pool },
    GradCase { name: "elementwise", run: op_elementwise },
    GradCase { name: "tanh", run: op_tanh },
    GradCase { name: "constants_and_broadcasts", run: op_constants_and_broadcasts },
    GradCase { name: "shape_ops", run: op_shapes },
    GradCase { name: "cross_entropy", run: op_cross_entropy },
    GradCase { name: "conv_blocks_stacked", run: block_conv_stacked },
    GradCase { name: "recurrent_block", run: block_recurrent },
    GradCase { name: "bigru_inputs", run: block_bigru_inputs },
    GradCase { name: "bi_attention_and_pool", run: bi_attention_and_pool },
    GradCase { name: "subword_highway", run: subword_highway },
    GradCase { name: "contextual_mixer", run: contextual_mixer },
    GradCase { name: "model_conv_l1", run: model_conv_1 },
    GradCase { name: "model_conv_l2", run: model_conv_2 },
    GradCase { name: "model_recurrent_l1", run: model_recurrent_1 },
    GradCase { name: "model_recurrent_l2", run: model_recurrent_2 },
    GradCase { name: "model_variant", run: model_variant },
];
