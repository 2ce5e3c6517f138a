//! Building blocks shared by the encoders: a forward-pass context that binds
//! parameters onto a tape, affine layers, and GRUs.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Tensor, Var};

/// One forward pass: a tape, the parameters it reads, and the dropout policy.
pub struct Forward<'t> {
    tape: &'t Tape,
    params: &'t ParamStore,
    bound: RefCell<HashMap<ParamId, Var<'t>>>,
    memo: RefCell<HashMap<String, Var<'t>>>,
    training: bool,
    dropout: Option<RefCell<ChaCha8Rng>>,
}

impl<'t> Forward<'t> {
    /// Inference mode: dropout disabled.
    pub fn eval(tape: &'t Tape, params: &'t ParamStore) -> Self {
        Forward {
            tape,
            params,
            bound: RefCell::new(HashMap::new()),
            memo: RefCell::new(HashMap::new()),
            training: false,
            dropout: None,
        }
    }

    /// Training mode: dropout masks drawn from a generator seeded with `seed`.
    pub fn train(tape: &'t Tape, params: &'t ParamStore, seed: u64) -> Self {
        Forward {
            dropout: Some(RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
            ..Forward::train_without_dropout(tape, params)
        }
    }

    /// Training-time objective with every dropout rate treated as zero.
    pub fn train_without_dropout(tape: &'t Tape, params: &'t ParamStore) -> Self {
        Forward {
            training: true,
            ..Forward::eval(tape, params)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn params(&self) -> &'t ParamStore {
        self.params
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Binds a parameter; repeated calls return the same var.
    pub fn param(&self, id: ParamId) -> Var<'t> {
        *self
            .bound
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| self.tape.param(self.params, id))
    }

    /// Computes `f` once per key within this pass.
    pub fn memo(&self, key: &str, f: impl FnOnce() -> Result<Var<'t>>) -> Result<Var<'t>> {
        if let Some(v) = self.memo.borrow().get(key) {
            return Ok(*v);
        }
        let v = f()?;
        self.memo.borrow_mut().insert(key.to_string(), v);
        Ok(v)
    }

    pub fn constant(&self, value: Tensor) -> Var<'t> {
        self.tape.constant(value)
    }

    /// Inverted dropout: kept units are scaled by `1/(1−rate)`.
    pub fn dropout(&self, x: Var<'t>, rate: f64) -> Result<Var<'t>> {
        let Some(rng) = &self.dropout else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Argument(format!("dropout rate {rate} must be below 1")));
        }
        let keep = 1.0 - rate;
        let mut rng = rng.borrow_mut();
        let shape = x.shape();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        x.mul_const(&Tensor::new(shape, mask)?)
    }
}

/// `y = x·W + b` over the rows of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.init(
            format!("{name}.weight"),
            [input_dim, output_dim],
            Init::FanIn(input_dim),
            rng,
        );
        let bias = store.init(format!("{name}.bias"), [output_dim], Init::Zeros, rng);
        Linear {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(fwd.param(self.weight))?.add_row(fwd.param(self.bias))
    }
}

/// One direction of a GRU (update/reset gates, zero initial state):
///
/// ```text
/// z = σ(x·Wz + h·Uz + bz)      r = σ(x·Wr + h·Ur + br)
/// ñ = tanh(x·Wn + (r ⊙ h)·Un + bn)
/// h' = z ⊙ h + (1 − z) ⊙ ñ
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    /// `d_in × 3h`, gate blocks ordered z, r, n
    pub input_weight: ParamId,
    /// `h × 2h` for z and r
    pub gate_weight: ParamId,
    /// `h × h`
    pub candidate_weight: ParamId,
    /// `3h`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Gru {
            input_weight: store.init(
                format!("{name}.input_weight"),
                [input_dim, 3 * hidden],
                Init::FanIn(input_dim),
                rng,
            ),
            gate_weight: store.init(
                format!("{name}.gate_weight"),
                [hidden, 2 * hidden],
                Init::FanIn(hidden),
                rng,
            ),
            candidate_weight: store.init(
                format!("{name}.candidate_weight"),
                [hidden, hidden],
                Init::FanIn(hidden),
                rng,
            ),
            bias: store.init(format!("{name}.bias"), [3 * hidden], Init::Zeros, rng),
            input_dim,
            hidden,
        }
    }

    /// Runs over the rows of `x` (`N×d_in`), in reverse when `reverse`; the
    /// returned `N×h` states are always in input position order.
    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>, reverse: bool) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Dimension {
                op: "gru",
                lhs: shape,
                rhs: vec![self.input_dim],
            });
        }
        let n = shape[0];
        let h = self.hidden;
        let projected = x
            .matmul(fwd.param(self.input_weight))?
            .add_row(fwd.param(self.bias))?;
        let gate_w = fwd.param(self.gate_weight);
        let cand_w = fwd.param(self.candidate_weight);

        let mut state = fwd.constant(Tensor::zeros([1, h]));
        let mut outputs: Vec<Option<Var<'t>>> = vec![None; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let xt = projected.select_rows(&[t])?;
            let zr = xt
                .slice_cols(0, 2 * h)?
                .add(state.matmul(gate_w)?)?
                .sigmoid();
            let z = zr.slice_cols(0, h)?;
            let r = zr.slice_cols(h, 2 * h)?;
            let cand = xt
                .slice_cols(2 * h, 3 * h)?
                .add(r.mul(state)?.matmul(cand_w)?)?
                .tanh();
            // z ⊙ h + (1 − z) ⊙ ñ  ==  ñ + z ⊙ (h − ñ)
            state = cand.add(z.mul(state.sub(cand)?)?)?;
            outputs[t] = Some(state);
        }
        let rows: Vec<Var<'t>> = outputs.into_iter().map(Option::unwrap).collect();
        Var::concat_rows(&rows)
    }
}

/// Forward and backward GRUs with outputs concatenated as `[fwd; bwd]`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        BiGru {
            forward: Gru::new(store, &format!("{name}.fwd"), input_dim, hidden, rng),
            backward: Gru::new(store, &format!("{name}.bwd"), input_dim, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn forward<'t>(&self, fwd: &Forward<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let f = self.forward.forward(fwd, x, false)?;
        let b = self.backward.forward(fwd, x, true)?;
        Var::concat_cols(&[f, b])
    }
}
