use super::param::ParamStore;
use crate::error::{Error, Result};

/// AdaGrad: `acc += g²; θ −= lr·g / (√acc + eps)`.
#[derive(Clone, Copy, Debug)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
}

impl Default for AdaGrad {
    fn default() -> Self {
        AdaGrad { lr: 0.001, eps: 1e-8 }
    }
}

impl AdaGrad {
    pub fn new(lr: f64, eps: f64) -> Self {
        AdaGrad { lr, eps }
    }

    /// Applies one update to every parameter and clears the gradients.
    ///
    /// Fails without touching anything if some parameter has no gradient.
    pub fn step(&self, params: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.tensor.grad().is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        for p in params.iter_mut() {
            let grad = p.tensor.grad().unwrap().to_vec();
            p.accumulator.resize(grad.len(), 0.0);
            let values = p.tensor.data_mut();
            for ((theta, acc), g) in values.iter_mut().zip(&mut p.accumulator).zip(&grad) {
                *acc += g * g;
                if *g != 0.0 {
                    *theta -= self.lr * g / (acc.sqrt() + self.eps);
                }
            }
            p.tensor.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(v));
        s
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        let p = store.iter_mut().next().unwrap();
        *p.tensor.grad_mut() = Some(vec![g]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(0.7);
        set_grad(&mut s, 0.0);
        AdaGrad::default().step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().1.tensor.data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        set_grad(&mut s, 2.0);
        AdaGrad::new(0.001, 0.0).step(&mut s).unwrap();
        let v = s.iter().next().unwrap().1.tensor.data()[0];
        assert!((v - 0.999).abs() < 1e-15);
    }

    #[test]
    fn second_step_shrinks_by_root_two() {
        let mut s = scalar_store(0.0);
        let opt = AdaGrad::new(0.001, 0.0);
        set_grad(&mut s, 1.0);
        opt.step(&mut s).unwrap();
        let after1 = s.iter().next().unwrap().1.tensor.data()[0];
        set_grad(&mut s, 1.0);
        opt.step(&mut s).unwrap();
        let after2 = s.iter().next().unwrap().1.tensor.data()[0];
        let (d1, d2) = (-after1, after1 - after2);
        assert!((d2 / d1 - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn step_before_backward_is_an_error() {
        let mut s = scalar_store(1.0);
        let err = AdaGrad::default().step(&mut s).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(name) if name == "theta"));
    }

    #[test]
    fn step_clears_grads_and_accumulates() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::vector(vec![0.5, -0.5]).unwrap());
        let tape = Tape::new();
        let w = tape.param(&s, id);
        let loss = w.mul(w).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        s.accumulate(&tape, &g);
        drop(tape);
        AdaGrad::default().step(&mut s).unwrap();
        let p = s.get(id);
        assert!(p.tensor.grad().is_none());
        assert_eq!(p.accumulator, vec![1.0, 1.0]);
    }
}
