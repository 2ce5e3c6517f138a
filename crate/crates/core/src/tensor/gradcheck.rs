//! Central finite-difference checks against tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it shares no code
//! path with the reverse pass it validates.

use super::param::ParamStore;
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so that near-zero gradient pairs compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (tensor label, flat index, analytic, numeric) of the worst entry
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradReport {
    fn observe(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            if err >= self.max_rel_error {
                self.worst = Some((label.to_string(), index, analytic, numeric));
            }
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
    }
}

fn scalar_of(v: Var<'_>) -> f64 {
    let data = v.to_vec();
    assert_eq!(data.len(), 1, "gradient check needs a scalar function");
    data[0]
}

/// Checks `f` with respect to each tensor in `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| {
            grads
                .wrt(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; v.value().len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(scalar_of(f(&tape, &vars)?))
    };

    let mut report = GradReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[which].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.observe(&format!("input{which}"), i, analytic[which][i], numeric);
        }
    }
    Ok(report)
}

/// Checks a loss built from `params` against every parameter entry.
///
/// `limit` caps the entries checked per parameter (evenly strided); `None`
/// checks all of them.
pub fn check_params<F>(params: &mut ParamStore, limit: Option<usize>, f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &'t ParamStore) -> Result<Var<'t>>,
{
    params.zero_grads();
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let loss = f(&tape, params)?;
        let grads = tape.backward(loss)?;
        params.accumulate(&tape, &grads);
        params
            .iter()
            .map(|(_, p)| p.tensor.grad().unwrap().to_vec())
            .collect()
    };
    params.zero_grads();

    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        Ok(scalar_of(f(&tape, store)?))
    };

    let ids: Vec<_> = params.iter().map(|(id, p)| (id, p.name.clone(), p.tensor.len())).collect();
    let mut report = GradReport::default();
    for (id, name, len) in ids {
        let stride = match limit {
            Some(cap) if len > cap => len.div_ceil(cap),
            _ => 1,
        };
        for i in (0..len).step_by(stride) {
            let orig = params.get(id).tensor.data()[i];
            params.get_mut(id).tensor.data_mut()[i] = orig + FD_STEP;
            let plus = eval(params)?;
            params.get_mut(id).tensor.data_mut()[i] = orig - FD_STEP;
            let minus = eval(params)?;
            params.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.observe(&name, i, analytic[id.index()][i], numeric);
        }
    }
    Ok(report)
}
