//! Differentiates a small tanh layer with cross-entropy on the tape and
//! compares every entry with central finite differences.

use idrr::tensor::gradcheck::check_inputs;
use idrr::tensor::Tensor;

fn main() -> idrr::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.75])?;
    let w = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let report = check_inputs(&[x, w], |_, v| {
        let logits = v[0].matmul(v[1])?.tanh();
        logits.cross_entropy(&[1, 3])
    })?;
    let (label, index, analytic, numeric) = report.worst.clone().unwrap_or_default();
    println!("worst entry {label}[{index}]: analytic {analytic:.9} numeric {numeric:.9}");
    println!("checked={} max_rel_error={:.3e}", report.checked, report.max_rel_error);
    assert!(report.max_rel_error < 1e-6);
    Ok(())
}
