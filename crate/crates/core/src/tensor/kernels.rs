// Raw numeric kernels over flat row-major buffers. No shape checking here;
// callers in `tape.rs` validate first.

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a_t`/`b_t` mean the stored buffer is the transpose (`k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe buffers whose lengths were asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unrolls `x` (`len×d_in`, zero-padded by `pad` on both ends) into windows of
/// `k` rows: output is `out_len × (k·d_in)`.
pub(crate) fn im2col(x: &[f64], len: usize, d_in: usize, k: usize, pad: usize) -> Vec<f64> {
    let out_len = len + 2 * pad + 1 - k;
    let width = k * d_in;
    let mut cols = vec![0.0; out_len * width];
    for t in 0..out_len {
        for j in 0..k {
            let src = (t + j) as isize - pad as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let src = src as usize;
            let dst = t * width + j * d_in;
            cols[dst..dst + d_in].copy_from_slice(&x[src * d_in..(src + 1) * d_in]);
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters window gradients back onto the input rows.
pub(crate) fn col2im(
    dcols: &[f64],
    len: usize,
    d_in: usize,
    k: usize,
    pad: usize,
    dx: &mut [f64],
) {
    let out_len = len + 2 * pad + 1 - k;
    let width = k * d_in;
    for t in 0..out_len {
        for j in 0..k {
            let src = (t + j) as isize - pad as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let src = src as usize;
            let from = &dcols[t * width + j * d_in..t * width + (j + 1) * d_in];
            for (d, g) in dx[src * d_in..(src + 1) * d_in].iter_mut().zip(from) {
                *d += g;
            }
        }
    }
}

/// Max-shifted softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// For each column of an `rows×cols` matrix, the flat indices of its `k`
/// largest entries in descending order. Ties go to the earlier row.
///
/// Result layout is column-major: entry `c·k + r` is rank `r` of column `c`.
pub fn topk_columns(data: &[f64], rows: usize, cols: usize, k: usize) -> Vec<usize> {
    let mut picked = Vec::with_capacity(k * cols);
    let mut order: Vec<usize> = Vec::with_capacity(rows);
    for c in 0..cols {
        order.clear();
        order.extend(0..rows);
        // stable sort keeps earlier rows first among equal values
        order.sort_by(|&a, &b| {
            data[b * cols + c]
                .partial_cmp(&data[a * cols + c])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        picked.extend(order[..k].iter().map(|&r| r * cols + c));
    }
    picked
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
