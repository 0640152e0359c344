//! Raw numeric kernels shared by the forward and backward passes.

use super::Tensor;
use crate::error::{Error, Result};

/// `c (+)= a · b` for one matrix, with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the debug assertions above describe the bounds every caller
    // guarantees: `a` covers an m×k view, `b` a k×n view and `c` an m×n
    // row-major block under the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Leading (batch) dimensions and trailing matrix dims of a rank >= 2 tensor.
fn split_batch(t: &Tensor) -> Option<(&[usize], usize, usize)> {
    let s = t.shape();
    (s.len() >= 2).then(|| (&s[..s.len() - 2], s[s.len() - 2], s[s.len() - 1]))
}

/// Batched product `op(a) · op(b)` where `op` optionally transposes the last
/// two axes. Leading dimensions must agree, or one side must have a single
/// batch that broadcasts over the other.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (lead_a, ra, ca) = split_batch(a).ok_or_else(mismatch)?;
    let (lead_b, rb, cb) = split_batch(b).ok_or_else(mismatch)?;
    let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
    let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
    if k != k2 {
        return Err(mismatch());
    }
    let batch_a: usize = lead_a.iter().product();
    let batch_b: usize = lead_b.iter().product();
    let lead: Vec<usize> = if lead_a == lead_b || batch_b == 1 {
        lead_a.to_vec()
    } else if batch_a == 1 {
        lead_b.to_vec()
    } else {
        return Err(mismatch());
    };
    let batch: usize = lead.iter().product();
    let a_step = if batch_a == 1 { 0 } else { ra * ca };
    let b_step = if batch_b == 1 { 0 } else { rb * cb };
    let a_strides = if trans_a { (1, ca) } else { (ca, 1) };
    let b_strides = if trans_b { (1, cb) } else { (cb, 1) };

    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &a.data()[i * a_step..i * a_step + ra * ca],
            a_strides,
            &b.data()[i * b_step..i * b_step + rb * cb],
            b_strides,
            &mut out[i * m * n..(i + 1) * m * n],
            false,
        );
    }
    let mut shape = lead;
    shape.extend([m, n]);
    Tensor::new(&shape, out)
}

/// `x[n, d_in] · w[d_in, d_out] (+ bias)` with `x` flattened over leading axes.
pub(crate) fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let d_in = *x.shape().last().unwrap();
    if w.rank() != 2 || w.shape()[0] != d_in {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let d_out = w.shape()[1];
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let rows = x.len() / d_in;
    let mut out = vec![0.0; rows * d_out];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(d_out) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        rows,
        d_in,
        d_out,
        x.data(),
        (d_in, 1),
        w.data(),
        (d_out, 1),
        &mut out,
        bias.is_some(),
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(&shape, out)
}

/// Gradients of `linear`: returns (dx, dw, db).
pub(crate) fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d_in = w.shape()[0];
    let d_out = w.shape()[1];
    let rows = x.len() / d_in;
    let mut dx = vec![0.0; rows * d_in];
    gemm(rows, d_out, d_in, dy.data(), (d_out, 1), w.data(), (1, d_out), &mut dx, false);
    let mut dw = vec![0.0; d_in * d_out];
    gemm(d_in, rows, d_out, x.data(), (1, d_in), dy.data(), (d_out, 1), &mut dw, false);
    let mut db = vec![0.0; d_out];
    for row in dy.data().chunks_exact(d_out) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    (
        Tensor::new(x.shape(), dx).unwrap(),
        Tensor::new(w.shape(), dw).unwrap(),
        Tensor::new(&[d_out], db).unwrap(),
    )
}

pub(crate) fn permute(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: format!("bad permutation {axes:?}"),
        });
    }
    let src_shape = t.shape();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();

    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    // The innermost axis is copied in a tight loop; the rest is an odometer.
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        out.extend((0..inner).map(|i| src[base + i * inner_stride]));
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return Tensor::new(&out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

/// Sums a `[batch.., m, n]` tensor down to `[m, n]` (the broadcast side of a
/// batched matmul) when `target` has a single batch.
pub(crate) fn reduce_to(grad: Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad;
    }
    let block: usize = target.iter().product();
    let mut acc = vec![0.0; block];
    for chunk in grad.data().chunks_exact(block) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += v;
        }
    }
    Tensor::new(target, acc).unwrap()
}
