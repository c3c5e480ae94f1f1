//! Eager forward kernels. The tape records these and pairs each with a
//! backward rule; they are also usable directly on plain tensors.

use crate::tensor::{Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// General strided product `c = alpha * op(a) * op(b) + beta * c` on row-major
/// buffers, where the transposes are expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    beta: f64,
) {
    // Stored shapes: a is m×k (or k×m when transposed), b is k×n (or n×k).
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: buffer lengths are checked above and the strides describe
    // dense row-major layouts of exactly those sizes.
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

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
    Tensor::new(vec![m, n], out)
}

/// Elementwise sum. `b` may also be a `[1, n]` row added to every row of an
/// `[m, n]` matrix (the only broadcast supported).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return zip_with("add", a, b, |x, y| x + y);
    }
    add_row(a, b, 1.0)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return zip_with("sub", a, b, |x, y| x - y);
    }
    add_row(a, b, -1.0)
}

pub(crate) fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    matches!((a.shape(), b.shape()), (&[_, n], &[1, n2]) if n == n2)
}

fn add_row(a: &Tensor, row: &Tensor, sign: f64) -> Result<Tensor> {
    if !is_row_broadcast(a, row) {
        return Err(TensorError::ShapeMismatch {
            op: if sign > 0.0 { "add" } else { "sub" },
            lhs: a.shape().to_vec(),
            rhs: row.shape().to_vec(),
        });
    }
    let n = row.len();
    let mut data = a.data().to_vec();
    for chunk in data.chunks_exact_mut(n) {
        for (x, r) in chunk.iter_mut().zip(row.data()) {
            *x += sign * r;
        }
    }
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("div", a, b, |x, y| x / y)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|x| x * c)
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    a.map(|x| x + c)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { 0.0 })
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

pub fn exp(a: &Tensor) -> Tensor {
    a.map(f64::exp)
}

pub fn log(a: &Tensor) -> Tensor {
    a.map(f64::ln)
}

pub fn square(a: &Tensor) -> Tensor {
    a.map(|x| x * x)
}

pub fn sqrt(a: &Tensor) -> Tensor {
    a.map(f64::sqrt)
}

/// `min(x, cap)` elementwise.
pub fn clamp_max(a: &Tensor, cap: f64) -> Tensor {
    a.map(|x| if x < cap { x } else { cap })
}

/// Maximum along `axis` of a rank-2 tensor, plus the flat input index of each
/// maximum. Ties go to the lowest index.
pub fn max_over_axis(a: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>)> {
    let (m, n) = a.dims2("max_over_axis")?;
    let d = a.data();
    match axis {
        0 => {
            if m == 0 {
                return Err(TensorError::Empty { op: "max_over_axis" });
            }
            let mut best = d[..n].to_vec();
            let mut arg: Vec<usize> = (0..n).collect();
            for r in 1..m {
                let row = &d[r * n..(r + 1) * n];
                for c in 0..n {
                    if row[c] > best[c] {
                        best[c] = row[c];
                        arg[c] = r * n + c;
                    }
                }
            }
            Ok((Tensor::new(vec![1, n], best)?, arg))
        }
        1 => {
            if n == 0 {
                return Err(TensorError::Empty { op: "max_over_axis" });
            }
            let mut best = Vec::with_capacity(m);
            let mut arg = Vec::with_capacity(m);
            for r in 0..m {
                let row = &d[r * n..(r + 1) * n];
                let mut bi = 0;
                for c in 1..n {
                    if row[c] > row[bi] {
                        bi = c;
                    }
                }
                best.push(row[bi]);
                arg.push(r * n + bi);
            }
            Ok((Tensor::new(vec![m, 1], best)?, arg))
        }
        _ => Err(TensorError::Axis {
            op: "max_over_axis",
            axis,
            shape: a.shape().to_vec(),
        }),
    }
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Row-wise softmax of a rank-2 tensor, computed with the max shift.
pub fn softmax(a: &Tensor) -> Result<Tensor> {
    let (_, n) = a.dims2("softmax")?;
    if n == 0 {
        return Err(TensorError::Empty { op: "softmax" });
    }
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let mx = row_max(row);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// Row-wise `x - logsumexp(x)`.
pub fn log_softmax(a: &Tensor) -> Result<Tensor> {
    let lse = logsumexp_rows(a)?;
    let (_, n) = a.dims2("log_softmax")?;
    let mut out = a.data().to_vec();
    for (row, l) in out.chunks_exact_mut(n).zip(lse.data()) {
        for x in row.iter_mut() {
            *x -= l;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// `max(x) + ln Σ exp(x - max(x))` for one slice.
///
/// Returns `-inf` when every entry is `-inf`.
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let mx = row_max(xs);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if mx == f64::INFINITY {
        return f64::INFINITY;
    }
    let total: f64 = xs.iter().map(|&x| (x - mx).exp()).sum();
    mx + total.ln()
}

/// Row-wise log-sum-exp of a rank-2 tensor, `[m, n] -> [m, 1]`.
pub fn logsumexp_rows(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("logsumexp")?;
    if n == 0 {
        return Err(TensorError::Empty { op: "logsumexp" });
    }
    let out = a.data().chunks_exact(n).map(logsumexp_slice).collect();
    Tensor::new(vec![m, 1], out)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    if a.is_empty() {
        return Err(TensorError::Empty { op: "mean" });
    }
    Ok(Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64))
}

/// Sum of a rank-2 tensor along `axis`, keeping the reduced dimension as 1.
pub fn sum_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    let (m, n) = a.dims2("sum_axis")?;
    let d = a.data();
    match axis {
        0 => {
            let mut out = vec![0.0; n];
            for row in d.chunks_exact(n.max(1)).take(m) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            Tensor::new(vec![1, n], out)
        }
        1 => {
            let out = if n == 0 {
                vec![0.0; m]
            } else {
                d.chunks_exact(n).map(|r| r.iter().sum()).collect()
            };
            Tensor::new(vec![m, 1], out)
        }
        _ => Err(TensorError::Axis {
            op: "sum_axis",
            axis,
            shape: a.shape().to_vec(),
        }),
    }
}

/// Concatenates rank-2 tensors along `axis`.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return Err(TensorError::Empty { op: "concat" });
    };
    let (m0, n0) = first.dims2("concat")?;
    let mismatch = |t: &Tensor| TensorError::ShapeMismatch {
        op: "concat",
        lhs: first.shape().to_vec(),
        rhs: t.shape().to_vec(),
    };
    match axis {
        0 => {
            let mut rows = 0;
            let mut data = Vec::new();
            for t in parts {
                let (m, n) = t.dims2("concat")?;
                if n != n0 {
                    return Err(mismatch(t));
                }
                rows += m;
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, n0], data)
        }
        1 => {
            let mut cols = 0;
            for t in parts {
                let (m, n) = t.dims2("concat")?;
                if m != m0 {
                    return Err(mismatch(t));
                }
                cols += n;
            }
            let mut data = Vec::with_capacity(m0 * cols);
            for r in 0..m0 {
                for t in parts {
                    data.extend_from_slice(t.row_slice(r));
                }
            }
            Tensor::new(vec![m0, cols], data)
        }
        _ => Err(TensorError::Axis {
            op: "concat",
            axis,
            shape: first.shape().to_vec(),
        }),
    }
}

/// Gathers rows of a rank-2 tensor.
pub fn index_select(a: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (m, n) = a.dims2("index_select")?;
    let mut data = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        if r >= m {
            return Err(TensorError::Index {
                op: "index_select",
                index: r,
                len: m,
            });
        }
        data.extend_from_slice(a.row_slice(r));
    }
    Tensor::new(vec![rows.len(), n], data)
}
