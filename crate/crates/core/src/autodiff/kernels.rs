//! Raw numeric kernels shared by the forward and backward passes.

use crate::error::{Error, Result};

/// `c = alpha * a·b + beta * c` on row/column-strided views.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * rsc..i * rsc + n] {
                *v *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: lhs out of bounds");
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: rhs out of bounds");
    assert!(c.len() >= (m - 1) * rsc + n, "gemm: output out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        // gemm computes dst = alpha * dst + beta * lhs * rhs; read_dst = false skips the old values.
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            rsc as isize,
            beta != 0.0,
            a.as_ptr(),
            csa as isize,
            rsa as isize,
            b.as_ptr(),
            csb as isize,
            rsb as isize,
            beta,
            alpha,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Numpy-style broadcast of two shapes of rank <= 3.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Element strides of `shape` (padded to rank 3) when viewed as `out3`;
/// broadcast dimensions get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], out3: [usize; 3]) -> [usize; 3] {
    let s3 = crate::tensor::pad3(shape);
    let dense = [s3[1] * s3[2], s3[2], 1];
    let mut st = [0; 3];
    for i in 0..3 {
        st[i] = if s3[i] == out3[i] { dense[i] } else { 0 };
    }
    st
}

pub(crate) fn binary_broadcast(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let o3 = crate::tensor::pad3(out_shape);
    let sa = broadcast_strides(a_shape, o3);
    let sb = broadcast_strides(b_shape, o3);
    let mut out = Vec::with_capacity(o3.iter().product());
    for i in 0..o3[0] {
        for j in 0..o3[1] {
            let base_a = i * sa[0] + j * sa[1];
            let base_b = i * sb[0] + j * sb[1];
            match (sa[2], sb[2]) {
                (1, 1) => out.extend(
                    a[base_a..base_a + o3[2]]
                        .iter()
                        .zip(&b[base_b..base_b + o3[2]])
                        .map(|(&x, &y)| f(x, y)),
                ),
                (1, 0) => {
                    let y = b[base_b];
                    out.extend(a[base_a..base_a + o3[2]].iter().map(|&x| f(x, y)));
                }
                (0, 1) => {
                    let x = a[base_a];
                    out.extend(b[base_b..base_b + o3[2]].iter().map(|&y| f(x, y)));
                }
                _ => {
                    for k in 0..o3[2] {
                        out.push(f(a[base_a + k * sa[2]], b[base_b + k * sb[2]]));
                    }
                }
            }
        }
    }
    out
}

/// Sum `grad` (shaped `out_shape`) down to `target` by accumulating over the
/// broadcast dimensions.
pub(crate) fn reduce_to_shape(grad: &[f64], out_shape: &[usize], target: &[usize]) -> Vec<f64> {
    if out_shape == target {
        return grad.to_vec();
    }
    let o3 = crate::tensor::pad3(out_shape);
    let st = broadcast_strides(target, o3);
    let mut acc = vec![0.0; target.iter().product()];
    let mut idx = 0;
    for i in 0..o3[0] {
        for j in 0..o3[1] {
            let base = i * st[0] + j * st[1];
            if st[2] == 1 {
                for (a, &g) in acc[base..base + o3[2]].iter_mut().zip(&grad[idx..idx + o3[2]]) {
                    *a += g;
                }
            } else {
                acc[base] += grad[idx..idx + o3[2]].iter().sum::<f64>();
            }
            idx += o3[2];
        }
    }
    acc
}

/// `(outer, axis_len, inner)` split of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
