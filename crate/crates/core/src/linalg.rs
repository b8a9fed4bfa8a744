//! Thin row-major wrappers over `matrixmultiply::dgemm`.

#[derive(Clone, Copy)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`,
/// `op(b)` of shape `k x n` and all buffers row-major in their stored
/// (untransposed) shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 1 {
        // single row: packing overhead dominates dgemm, so use plain dots
        row_times(k, n, alpha, a, b, op_b, beta, c);
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the asserts above guarantee every strided access is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

#[allow(clippy::too_many_arguments)]
fn row_times(k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], op_b: Op, beta: f64, c: &mut [f64]) {
    for v in c.iter_mut() {
        *v = if beta == 0.0 { 0.0 } else { beta * *v };
    }
    match op_b {
        Op::T => {
            for (j, v) in c.iter_mut().enumerate() {
                let dot: f64 = a.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
                *v += alpha * dot;
            }
        }
        Op::N => {
            for (p, &x) in a.iter().enumerate() {
                let s = alpha * x;
                for (v, y) in c.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *v += s * y;
                }
            }
        }
    }
}
