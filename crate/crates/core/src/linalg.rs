//! Row-major single-precision GEMM on top of `matrixmultiply`.

/// `C = alpha * op(A) * op(B) + beta * C` with `op(A)` of shape `m x k` and
/// `op(B)` of shape `k x n`; all matrices row-major and densely packed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k, "gemm: A has wrong length");
    assert_eq!(b.len(), k * n, "gemm: B has wrong length");
    assert_eq!(c.len(), m * n, "gemm: C has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the asserted buffer lengths.
    unsafe {
        matrixmultiply::sgemm(
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

/// `y = A x` for row-major `A` of shape `rows x cols`.
pub fn matvec(rows: usize, cols: usize, a: &[f32], x: &[f32], y: &mut [f32]) {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(x.len(), cols);
    assert_eq!(y.len(), rows);
    for (r, out) in y.iter_mut().enumerate() {
        let row = &a[r * cols..(r + 1) * cols];
        *out = row.iter().zip(x).map(|(&p, &q)| p as f64 * q as f64).sum::<f64>() as f32;
    }
}

/// `y = A^T x` for row-major `A` of shape `rows x cols`.
pub fn matvec_t(rows: usize, cols: usize, a: &[f32], x: &[f32], y: &mut [f32]) {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(x.len(), rows);
    assert_eq!(y.len(), cols);
    let mut acc = vec![0f64; cols];
    for r in 0..rows {
        let xr = x[r] as f64;
        if xr == 0.0 {
            continue;
        }
        for (s, &v) in acc.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *s += xr * v as f64;
        }
    }
    for (o, s) in y.iter_mut().zip(acc) {
        *o = s as f32;
    }
}
