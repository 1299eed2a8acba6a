/// Strided matrix: (row stride, column stride).
pub(crate) type Strides = (isize, isize);

/// `c = a * b + beta * c` for an `m x k` by `k x n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, s: Strides| {
        (rows.saturating_sub(1) as isize * s.0 + cols.saturating_sub(1) as isize * s.1) as usize + 1
    };
    assert!(k == 0 || a.len() >= extent(m, k, sa), "gemm: lhs too short");
    assert!(k == 0 || b.len() >= extent(k, n, sb), "gemm: rhs too short");
    assert!(c.len() >= extent(m, n, sc), "gemm: output too short");
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            sc.0,
            sc.1,
        );
    }
}
