//! Row-major f64 matrix products on top of `matrixmultiply`.

/// A strided 2-D window into a flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Contiguous row-major matrix with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        View { off: 0, rs: cols, cs: 1 }
    }

    /// Transposed view of a contiguous row-major matrix with `cols` columns.
    pub fn trans(cols: usize) -> Self {
        View { off: 0, rs: 1, cs: cols }
    }

    /// Columns `off..off + w` of a row-major matrix with `cols` columns.
    pub fn cols(cols: usize, off: usize) -> Self {
        View { off, rs: cols, cs: 1 }
    }

    /// Transpose of [`View::cols`].
    pub fn cols_t(cols: usize, off: usize) -> Self {
        View { off, rs: 1, cs: cols }
    }

    fn check(&self, len: usize, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = self.off + (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < len, "matrix view out of bounds: {last} >= {len}");
        }
    }
}

/// `c = alpha * a · b + beta * c` with `a` m×k and `b` k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    av.check(a.len(), m, k);
    bv.check(b.len(), k, n);
    cv.check(c.len(), m, n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every element the kernel touches lies inside its slice, as
    // checked above; `c` is exclusively borrowed and does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// `a · b` for contiguous a (m×k) and b (k×n).
pub(crate) fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a, View::rows(k), b, View::rows(n), 0.0, &mut c, View::rows(n));
    c
}

/// `c += aᵀ · b` for a (k×m) and b (k×n); weight gradients of `x · W`.
pub(crate) fn add_at_b(a: &[f64], k: usize, m: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm(m, k, n, 1.0, a, View::trans(m), b, View::rows(n), 1.0, c, View::rows(n));
}

/// `c += a · bᵀ` for a (m×k) and b (n×k); input gradients of `x · W`.
pub(crate) fn add_a_bt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm(m, k, n, 1.0, a, View::rows(k), b, View::trans(k), 1.0, c, View::rows(n));
}
