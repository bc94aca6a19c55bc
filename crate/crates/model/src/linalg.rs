//! Strided row-major GEMM over `matrixmultiply`.

/// Read-only strided matrix view; element `(i, j)` is `data[off + i*rs + j*cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Dense row-major matrix with `cols` columns.
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, off: 0, rs: cols, cs: 1 }
    }

    pub fn at(data: &'a [f64], off: usize, rs: usize) -> Self {
        Self { data, off, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self, m: usize, n: usize) {
        if m > 0 && n > 0 {
            assert!(self.off + (m - 1) * self.rs + (n - 1) * self.cs < self.data.len());
        }
    }
}

/// `C[m,n] = alpha * A[m,k] B[k,n] + beta * C`, C row-major at `c_off` with row stride `c_rs`.
/// With `beta == 0` the prior contents of C are not read.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    c_off: usize,
    c_rs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!(c_off + (m - 1) * c_rs + n <= c.len());
    // SAFETY: every index touched lies within the slices, as asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            c_rs as isize,
            1,
        );
    }
}

/// `x[n,k] w[k,m]`.
pub(crate) fn matmul(x: &[f64], n: usize, k: usize, w: &[f64], m: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * m];
    gemm(n, k, m, 1.0, View::rows(x, k), View::rows(w, m), 0.0, &mut y, 0, m);
    y
}

/// `dw[k,m] += x[n,k]^T dy[n,m]`.
pub(crate) fn acc_xt_dy(x: &[f64], dy: &[f64], n: usize, k: usize, m: usize, dw: &mut [f64]) {
    gemm(k, n, m, 1.0, View::rows(x, k).t(), View::rows(dy, m), 1.0, dw, 0, m);
}

/// `dy[n,m] w[k,m]^T`.
pub(crate) fn matmul_wt(dy: &[f64], n: usize, m: usize, w: &[f64], k: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * k];
    gemm(n, m, k, 1.0, View::rows(dy, m), View::rows(w, m).t(), 0.0, &mut dx, 0, k);
    dx
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
