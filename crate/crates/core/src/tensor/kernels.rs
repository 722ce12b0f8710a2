//! Strided GEMM wrapper. Convolutions and linear layers are expressed as
//! GEMMs over strided views so no im2col buffers are materialized.

/// A strided read-only view: element (i, j) lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], offset: usize, rs: usize, cs: usize) -> Self {
        Self {
            data,
            offset,
            rs,
            cs,
        }
    }

    /// Plain row-major `? × cols` matrix.
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self::new(data, 0, cols, 1)
    }

    /// Transpose of a row-major `? × cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self::new(data, 0, 1, cols)
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs;
        assert!(last < self.data.len(), "gemm view out of bounds");
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, where `c` is written at
/// `c_data[c_offset + i*rsc + j*csc]`. With `beta == 0` the prior contents of
/// `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c_data: &mut [f64],
    c_offset: usize,
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let last = c_offset + (m - 1) * rsc + (n - 1) * csc;
    assert!(last < c_data.len(), "gemm output out of bounds");
    // SAFETY: every index touched by the kernel was bounds-checked above and
    // `c_data` is uniquely borrowed, so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c_data.as_mut_ptr().add(c_offset),
            rsc as isize,
            csc as isize,
        );
    }
}
