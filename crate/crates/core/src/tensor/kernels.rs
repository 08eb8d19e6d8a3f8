//! Slice-level kernels shared by the graph ops.
//!
//! All matrices are row-major and every kernel accumulates into `c`.

use super::Scalar;

/// `c += a · b` over strided views; `a` is `m×k`, `b` is `k×n`, `c` is `m×n`,
/// each addressed as `base[row·rs + col·cs]`.
#[allow(clippy::too_many_arguments)]
fn gemm_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, c: usize, rs: usize, cs: usize| (r - 1) * rs + (c - 1) * cs;
    assert!(last(m, n, rsc, csc) < c.len(), "gemm output out of bounds");
    if k == 0 {
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len(), "gemm lhs out of bounds");
    assert!(last(k, n, rsb, csb) < b.len(), "gemm rhs out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_acc(
            m,
            k,
            n,
            a.as_ptr(),
            [rsa as isize, csa as isize],
            b.as_ptr(),
            [rsb as isize, csb as isize],
            c.as_mut_ptr(),
            [rsc as isize, csc as isize],
        )
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, k, n, a, (k, 1), b, (n, 1), c, (n, 1));
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, k, n, a, (k, 1), b, (1, k), c, (n, 1));
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, k, n, a, (1, m), b, (n, 1), c, (n, 1));
}

/// Geometry of a strided, unpadded square-kernel convolution over one image.
#[derive(Clone, Copy, Debug)]
pub struct Patches {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Patches {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn rows(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn cols(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Gathers `x[channels, height, width]` into `cols[rows, channels·k·k]`.
    pub fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (k, s) = (self.kernel, self.stride);
        let (ow, ncol) = (self.out_width(), self.cols());
        for oi in 0..self.out_height() {
            for oj in 0..ow {
                let row = &mut cols[(oi * ow + oj) * ncol..(oi * ow + oj + 1) * ncol];
                for c in 0..self.channels {
                    for ki in 0..k {
                        let src = c * self.height * self.width + (oi * s + ki) * self.width + oj * s;
                        let dst = (c * k + ki) * k;
                        row[dst..dst + k].copy_from_slice(&x[src..src + k]);
                    }
                }
            }
        }
    }

    /// Adjoint of [`Patches::im2col`]: scatters and sums `cols` into `x`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let (k, s) = (self.kernel, self.stride);
        let (ow, ncol) = (self.out_width(), self.cols());
        for oi in 0..self.out_height() {
            for oj in 0..ow {
                let row = &cols[(oi * ow + oj) * ncol..(oi * ow + oj + 1) * ncol];
                for c in 0..self.channels {
                    for ki in 0..k {
                        let dst = c * self.height * self.width + (oi * s + ki) * self.width + oj * s;
                        let src = (c * k + ki) * k;
                        for (xd, &v) in x[dst..dst + k].iter_mut().zip(&row[src..src + k]) {
                            *xd += v;
                        }
                    }
                }
            }
        }
    }
}
