//! Batched 2-D convolution on channel-major tensors (`[C][B][H][W]`) via
//! im2col and matrixmultiply.

/// `c = a * b + beta * c` on raw row-major buffers, with optional transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: buffer lengths were checked above and the strides describe
    // dense row-major (or transposed) m x k, k x n and m x n matrices.
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_size(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }
}

/// Spatial extent of a channel-major batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.batch * self.h * self.w
    }
}

pub(crate) fn im2col(x: &[f64], d: Dims, s: &ConvShape, ho: usize, wo: usize) -> Vec<f64> {
    let ncols = d.batch * ho * wo;
    let mut col = vec![0.0; s.col_rows() * ncols];
    let k = s.kernel;
    for c in 0..s.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                for b in 0..d.batch {
                    let src = &x[(c * d.batch + b) * d.h * d.w..][..d.h * d.w];
                    for oy in 0..ho {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * d.w..][..d.w];
                        let out = &mut dst[(b * ho + oy) * wo..][..wo];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                *o = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(col: &[f64], d: Dims, s: &ConvShape, ho: usize, wo: usize) -> Vec<f64> {
    let ncols = d.batch * ho * wo;
    let mut x = vec![0.0; s.cin * d.plane()];
    let k = s.kernel;
    for c in 0..s.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let srcc = &col[row * ncols..(row + 1) * ncols];
                for b in 0..d.batch {
                    let dst = &mut x[(c * d.batch + b) * d.h * d.w..][..d.h * d.w];
                    for oy in 0..ho {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * d.w..][..d.w];
                        let inp = &srcc[(b * ho + oy) * wo..][..wo];
                        for (ox, v) in inp.iter().enumerate() {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output (`[cout][B][ho][wo]`) and its spatial dims.
pub(crate) fn conv_forward(x: &[f64], d: Dims, s: &ConvShape, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Dims) {
    let ho = s.out_size(d.h).expect("validated shape");
    let wo = s.out_size(d.w).expect("validated shape");
    let od = Dims { batch: d.batch, h: ho, w: wo };
    let n = od.plane();
    let mut y = vec![0.0; s.cout * n];
    for (row, b) in y.chunks_exact_mut(n).zip(bias) {
        row.fill(*b);
    }
    if s.kernel == 1 && s.stride == 1 && s.pad == 0 {
        gemm(s.cout, s.cin, n, weight, false, x, false, &mut y, 1.0);
    } else {
        let col = im2col(x, d, s, ho, wo);
        gemm(s.cout, s.col_rows(), n, weight, false, &col, false, &mut y, 1.0);
    }
    (y, od)
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    d: Dims,
    s: &ConvShape,
    weight: &[f64],
    dy: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let ho = s.out_size(d.h).expect("validated shape");
    let wo = s.out_size(d.w).expect("validated shape");
    let n = d.batch * ho * wo;
    for (g, row) in grad_b.iter_mut().zip(dy.chunks_exact(n)) {
        *g += row.iter().sum::<f64>();
    }
    let direct = s.kernel == 1 && s.stride == 1 && s.pad == 0;
    let col_owned;
    let col: &[f64] = if direct {
        x
    } else {
        col_owned = im2col(x, d, s, ho, wo);
        &col_owned
    };
    let k = s.col_rows();
    gemm(s.cout, n, k, dy, false, col, true, grad_w, 1.0);
    if !want_dx {
        return None;
    }
    let mut dcol = vec![0.0; k * n];
    gemm(k, s.cout, n, weight, true, dy, false, &mut dcol, 0.0);
    Some(if direct { dcol } else { col2im(&dcol, d, s, ho, wo) })
}
