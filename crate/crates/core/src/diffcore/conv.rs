//! GEMM-backed 2D cross-correlation kernels shared by the tape's conv op.
//!
//! The convolution is lowered to `W[cout x cin*k*k] * col[cin*k*k x oh*ow]`
//! via an explicit im2col buffer; the backward pass reuses the same
//! lowering for the weight gradient and scatters `W^T * gout` back with
//! col2im for the input gradient. All loops are sequential, so results
//! are bit-reproducible run to run.

/// out[oy][ox] windows of a cin x h x w input, kernel k, no padding.
pub fn out_dim(input: usize, k: usize, stride: usize) -> usize {
    (input - k) / stride + 1
}

/// Unpack convolution windows: col is (cin*k*k) x (oh*ow), row-major.
pub fn im2col(
    input: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    col: &mut [f32],
) {
    let oh = out_dim(h, k, stride);
    let ow = out_dim(w, k, stride);
    debug_assert_eq!(col.len(), cin * k * k * oh * ow);

    let mut row = 0;
    for ci in 0..cin {
        let chan = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let src = &chan[(oy * stride + ky) * w + kx..];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        dst_row.copy_from_slice(&src[..ow]);
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src[ox * stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add the column buffer back onto the input layout (adjoint of im2col).
pub fn col2im_add(
    col: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    out: &mut [f32],
) {
    let oh = out_dim(h, k, stride);
    let ow = out_dim(w, k, stride);
    debug_assert_eq!(col.len(), cin * k * k * oh * ow);
    debug_assert_eq!(out.len(), cin * h * w);

    let mut row = 0;
    for ci in 0..cin {
        let chan = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let dst = &mut chan[(oy * stride + ky) * w + kx..];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        for (d, s) in dst[..ow].iter_mut().zip(src_row) {
                            *d += *s;
                        }
                    } else {
                        for (ox, s) in src_row.iter().enumerate() {
                            dst[ox * stride] += *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// c[m x n] = a[m x p] * b[p x n] + beta * c, all row-major.
pub fn gemm(m: usize, p: usize, n: usize, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            p,
            n,
            1.0,
            a.as_ptr(),
            p as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c[m x n] = a[m x p] * b^T where b is [n x p] row-major.
pub fn gemm_bt(m: usize, p: usize, n: usize, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), n * p);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            p,
            n,
            1.0,
            a.as_ptr(),
            p as isize,
            1,
            b.as_ptr(),
            1,
            p as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c[m x n] = a^T * b where a is [p x m] row-major, b is [p x n].
pub fn gemm_at(m: usize, p: usize, n: usize, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), p * m);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            p,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
