//! Slice-level kernels shared by the pure ops and the tape.
//!
//! Matrices are row-major slices; `gemm` takes explicit (row, column)
//! strides so transposed operands never need to be materialized.

/// Strides of a matrix operand as (row stride, column stride).
pub(crate) type Strides = (isize, isize);

pub(crate) fn row_major(cols: usize) -> Strides {
    (cols as isize, 1)
}

pub(crate) fn transposed(cols_of_stored: usize) -> Strides {
    (1, cols_of_stored as isize)
}

/// `c (m×n) = [c +] a (m×k) · b (k×n)`.
///
/// Each output element is accumulated in a fixed order that depends only on
/// `k`, so row results do not change with `m` or with the row position.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    sa: Strides,
    b: &[f32],
    sb: Strides,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    check_operands(m, k, n, a, sa, b, sb);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: operands checked above; `c` is exclusively borrowed and holds m·n values.
    unsafe { sgemm_raw(m, k, n, a, sa, b, sb, beta, c.as_mut_ptr()) }
}

/// `a · b` into a fresh buffer, skipping the zero fill.
pub(crate) fn gemm_new(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    sa: Strides,
    b: &[f32],
    sb: Strides,
) -> Vec<f32> {
    if m == 0 || n == 0 || k == 0 {
        return vec![0.0; m * n];
    }
    check_operands(m, k, n, a, sa, b, sb);
    let mut c = Vec::with_capacity(m * n);
    // SAFETY: with beta = 0 sgemm writes all m·n outputs without reading them,
    // so every element is initialized before `set_len`.
    unsafe {
        sgemm_raw(m, k, n, a, sa, b, sb, 0.0, c.as_mut_ptr());
        c.set_len(m * n);
    }
    c
}

fn check_operands(m: usize, k: usize, n: usize, a: &[f32], sa: Strides, b: &[f32], sb: Strides) {
    let max_index = |rows: usize, cols: usize, s: Strides| {
        (rows as isize - 1) * s.0 + (cols as isize - 1) * s.1
    };
    assert!(sa.0 >= 0 && sa.1 >= 0 && sb.0 >= 0 && sb.1 >= 0);
    assert!((max_index(m, k, sa) as usize) < a.len());
    assert!((max_index(k, n, sb) as usize) < b.len());
}

/// # Safety
/// Operands must pass `check_operands` and `c` must be valid for m·n writes.
#[allow(clippy::too_many_arguments)]
unsafe fn sgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    sa: Strides,
    b: &[f32],
    sb: Strides,
    beta: f32,
    c: *mut f32,
) {
    matrixmultiply::sgemm(
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
        c,
        n as isize,
        1,
    );
}

/// Output extent of a stride-1 window sweep.
pub(crate) fn out_extent(size: usize, k: usize, pad: usize) -> usize {
    size + 2 * pad + 1 - k
}

/// Unfolds one `[h, w, c]` image into rows of `k*k*c` window values
/// ordered (ki, kj, channel), zero-filled outside the image.
pub(crate) fn im2col(
    input: &[f32],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    pad: usize,
    cols: &mut [f32],
) {
    let ho = out_extent(h, k, pad);
    let wo = out_extent(w, k, pad);
    let row_len = k * k * c;
    debug_assert_eq!(cols.len(), ho * wo * row_len);
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * row_len..][..row_len];
            for ki in 0..k {
                let iy = (oy + ki) as isize - pad as isize;
                for kj in 0..k {
                    let ix = (ox + kj) as isize - pad as isize;
                    let dst = &mut row[(ki * k + kj) * c..][..c];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.fill(0.0);
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&input[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds window rows back into an image.
pub(crate) fn col2im_add(
    cols: &[f32],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    pad: usize,
    image: &mut [f32],
) {
    let ho = out_extent(h, k, pad);
    let wo = out_extent(w, k, pad);
    let row_len = k * k * c;
    debug_assert_eq!(cols.len(), ho * wo * row_len);
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * row_len..][..row_len];
            for ki in 0..k {
                let iy = (oy + ki) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kj in 0..k {
                    let ix = (ox + kj) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &row[(ki * k + kj) * c..][..c];
                    let dst = (iy as usize * w + ix as usize) * c;
                    for (d, s) in image[dst..dst + c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Geometry of a stride-1 convolution over a batch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        out_extent(self.h, self.k, self.pad)
    }

    pub fn wo(&self) -> usize {
        out_extent(self.w, self.k, self.pad)
    }

    pub fn window(&self) -> usize {
        self.k * self.k * self.cin
    }

    pub fn out_rows(&self) -> usize {
        self.n * self.ho() * self.wo()
    }
}

/// Unfolds a whole batch; rows of all instances are stacked.
pub(crate) fn batch_im2col(input: &[f32], g: &ConvGeom) -> Vec<f32> {
    let in_len = g.h * g.w * g.cin;
    let per = g.ho() * g.wo() * g.window();
    let mut cols = vec![0.0; g.n * per];
    for (img, dst) in input.chunks(in_len).zip(cols.chunks_mut(per)) {
        im2col(img, g.h, g.w, g.cin, g.k, g.pad, dst);
    }
    cols
}

pub(crate) fn batch_col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let in_len = g.h * g.w * g.cin;
    let per = g.ho() * g.wo() * g.window();
    let mut image = vec![0.0; g.n * in_len];
    for (src, img) in cols.chunks(per).zip(image.chunks_mut(in_len)) {
        col2im_add(src, g.h, g.w, g.cin, g.k, g.pad, img);
    }
    image
}

/// Correlation of unfolded windows with a `[k, k, cin, cout]` kernel, plus bias.
pub(crate) fn conv_from_cols(cols: &[f32], kernel: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let rows = g.out_rows();
    let mut out = vec![0.0; rows * g.cout];
    for row in out.chunks_mut(g.cout) {
        row.copy_from_slice(bias);
    }
    gemm(
        rows,
        g.window(),
        g.cout,
        cols,
        row_major(g.window()),
        kernel,
        row_major(g.cout),
        &mut out,
        true,
    );
    out
}

/// Gradients of a convolution given its unfolded input and the output gradient.
/// Returns (d_input, d_kernel, d_bias).
pub(crate) fn conv_backward(
    cols: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    g: &ConvGeom,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let rows = g.out_rows();
    let window = g.window();
    let d_kernel = gemm_new(
        window,
        rows,
        g.cout,
        cols,
        transposed(window),
        grad_out,
        row_major(g.cout),
    );
    let d_bias = column_sums(grad_out, g.cout);
    let d_cols = gemm_new(
        rows,
        g.cout,
        window,
        grad_out,
        row_major(g.cout),
        kernel,
        transposed(g.cout),
    );
    (batch_col2im(&d_cols, g), d_kernel, d_bias)
}

/// Transposed convolution, stride 1, no cropping. `g` describes the adjoint
/// valid convolution: image `[n, h, w, cin=out channels]` → `[n, h-k+1, w-k+1, cout=in channels]`.
pub(crate) fn conv_transpose_forward(
    input: &[f32],
    kernel: &[f32],
    bias: &[f32],
    g: &ConvGeom,
) -> Vec<f32> {
    let rows = g.out_rows();
    let window = g.window();
    // z[r, (i, j, co)] = sum_ci x[r, ci] * kernel[(i, j, co), ci]
    let z = gemm_new(
        rows,
        g.cout,
        window,
        input,
        row_major(g.cout),
        kernel,
        transposed(g.cout),
    );
    let mut out = batch_col2im(&z, g);
    for px in out.chunks_mut(g.cin) {
        for (o, b) in px.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// Returns (d_input, d_kernel, d_bias) for [`conv_transpose_forward`].
pub(crate) fn conv_transpose_backward(
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    g: &ConvGeom,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let rows = g.out_rows();
    let window = g.window();
    let d_z = batch_im2col(grad_out, g);
    let d_input = gemm_new(
        rows,
        window,
        g.cout,
        &d_z,
        row_major(window),
        kernel,
        row_major(g.cout),
    );
    let d_kernel = gemm_new(
        window,
        rows,
        g.cout,
        &d_z,
        transposed(window),
        input,
        row_major(g.cout),
    );
    let d_bias = column_sums(grad_out, g.cin);
    (d_input, d_kernel, d_bias)
}

/// Sums a row-major `[rows, cols]` matrix over rows, accumulating in f64.
pub(crate) fn column_sums(data: &[f32], cols: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; cols];
    for row in data.chunks(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Per-channel mean and biased variance of a channel-last buffer, in f64.
pub(crate) fn channel_moments(data: &[f32], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (data.len() / channels) as f64;
    let mut mean = vec![0.0f64; channels];
    for row in data.chunks(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; channels];
    for row in data.chunks(channels) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    (mean, var)
}
