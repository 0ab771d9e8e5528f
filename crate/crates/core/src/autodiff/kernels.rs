//! Raw numeric kernels behind the graph nodes. Everything here works on
//! flat row-major slices and never allocates graph state.

/// `c = beta * c + op(a) * op(b)` for an `m × k` by `k × n` product.
///
/// `a_t` means `a` is stored as the row-major `k × m` transpose, likewise
/// `b_t` for a stored `n × k` block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` does not alias `a` or `b` (distinct borrows).
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one `cin × h × w` image into a `(cin·k·k) × (oh·ow)` matrix.
pub(crate) fn im2col(img: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..g.oh {
                    let src_row = &img[(ci * g.h + oy * g.stride + ky) * g.w..];
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        out_row.copy_from_slice(&src_row[kx..kx + g.ow]);
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            *o = src_row[ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto an image.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeometry, img: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..g.oh {
                    let base = (ci * g.h + oy * g.stride + ky) * g.w + kx;
                    for ox in 0..g.ow {
                        img[base + ox * g.stride] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of one row into `out`.
pub(crate) fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `ln Σ exp(z)` with max subtraction.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}
