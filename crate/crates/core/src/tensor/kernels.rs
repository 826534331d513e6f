//! Raw numeric kernels on row-major slices.
//!
//! The `*_sequential` and `*_parallel` variants compute every output element
//! with the same loop order, so they agree bit for bit. The undecorated entry
//! points pick the parallel variant when the `parallel` feature is enabled and
//! the problem is large enough to be worth splitting.

/// Work (multiply-adds) below which the dispatchers stay sequential.
pub const PARALLEL_THRESHOLD: usize = 1 << 15;

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn matmul_row(a_row: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for (p, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

pub fn matmul_sequential(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    for (i, row) in out.chunks_mut(n).enumerate() {
        matmul_row(&a[i * k..(i + 1) * k], b, n, row);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn matmul_parallel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    use rayon::prelude::*;
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| matmul_row(&a[i * k..(i + 1) * k], b, n, row));
    out
}

#[cfg(not(feature = "parallel"))]
pub fn matmul_parallel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_sequential(a, b, m, k, n)
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if cfg!(feature = "parallel") && m > 1 && m * k * n >= PARALLEL_THRESHOLD {
        matmul_parallel(a, b, m, k, n)
    } else {
        matmul_sequential(a, b, m, k, n)
    }
}

/// Geometry of a 2-D cross-correlation over NHWC input and HWIO kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn in_image(&self) -> usize {
        self.height * self.width * self.in_channels
    }

    fn out_image(&self) -> usize {
        self.out_h * self.out_w * self.out_channels
    }

    /// Calls `f(out_pixel, in_pixel, kernel_tap)` for every valid tap, where
    /// pixel offsets index the first channel of that pixel.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let out_px = (oy * self.out_w + ox) * self.out_channels;
                for ky in 0..self.kernel_h {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.height as isize {
                        continue;
                    }
                    for kx in 0..self.kernel_w {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.width as isize {
                            continue;
                        }
                        let in_px = (iy as usize * self.width + ix as usize) * self.in_channels;
                        let tap = (ky * self.kernel_w + kx) * self.in_channels * self.out_channels;
                        f(out_px, in_px, tap);
                    }
                }
            }
        }
    }

    fn forward_image(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        let (ci, co) = (self.in_channels, self.out_channels);
        self.for_each_tap(|o, i, t| {
            for c in 0..ci {
                let xv = x[i + c];
                let krow = &k[t + c * co..t + (c + 1) * co];
                for (dst, &kv) in out[o..o + co].iter_mut().zip(krow) {
                    *dst += xv * kv;
                }
            }
        });
    }

    fn input_grad_image(&self, g: &[f64], k: &[f64], dx: &mut [f64]) {
        let (ci, co) = (self.in_channels, self.out_channels);
        self.for_each_tap(|o, i, t| {
            for c in 0..ci {
                let krow = &k[t + c * co..t + (c + 1) * co];
                dx[i + c] += krow.iter().zip(&g[o..o + co]).map(|(a, b)| a * b).sum::<f64>();
            }
        });
    }

    fn kernel_grad_image(&self, x: &[f64], g: &[f64], dk: &mut [f64]) {
        let (ci, co) = (self.in_channels, self.out_channels);
        self.for_each_tap(|o, i, t| {
            for c in 0..ci {
                let xv = x[i + c];
                for (dst, &gv) in dk[t + c * co..t + (c + 1) * co].iter_mut().zip(&g[o..o + co]) {
                    *dst += xv * gv;
                }
            }
        });
    }
}

fn per_image<F>(batch: usize, image_len: usize, parallel: bool, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let mut out = vec![0.0; batch * image_len];
    if image_len == 0 {
        return out;
    }
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        out.par_chunks_mut(image_len).enumerate().for_each(|(b, o)| f(b, o));
        return out;
    }
    let _ = parallel;
    out.chunks_mut(image_len).enumerate().for_each(|(b, o)| f(b, o));
    out
}

fn use_parallel(g: &ConvGeometry) -> bool {
    cfg!(feature = "parallel")
        && g.batch > 1
        && g.batch * g.out_image() * g.kernel_h * g.kernel_w * g.in_channels >= PARALLEL_THRESHOLD
}

fn conv2d_forward_impl(x: &[f64], k: &[f64], g: &ConvGeometry, parallel: bool) -> Vec<f64> {
    let ii = g.in_image();
    per_image(g.batch, g.out_image(), parallel, |b, o| {
        g.forward_image(&x[b * ii..(b + 1) * ii], k, o)
    })
}

pub fn conv2d_forward_sequential(x: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
    conv2d_forward_impl(x, k, g, false)
}

pub fn conv2d_forward_parallel(x: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
    conv2d_forward_impl(x, k, g, true)
}

pub fn conv2d_forward(x: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
    conv2d_forward_impl(x, k, g, use_parallel(g))
}

pub fn conv2d_input_grad(grad: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let oi = g.out_image();
    per_image(g.batch, g.in_image(), use_parallel(g), |b, dx| {
        g.input_grad_image(&grad[b * oi..(b + 1) * oi], k, dx)
    })
}

/// Kernel gradient: per-image partials are summed in batch order.
pub fn conv2d_kernel_grad(x: &[f64], grad: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ii, oi) = (g.in_image(), g.out_image());
    let klen = g.kernel_h * g.kernel_w * g.in_channels * g.out_channels;
    let partials = per_image(g.batch, klen, use_parallel(g), |b, dk| {
        g.kernel_grad_image(&x[b * ii..(b + 1) * ii], &grad[b * oi..(b + 1) * oi], dk)
    });
    let mut dk = vec![0.0; klen];
    for part in partials.chunks(klen.max(1)) {
        for (d, p) in dk.iter_mut().zip(part) {
            *d += p;
        }
    }
    dk
}

/// Lower Cholesky factor of a symmetric matrix; `None` if not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L X = B` (or `Lᵀ X = B` when `transpose`) for lower-triangular
/// `L` (n×n) and `B` (n×m).
pub fn solve_lower(l: &[f64], b: &[f64], n: usize, m: usize, transpose: bool) -> Vec<f64> {
    let mut x = b.to_vec();
    for col in 0..m {
        if !transpose {
            for i in 0..n {
                let mut s = x[i * m + col];
                for p in 0..i {
                    s -= l[i * n + p] * x[p * m + col];
                }
                x[i * m + col] = s / l[i * n + i];
            }
        } else {
            for i in (0..n).rev() {
                let mut s = x[i * m + col];
                for p in i + 1..n {
                    s -= l[p * n + i] * x[p * m + col];
                }
                x[i * m + col] = s / l[i * n + i];
            }
        }
    }
    x
}
