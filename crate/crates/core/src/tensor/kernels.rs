//! Raw kernels behind the graph ops. Everything here works on flat slices.

use super::Scalar;

/// Output extent of a strided, zero-padded window sweep.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.positions();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = iy as usize * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                plane[base + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the output and, when `keep_cols` is set,
/// the per-sample im2col buffers needed for the weight gradient.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Vec<T>, Vec<T>) {
    let (r, p) = (g.rows(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * p];
    let mut saved = if keep_cols && !g.is_pointwise() {
        vec![T::zero(); g.n * r * p]
    } else {
        Vec::new()
    };
    let mut scratch = if g.is_pointwise() || keep_cols {
        Vec::new()
    } else {
        vec![T::zero(); r * p]
    };
    for b in 0..g.n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else if keep_cols {
            let buf = &mut saved[b * r * p..(b + 1) * r * p];
            g.im2col(xb, buf);
            buf
        } else {
            g.im2col(xb, &mut scratch);
            &scratch
        };
        let ob = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(p).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.cout, r, p, T::one(), weight, r as isize, 1, cols, p as isize, 1, beta, ob,
            p as isize, 1,
        );
    }
    (out, saved)
}

pub(crate) fn conv2d_backward_input<T: Scalar>(grad_out: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let (r, p) = (g.rows(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let mut dx = vec![T::zero(); g.n * in_len];
    let mut dcols = vec![T::zero(); r * p];
    for b in 0..g.n {
        let gb = &grad_out[b * g.cout * p..(b + 1) * g.cout * p];
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        if g.is_pointwise() {
            T::gemm(
                r, g.cout, p, T::one(), weight, 1, r as isize, gb, p as isize, 1, T::zero(), dxb,
                p as isize, 1,
            );
        } else {
            T::gemm(
                r,
                g.cout,
                p,
                T::one(),
                weight,
                1,
                r as isize,
                gb,
                p as isize,
                1,
                T::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            g.col2im(&dcols, dxb);
        }
    }
    dx
}

/// Weight gradient. `cols` are the saved im2col buffers, or the raw input
/// for pointwise convolutions.
pub(crate) fn conv2d_backward_weight<T: Scalar>(grad_out: &[T], cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (r, p) = (g.rows(), g.positions());
    let mut dw = vec![T::zero(); g.cout * r];
    for b in 0..g.n {
        let gb = &grad_out[b * g.cout * p..(b + 1) * g.cout * p];
        let cb = &cols[b * r * p..(b + 1) * r * p];
        T::gemm(
            g.cout, p, r, T::one(), gb, p as isize, 1, cb, 1, p as isize, T::one(), &mut dw,
            r as isize, 1,
        );
    }
    dw
}

pub(crate) fn channel_sums<T: Scalar>(grad_out: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; c];
    for b in 0..n {
        for (ci, a) in acc.iter_mut().enumerate() {
            let off = (b * c + ci) * p;
            *a += grad_out[off..off + p].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    acc.into_iter().map(T::from_f64_lossy).collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub size: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Max-pool without padding. Ties resolve to the first element in
/// row-major window order; the winning input offsets are returned.
pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let out_len = g.planes * g.ho * g.wo;
    let mut out = Vec::with_capacity(out_len);
    let mut arg = Vec::with_capacity(out_len);
    for pl in 0..g.planes {
        let base = pl * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut best = base + oy * g.stride * g.w + ox * g.stride;
                for ky in 0..g.size {
                    for kx in 0..g.size {
                        let idx = base + (oy * g.stride + ky) * g.w + ox * g.stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
