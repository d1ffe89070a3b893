//! 2-D convolution via im2col + GEMM, one sample per work item.

use crate::par;
use crate::scalar::{gemm, MatRef};
use crate::{Array, Real, Var};

/// Per-sample input and weight gradients.
type SampleGrads<T> = (Option<Vec<T>>, Option<Vec<T>>);

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
    fn hw_in(&self) -> usize {
        self.h * self.w
    }
}

/// Output positions `[lo, hi)` whose tap at kernel offset `k` lands inside
/// an input of length `n_in`.
fn valid_range(k: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n_in + pad > k { ((n_in + pad - k - 1) / stride + 1).min(n_out) } else { 0 };
    (lo.min(hi), hi)
}

/// Appends the `[C·kh·kw, ho·wo]` column matrix of one sample to `cols`.
fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut Vec<T>) {
    cols.clear();
    cols.reserve(g.k() * g.hw_out());
    let zero = T::zero();
    for ci in 0..g.c {
        let plane = &x[ci * g.hw_in()..(ci + 1) * g.hw_in()];
        for ki in 0..g.kh {
            let (ylo, yhi) = valid_range(ki, g.pad, g.stride, g.h, g.ho);
            for kj in 0..g.kw {
                let (xlo, xhi) = valid_range(kj, g.pad, g.stride, g.w, g.wo);
                cols.extend(std::iter::repeat_n(zero, ylo * g.wo));
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    cols.extend(std::iter::repeat_n(zero, xlo));
                    if xlo < xhi {
                        let first = xlo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            cols.extend_from_slice(&src[first..first + (xhi - xlo)]);
                        } else {
                            cols.extend(src[first..].iter().step_by(g.stride).take(xhi - xlo).copied());
                        }
                    }
                    cols.extend(std::iter::repeat_n(zero, g.wo - xhi));
                }
                cols.extend(std::iter::repeat_n(zero, (g.ho - yhi) * g.wo));
            }
        }
    }
}

/// Adds the column matrix back onto the input layout.
fn col2im<T: Real>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let hw = g.hw_out();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.hw_in()..(ci + 1) * g.hw_in()];
        for ki in 0..g.kh {
            let (ylo, yhi) = valid_range(ki, g.pad, g.stride, g.h, g.ho);
            for kj in 0..g.kw {
                let (xlo, xhi) = valid_range(kj, g.pad, g.stride, g.w, g.wo);
                if xlo >= xhi {
                    continue;
                }
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.wo + xlo..oy * g.wo + xhi];
                    let first = xlo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst[first..first + s.len()].iter_mut().zip(s).for_each(|(d, &v)| *d += v);
                    } else {
                        dst[first..].iter_mut().step_by(g.stride).zip(s).for_each(|(d, &v)| *d += v);
                    }
                }
            }
        }
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// Cross-correlation of `[B, Cin, H, W]` with `[Cout, Cin, kh, kw]`,
    /// zero padding `pad` on every side.
    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, pad: usize) -> Var<'g, T> {
        let (x, w) = (self.value(), weight.value());
        let &[b, c, h, wd] = x.shape() else { panic!("conv2d input must be [B,C,H,W], got {:?}", x.shape()) };
        let &[cout, cin, kh, kw] = w.shape() else { panic!("conv2d weight must be 4-D") };
        assert_eq!(c, cin, "conv2d channel mismatch: input {c}, weight {cin}");
        assert!(stride >= 1);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "kernel larger than padded input");
        let geo = Geometry { c, h, w: wd, kh, kw, stride, pad, ho: (h + 2 * pad - kh) / stride + 1, wo: (wd + 2 * pad - kw) / stride + 1 };
        let (k, hw) = (geo.k(), geo.hw_out());
        let out_len = cout * hw;
        let mut out = vec![T::zero(); b * out_len];
        let bias_v = bias.map(|bv| bv.value());
        let bias_ref = bias_v.as_deref();
        {
            let (xd, wdt) = (x.data(), w.data());
            par::for_each_chunk_mut(&mut out, out_len, |i, o| {
                let mut cols = Vec::new();
                im2col(&xd[i * c * geo.hw_in()..(i + 1) * c * geo.hw_in()], &geo, &mut cols);
                gemm(MatRef::new(wdt, cout, k), MatRef::new(&cols, k, hw), T::zero(), o);
                if let Some(bv) = bias_ref {
                    for (row, &bb) in o.chunks_mut(hw).zip(bv.data()) {
                        row.iter_mut().for_each(|v| *v += bb);
                    }
                }
            });
        }
        let y = Array::new(&[b, cout, geo.ho, geo.wo], out);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.graph.custom(&inputs, y, move |g, ctx| {
            let (x, w) = (ctx.input(0), ctx.input(1));
            let (need_x, need_w) = (ctx.needs[0], ctx.needs[1]);
            let in_len = c * geo.hw_in();
            let gd = g.data();
            let per_sample: Vec<SampleGrads<T>> = par::map_indexed(b, |i| {
                let gs = MatRef::new(&gd[i * out_len..(i + 1) * out_len], cout, hw);
                let gx = need_x.then(|| {
                    let mut dcols = vec![T::zero(); k * hw];
                    gemm(MatRef::new(w.data(), cout, k).t(), gs, T::zero(), &mut dcols);
                    let mut gx = vec![T::zero(); in_len];
                    col2im(&dcols, &geo, &mut gx);
                    gx
                });
                let gw = need_w.then(|| {
                    let mut cols = Vec::new();
                    im2col(&x.data()[i * in_len..(i + 1) * in_len], &geo, &mut cols);
                    let mut gw = vec![T::zero(); cout * k];
                    gemm(gs, MatRef::new(&cols, k, hw).t(), T::zero(), &mut gw);
                    gw
                });
                (gx, gw)
            });
            let mut gx_all = need_x.then(|| Vec::with_capacity(b * in_len));
            let mut gw_sum = need_w.then(|| vec![T::zero(); cout * k]);
            for (gx, gw) in per_sample {
                if let (Some(all), Some(gx)) = (gx_all.as_mut(), gx) {
                    all.extend_from_slice(&gx);
                }
                if let (Some(sum), Some(gw)) = (gw_sum.as_mut(), gw) {
                    sum.iter_mut().zip(gw).for_each(|(a, v)| *a += v);
                }
            }
            let mut grads = vec![gx_all.map(|v| Array::new(x.shape(), v)), gw_sum.map(|v| Array::new(w.shape(), v))];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let mut gb = vec![T::zero(); cout];
                    for s in gd.chunks(out_len) {
                        for (acc, row) in gb.iter_mut().zip(s.chunks(hw)) {
                            *acc += row.iter().copied().sum::<T>();
                        }
                    }
                    Array::new(&[cout], gb)
                }));
            }
            grads
        })
    }
}
