use crate::array::numel;
use crate::{Array, Real, Var};

impl<'g, T: Real> Var<'g, T> {
    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let y = (*x).clone().reshape(shape);
        self.graph.custom(&[self], y, |g, ctx| vec![Some(g.clone().reshape(ctx.input(0).shape()))])
    }

    /// Flattens all axes after the first.
    pub fn flatten(self) -> Var<'g, T> {
        let s = self.shape();
        let rest = numel(&s[1..]);
        self.reshape(&[s[0], rest])
    }

    /// Broadcasts to `shape` (same rank or fewer leading axes).
    pub fn broadcast_to(self, shape: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let y = crate::ops::elementwise::broadcast_zip(&Array::zeros(shape), &x, |_, v| v);
        assert_eq!(y.shape(), shape, "cannot broadcast {:?} to {shape:?}", x.shape());
        self.graph.custom(&[self], y, |g, ctx| vec![Some(g.sum_to_shape(ctx.input(0).shape()))])
    }

    /// Transpose of a 2-D array.
    pub fn t(self) -> Var<'g, T> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "t() needs a matrix");
        let y = transpose(&x);
        self.graph.custom(&[self], y, |g, _| vec![Some(transpose(g))])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let d = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * d + start) * inner..(o * d + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.graph.custom(&[self], Array::new(&out_shape, out), move |g, _| {
            let mut gx = vec![T::zero(); outer * d * inner];
            for o in 0..outer {
                gx[(o * d + start) * inner..(o * d + start + len) * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Array::new(&shape, gx))]
        })
    }

    /// Nearest-neighbour 2× upsampling of `[B, C, H, W]`.
    pub fn upsample2x(self) -> Var<'g, T> {
        let x = self.value();
        let &[b, c, h, w] = x.shape() else { panic!("upsample2x needs [B,C,H,W]") };
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); b * c * h2 * w2];
        for (plane, src) in out.chunks_mut(h2 * w2).zip(x.data().chunks(h * w)) {
            for y in 0..h2 {
                let row = &src[(y / 2) * w..(y / 2 + 1) * w];
                for (xo, v) in plane[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                    *v = row[xo / 2];
                }
            }
        }
        self.graph.custom(&[self], Array::new(&[b, c, h2, w2], out), move |g, _| {
            let mut gx = vec![T::zero(); b * c * h * w];
            for (dst, src) in gx.chunks_mut(h * w).zip(g.data().chunks(h2 * w2)) {
                for y in 0..h2 {
                    for xo in 0..w2 {
                        dst[(y / 2) * w + xo / 2] += src[y * w2 + xo];
                    }
                }
            }
            vec![Some(Array::new(&[b, c, h, w], gx))]
        })
    }

    /// Gated linear unit over axis 1: first half ⊙ σ(second half).
    pub fn glu(self) -> Var<'g, T> {
        let c2 = self.shape()[1];
        assert!(c2.is_multiple_of(2), "glu needs an even channel count, got {c2}");
        let a = self.narrow(1, 0, c2 / 2);
        let gate = self.narrow(1, c2 / 2, c2 / 2).sigmoid();
        a.mul(gate)
    }
}

/// Concatenates along `axis`; all other axes must agree.
pub fn concat<'g, T: Real>(parts: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
    assert!(!parts.is_empty(), "concat of nothing");
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let first = values[0].shape().to_vec();
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let dims: Vec<usize> = values
        .iter()
        .map(|v| {
            let s = v.shape();
            assert!(
                s.len() == first.len() && s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..],
                "concat shape mismatch {s:?} vs {first:?}"
            );
            s[axis]
        })
        .collect();
    let total: usize = dims.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &d) in values.iter().zip(&dims) {
            out.extend_from_slice(&v.data()[o * d * inner..(o + 1) * d * inner]);
        }
    }
    let mut shape = first.clone();
    shape[axis] = total;
    let graph = parts[0].graph;
    graph.custom(parts, Array::new(&shape, out), move |g, ctx| {
        let mut grads: Vec<Vec<T>> = dims.iter().map(|&d| Vec::with_capacity(outer * d * inner)).collect();
        let gd = g.data();
        let mut off = 0;
        for _ in 0..outer {
            for (gv, &d) in grads.iter_mut().zip(&dims) {
                gv.extend_from_slice(&gd[off..off + d * inner]);
                off += d * inner;
            }
        }
        grads.into_iter().enumerate().map(|(i, gv)| ctx.needs[i].then(|| Array::new(ctx.input(i).shape(), gv))).collect()
    })
}

pub(crate) fn transpose<T: Real>(x: &Array<T>) -> Array<T> {
    let (r, c) = (x.dim(0), x.dim(1));
    let d = x.data();
    Array::from_fn(&[c, r], |i| d[(i % r) * c + i / r])
}
