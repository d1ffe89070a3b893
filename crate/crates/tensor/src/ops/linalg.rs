use crate::scalar::{gemm, MatRef};
use crate::{Array, Real, Var};

impl<'g, T: Real> Var<'g, T> {
    /// `[m, k] · [k, n]`.
    pub fn matmul(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        assert!(a.ndim() == 2 && b.ndim() == 2, "matmul needs matrices");
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        assert_eq!(k, b.dim(0), "matmul inner dimension mismatch");
        let mut out = vec![T::zero(); m * n];
        gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), T::zero(), &mut out);
        self.graph.custom(&[self, other], Array::new(&[m, n], out), move |g, ctx| {
            let (a, b) = (ctx.input(0), ctx.input(1));
            let gm = MatRef::new(g.data(), m, n);
            let ga = ctx.needs[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                gemm(gm, MatRef::new(b.data(), k, n).t(), T::zero(), &mut ga);
                Array::new(&[m, k], ga)
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                gemm(MatRef::new(a.data(), m, k).t(), gm, T::zero(), &mut gb);
                Array::new(&[k, n], gb)
            });
            vec![ga, gb]
        })
    }

    /// Affine map `x · wᵀ + b` with `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Var<'g, T> {
        let y = self.matmul(weight.t());
        match bias {
            Some(b) => y.add(b),
            None => y,
        }
    }

    /// Each row divided by `sqrt(‖row‖² ) + eps`.
    pub fn l2_normalize_rows(self, eps: T) -> Var<'g, T> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "l2_normalize_rows needs a matrix");
        let d = x.dim(1);
        let norms: Vec<T> = x.data().chunks(d).map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        let mut y = (*x).clone();
        for (row, &n) in y.data_mut().chunks_mut(d).zip(&norms) {
            let s = (n + eps).recip();
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.graph.custom(&[self], y, move |g, ctx| {
            // y = x / (n + eps), n = |x|: dx = (g - y (g·x)/(n (n+eps)))/(n+eps)
            let x = ctx.input(0);
            let mut gx = Vec::with_capacity(x.len());
            for ((gr, xr), &n) in g.data().chunks(d).zip(x.data().chunks(d)).zip(&norms) {
                let denom = n + eps;
                let dot: T = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                let coef = if n > T::zero() { dot / (n * denom * denom) } else { T::zero() };
                gx.extend(gr.iter().zip(xr).map(|(&gv, &xv)| gv / denom - coef * xv));
            }
            vec![Some(Array::new(x.shape(), gx))]
        })
    }

    /// Numerically stable row-wise log-softmax of a matrix.
    pub fn log_softmax_rows(self) -> Var<'g, T> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "log_softmax_rows needs a matrix");
        let d = x.dim(1);
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.graph.custom(&[self], y, move |g, ctx| {
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.data().chunks(d).zip(ctx.output.data().chunks(d)) {
                let s: T = gr.iter().copied().sum();
                gx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| gv - yv.exp() * s));
            }
            vec![Some(Array::new(g.shape(), gx))]
        })
    }

    pub fn softmax_rows(self) -> Var<'g, T> {
        self.log_softmax_rows().exp()
    }

    /// `out[b] = x[b, index[b]]`.
    pub fn pick_rows(self, index: &[usize]) -> Var<'g, T> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "pick_rows needs a matrix");
        let (b, d) = (x.dim(0), x.dim(1));
        assert_eq!(index.len(), b, "pick_rows index length mismatch");
        let idx = index.to_vec();
        let y = Array::new(
            &[b],
            idx.iter()
                .enumerate()
                .map(|(r, &k)| {
                    assert!(k < d, "pick_rows index {k} out of range {d}");
                    x.data()[r * d + k]
                })
                .collect(),
        );
        self.graph.custom(&[self], y, move |g, _| {
            let mut gx = Array::zeros(&[b, d]);
            for (r, &k) in idx.iter().enumerate() {
                gx.data_mut()[r * d + k] = g.data()[r];
            }
            vec![Some(gx)]
        })
    }
}
