use crate::{Array, Real, Var};

impl<'g, T: Real> Var<'g, T> {
    pub fn sum_all(self) -> Var<'g, T> {
        let y = Array::scalar(self.value().sum());
        self.graph.custom(&[self], y, |g, ctx| vec![Some(Array::full(ctx.input(0).shape(), g.item()))])
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = T::c(self.value().len() as f64);
        self.sum_all().scale(n.recip())
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let d = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for k in 0..d {
                let src = &xd[(o * d + k) * inner..(o * d + k + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.graph.custom(&[self], Array::new(&out_shape, out), move |g, _| {
            let gd = g.data();
            let mut gx = Vec::with_capacity(outer * d * inner);
            for o in 0..outer {
                for _ in 0..d {
                    gx.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Array::new(&shape, gx))]
        })
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g, T> {
        let d = T::c(self.shape()[axis] as f64);
        self.sum_axis(axis).scale(d.recip())
    }
}
