use crate::{Array, Real, Var};

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (for running estimates).
    pub var_unbiased: Vec<T>,
}

fn layout(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "batch norm needs [B, C, ...]");
    (shape[0], shape[1], shape[2..].iter().product())
}

impl<'g, T: Real> Var<'g, T> {
    /// Batch norm using the statistics of this batch, normalizing over all
    /// axes except 1. `gamma`, `beta`: `[C]`.
    pub fn batch_norm_train(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: T) -> (Var<'g, T>, BatchStats<T>) {
        let x = self.value();
        let (b, c, l) = layout(x.shape());
        let n = b * l;
        assert!(n > 1, "batch norm needs more than one value per channel");
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let s = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                mean[ci] += s.iter().copied().sum::<T>();
            }
        }
        let nf = T::c(n as f64);
        mean.iter_mut().for_each(|m| *m /= nf);
        for bi in 0..b {
            for ci in 0..c {
                let s = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                var[ci] += s.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
            }
        }
        let var_unbiased: Vec<T> = var.iter().map(|&v| v / T::c((n - 1) as f64)).collect();
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let (gv, bv) = (gamma.value(), beta.value());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let r = (bi * c + ci) * l..(bi * c + ci + 1) * l;
                for ((xh, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&xd[r]) {
                    *xh = (xv - mean[ci]) * inv_std[ci];
                    *yv = *xh * gv.data()[ci] + bv.data()[ci];
                }
            }
        }
        let shape = x.shape().to_vec();
        let stats = BatchStats { mean, var_unbiased };
        let out = self.graph.custom(&[self, gamma, beta], Array::new(&shape, y), move |g, ctx| {
            let gd = g.data();
            let gamma = ctx.input(1).data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let r = (bi * c + ci) * l..(bi * c + ci + 1) * l;
                    for (&gv, &xh) in gd[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[ci] += gv * xh;
                        dbeta[ci] += gv;
                    }
                }
            }
            let gx = ctx.needs[0].then(|| {
                // dx = gamma * inv_std / n * (n g - Σg - xhat Σ(g xhat))
                let mut gx = vec![T::zero(); gd.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let r = (bi * c + ci) * l..(bi * c + ci + 1) * l;
                        let k = gamma[ci] * inv_std[ci] / nf;
                        for ((o, &gv), &xh) in gx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                            *o = k * (nf * gv - dbeta[ci] - xh * dgamma[ci]);
                        }
                    }
                }
                Array::new(&shape, gx)
            });
            vec![gx, Some(Array::new(&[c], dgamma)), Some(Array::new(&[c], dbeta))]
        });
        (out, stats)
    }

    /// Batch norm with fixed statistics (inference mode).
    pub fn batch_norm_eval(self, gamma: Var<'g, T>, beta: Var<'g, T>, mean: &[T], var: &[T], eps: T) -> Var<'g, T> {
        let shape = self.shape();
        let (_, c, _) = layout(&shape);
        assert!(mean.len() == c && var.len() == c, "running statistics size mismatch");
        let mut bshape = vec![1; shape.len()];
        bshape[1] = c;
        let g = self.graph;
        let mean = g.constant(Array::new(&bshape, mean.to_vec()));
        let inv_std = g.constant(Array::new(&bshape, var.iter().map(|&v| (v + eps).sqrt().recip()).collect()));
        let xhat = self.sub(mean).mul(inv_std);
        xhat.mul(gamma.reshape(&bshape)).add(beta.reshape(&bshape))
    }
}
