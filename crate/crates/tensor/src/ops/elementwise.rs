use crate::array::{broadcast_shape, strides};
use crate::{Array, Real, Var};

fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut padded = vec![1; rank - shape.len()];
    padded.extend_from_slice(shape);
    let s = strides(&padded);
    padded.iter().zip(s).map(|(&d, s)| if d == 1 { 0 } else { s }).collect()
}

/// Elementwise `f(a, b)` with numpy broadcasting.
pub(crate) fn broadcast_zip<T: Real>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape =
        broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| panic!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape()));
    let rank = shape.len();
    let (sa, sb) = (broadcast_strides(a.shape(), rank), broadcast_strides(b.shape(), rank));
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (ad, bd) = (a.data(), b.data());
    for _ in 0..n {
        let (mut oa, mut ob) = (0, 0);
        for k in 0..rank {
            oa += idx[k] * sa[k];
            ob += idx[k] * sb[k];
        }
        out.push(f(ad[oa], bd[ob]));
        crate::array::increment(&mut idx, &shape);
    }
    Array::new(&shape, out)
}

#[allow(clippy::should_implement_trait)]
impl<'g, T: Real> Var<'g, T> {
    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'g, T> {
        let x = self.value();
        let y = x.map(f);
        self.graph.custom(&[self], y, move |g, ctx| {
            let (x, y) = (ctx.input(0).data(), ctx.output.data());
            let data = g.data().iter().zip(x.iter().zip(y)).map(|(&g, (&x, &y))| g * df(x, y)).collect();
            vec![Some(Array::new(g.shape(), data))]
        })
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        let y = broadcast_zip(&self.value(), &other.value(), |a, b| a + b);
        self.graph.custom(&[self, other], y, |g, ctx| {
            vec![ctx.needs[0].then(|| g.sum_to_shape(ctx.input(0).shape())), ctx.needs[1].then(|| g.sum_to_shape(ctx.input(1).shape()))]
        })
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        let y = broadcast_zip(&self.value(), &other.value(), |a, b| a - b);
        self.graph.custom(&[self, other], y, |g, ctx| {
            vec![
                ctx.needs[0].then(|| g.sum_to_shape(ctx.input(0).shape())),
                ctx.needs[1].then(|| g.map(|v| -v).sum_to_shape(ctx.input(1).shape())),
            ]
        })
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        let y = broadcast_zip(&self.value(), &other.value(), |a, b| a * b);
        self.graph.custom(&[self, other], y, |g, ctx| {
            let (a, b) = (ctx.input(0), ctx.input(1));
            vec![
                ctx.needs[0].then(|| broadcast_zip(g, b, |g, b| g * b).sum_to_shape(a.shape())),
                ctx.needs[1].then(|| broadcast_zip(g, a, |g, a| g * a).sum_to_shape(b.shape())),
            ]
        })
    }

    pub fn div(self, other: Var<'g, T>) -> Var<'g, T> {
        let y = broadcast_zip(&self.value(), &other.value(), |a, b| a / b);
        self.graph.custom(&[self, other], y, |g, ctx| {
            let (a, b) = (ctx.input(0), ctx.input(1));
            vec![
                ctx.needs[0].then(|| broadcast_zip(g, b, |g, b| g / b).sum_to_shape(a.shape())),
                ctx.needs[1].then(|| {
                    // d(a/b)/db = -y/b
                    let y_over_b = broadcast_zip(ctx.output, b, |y, b| y / b);
                    g.zip_map(&y_over_b, |g, v| -g * v).sum_to_shape(b.shape())
                }),
            ]
        })
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        self.unary(|x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        self.unary(|x| x + c, |_, _| T::one())
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    /// `ln(max(x, eps))`; zero gradient where clamped.
    pub fn ln_clamped(self, eps: T) -> Var<'g, T> {
        self.unary(move |x| x.max(eps).ln(), move |x, _| if x > eps { x.recip() } else { T::zero() })
    }

    pub fn square(self) -> Var<'g, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(self) -> Var<'g, T> {
        self.unary(|x| x.sqrt(), |_, y| T::c(0.5) / y)
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(|x| x.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        self.unary(move |x| if x > T::zero() { x } else { x * slope }, move |x, _| if x > T::zero() { T::one() } else { slope })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
