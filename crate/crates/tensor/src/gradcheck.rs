//! Central finite-difference checks for hand-written backward rules.

use crate::{Array, Graph, Real, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares `∂f/∂x` from the tape against central differences with step
/// `h` at the given flat coordinates.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; `floor` keeps
/// coordinates with vanishing gradient from dominating.
pub fn check_gradient<F>(x: &Array<f64>, coords: &[usize], h: f64, floor: f64, f: F) -> GradCheck
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Var<'g, f64>,
{
    let graph = Graph::new();
    let xv = graph.leaf(x.clone());
    let loss = f(&graph, xv);
    let grads = graph.backward(loss);
    let analytic = grads.get_or_zeros(xv);

    let eval = |arr: Array<f64>| {
        let g = Graph::no_grad();
        let v = g.constant(arr);
        f(&g, v).item()
    };
    let mut report = GradCheck { checked: 0, max_rel_err: 0.0, worst: None };
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((i, a, numeric));
        }
    }
    report
}

/// Evenly spread coordinate sample of size at most `count` from `0..len`,
/// offset by `salt` so different checks probe different entries.
pub fn spread_coords(len: usize, count: usize, salt: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    // multiplicative stride coprime with most lengths
    let step = (len / count).max(1);
    (0..count).map(|k| (k * step + (salt * 7919 + k * 104_729) % step.max(1)) % len).collect()
}

impl<T: Real> Array<T> {
    /// Max elementwise absolute difference.
    pub fn max_abs_diff(&self, other: &Array<T>) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data().iter().zip(other.data()).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
