//! Parameter storage, binding onto a tape, and the layer primitives the
//! networks are assembled from.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use c3gan_tensor::{Array, BatchStats, Grads, Graph, Real, Var};
use rand::Rng as _;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::rng::Rng;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Std of the normal initializer for conv/linear weights.
const INIT_STD: f64 = 0.02;

/// Named trainable parameters plus non-trainable buffers (running stats).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Array<T>>,
    buffers: BTreeMap<String, Array<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Array<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Array<T>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn param(&self, name: &str) -> &Array<T> {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Array<T> {
        self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn buffer(&self, name: &str) -> &Array<T> {
        self.buffers.get(name).unwrap_or_else(|| panic!("unknown buffer {name}"))
    }

    pub fn params(&self) -> &BTreeMap<String, Array<T>> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Array<T>> {
        &self.buffers
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Array<T>> {
        &mut self.params
    }

    pub fn buffers_mut(&mut self) -> &mut BTreeMap<String, Array<T>> {
        &mut self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    /// SHA-256 over names, shapes and bit patterns of all parameters.
    pub fn param_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, a) in &self.params {
            h.update(name.as_bytes());
            for &d in a.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in a.data() {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Largest absolute parameter difference to `other` (same layout).
    pub fn max_abs_param_diff(&self, other: &Self) -> f64 {
        self.params
            .iter()
            .map(|(k, a)| {
                let b = other.param(k);
                a.data().iter().zip(b.data()).fold(0.0f64, |m, (&x, &y)| m.max((x - y).to_f64_lossy().abs()))
            })
            .fold(0.0, f64::max)
    }

    fn apply_stats(&mut self, name: &str, stats: &BatchStats<T>) {
        let m = T::c(BN_MOMENTUM);
        for (key, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var_unbiased)] {
            let buf = self.buffers.get_mut(&format!("{name}.{key}")).expect("batch norm buffers");
            for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                *r = (T::one() - m) * *r + m * b;
            }
        }
    }
}

/// Normalization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; optionally record them for running estimates.
    Train { record_stats: bool },
    /// Frozen running statistics.
    Eval,
}

/// Binds a [`ParamStore`] onto a [`Graph`] for one forward/backward pass.
pub struct Binder<'g, 's, T> {
    graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    trainable: bool,
    mode: Cell<Mode>,
    bound: RefCell<BTreeMap<String, Var<'g, T>>>,
    stats: RefCell<Vec<(String, BatchStats<T>)>>,
}

impl<'g, 's, T: Real> Binder<'g, 's, T> {
    /// Parameters are leaves that receive gradients.
    pub fn trainable(graph: &'g Graph<T>, store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self::build(graph, store, true, mode)
    }

    /// Parameters are constants; gradients still flow through to inputs.
    pub fn frozen(graph: &'g Graph<T>, store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self::build(graph, store, false, mode)
    }

    fn build(graph: &'g Graph<T>, store: &'s ParamStore<T>, trainable: bool, mode: Mode) -> Self {
        Self { graph, store, trainable, mode: Cell::new(mode), bound: RefCell::default(), stats: RefCell::default() }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode.get()
    }

    /// Switches the normalization mode for subsequent forward passes.
    pub fn set_mode(&self, mode: Mode) {
        self.mode.set(mode);
    }

    pub fn param(&self, name: &str) -> Var<'g, T> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let value = self.store.param(name).clone();
        let v = if self.trainable { self.graph.leaf(value) } else { self.graph.constant(value) };
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    fn buffer(&self, name: &str) -> &'s Array<T> {
        self.store.buffer(name)
    }

    fn record(&self, name: &str, stats: BatchStats<T>) {
        if self.mode.get() == (Mode::Train { record_stats: true }) {
            self.stats.borrow_mut().push((name.to_string(), stats));
        }
    }

    /// Gradients of every bound parameter (zeros when unreached).
    pub fn param_grads(&self, grads: &Grads<T>) -> BTreeMap<String, Array<T>> {
        self.bound.borrow().iter().map(|(k, v)| (k.clone(), grads.get_or_zeros(*v))).collect()
    }

    /// Running-statistic updates collected during the pass.
    pub fn take_stats(&self) -> StatUpdates<T> {
        StatUpdates(std::mem::take(&mut *self.stats.borrow_mut()))
    }
}

/// Pending batch-norm running-statistic updates.
#[must_use]
pub struct StatUpdates<T>(Vec<(String, BatchStats<T>)>);

impl<T: Real> StatUpdates<T> {
    pub fn apply(self, store: &mut ParamStore<T>) {
        for (name, s) in &self.0 {
            store.apply_stats(name, s);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn normal<T: Real>(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Array<T> {
    Array::from_fn(shape, |_| T::c(mean + std * rng.sample::<f64, _>(StandardNormal)))
}

/// Fully connected layer; weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize, bias: bool) -> Self {
        Self { name: name.into(), inputs, outputs, bias }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        store.insert_param(format!("{}.weight", self.name), normal(&[self.outputs, self.inputs], 0.0, INIT_STD, rng));
        if self.bias {
            store.insert_param(format!("{}.bias", self.name), Array::zeros(&[self.outputs]));
        }
    }

    pub fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let w = b.param(&format!("{}.weight", self.name));
        let bias = self.bias.then(|| b.param(&format!("{}.bias", self.name)));
        x.linear(w, bias)
    }
}

/// 2-D convolution with square kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Self { name: name.into(), cin, cout, kernel, stride, pad, bias }
    }

    /// Conv(3,1) with "same" padding.
    pub fn same3(name: impl Into<String>, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(name, cin, cout, 3, 1, 1, bias)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let shape = [self.cout, self.cin, self.kernel, self.kernel];
        store.insert_param(format!("{}.weight", self.name), normal(&shape, 0.0, INIT_STD, rng));
        if self.bias {
            store.insert_param(format!("{}.bias", self.name), Array::zeros(&[self.cout]));
        }
    }

    pub fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let w = b.param(&format!("{}.weight", self.name));
        let bias = self.bias.then(|| b.param(&format!("{}.bias", self.name)));
        x.conv2d(w, bias, self.stride, self.pad)
    }
}

/// Batch normalization over axis 1 with learned affine and running stats.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let c = self.channels;
        store.insert_param(format!("{}.weight", self.name), normal(&[c], 1.0, INIT_STD, rng));
        store.insert_param(format!("{}.bias", self.name), Array::zeros(&[c]));
        store.insert_buffer(format!("{}.running_mean", self.name), Array::zeros(&[c]));
        store.insert_buffer(format!("{}.running_var", self.name), Array::ones(&[c]));
    }

    pub fn forward<'g, T: Real>(&self, b: &Binder<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let gamma = b.param(&format!("{}.weight", self.name));
        let beta = b.param(&format!("{}.bias", self.name));
        match b.mode() {
            Mode::Train { .. } => {
                let (y, stats) = x.batch_norm_train(gamma, beta, T::c(BN_EPS));
                b.record(&self.name, stats);
                y
            }
            Mode::Eval => {
                let mean = b.buffer(&format!("{}.running_mean", self.name));
                let var = b.buffer(&format!("{}.running_var", self.name));
                x.batch_norm_eval(gamma, beta, mean.data(), var.data(), T::c(BN_EPS))
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Array<T>>,
    pub v: BTreeMap<String, Array<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter named in `grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Array<T>>) {
        self.t += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::c(self.lr * c2.sqrt() / c1);
        let eps = T::c(self.eps * c2.sqrt());
        for (name, g) in grads {
            let p = store.param_mut(name);
            let m = self.m.entry(name.clone()).or_insert_with(|| Array::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Array::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv -= step * *mv / (vv.sqrt() + eps);
            }
        }
    }
}

/// L2 norm over a set of gradients.
pub fn grad_norm<T: Real>(grads: &BTreeMap<String, Array<T>>) -> f64 {
    grads.values().flat_map(|a| a.data().iter()).map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
}
