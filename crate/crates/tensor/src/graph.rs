//! Tape of recorded operations and the reverse sweep over it.

use std::cell::RefCell;
use std::rc::Rc;

use crate::{Array, Real};

/// Inputs available to a backward closure.
pub struct BackwardCtx<'a, T> {
    pub inputs: &'a [Rc<Array<T>>],
    pub output: &'a Array<T>,
    /// Which inputs need a gradient; closures may return `None` for others.
    pub needs: &'a [bool],
}

impl<T> BackwardCtx<'_, T> {
    pub fn input(&self, i: usize) -> &Array<T> {
        &self.inputs[i]
    }
}

type BackwardFn<T> = Box<dyn Fn(&Array<T>, &BackwardCtx<'_, T>) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Append-only tape. Every op on a [`Var`] records one node.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A graph that records values only; `backward` is unavailable.
    pub fn no_grad() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Array<T>) -> Var<'_, T> {
        self.insert(Rc::new(value), Vec::new(), None, self.grad_enabled)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.insert(Rc::new(value), Vec::new(), None, false)
    }

    pub fn constant_rc(&self, value: Rc<Array<T>>) -> Var<'_, T> {
        self.insert(value, Vec::new(), None, false)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Array::scalar(v))
    }

    pub(crate) fn value_rc(&self, id: usize) -> Rc<Array<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn insert(&self, value: Rc<Array<T>>, parents: Vec<usize>, backward: Option<BackwardFn<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Records an operation with a hand-written backward rule.
    ///
    /// `backward(grad_out, ctx)` returns one optional gradient per input,
    /// each with the shape of that input.
    pub fn custom<'g, F>(&'g self, inputs: &[Var<'g, T>], value: Array<T>, backward: F) -> Var<'g, T>
    where
        F: Fn(&Array<T>, &BackwardCtx<'_, T>) -> Vec<Option<Array<T>>> + 'static,
    {
        let parents: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires = self.grad_enabled && parents.iter().any(|&p| self.requires_grad(p));
        let bw: Option<BackwardFn<T>> = if requires { Some(Box::new(backward)) } else { None };
        self.insert(Rc::new(value), parents, bw, requires)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Grads<T> {
        assert!(self.grad_enabled, "backward on a no_grad graph");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward requires a scalar loss");
        let mut grads: Vec<Option<Array<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array::full(nodes[loss.id].value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<Rc<Array<T>>> = node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let ctx = BackwardCtx { inputs: &inputs, output: &node.value, needs: &needs };
            let parent_grads = bw(&g, &ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Grads { grads }
    }
}

/// Gradients of leaves after [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of `v`, or `None` if no path reaches it.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Array<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }

    /// Gradient of `v`, zeros if unreached.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Array<T> {
        self.get(v).cloned().unwrap_or_else(|| Array::zeros(v.value().shape()))
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array<T>> {
        self.graph.value_rc(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant_rc(self.value())
    }

    pub fn item(&self) -> T {
        self.value().item()
    }
}
