//! Tape-based reverse-mode differentiation over NCHW tensors.
//!
//! A [`Graph`] records every operation as a node holding its value and a
//! backward closure. Nodes are appended in evaluation order, so walking the
//! tape backwards from the root is a valid topological order.
//!
//! A graph built with [`Graph::dry_run`] propagates shapes only and tallies the
//! analytic FLOP count of each op, which is how the network's FLOPs are counted.

mod conv;
mod elementwise;
mod norm;
mod resample;
mod tensor;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

pub use conv::ConvSpec;
pub use elementwise::sigmoid;
pub use norm::{BatchMoments, BnStats};
pub use resample::{avg_pool2_plane, resize_bilinear_plane};
pub(crate) use tensor::{gemm, Layout};
pub use tensor::{Element, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Everything a backward closure may look at.
pub struct BackwardArgs<'a, T> {
    /// Gradient of the root with respect to this node's output.
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    /// Whether each input needs a gradient; closures may return `None` otherwise.
    pub needs: &'a [bool],
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Graph<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    dry: bool,
    flops: Cell<u64>,
    track_kinks: bool,
    kinks: Cell<u64>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            dry: false,
            flops: Cell::new(0),
            track_kinks: false,
            kinks: Cell::new(FNV_OFFSET),
        }
    }

    /// Shape-only evaluation; no values are computed and nothing can be differentiated.
    pub fn dry_run() -> Self {
        Self { dry: true, ..Self::new() }
    }

    /// Records a fingerprint of every branch decision (ReLU signs, clamps,
    /// thresholds). Two evaluations with equal fingerprints lie in the same
    /// smooth piece of a piecewise-smooth function.
    pub fn with_kink_tracking() -> Self {
        Self { track_kinks: true, ..Self::new() }
    }

    pub fn is_dry(&self) -> bool {
        self.dry
    }

    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub fn kink_signature(&self) -> u64 {
        self.kinks.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn note_branches(&self, bits: impl IntoIterator<Item = bool>) {
        if !self.track_kinks {
            return;
        }
        let mut h = self.kinks.get();
        for b in bits {
            h ^= u64::from(b) + 1;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.kinks.set(h);
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let value = if self.dry { Tensor::shape_only(value.shape()) } else { value };
        self.push(Node { value: Rc::new(value), parents: Vec::new(), backward: None, requires_grad })
    }

    /// Leaf that receives a gradient.
    pub fn input(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf of the given shape for dry runs; zero-filled otherwise.
    pub fn placeholder(&self, shape: Shape, requires_grad: bool) -> Var {
        if self.dry {
            self.push(Node { value: Rc::new(Tensor::shape_only(shape)), parents: Vec::new(), backward: None, requires_grad })
        } else {
            self.leaf(Tensor::zeros(shape), requires_grad)
        }
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// A view of `v` that blocks gradient flow.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.push(Node { value, parents: Vec::new(), backward: None, requires_grad: false })
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    pub(crate) fn add_flops(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    /// Records a new op. `forward` is skipped in dry runs; `flops` is always tallied.
    pub fn record(
        &self,
        inputs: &[Var],
        shape: Shape,
        flops: u64,
        forward: impl FnOnce(&[&Tensor<T>]) -> Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var {
        self.add_flops(flops);
        let (values, requires_grad): (Vec<Rc<Tensor<T>>>, bool) = {
            let nodes = self.nodes.borrow();
            (inputs.iter().map(|v| Rc::clone(&nodes[v.0].value)).collect(), inputs.iter().any(|v| nodes[v.0].requires_grad))
        };
        let value = if self.dry {
            Tensor::shape_only(shape)
        } else {
            let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
            let out = forward(&refs);
            assert_eq!(out.shape(), shape, "op produced an unexpected shape");
            out
        };
        let requires_grad = requires_grad && !self.dry;
        self.push(Node {
            value: Rc::new(value),
            parents: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    /// Gradients of the scalar `root` with respect to every leaf that requires one.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert!(!self.dry, "cannot differentiate a dry-run graph");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.shape().numel(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        let mut leaves = vec![None; 0];
        leaves.resize_with(root.0 + 1, || None);
        if !nodes[root.0].requires_grad {
            return Gradients { grads: leaves };
        }
        grads[root.0] = Some(Tensor::full(nodes[root.0].value.shape(), T::one()));
        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                leaves[id] = Some(grad);
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let results = backward(&BackwardArgs { grad: &grad, inputs: &inputs, output: &node.value, needs: &needs });
            debug_assert_eq!(results.len(), node.parents.len());
            for ((&p, need), r) in node.parents.iter().zip(&needs).zip(results) {
                if !need {
                    continue;
                }
                let Some(r) = r else { continue };
                debug_assert_eq!(r.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&r),
                    slot @ None => *slot = Some(r),
                }
            }
        }
        Gradients { grads: leaves }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
