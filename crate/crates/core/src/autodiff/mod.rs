//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s together with a
//! closure that maps the output gradient to input gradients. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse. Nodes that do
//! not depend on any leaf created with [`Tape::leaf`] carry no closure, so
//! constants (images, masks) cost nothing on the way back.
//!
//! Everything runs single-threaded and in a fixed order, so two identical
//! programs produce bit-identical values and gradients.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::tensor::Tensor;

mod conv;
mod ops;
mod spatial;

pub use conv::{conv2d, group_norm, max_pool2d, ConvGeometry};
pub use ops::{
    add, concat_channels, index_rows, matmul, mul, add_row_bias, relu, scale, segment_mean,
    softmax_channels, softplus, stop_gradient, sub, sum,
};
pub use spatial::{
    crop, gather_points, reflect_pad, resize_bilinear, resize_nearest, scatter_points,
    spatial_gather,
};

type Backward = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<Backward>,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that never stores backward closures.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Vec::new(), None, self.recording)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Vec::new(), None, false)
    }

    pub(crate) fn constant_rc(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    fn push(
        &self,
        value: Rc<Tensor>,
        parents: Vec<usize>,
        backward: Option<Backward>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation. `backward` receives the output gradient and a
    /// mask of which inputs need a gradient, and returns one entry per input.
    pub(crate) fn op<'t, F>(&'t self, value: Tensor, inputs: &[Var<'t>], backward: F) -> Var<'t>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let (parents, needs): (Vec<usize>, Vec<bool>) = {
            let nodes = self.nodes.borrow();
            inputs
                .iter()
                .map(|v| {
                    debug_assert!(std::ptr::eq(v.tape, self), "var from another tape");
                    (v.id, nodes[v.id].requires_grad)
                })
                .unzip()
        };
        let requires_grad = self.recording && needs.iter().any(|&n| n);
        if requires_grad {
            let closure: Backward = Box::new(move |g| backward(g, &needs));
            self.push(Rc::new(value), parents, Some(closure), true)
        } else {
            self.push(Rc::new(value), parents, None, false)
        }
    }

    /// Gradients of the scalar `root` with respect to every leaf on the tape.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let root_value = &nodes[root.id].value;
        assert_eq!(root_value.numel(), 1, "backward needs a scalar root");
        if !nodes[root.id].requires_grad {
            return Gradients { grads };
        }
        grads[root.id] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[parent].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[parent].value.shape());
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not influence the root.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        ops::add(self, other)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        ops::sub(self, other)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        ops::mul(self, other)
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        ops::scale(self, factor)
    }

    pub fn relu(self) -> Var<'t> {
        ops::relu(self)
    }

    pub fn softplus(self) -> Var<'t> {
        ops::softplus(self)
    }

    pub fn sum(self) -> Var<'t> {
        ops::sum(self)
    }

    pub fn detach(self) -> Var<'t> {
        ops::stop_gradient(self)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_carry_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::full([2], 3.0));
        let x = tape.leaf(Tensor::full([2], 2.0));
        let y = c.mul(x).sum();
        let g = tape.backward(y);
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn gradients_accumulate_over_fanout() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full([3], 1.5));
        let y = x.mul(x).add(x).sum();
        let g = tape.backward(y);
        assert_eq!(g.wrt(x).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn inference_tape_records_nothing_to_differentiate() {
        let tape = Tape::inference();
        let x = tape.leaf(Tensor::full([2], 1.0));
        let y = x.relu().sum();
        assert!(!y.requires_grad());
        assert!(tape.backward(y).wrt(x).is_none());
    }

    #[test]
    fn detach_blocks_the_path() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full([2], 2.0));
        let y = x.detach().mul(x).sum();
        let g = tape.backward(y);
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 2.0]);
    }
}
