use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Maps the gradient of a node's output to gradients of its parents, in
/// parent order. `None` marks a parent that receives nothing.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    grad: Option<Tensor>,
}

/// Records operations in creation order, which is always a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.nodes.borrow().len())
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
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A differentiable input; gradients accumulate on it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            op: "leaf",
            value: Rc::new(value),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
            grad: None,
        })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            op: "constant",
            value: Rc::new(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            grad: None,
        })
    }

    /// Records the result of an operation. The backward rule is only kept when
    /// some parent takes part in differentiation.
    pub(crate) fn record<'t>(
        &'t self,
        op: &'static str,
        value: Tensor,
        parents: &[Var<'t>],
        backward: BackwardFn,
    ) -> Var<'t> {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        self.push_node(Node {
            op,
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            grad: None,
        })
    }

    /// Accumulates `∂loss/∂leaf` into every differentiable leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(contract!("loss belongs to a different tape"));
        }
        let loss_value = loss.value();
        if loss_value.len() != 1 {
            return Err(contract!("backward needs a scalar loss, got shape {:?}", loss_value.shape()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            match &node.backward {
                Some(rule) => {
                    let parent_grads = rule(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                    for (&pid, pg) in node.parents.clone().iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        match &mut grads[pid] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None if node.requires_grad => match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                None => {}
            }
        }
        // Parents that do not require grad may have collected entries above;
        // they are simply dropped with `grads`.
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.nodes.borrow()[var.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// First recorded node whose value contains a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes.borrow().iter().enumerate().find(|(_, n)| !n.value.all_finite()).map(|(i, n)| (i, n.op))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn op(&self) -> &'static str {
        self.tape.nodes.borrow()[self.id].op
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_on_square_sum() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = x.mul(x).unwrap().sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let loss = x.mean();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.25; 4]);
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.5; 4]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_record_no_rules() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2], 1.0));
        let b = a.scale(2.0);
        assert!(!b.requires_grad());
    }
}
