use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::ops::{self, Op};
use super::{Result, Tensor, TensorError};

pub(crate) struct Node {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub op: Op,
}

#[derive(Default)]
pub(crate) struct GraphInner {
    pub nodes: Vec<Node>,
}

/// Arena recording one forward computation.
///
/// Cloning a `Graph` yields another handle to the same arena.
#[derive(Clone, Default)]
pub struct Graph {
    pub(crate) inner: Rc<RefCell<GraphInner>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf value. Leaves with `requires_grad` accumulate gradients on backward.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Value {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Value {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Value {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Value {
        let mut g = self.inner.borrow_mut();
        let id = g.nodes.len();
        g.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Value {
            graph: self.clone(),
            id,
        }
    }

    /// Drops every node recorded after the first `len` and clears gradients.
    pub(crate) fn truncate(&self, len: usize) {
        let mut g = self.inner.borrow_mut();
        g.nodes.truncate(len);
        g.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    /// Overwrites one element of a leaf's value.
    pub(crate) fn set_leaf_element(&self, id: usize, idx: usize, v: f64) {
        let mut g = self.inner.borrow_mut();
        debug_assert!(matches!(g.nodes[id].op, Op::Leaf));
        g.nodes[id].value.data_mut()[idx] = v;
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        Ref::map(self.inner.borrow(), |g| &g.nodes)
    }

    fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct Value {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.graph.nodes();
        let n = &nodes[self.id];
        f.debug_struct("Value")
            .field("id", &self.id)
            .field("shape", &n.value.shape())
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

impl Value {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes()[self.id].value.shape().to_vec()
    }

    pub fn tensor(&self) -> Tensor {
        self.graph.nodes()[self.id].value.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.graph.nodes()[self.id].value.data().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes()[self.id].requires_grad
    }

    /// Accumulated gradient, `None` until a backward pass reaches this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.nodes()[self.id].grad.clone()
    }

    /// The single element of a scalar value.
    pub fn item(&self) -> f64 {
        let nodes = self.graph.nodes();
        let v = &nodes[self.id].value;
        debug_assert_eq!(v.len(), 1);
        v.data()[0]
    }

    pub fn zero_grad(&self) {
        self.graph.inner.borrow_mut().nodes[self.id].grad = None;
    }

    pub(crate) fn check_same_graph(&self, other: &Value) -> Result<()> {
        if self.graph.same(&other.graph) {
            Ok(())
        } else {
            Err(TensorError::GraphMismatch)
        }
    }

    /// Accumulates `d self / d node` into the `grad` of every ancestor that
    /// requires a gradient. Calling it twice without zeroing adds twice.
    pub fn backward(&self) -> Result<()> {
        let mut inner = self.graph.inner.borrow_mut();
        let nodes = &mut inner.nodes;
        let root = &nodes[self.id].value;
        if root.len() != 1 {
            return Err(TensorError::InvalidRoot(root.shape().to_vec()));
        }
        if !nodes[self.id].requires_grad {
            return Ok(());
        }

        // Adjoints local to this sweep; folded into `grad` at the end so that
        // repeated calls accumulate instead of compounding.
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        adjoint[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let Some(dout) = adjoint[id].take() else {
                continue;
            };
            let node = &nodes[id];
            for (parent, contribution) in ops::propagate(node, nodes, &dout) {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut adjoint[parent] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
            adjoint[id] = Some(dout);
        }

        for (id, adj) in adjoint.into_iter().enumerate() {
            let Some(adj) = adj else { continue };
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(g) => g.iter_mut().zip(&adj).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(adj),
            }
        }
        Ok(())
    }
}
