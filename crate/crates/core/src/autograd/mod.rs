//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Var`] is a reference-counted node of a dynamically built graph. Nodes
//! whose parents do not require gradients drop their parents immediately, so
//! inference passes keep only live activations in memory.

mod conv;
mod ops;

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use conv::{conv2d, temporal_conv};
pub use ops::*;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Arguments handed to a node's backward rule.
pub struct BackCtx<'a, T: Scalar> {
    pub grad: &'a Tensor<T>,
    pub out: &'a Tensor<T>,
    pub parents: &'a [Var<T>],
}

impl<T: Scalar> BackCtx<'_, T> {
    #[inline]
    pub fn needs(&self, i: usize) -> bool {
        self.parents[i].requires_grad()
    }

    #[inline]
    pub fn input(&self, i: usize) -> &Tensor<T> {
        self.parents[i].value()
    }
}

type BackwardFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, parents: Vec<Var<T>>, backward: Option<BackwardFn<T>>) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, parents, backward }))
    }

    /// Leaf node, e.g. a parameter. Gradients are reported for leaves that
    /// require them.
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Self::make(value, requires_grad, Vec::new(), None)
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// Interior node. If no parent requires a gradient the rule and parents
    /// are discarded.
    pub fn from_op<F>(value: Tensor<T>, parents: Vec<Var<T>>, backward: F) -> Self
    where
        F: Fn(&BackCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if parents.iter().any(Var::requires_grad) {
            Self::make(value, true, parents, Some(Box::new(backward)))
        } else {
            Self::make(value, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Backpropagate from this node, seeding its gradient with ones.
    pub fn backward(&self) -> Gradients<T> {
        self.backward_with(Tensor::full(self.shape(), T::one()))
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "seed gradient shape");
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Gradients { leaves };
        }

        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        // Parents are always created before children.
        order.sort_unstable_by_key(|v| std::cmp::Reverse(v.id()));

        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        grads.insert(self.id(), seed);
        for v in order {
            let Some(grad) = grads.remove(&v.id()) else { continue };
            let node = &v.0;
            match &node.backward {
                None => {
                    leaves.insert(node.id, grad);
                }
                Some(rule) => {
                    let ctx = BackCtx { grad: &grad, out: &node.value, parents: &node.parents };
                    let parent_grads = rule(&ctx);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, g) in node.parents.iter().zip(parent_grads) {
                        let Some(g) = g else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), p.shape(), "gradient shape for parent");
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                grads.insert(p.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Gradients { leaves }
    }
}

/// Gradients of leaf variables.
pub struct Gradients<T> {
    leaves: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id())
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        self.leaves.remove(&var.id())
    }
}
