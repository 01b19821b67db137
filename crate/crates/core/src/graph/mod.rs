//! Reverse-mode automatic differentiation over dynamically shaped tensors.
//!
//! A [`Graph`] is a single-threaded tape: every operation appends a node
//! holding its forward value and a backward closure. Nodes are created in
//! topological order, so the backward sweep is a reverse scan over node
//! indices. Per-sample graphs are cheap to build and drop, which keeps
//! batch-parallel training embarrassingly parallel (one tape per sample).

mod conv;
mod elementwise;
mod linalg;
mod pool;
mod reduce;
mod sample;
mod shape;
mod stitch;

pub use sample::grid_snap_eps;
pub(crate) use sample::normalized_coord as norm_coord;

use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub(crate) trait Backward<F: Scalar>: Send + Sync {
    fn backward(&self, values: &[ArrayD<F>], grad_out: &ArrayD<F>, sink: &mut GradSink<'_, F>);
}

/// Accumulates parent gradients during the backward sweep.
pub(crate) struct GradSink<'a, F: Scalar> {
    grads: &'a mut [Option<ArrayD<F>>],
    needs_grad: &'a [bool],
}

impl<F: Scalar> GradSink<'_, F> {
    /// Add `g` to the gradient of `var`, skipping vars that cannot reach a
    /// differentiable leaf.
    pub fn add(&mut self, var: Var, g: ArrayD<F>) {
        if !self.needs_grad[var.0] {
            return;
        }
        match &mut self.grads[var.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<F: Scalar> {
    by_var: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, var: Var) -> Option<&ArrayD<F>> {
        self.by_var.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or a zero array of the given shape if none reached it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> ArrayD<F> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn take(&mut self, var: Var) -> Option<ArrayD<F>> {
        self.by_var.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Graph<F: Scalar> {
    values: Vec<ArrayD<F>>,
    backs: Vec<Option<Box<dyn Backward<F>>>>,
    needs_grad: Vec<bool>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            backs: Vec::new(),
            needs_grad: Vec::new(),
        }
    }

    /// Differentiable input (parameters, or inputs whose gradient is wanted).
    pub fn leaf(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, None, true)
    }

    /// Non-differentiable input (data, targets, frozen parameters).
    pub fn constant(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, None, false)
    }

    /// Copy of `v`'s value with the gradient path severed.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.values[v.0].clone();
        self.push(value, None, false)
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.values[v.0]
    }

    /// Value of a zero-rank or single-element node as a plain scalar.
    pub fn scalar_value(&self, v: Var) -> F {
        let a = &self.values[v.0];
        debug_assert_eq!(a.len(), 1, "scalar_value on non-scalar node");
        *a.iter().next().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<F>,
        back: Option<Box<dyn Backward<F>>>,
        needs_grad: bool,
    ) -> Var {
        self.values.push(value);
        self.backs.push(back);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// Reverse sweep from a scalar root. Gradients accumulate for every node
    /// on a differentiable path; leaves keep theirs in the returned [`Grads`].
    pub fn backward(&self, root: Var) -> Grads<F> {
        assert_eq!(
            self.values[root.0].len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.values[root.0].shape()
        );
        let mut grads: Vec<Option<ArrayD<F>>> = (0..self.values.len()).map(|_| None).collect();
        let mut seed = ArrayD::zeros(self.values[root.0].raw_dim());
        seed.fill(F::one());
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.needs_grad[i] {
                if let Some(back) = &self.backs[i] {
                    let mut sink = GradSink {
                        grads: &mut grads,
                        needs_grad: &self.needs_grad,
                    };
                    back.backward(&self.values, &g, &mut sink);
                }
            }
            grads[i] = Some(g);
        }
        Grads { by_var: grads }
    }
}
