//! Network definitions: coarse-level hallucinator, per-component touch-up
//! U-nets, fine-integration network with the component-aware attention
//! block, the two critics, and the frozen identity embedder.

pub mod coarse;
pub mod critic;
pub mod embedder;
pub mod fine;
pub mod layers;
pub mod touchup;

pub use coarse::CoarseNet;
pub use critic::Critic;
pub use embedder::Embedder;
pub use fine::{integration_block, FineNet, ProjectionWeights};
pub use touchup::TouchupNet;

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;

/// Ordered traversal over a network's parameter tensors. `visit` and
/// `bind` enumerate fields in the same order; optimizer state, gradient
/// extraction and checkpoints all rely on that ordering.
pub trait ParamSet<F: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name));
        names
    }

    /// Total element count across all parameters.
    fn num_elements(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, a| n += a.len());
        n
    }
}

/// Injects parameters into a graph, recording the bound vars in visit order.
pub struct BindCtx<'g, F: Scalar> {
    pub g: &'g mut Graph<F>,
    trainable: bool,
    pub vars: Vec<Var>,
}

impl<'g, F: Scalar> BindCtx<'g, F> {
    pub fn new(g: &'g mut Graph<F>, trainable: bool) -> Self {
        BindCtx {
            g,
            trainable,
            vars: Vec::new(),
        }
    }

    pub fn var(&mut self, arr: &ArrayD<F>) -> Var {
        let v = if self.trainable {
            self.g.leaf(arr.clone())
        } else {
            self.g.constant(arr.clone())
        };
        self.vars.push(v);
        v
    }
}
