//! Finite-difference gradient checking for graph-built functions.
//!
//! Used by the test suites to validate every analytic backward pass against
//! central differences. Double precision with step 1e-4 is the intended
//! configuration.

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;

/// Central-difference gradient of `f` wrt `inputs[which]`.
pub fn numeric_grad<F: Scalar>(
    inputs: &[ArrayD<F>],
    which: usize,
    eps: F,
    mut f: impl FnMut(&[ArrayD<F>]) -> F,
) -> ArrayD<F> {
    let mut work: Vec<ArrayD<F>> = inputs.to_vec();
    let mut grad = ArrayD::<F>::zeros(inputs[which].raw_dim());
    let n = inputs[which].len();
    let two = F::from_f64(2.0);
    for idx in 0..n {
        let orig = work[which].as_slice().expect("standard layout")[idx];
        work[which].as_slice_mut().expect("standard layout")[idx] = orig + eps;
        let fp = f(&work);
        work[which].as_slice_mut().expect("standard layout")[idx] = orig - eps;
        let fm = f(&work);
        work[which].as_slice_mut().expect("standard layout")[idx] = orig;
        grad.as_slice_mut().expect("standard layout")[idx] = (fp - fm) / (two * eps);
    }
    grad
}

/// Largest relative mismatch between analytic and numeric gradients.
/// Relative to max(|analytic|, |numeric|, floor) per element.
pub fn max_rel_err<F: Scalar>(analytic: &ArrayD<F>, numeric: &ArrayD<F>, floor: F) -> F {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = F::zero();
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let denom = a.abs().max(n.abs()).max(floor);
        let err = (a - n).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Build the graph with every input as a differentiable leaf, run backward
/// from the scalar the builder returns, and compare each input's analytic
/// gradient against central differences.
///
/// Returns the worst relative error across all inputs and elements.
pub fn check_grads<F: Scalar>(
    inputs: &[ArrayD<F>],
    eps: F,
    floor: F,
    build: impl Fn(&mut Graph<F>, &[Var]) -> Var,
) -> F {
    let eval = |arrs: &[ArrayD<F>]| -> F {
        let mut g = Graph::<F>::new();
        let vars: Vec<Var> = arrs.iter().map(|a| g.leaf(a.clone())).collect();
        let root = build(&mut g, &vars);
        g.scalar_value(root)
    };

    let mut g = Graph::<F>::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
    let root = build(&mut g, &vars);
    let grads = g.backward(root);

    let mut worst = F::zero();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[i].shape());
        let numeric = numeric_grad(inputs, i, eps, eval);
        let err = max_rel_err(&analytic, &numeric, floor);
        if err > worst {
            worst = err;
        }
    }
    worst
}
