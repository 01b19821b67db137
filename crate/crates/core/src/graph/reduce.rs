use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};

struct MeanAllBack<F> {
    a: Var,
    inv_n: F,
}

impl<F: Scalar> Backward<F> for MeanAllBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let gs = *g.iter().next().expect("scalar grad") * self.inv_n;
        let mut grad = ArrayD::zeros(values[self.a.0].raw_dim());
        grad.fill(gs);
        sink.add(self.a, grad);
    }
}

struct SumAllBack {
    a: Var,
}

impl<F: Scalar> Backward<F> for SumAllBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let gs = *g.iter().next().expect("scalar grad");
        let mut grad = ArrayD::zeros(values[self.a.0].raw_dim());
        grad.fill(gs);
        sink.add(self.a, grad);
    }
}

struct MeanSpatialBack<F> {
    a: Var,
    inv_hw: F,
}

impl<F: Scalar> Backward<F> for MeanSpatialBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let shape = values[self.a.0].shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut grad = ArrayD::zeros(IxDyn(&[c, h, w]));
        for ci in 0..c {
            let gc = g[[ci]] * self.inv_hw;
            grad.slice_mut(ndarray::s![ci, .., ..]).fill(gc);
        }
        sink.add(self.a, grad);
    }
}

impl<F: Scalar> Graph<F> {
    /// Mean over every element, producing a zero-rank scalar node.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let n = F::from_f64(x.len() as f64);
        let v = ArrayD::from_elem(IxDyn(&[]), x.sum() / n);
        let needs = self.needs(a);
        self.push(
            v,
            Some(Box::new(MeanAllBack {
                a,
                inv_n: F::one() / n,
            })),
            needs,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.values[a.0].sum());
        let needs = self.needs(a);
        self.push(v, Some(Box::new(SumAllBack { a })), needs)
    }

    /// Global average pool: CxHxW -> C vector.
    pub fn mean_spatial(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        assert_eq!(x.ndim(), 3, "mean_spatial expects CxHxW");
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let inv_hw = F::one() / F::from_f64((h * w) as f64);
        let mut v = ArrayD::zeros(IxDyn(&[c]));
        for ci in 0..c {
            v[[ci]] = x.slice(ndarray::s![ci, .., ..]).sum() * inv_hw;
        }
        let needs = self.needs(a);
        self.push(v, Some(Box::new(MeanSpatialBack { a, inv_hw })), needs)
    }
}
