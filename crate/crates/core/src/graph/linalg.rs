use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, Ix2};

fn as2<F: Scalar>(a: &ArrayD<F>) -> ndarray::ArrayView2<'_, F> {
    a.view().into_dimensionality::<Ix2>().expect("matrix node")
}

struct MatMulBack {
    a: Var,
    b: Var,
}

impl<F: Scalar> Backward<F> for MatMulBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let gm = as2(g);
        let am = as2(&values[self.a.0]);
        let bm = as2(&values[self.b.0]);
        sink.add(self.a, gm.dot(&bm.t()).into_dyn());
        sink.add(self.b, am.t().dot(&gm).into_dyn());
    }
}

struct SoftmaxRowsBack {
    a: Var,
    out: Var,
}

impl<F: Scalar> Backward<F> for SoftmaxRowsBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let y = as2(&values[self.out.0]);
        let gm = as2(g);
        let mut grad = ndarray::Array2::<F>::zeros(y.raw_dim());
        for ((mut gr, yr), gor) in grad
            .axis_iter_mut(Axis(0))
            .zip(y.axis_iter(Axis(0)))
            .zip(gm.axis_iter(Axis(0)))
        {
            let dot: F = yr.iter().zip(gor.iter()).map(|(&yv, &gv)| yv * gv).sum();
            for ((gcell, &yv), &gv) in gr.iter_mut().zip(yr.iter()).zip(gor.iter()) {
                *gcell = yv * (gv - dot);
            }
        }
        sink.add(self.a, grad.into_dyn());
    }
}

struct L2NormRowsBack<F> {
    a: Var,
    eps: F,
}

impl<F: Scalar> Backward<F> for L2NormRowsBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let x = as2(&values[self.a.0]);
        let gm = as2(g);
        let mut grad = ndarray::Array2::<F>::zeros(x.raw_dim());
        for ((mut gr, xr), gor) in grad
            .axis_iter_mut(Axis(0))
            .zip(x.axis_iter(Axis(0)))
            .zip(gm.axis_iter(Axis(0)))
        {
            let sq: F = xr.iter().map(|&v| v * v).sum();
            let n = (sq + self.eps).sqrt();
            let n3 = n * n * n;
            let dot: F = xr.iter().zip(gor.iter()).map(|(&xv, &gv)| xv * gv).sum();
            for ((gcell, &xv), &gv) in gr.iter_mut().zip(xr.iter()).zip(gor.iter()) {
                *gcell = gv / n - xv * dot / n3;
            }
        }
        sink.add(self.a, grad.into_dyn());
    }
}

impl<F: Scalar> Graph<F> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let am = as2(&self.values[a.0]);
        let bm = as2(&self.values[b.0]);
        assert_eq!(am.ncols(), bm.nrows(), "matmul inner dims");
        let v = am.dot(&bm).into_dyn();
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Some(Box::new(MatMulBack { a, b })), needs)
    }

    /// Row-wise softmax of a matrix (max-shifted for stability).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = as2(&self.values[a.0]);
        let mut v = x.to_owned();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|e| (e - m).exp());
            let s: F = row.iter().cloned().sum();
            row.mapv_inplace(|e| e / s);
        }
        let needs = self.needs(a);
        let out = Var(self.values.len());
        self.push(
            v.into_dyn(),
            Some(Box::new(SoftmaxRowsBack { a, out })),
            needs,
        )
    }

    /// Row-wise x / sqrt(|x|^2 + eps).
    pub fn l2_normalize_rows(&mut self, a: Var, eps: F) -> Var {
        let x = as2(&self.values[a.0]);
        let mut v = x.to_owned();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let sq: F = row.iter().map(|&e| e * e).sum();
            let n = (sq + eps).sqrt();
            row.mapv_inplace(|e| e / n);
        }
        let needs = self.needs(a);
        self.push(v.into_dyn(), Some(Box::new(L2NormRowsBack { a, eps })), needs)
    }
}
