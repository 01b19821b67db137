use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};

struct ReshapeBack {
    a: Var,
}

impl<F: Scalar> Backward<F> for ReshapeBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let shape = values[self.a.0].shape().to_vec();
        let grad = g
            .to_shape(IxDyn(&shape))
            .expect("reshape grad")
            .to_owned();
        sink.add(self.a, grad);
    }
}

struct Transpose2Back {
    a: Var,
}

impl<F: Scalar> Backward<F> for Transpose2Back {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, g.t().as_standard_layout().into_owned());
    }
}

struct ConcatChannelsBack {
    a: Var,
    b: Var,
    split: usize,
}

impl<F: Scalar> Backward<F> for ConcatChannelsBack {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let ga = g.slice(ndarray::s![..self.split, .., ..]).to_owned();
        let gb = g.slice(ndarray::s![self.split.., .., ..]).to_owned();
        sink.add(self.a, ga.into_dyn());
        sink.add(self.b, gb.into_dyn());
    }
}

struct ExtractPatchBack {
    x: Var,
    top: isize,
    left: isize,
}

impl<F: Scalar> Backward<F> for ExtractPatchBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let xs = values[self.x.0].shape();
        let (c, ih, iw) = (xs[0], xs[1], xs[2]);
        let (ph, pw) = (g.shape()[1], g.shape()[2]);
        let mut grad = ArrayD::zeros(IxDyn(&[c, ih, iw]));
        for ci in 0..c {
            for py in 0..ph {
                let iy = self.top + py as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                for px in 0..pw {
                    let ix = self.left + px as isize;
                    if ix < 0 || ix >= iw as isize {
                        continue;
                    }
                    grad[[ci, iy as usize, ix as usize]] += g[[ci, py, px]];
                }
            }
        }
        sink.add(self.x, grad);
    }
}

impl<F: Scalar> Graph<F> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.values[a.0]
            .to_shape(IxDyn(shape))
            .unwrap_or_else(|_| {
                panic!(
                    "reshape: cannot view {:?} as {:?}",
                    self.values[a.0].shape(),
                    shape
                )
            })
            .to_owned();
        let needs = self.needs(a);
        self.push(v, Some(Box::new(ReshapeBack { a })), needs)
    }

    pub fn transpose2(&mut self, a: Var) -> Var {
        assert_eq!(self.values[a.0].ndim(), 2, "transpose2 expects a matrix");
        let v = self.values[a.0].t().as_standard_layout().into_owned();
        let needs = self.needs(a);
        self.push(v, Some(Box::new(Transpose2Back { a })), needs)
    }

    /// Stack two CxHxW maps along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.ndim(), 3);
        assert_eq!(vb.ndim(), 3);
        assert_eq!(va.shape()[1..], vb.shape()[1..], "spatial dims must match");
        let split = va.shape()[0];
        let v = ndarray::concatenate(
            ndarray::Axis(0),
            &[va.view(), vb.view()],
        )
        .expect("concat");
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Some(Box::new(ConcatChannelsBack { a, b, split })), needs)
    }

    /// Fixed window read from a CxHxW map; out-of-bounds area reads zero.
    pub fn extract_patch(&mut self, x: Var, top: isize, left: isize, h: usize, w: usize) -> Var {
        let xv = &self.values[x.0];
        assert_eq!(xv.ndim(), 3, "extract_patch expects CxHxW");
        let (c, ih, iw) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut v = ArrayD::zeros(IxDyn(&[c, h, w]));
        for ci in 0..c {
            for py in 0..h {
                let iy = top + py as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                for px in 0..w {
                    let ix = left + px as isize;
                    if ix < 0 || ix >= iw as isize {
                        continue;
                    }
                    v[[ci, py, px]] = xv[[ci, iy as usize, ix as usize]];
                }
            }
        }
        let needs = self.needs(x);
        self.push(v, Some(Box::new(ExtractPatchBack { x, top, left })), needs)
    }
}
