use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};

struct AvgPoolBack<F> {
    x: Var,
    k: usize,
    inv_k2: F,
}

impl<F: Scalar> Backward<F> for AvgPoolBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let xs = values[self.x.0].shape();
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let k = self.k;
        let mut grad = ArrayD::zeros(IxDyn(&[c, h, w]));
        for ci in 0..c {
            for oy in 0..h / k {
                for ox in 0..w / k {
                    let gv = g[[ci, oy, ox]] * self.inv_k2;
                    for dy in 0..k {
                        for dx in 0..k {
                            grad[[ci, oy * k + dy, ox * k + dx]] = gv;
                        }
                    }
                }
            }
        }
        sink.add(self.x, grad);
    }
}

struct UpsampleNearestBack {
    x: Var,
    k: usize,
}

impl<F: Scalar> Backward<F> for UpsampleNearestBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let xs = values[self.x.0].shape();
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let k = self.k;
        let mut grad = ArrayD::zeros(IxDyn(&[c, h, w]));
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let mut s = F::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            s += g[[ci, iy * k + dy, ix * k + dx]];
                        }
                    }
                    grad[[ci, iy, ix]] = s;
                }
            }
        }
        sink.add(self.x, grad);
    }
}

impl<F: Scalar> Graph<F> {
    /// Non-overlapping k x k average pooling; spatial dims must divide by k.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Var {
        if k == 1 {
            return self.scale(x, F::one());
        }
        let xv = &self.values[x.0];
        assert_eq!(xv.ndim(), 3, "avg_pool2d expects CxHxW");
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(h % k == 0 && w % k == 0, "avg_pool2d: {h}x{w} not divisible by {k}");
        let inv_k2 = F::one() / F::from_f64((k * k) as f64);
        let mut v = ArrayD::zeros(IxDyn(&[c, h / k, w / k]));
        for ci in 0..c {
            for oy in 0..h / k {
                for ox in 0..w / k {
                    let mut s = F::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            s += xv[[ci, oy * k + dy, ox * k + dx]];
                        }
                    }
                    v[[ci, oy, ox]] = s * inv_k2;
                }
            }
        }
        let needs = self.needs(x);
        self.push(v, Some(Box::new(AvgPoolBack { x, k, inv_k2 })), needs)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, k: usize) -> Var {
        if k == 1 {
            return self.scale(x, F::one());
        }
        let xv = &self.values[x.0];
        assert_eq!(xv.ndim(), 3, "upsample_nearest expects CxHxW");
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut v = ArrayD::zeros(IxDyn(&[c, h * k, w * k]));
        for ci in 0..c {
            for oy in 0..h * k {
                for ox in 0..w * k {
                    v[[ci, oy, ox]] = xv[[ci, oy / k, ox / k]];
                }
            }
        }
        let needs = self.needs(x);
        self.push(v, Some(Box::new(UpsampleNearestBack { x, k })), needs)
    }
}
