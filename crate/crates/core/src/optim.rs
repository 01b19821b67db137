//! First-order adaptive-moment optimizer (one state per network).

use crate::nets::ParamSet;
use crate::scalar::Scalar;
use ndarray::ArrayD;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState<F: Scalar> {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(net: &dyn ParamSet<F>, lr: f64) -> Self {
        let mut m = Vec::new();
        net.visit(&mut |_, a| m.push(ArrayD::zeros(a.raw_dim())));
        let v = m.clone();
        AdamState { lr, t: 0, m, v }
    }

    /// Apply one update. `grads` must align with the net's visit order.
    pub fn step(&mut self, net: &mut dyn ParamSet<F>, grads: &[ArrayD<F>]) {
        assert_eq!(grads.len(), self.m.len(), "gradient/param count mismatch");
        self.t += 1;
        let b1 = F::from_f64(ADAM_BETA1);
        let b2 = F::from_f64(ADAM_BETA2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - ADAM_BETA1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - ADAM_BETA2.powi(self.t as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(ADAM_EPS);
        let mut idx = 0;
        net.visit_mut(&mut |_, p| {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|pv, mv, vv, &gv| {
                    *mv = b1 * *mv + (one - b1) * gv;
                    *vv = b2 * *vv + (one - b2) * gv * gv;
                    let mhat = *mv / bc1;
                    let vhat = *vv / bc2;
                    *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                });
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::layers::Conv2d;
    use ndarray::IxDyn;

    struct One<F: Scalar>(Conv2d<F>);
    impl<F: Scalar> ParamSet<F> for One<F> {
        fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>)) {
            self.0.visit("c", f);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
            self.0.visit_mut("c", f);
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut net = One(Conv2d::<f64>::zeros(1, 1, 3, 1, 1));
        let mut opt = AdamState::new(&net, 0.1);
        let gw = ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), 1.0);
        let gb = ArrayD::from_elem(IxDyn(&[1]), -1.0);
        opt.step(&mut net, &[gw, gb]);
        assert!(net.0.w.iter().all(|&v| v < 0.0));
        assert!(net.0.b.iter().all(|&v| v > 0.0));
        assert_eq!(opt.t, 1);
    }
}
