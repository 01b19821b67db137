//! Parameterized layers: convolution, transposed convolution, linear.

use super::BindCtx;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Rng64 = rand_chacha::ChaCha12Rng;

/// He-style normal init with the given fan-in, drawn in f64 for
/// reproducibility across scalar types.
pub fn he_normal<F: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::from_f64(dist.sample(rng)))
}

pub fn normal_init<F: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> ArrayD<F> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::from_f64(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2d<F: Scalar> {
    pub w: ArrayD<F>,
    pub b: ArrayD<F>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Copy)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(rng: &mut impl Rng, ci: usize, co: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: he_normal(rng, &[co, ci, k, k], ci * k * k),
            b: ArrayD::zeros(IxDyn(&[co])),
            stride,
            pad,
        }
    }

    /// Zero weights and bias (residual tails, test fixtures).
    pub fn zeros(ci: usize, co: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: ArrayD::zeros(IxDyn(&[co, ci, k, k])),
            b: ArrayD::zeros(IxDyn(&[co])),
            stride,
            pad,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> ConvVars {
        ConvVars {
            w: ctx.var(&self.w),
            b: ctx.var(&self.b),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

impl ConvVars {
    pub fn apply<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let y = g.conv2d(x, self.w, self.stride, self.pad);
        g.bias_add_chw(y, self.b)
    }
}

#[derive(Clone, Debug)]
pub struct ConvT2d<F: Scalar> {
    pub w: ArrayD<F>,
    pub b: ArrayD<F>,
    pub stride: usize,
    pub pad: usize,
}

/// Same vars shape as a conv, but applied through conv_transpose2d.
#[derive(Clone, Copy)]
pub struct ConvTVars {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> ConvT2d<F> {
    pub fn new(rng: &mut impl Rng, ci: usize, co: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvT2d {
            w: he_normal(rng, &[ci, co, k, k], ci * k * k),
            b: ArrayD::zeros(IxDyn(&[co])),
            stride,
            pad,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> ConvTVars {
        ConvTVars {
            w: ctx.var(&self.w),
            b: ctx.var(&self.b),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

impl ConvTVars {
    pub fn apply<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let y = g.conv_transpose2d(x, self.w, self.stride, self.pad);
        g.bias_add_chw(y, self.b)
    }
}

#[derive(Clone, Debug)]
pub struct Linear<F: Scalar> {
    /// (in, out)
    pub w: ArrayD<F>,
    /// (1, out)
    pub b: ArrayD<F>,
}

#[derive(Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl<F: Scalar> Linear<F> {
    pub fn new(rng: &mut impl Rng, di: usize, dout: usize) -> Self {
        Linear {
            w: he_normal(rng, &[di, dout], di),
            b: ArrayD::zeros(IxDyn(&[1, dout])),
        }
    }

    /// Zero weights with a fixed bias row (identity-transform heads).
    pub fn zeros_with_bias(di: usize, dout: usize, bias: &[f64]) -> Self {
        assert_eq!(bias.len(), dout);
        let mut b = ArrayD::zeros(IxDyn(&[1, dout]));
        for (j, &v) in bias.iter().enumerate() {
            b[[0, j]] = F::from_f64(v);
        }
        Linear {
            w: ArrayD::zeros(IxDyn(&[di, dout])),
            b,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> LinearVars {
        LinearVars {
            w: ctx.var(&self.w),
            b: ctx.var(&self.b),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

impl LinearVars {
    /// x: (1, in) -> (1, out)
    pub fn apply<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let y = g.matmul(x, self.w);
        g.add(y, self.b)
    }
}
