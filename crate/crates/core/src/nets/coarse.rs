//! Coarse-level hallucination network: an encoder followed by three
//! feature-transform modules (spatial alignment -> residual refinement ->
//! 2x transposed-conv upsampling), taking a 16x16 input to a 128x128
//! frontal coarse face.

use super::layers::{Conv2d, ConvT2d, ConvTVars, ConvVars, Linear, LinearVars};
use super::{BindCtx, ParamSet};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use rand::Rng;

/// One feature-transform module. The localizer predicts a 2x3 affine used
/// to warp the features; its final layer is zero-weight with an identity
/// bias so every module starts as a no-op alignment. The residual tail conv
/// is zero-initialized, so a fresh module reduces to its upsampler.
#[derive(Clone, Debug)]
pub struct FtModule<F: Scalar> {
    pub loc_conv1: Conv2d<F>,
    pub loc_conv2: Conv2d<F>,
    pub loc_fc1: Linear<F>,
    pub loc_fc2: Linear<F>,
    pub res_conv1: Conv2d<F>,
    pub res_conv2: Conv2d<F>,
    pub up: ConvT2d<F>,
    /// Input spatial size this module expects (for the localizer pool).
    pub in_size: usize,
}

pub struct FtVars {
    pub loc_conv1: ConvVars,
    pub loc_conv2: ConvVars,
    pub loc_fc1: LinearVars,
    pub loc_fc2: LinearVars,
    pub res_conv1: ConvVars,
    pub res_conv2: ConvVars,
    pub up: ConvTVars,
    pub in_size: usize,
}

const IDENTITY_THETA: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

impl<F: Scalar> FtModule<F> {
    pub fn new(rng: &mut impl Rng, ch: usize, ch_out: usize, in_size: usize) -> Self {
        FtModule {
            loc_conv1: Conv2d::new(rng, ch, 8, 3, 2, 1),
            loc_conv2: Conv2d::new(rng, 8, 8, 3, 2, 1),
            loc_fc1: Linear::new(rng, 8 * 4 * 4, 32),
            loc_fc2: Linear::zeros_with_bias(32, 6, &IDENTITY_THETA),
            res_conv1: Conv2d::new(rng, ch, ch, 3, 1, 1),
            res_conv2: Conv2d::zeros(ch, ch, 3, 1, 1),
            up: ConvT2d::new(rng, ch, ch_out, 4, 2, 1),
            in_size,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> FtVars {
        FtVars {
            loc_conv1: self.loc_conv1.bind(ctx),
            loc_conv2: self.loc_conv2.bind(ctx),
            loc_fc1: self.loc_fc1.bind(ctx),
            loc_fc2: self.loc_fc2.bind(ctx),
            res_conv1: self.res_conv1.bind(ctx),
            res_conv2: self.res_conv2.bind(ctx),
            up: self.up.bind(ctx),
            in_size: self.in_size,
        }
    }

    fn visit_with(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        self.loc_conv1.visit(&format!("{prefix}.loc_conv1"), f);
        self.loc_conv2.visit(&format!("{prefix}.loc_conv2"), f);
        self.loc_fc1.visit(&format!("{prefix}.loc_fc1"), f);
        self.loc_fc2.visit(&format!("{prefix}.loc_fc2"), f);
        self.res_conv1.visit(&format!("{prefix}.res_conv1"), f);
        self.res_conv2.visit(&format!("{prefix}.res_conv2"), f);
        self.up.visit(&format!("{prefix}.up"), f);
    }

    fn visit_mut_with(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.loc_conv1.visit_mut(&format!("{prefix}.loc_conv1"), f);
        self.loc_conv2.visit_mut(&format!("{prefix}.loc_conv2"), f);
        self.loc_fc1.visit_mut(&format!("{prefix}.loc_fc1"), f);
        self.loc_fc2.visit_mut(&format!("{prefix}.loc_fc2"), f);
        self.res_conv1.visit_mut(&format!("{prefix}.res_conv1"), f);
        self.res_conv2.visit_mut(&format!("{prefix}.res_conv2"), f);
        self.up.visit_mut(&format!("{prefix}.up"), f);
    }
}

/// Predicted alignment, then residual refinement, then 2x upsampling.
pub fn ft_module_forward<F: Scalar>(g: &mut Graph<F>, vars: &FtVars, x: Var) -> (Var, Var) {
    let (h, w) = {
        let s = g.value(x).shape();
        (s[1], s[2])
    };
    // Localizer: two strided convs, adaptive pool to 4x4, two fc layers.
    let l = vars.loc_conv1.apply(g, x);
    let l = g.relu(l);
    let l = vars.loc_conv2.apply(g, l);
    let l = g.relu(l);
    let pool_k = (h / 4) / 4;
    let l = if pool_k > 1 { g.avg_pool2d(l, pool_k) } else { l };
    let flat_len = g.value(l).len();
    let l = g.reshape(l, &[1, flat_len]);
    let l = vars.loc_fc1.apply(g, l);
    let l = g.relu(l);
    let l = vars.loc_fc2.apply(g, l);
    let theta = g.reshape(l, &[2, 3]);

    let warped = g.grid_sample_affine(x, theta, (h, w));
    let r = vars.res_conv1.apply(g, warped);
    let r = g.relu(r);
    let r = vars.res_conv2.apply(g, r);
    let res = g.add(warped, r);
    let up = vars.up.apply(g, res);
    (g.relu(up), theta)
}

#[derive(Clone, Debug)]
pub struct CoarseNet<F: Scalar> {
    pub enc1: Conv2d<F>,
    pub enc2: Conv2d<F>,
    pub ft: Vec<FtModule<F>>,
    pub head: Conv2d<F>,
}

pub struct CoarseVars {
    pub enc1: ConvVars,
    pub enc2: ConvVars,
    pub ft: Vec<FtVars>,
    pub head: ConvVars,
}

impl<F: Scalar> CoarseNet<F> {
    /// Channel plan: 3 -> 64 at 16x16, FT modules 64 -> 64 -> 32 -> 16 at
    /// 32/64/128 resolutions, head 16 -> 3.
    pub fn new(rng: &mut impl Rng) -> Self {
        CoarseNet {
            enc1: Conv2d::new(rng, 3, 64, 3, 1, 1),
            enc2: Conv2d::new(rng, 64, 64, 3, 1, 1),
            ft: vec![
                FtModule::new(rng, 64, 64, 16),
                FtModule::new(rng, 64, 32, 32),
                FtModule::new(rng, 32, 16, 64),
            ],
            head: Conv2d::new(rng, 16, 3, 3, 1, 1),
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> CoarseVars {
        CoarseVars {
            enc1: self.enc1.bind(ctx),
            enc2: self.enc2.bind(ctx),
            ft: self.ft.iter().map(|m| m.bind(ctx)).collect(),
            head: self.head.bind(ctx),
        }
    }
}

impl<F: Scalar> ParamSet<F> for CoarseNet<F> {
    fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        self.enc1.visit("coarse.enc1", f);
        self.enc2.visit("coarse.enc2", f);
        for (i, m) in self.ft.iter().enumerate() {
            m.visit_with(&format!("coarse.ft{i}"), f);
        }
        self.head.visit("coarse.head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.enc1.visit_mut("coarse.enc1", f);
        self.enc2.visit_mut("coarse.enc2", f);
        for (i, m) in self.ft.iter_mut().enumerate() {
            m.visit_mut_with(&format!("coarse.ft{i}"), f);
        }
        self.head.visit_mut("coarse.head", f);
    }
}

/// 16x16x3 in [0,1] -> (128x128x3 in [0,1], predicted alignment thetas).
pub fn coarse_forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &CoarseVars,
    lr: Var,
) -> Result<(Var, Vec<Var>)> {
    let shape = g.value(lr).shape().to_vec();
    if shape != [3, 16, 16] {
        return Err(Error::invalid(format!(
            "coarse_forward: expected 3x16x16 input, got {shape:?}"
        )));
    }
    let x = vars.enc1.apply(g, lr);
    let x = g.relu(x);
    let x = vars.enc2.apply(g, x);
    let mut x = g.relu(x);
    let mut thetas = Vec::with_capacity(vars.ft.len());
    for ft in &vars.ft {
        let (nx, theta) = ft_module_forward(g, ft, x);
        x = nx;
        thetas.push(theta);
    }
    let y = vars.head.apply(g, x);
    Ok((g.sigmoid(y), thetas))
}
