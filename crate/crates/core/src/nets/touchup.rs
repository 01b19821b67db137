//! Touching-up subnetwork: one small U-net per facial component, refining a
//! coarsely hallucinated patch at its native crop size.

use super::layers::{Conv2d, ConvT2d, ConvTVars, ConvVars};
use super::{BindCtx, ParamSet};
use crate::error::{Error, Result};
use crate::face::{ComponentId, CropSpec};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct TouchupUnet<F: Scalar> {
    pub c1: Conv2d<F>,
    pub c2: Conv2d<F>,
    pub c3: Conv2d<F>,
    pub u1: ConvT2d<F>,
    pub c4: Conv2d<F>,
    pub c5: Conv2d<F>,
}

pub struct TouchupUnetVars {
    pub c1: ConvVars,
    pub c2: ConvVars,
    pub c3: ConvVars,
    pub u1: ConvTVars,
    pub c4: ConvVars,
    pub c5: ConvVars,
}

impl<F: Scalar> TouchupUnet<F> {
    pub fn new(rng: &mut impl Rng) -> Self {
        TouchupUnet {
            c1: Conv2d::new(rng, 3, 16, 3, 1, 1),
            c2: Conv2d::new(rng, 16, 32, 3, 2, 1),
            c3: Conv2d::new(rng, 32, 32, 3, 1, 1),
            u1: ConvT2d::new(rng, 32, 16, 4, 2, 1),
            c4: Conv2d::new(rng, 32, 16, 3, 1, 1),
            c5: Conv2d::new(rng, 16, 3, 3, 1, 1),
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> TouchupUnetVars {
        TouchupUnetVars {
            c1: self.c1.bind(ctx),
            c2: self.c2.bind(ctx),
            c3: self.c3.bind(ctx),
            u1: self.u1.bind(ctx),
            c4: self.c4.bind(ctx),
            c5: self.c5.bind(ctx),
        }
    }

    fn visit_with(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        self.c1.visit(&format!("{prefix}.c1"), f);
        self.c2.visit(&format!("{prefix}.c2"), f);
        self.c3.visit(&format!("{prefix}.c3"), f);
        self.u1.visit(&format!("{prefix}.u1"), f);
        self.c4.visit(&format!("{prefix}.c4"), f);
        self.c5.visit(&format!("{prefix}.c5"), f);
    }

    fn visit_mut_with(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.c1.visit_mut(&format!("{prefix}.c1"), f);
        self.c2.visit_mut(&format!("{prefix}.c2"), f);
        self.c3.visit_mut(&format!("{prefix}.c3"), f);
        self.u1.visit_mut(&format!("{prefix}.u1"), f);
        self.c4.visit_mut(&format!("{prefix}.c4"), f);
        self.c5.visit_mut(&format!("{prefix}.c5"), f);
    }
}

/// Encoder/decoder with one skip connection; output matches input dims.
pub fn touchup_unet_forward<F: Scalar>(g: &mut Graph<F>, vars: &TouchupUnetVars, patch: Var) -> Var {
    let e1 = vars.c1.apply(g, patch);
    let e1 = g.relu(e1);
    let e2 = vars.c2.apply(g, e1);
    let e2 = g.relu(e2);
    let b = vars.c3.apply(g, e2);
    let b = g.relu(b);
    let u = vars.u1.apply(g, b);
    let u = g.relu(u);
    let cat = g.concat_channels(u, e1);
    let d = vars.c4.apply(g, cat);
    let d = g.relu(d);
    let y = vars.c5.apply(g, d);
    g.sigmoid(y)
}

/// Four per-component U-nets in canonical component order.
#[derive(Clone, Debug)]
pub struct TouchupNet<F: Scalar> {
    pub nets: Vec<TouchupUnet<F>>,
    pub crop_spec: CropSpec,
}

pub struct TouchupVars {
    pub nets: Vec<TouchupUnetVars>,
    pub crop_spec: CropSpec,
}

impl<F: Scalar> TouchupNet<F> {
    pub fn new(rng: &mut impl Rng, crop_spec: CropSpec) -> Self {
        TouchupNet {
            nets: (0..4).map(|_| TouchupUnet::new(rng)).collect(),
            crop_spec,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> TouchupVars {
        TouchupVars {
            nets: self.nets.iter().map(|n| n.bind(ctx)).collect(),
            crop_spec: self.crop_spec,
        }
    }
}

impl<F: Scalar> ParamSet<F> for TouchupNet<F> {
    fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        for (net, comp) in self.nets.iter().zip(ComponentId::ALL) {
            net.visit_with(&format!("touchup.{}", comp.name()), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        for (net, comp) in self.nets.iter_mut().zip(ComponentId::ALL) {
            net.visit_mut_with(&format!("touchup.{}", comp.name()), f);
        }
    }
}

/// Refine one component patch; dims must match the component's crop spec.
pub fn touchup_forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &TouchupVars,
    comp: ComponentId,
    patch: Var,
) -> Result<Var> {
    let (h, w) = vars.crop_spec.get(comp);
    let shape = g.value(patch).shape().to_vec();
    if shape != [3, h, w] {
        return Err(Error::invalid(format!(
            "touchup_forward({}): expected 3x{h}x{w}, got {shape:?}",
            comp.name()
        )));
    }
    let idx = ComponentId::ALL
        .iter()
        .position(|&c| c == comp)
        .expect("canonical component");
    Ok(touchup_unet_forward(g, &vars.nets[idx], patch))
}
