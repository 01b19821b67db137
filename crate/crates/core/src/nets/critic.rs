//! Discriminators. Coarse-D and Fine-D share this template with separate
//! parameters: five strided convs to a single logit, no batch-coupled
//! normalization so per-item outputs are batch invariant.

use super::layers::{Conv2d, ConvVars};
use super::{BindCtx, ParamSet};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use rand::Rng;

/// Logits are clamped to this band before the sigmoid so the adversarial
/// logs stay finite at saturation.
pub const LOGIT_CLAMP: f64 = 20.0;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CriticLevel {
    Coarse,
    Fine,
}

#[derive(Clone, Debug)]
pub struct Critic<F: Scalar> {
    pub c1: Conv2d<F>,
    pub c2: Conv2d<F>,
    pub c3: Conv2d<F>,
    pub c4: Conv2d<F>,
    pub head: Conv2d<F>,
    pub level: CriticLevel,
}

pub struct CriticVars {
    pub c1: ConvVars,
    pub c2: ConvVars,
    pub c3: ConvVars,
    pub c4: ConvVars,
    pub head: ConvVars,
}

impl<F: Scalar> Critic<F> {
    pub fn new(rng: &mut impl Rng, level: CriticLevel) -> Self {
        Critic {
            c1: Conv2d::new(rng, 3, 32, 4, 2, 1),
            c2: Conv2d::new(rng, 32, 64, 4, 2, 1),
            c3: Conv2d::new(rng, 64, 128, 4, 2, 1),
            c4: Conv2d::new(rng, 128, 256, 4, 2, 1),
            head: Conv2d::new(rng, 256, 1, 3, 1, 1),
            level,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> CriticVars {
        CriticVars {
            c1: self.c1.bind(ctx),
            c2: self.c2.bind(ctx),
            c3: self.c3.bind(ctx),
            c4: self.c4.bind(ctx),
            head: self.head.bind(ctx),
        }
    }

    fn prefix(&self) -> &'static str {
        match self.level {
            CriticLevel::Coarse => "critic_coarse",
            CriticLevel::Fine => "critic_fine",
        }
    }
}

impl<F: Scalar> ParamSet<F> for Critic<F> {
    fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        let p = self.prefix();
        self.c1.visit(&format!("{p}.c1"), f);
        self.c2.visit(&format!("{p}.c2"), f);
        self.c3.visit(&format!("{p}.c3"), f);
        self.c4.visit(&format!("{p}.c4"), f);
        self.head.visit(&format!("{p}.head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        let p = self.prefix();
        self.c1.visit_mut(&format!("{p}.c1"), f);
        self.c2.visit_mut(&format!("{p}.c2"), f);
        self.c3.visit_mut(&format!("{p}.c3"), f);
        self.c4.visit_mut(&format!("{p}.c4"), f);
        self.head.visit_mut(&format!("{p}.head"), f);
    }
}

/// Probability that `img` (3x128x128, values in [0,1]) is a real face.
/// Strictly inside (0,1) thanks to the logit clamp.
pub fn discriminate<F: Scalar>(g: &mut Graph<F>, vars: &CriticVars, img: Var) -> Result<Var> {
    let s = g.value(img).shape().to_vec();
    if s != [3, 128, 128] {
        return Err(Error::invalid(format!(
            "discriminate: expected 3x128x128, got {s:?}"
        )));
    }
    let slope = F::from_f64(0.2);
    let x = vars.c1.apply(g, img);
    let x = g.leaky_relu(x, slope);
    let x = vars.c2.apply(g, x);
    let x = g.leaky_relu(x, slope);
    let x = vars.c3.apply(g, x);
    let x = g.leaky_relu(x, slope);
    let x = vars.c4.apply(g, x);
    let x = g.leaky_relu(x, slope);
    let logit_map = vars.head.apply(g, x);
    let logit = g.mean_all(logit_map);
    let clamp = F::from_f64(LOGIT_CLAMP);
    let clamped = g.clamp(logit, -clamp, clamp);
    Ok(g.sigmoid(clamped))
}
