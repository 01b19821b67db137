//! Frozen identity embedder: a fixed-seed conv encoder whose global-pooled
//! features stand in for a pretrained face-recognition backbone in the
//! identity similarity loss. Never updated by training; an external
//! embedder can be swapped in through the same interface.

use super::layers::{Conv2d, ConvVars};
use super::{BindCtx, ParamSet};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use rand_chacha::rand_core::SeedableRng;

/// Default seed for the embedder parameters; part of the published config.
pub const DEFAULT_EMBEDDER_SEED: u64 = 0xFACE;

/// Embedding vector length.
pub const EMBED_DIM: usize = 64;

#[derive(Clone, Debug)]
pub struct Embedder<F: Scalar> {
    pub c1: Conv2d<F>,
    pub c2: Conv2d<F>,
    pub c3: Conv2d<F>,
    pub c4: Conv2d<F>,
}

pub struct EmbedderVars {
    pub c1: ConvVars,
    pub c2: ConvVars,
    pub c3: ConvVars,
    pub c4: ConvVars,
}

impl<F: Scalar> Embedder<F> {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        Embedder {
            c1: Conv2d::new(&mut rng, 3, 16, 3, 2, 1),
            c2: Conv2d::new(&mut rng, 16, 32, 3, 2, 1),
            c3: Conv2d::new(&mut rng, 32, EMBED_DIM, 3, 2, 1),
            c4: Conv2d::new(&mut rng, EMBED_DIM, EMBED_DIM, 3, 2, 1),
        }
    }

    /// Embedder parameters always bind frozen (constants).
    pub fn bind(&self, g: &mut Graph<F>) -> EmbedderVars {
        let mut ctx = BindCtx::new(g, false);
        EmbedderVars {
            c1: self.c1.bind(&mut ctx),
            c2: self.c2.bind(&mut ctx),
            c3: self.c3.bind(&mut ctx),
            c4: self.c4.bind(&mut ctx),
        }
    }
}

impl<F: Scalar> ParamSet<F> for Embedder<F> {
    fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        self.c1.visit("embedder.c1", f);
        self.c2.visit("embedder.c2", f);
        self.c3.visit("embedder.c3", f);
        self.c4.visit("embedder.c4", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.c1.visit_mut("embedder.c1", f);
        self.c2.visit_mut("embedder.c2", f);
        self.c3.visit_mut("embedder.c3", f);
        self.c4.visit_mut("embedder.c4", f);
    }
}

/// Image -> fixed-length embedding (differentiable wrt the image).
pub fn embed<F: Scalar>(g: &mut Graph<F>, vars: &EmbedderVars, img: Var) -> Var {
    let x = vars.c1.apply(g, img);
    let x = g.relu(x);
    let x = vars.c2.apply(g, x);
    let x = g.relu(x);
    let x = vars.c3.apply(g, x);
    let x = g.relu(x);
    let x = vars.c4.apply(g, x);
    let x = g.relu(x);
    g.mean_spatial(x)
}
