//! Fine-level hallucination network.
//!
//! An encoder fuses the coarse face with the stitched component prior into
//! features F_C; a stacked hourglass estimates 68 landmark heatmap channels
//! F_H from them; the integration block re-calibrates F_C against F_H with
//! softmax attention over spatial positions; a decoder reconstructs the
//! final 128x128 face.
//!
//! Attention: for query position i, logits over positions j are
//! (norm(F_C_i) W_theta) . (norm(F_H_j) W_psi); weights are the softmax over
//! j; the attended value is sum_j w_ij (F_H_j W_zeta); the output is
//! sigma * (attended W_phi) + F_C.

use super::layers::{normal_init, Conv2d, ConvT2d, ConvTVars, ConvVars};
use super::touchup::{touchup_forward, TouchupVars};
use super::{BindCtx, ParamSet};
use crate::error::{Error, Result};
use crate::face::{ComponentId, Landmarks, NUM_LANDMARKS};
use crate::geometry::{crop_component_var, stitch_components, StitchTemplate};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use rand::Rng;

/// Largest spatial grid the attention runs on; bigger feature maps are
/// average-pooled down to it and the attended term is upsampled back.
pub const ATTN_MAX_GRID: usize = 32;

/// Normalization epsilon inside the attention's per-position L2 normalize.
pub const ATTN_NORM_EPS: f64 = 1e-12;

/// Learnt projection matrices of the integration block.
#[derive(Clone, Debug)]
pub struct ProjectionWeights<F: Scalar> {
    /// (d_c, d_a)
    pub w_theta: ArrayD<F>,
    /// (d_h, d_a)
    pub w_psi: ArrayD<F>,
    /// (d_h, d_v)
    pub w_zeta: ArrayD<F>,
    /// (d_v, d_c)
    pub w_phi: ArrayD<F>,
    /// Trade-off scalar on the attended term; fixed at 1 unless configured.
    pub sigma_tradeoff: f64,
}

pub struct ProjectionVars {
    pub w_theta: Var,
    pub w_psi: Var,
    pub w_zeta: Var,
    pub w_phi: Var,
    pub sigma_tradeoff: f64,
}

impl<F: Scalar> ProjectionWeights<F> {
    pub fn new(rng: &mut impl Rng, d_c: usize, d_h: usize, d_a: usize, d_v: usize) -> Self {
        ProjectionWeights {
            w_theta: normal_init(rng, &[d_c, d_a], 1.0 / (d_c as f64).sqrt()),
            w_psi: normal_init(rng, &[d_h, d_a], 1.0 / (d_h as f64).sqrt()),
            w_zeta: normal_init(rng, &[d_h, d_v], 1.0 / (d_h as f64).sqrt()),
            w_phi: normal_init(rng, &[d_v, d_c], 1.0 / (d_v as f64).sqrt()),
            sigma_tradeoff: 1.0,
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> ProjectionVars {
        ProjectionVars {
            w_theta: ctx.var(&self.w_theta),
            w_psi: ctx.var(&self.w_psi),
            w_zeta: ctx.var(&self.w_zeta),
            w_phi: ctx.var(&self.w_phi),
            sigma_tradeoff: self.sigma_tradeoff,
        }
    }

    fn visit_with(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        f(format!("{prefix}.w_theta"), &self.w_theta);
        f(format!("{prefix}.w_psi"), &self.w_psi);
        f(format!("{prefix}.w_zeta"), &self.w_zeta);
        f(format!("{prefix}.w_phi"), &self.w_phi);
    }

    fn visit_mut_with(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        f(format!("{prefix}.w_theta"), &mut self.w_theta);
        f(format!("{prefix}.w_psi"), &mut self.w_psi);
        f(format!("{prefix}.w_zeta"), &mut self.w_zeta);
        f(format!("{prefix}.w_phi"), &mut self.w_phi);
    }
}

pub struct IntegrationOut {
    /// Refined features, same shape as F_C.
    pub out: Var,
    /// Row-stochastic attention matrix (positions x positions).
    pub attn: Var,
}

/// CxHxW -> (H*W)xC position-major matrix.
fn to_positions<F: Scalar>(g: &mut Graph<F>, x: Var) -> Var {
    let s = g.value(x).shape().to_vec();
    let flat = g.reshape(x, &[s[0], s[1] * s[2]]);
    g.transpose2(flat)
}

/// Attention re-calibration of coarse-face features against heatmap
/// features. Spatial dims must match; channel counts must match the
/// projection shapes.
pub fn integration_block<F: Scalar>(
    g: &mut Graph<F>,
    f_c: Var,
    f_h: Var,
    w: &ProjectionVars,
) -> Result<IntegrationOut> {
    let cs = g.value(f_c).shape().to_vec();
    let hs = g.value(f_h).shape().to_vec();
    if cs.len() != 3 || hs.len() != 3 {
        return Err(Error::invalid("integration_block: inputs must be CxHxW"));
    }
    if cs[1..] != hs[1..] {
        return Err(Error::invalid(format!(
            "integration_block: spatial dims {:?} vs {:?}",
            &cs[1..],
            &hs[1..]
        )));
    }
    if !g.value(f_c).iter().all(|v| v.is_finite()) || !g.value(f_h).iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("integration_block: non-finite input"));
    }
    let (d_c, h, wd) = (cs[0], cs[1], cs[2]);
    let d_h = hs[0];
    let wt = g.value(w.w_theta).shape().to_vec();
    let wp = g.value(w.w_psi).shape().to_vec();
    if wt[0] != d_c || wp[0] != d_h {
        return Err(Error::invalid(format!(
            "integration_block: channels ({d_c}, {d_h}) do not match projections ({}, {})",
            wt[0], wp[0]
        )));
    }

    let factor = if h > ATTN_MAX_GRID {
        if h % ATTN_MAX_GRID != 0 || wd % ATTN_MAX_GRID != 0 {
            return Err(Error::invalid(
                "integration_block: dims not divisible down to the attention grid",
            ));
        }
        h / ATTN_MAX_GRID
    } else {
        1
    };
    let (qc, kh) = if factor > 1 {
        (g.avg_pool2d(f_c, factor), g.avg_pool2d(f_h, factor))
    } else {
        (f_c, f_h)
    };
    let (ph, pw) = (h / factor, wd / factor);

    let eps = F::from_f64(ATTN_NORM_EPS);
    let c_mat = to_positions(g, qc);
    let h_mat = to_positions(g, kh);
    let c_norm = g.l2_normalize_rows(c_mat, eps);
    let h_norm = g.l2_normalize_rows(h_mat, eps);
    let q = g.matmul(c_norm, w.w_theta);
    let k = g.matmul(h_norm, w.w_psi);
    let kt = g.transpose2(k);
    let logits = g.matmul(q, kt);
    let attn = g.softmax_rows(logits);
    // Values come from the raw (unnormalized) heatmap features.
    let v = g.matmul(h_mat, w.w_zeta);
    let attended = g.matmul(attn, v);
    let proj = g.matmul(attended, w.w_phi);
    let proj_t = g.transpose2(proj);
    let proj_chw = g.reshape(proj_t, &[d_c, ph, pw]);
    let term = if factor > 1 {
        g.upsample_nearest(proj_chw, factor)
    } else {
        proj_chw
    };
    let scaled = g.scale(term, F::from_f64(w.sigma_tradeoff));
    let out = g.add(scaled, f_c);
    Ok(IntegrationOut { out, attn })
}

#[derive(Clone, Debug)]
pub struct HgLevel<F: Scalar> {
    pub up: Conv2d<F>,
    pub low: Conv2d<F>,
    pub low2: Conv2d<F>,
}

pub struct HgLevelVars {
    pub up: ConvVars,
    pub low: ConvVars,
    pub low2: ConvVars,
}

#[derive(Clone, Debug)]
pub struct HourglassStack<F: Scalar> {
    pub levels: Vec<HgLevel<F>>,
    pub bottleneck: Conv2d<F>,
    pub post: Conv2d<F>,
    pub head: Conv2d<F>,
    /// Feature/heatmap remap feeding the next stack (absent on the last).
    pub remap: Option<(Conv2d<F>, Conv2d<F>)>,
}

pub struct HourglassStackVars {
    pub levels: Vec<HgLevelVars>,
    pub bottleneck: ConvVars,
    pub post: ConvVars,
    pub head: ConvVars,
    pub remap: Option<(ConvVars, ConvVars)>,
}

const HG_WIDTH: usize = 32;
pub const HG_LEVELS: usize = 4;
pub const HG_STACKS: usize = 2;

impl<F: Scalar> HourglassStack<F> {
    fn new(rng: &mut impl Rng, last: bool) -> Self {
        let w = HG_WIDTH;
        HourglassStack {
            levels: (0..HG_LEVELS)
                .map(|_| HgLevel {
                    up: Conv2d::new(rng, w, w, 3, 1, 1),
                    low: Conv2d::new(rng, w, w, 3, 1, 1),
                    low2: Conv2d::new(rng, w, w, 3, 1, 1),
                })
                .collect(),
            bottleneck: Conv2d::new(rng, w, w, 3, 1, 1),
            post: Conv2d::new(rng, w, w, 3, 1, 1),
            head: Conv2d::new(rng, w, NUM_LANDMARKS, 3, 1, 1),
            remap: if last {
                None
            } else {
                Some((
                    Conv2d::new(rng, w, w, 3, 1, 1),
                    Conv2d::new(rng, NUM_LANDMARKS, w, 3, 1, 1),
                ))
            },
        }
    }

    fn bind(&self, ctx: &mut BindCtx<'_, F>) -> HourglassStackVars {
        HourglassStackVars {
            levels: self
                .levels
                .iter()
                .map(|l| HgLevelVars {
                    up: l.up.bind(ctx),
                    low: l.low.bind(ctx),
                    low2: l.low2.bind(ctx),
                })
                .collect(),
            bottleneck: self.bottleneck.bind(ctx),
            post: self.post.bind(ctx),
            head: self.head.bind(ctx),
            remap: self
                .remap
                .as_ref()
                .map(|(a, b)| (a.bind(ctx), b.bind(ctx))),
        }
    }

    fn visit_with(&self, prefix: &str, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        for (i, l) in self.levels.iter().enumerate() {
            l.up.visit(&format!("{prefix}.l{i}.up"), f);
            l.low.visit(&format!("{prefix}.l{i}.low"), f);
            l.low2.visit(&format!("{prefix}.l{i}.low2"), f);
        }
        self.bottleneck.visit(&format!("{prefix}.bottleneck"), f);
        self.post.visit(&format!("{prefix}.post"), f);
        self.head.visit(&format!("{prefix}.head"), f);
        if let Some((a, b)) = &self.remap {
            a.visit(&format!("{prefix}.remap_f"), f);
            b.visit(&format!("{prefix}.remap_h"), f);
        }
    }

    fn visit_mut_with(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        for (i, l) in self.levels.iter_mut().enumerate() {
            l.up.visit_mut(&format!("{prefix}.l{i}.up"), f);
            l.low.visit_mut(&format!("{prefix}.l{i}.low"), f);
            l.low2.visit_mut(&format!("{prefix}.l{i}.low2"), f);
        }
        self.bottleneck.visit_mut(&format!("{prefix}.bottleneck"), f);
        self.post.visit_mut(&format!("{prefix}.post"), f);
        self.head.visit_mut(&format!("{prefix}.head"), f);
        if let Some((a, b)) = &mut self.remap {
            a.visit_mut(&format!("{prefix}.remap_f"), f);
            b.visit_mut(&format!("{prefix}.remap_h"), f);
        }
    }
}

fn hg_recurse<F: Scalar>(
    g: &mut Graph<F>,
    vars: &HourglassStackVars,
    idx: usize,
    x: Var,
) -> Var {
    let up = vars.levels[idx].up.apply(g, x);
    let up = g.relu(up);
    let low_in = g.avg_pool2d(x, 2);
    let low = vars.levels[idx].low.apply(g, low_in);
    let low = g.relu(low);
    let inner = if idx + 1 < vars.levels.len() {
        hg_recurse(g, vars, idx + 1, low)
    } else {
        let b = vars.bottleneck.apply(g, low);
        g.relu(b)
    };
    let low2 = vars.levels[idx].low2.apply(g, inner);
    let low2 = g.relu(low2);
    let up2 = g.upsample_nearest(low2, 2);
    g.add(up, up2)
}

#[derive(Clone, Debug)]
pub struct FineNet<F: Scalar> {
    pub e1: Conv2d<F>,
    pub e2: Conv2d<F>,
    pub e3: Conv2d<F>,
    pub e4: Conv2d<F>,
    pub hg_pre: Conv2d<F>,
    pub stacks: Vec<HourglassStack<F>>,
    pub proj: ProjectionWeights<F>,
    pub d1: Conv2d<F>,
    pub d2: ConvT2d<F>,
    pub d3: ConvT2d<F>,
    pub d4: Conv2d<F>,
}

pub struct FineVars {
    pub e1: ConvVars,
    pub e2: ConvVars,
    pub e3: ConvVars,
    pub e4: ConvVars,
    pub hg_pre: ConvVars,
    pub stacks: Vec<HourglassStackVars>,
    pub proj: ProjectionVars,
    pub d1: ConvVars,
    pub d2: ConvTVars,
    pub d3: ConvTVars,
    pub d4: ConvVars,
}

/// Feature width of F_C.
pub const FINE_FEAT: usize = 64;

impl<F: Scalar> FineNet<F> {
    pub fn new(rng: &mut impl Rng) -> Self {
        FineNet {
            e1: Conv2d::new(rng, 6, 16, 3, 1, 1),
            e2: Conv2d::new(rng, 16, 32, 3, 2, 1),
            e3: Conv2d::new(rng, 32, FINE_FEAT, 3, 2, 1),
            e4: Conv2d::new(rng, FINE_FEAT, FINE_FEAT, 3, 1, 1),
            hg_pre: Conv2d::new(rng, FINE_FEAT, HG_WIDTH, 3, 1, 1),
            stacks: (0..HG_STACKS)
                .map(|i| HourglassStack::new(rng, i == HG_STACKS - 1))
                .collect(),
            proj: ProjectionWeights::new(rng, FINE_FEAT, NUM_LANDMARKS, 64, 64),
            d1: Conv2d::new(rng, FINE_FEAT, 64, 3, 1, 1),
            d2: ConvT2d::new(rng, 64, 32, 4, 2, 1),
            d3: ConvT2d::new(rng, 32, 16, 4, 2, 1),
            d4: Conv2d::new(rng, 16, 3, 3, 1, 1),
        }
    }

    pub fn bind(&self, ctx: &mut BindCtx<'_, F>) -> FineVars {
        FineVars {
            e1: self.e1.bind(ctx),
            e2: self.e2.bind(ctx),
            e3: self.e3.bind(ctx),
            e4: self.e4.bind(ctx),
            hg_pre: self.hg_pre.bind(ctx),
            stacks: self.stacks.iter().map(|s| s.bind(ctx)).collect(),
            proj: self.proj.bind(ctx),
            d1: self.d1.bind(ctx),
            d2: self.d2.bind(ctx),
            d3: self.d3.bind(ctx),
            d4: self.d4.bind(ctx),
        }
    }
}

impl<F: Scalar> ParamSet<F> for FineNet<F> {
    fn visit(&self, f: &mut dyn FnMut(String, &ArrayD<F>)) {
        self.e1.visit("fine.e1", f);
        self.e2.visit("fine.e2", f);
        self.e3.visit("fine.e3", f);
        self.e4.visit("fine.e4", f);
        self.hg_pre.visit("fine.hg_pre", f);
        for (i, s) in self.stacks.iter().enumerate() {
            s.visit_with(&format!("fine.hg{i}"), f);
        }
        self.proj.visit_with("fine.proj", f);
        self.d1.visit("fine.d1", f);
        self.d2.visit("fine.d2", f);
        self.d3.visit("fine.d3", f);
        self.d4.visit("fine.d4", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.e1.visit_mut("fine.e1", f);
        self.e2.visit_mut("fine.e2", f);
        self.e3.visit_mut("fine.e3", f);
        self.e4.visit_mut("fine.e4", f);
        self.hg_pre.visit_mut("fine.hg_pre", f);
        for (i, s) in self.stacks.iter_mut().enumerate() {
            s.visit_mut_with(&format!("fine.hg{i}"), f);
        }
        self.proj.visit_mut_with("fine.proj", f);
        self.d1.visit_mut("fine.d1", f);
        self.d2.visit_mut("fine.d2", f);
        self.d3.visit_mut("fine.d3", f);
        self.d4.visit_mut("fine.d4", f);
    }
}

pub struct FineOutput {
    pub fine_hr: Var,
    /// Final-stack heatmaps (absent when the component-aware module is
    /// bypassed by an ablation config).
    pub pred_heatmaps: Option<Var>,
    /// Every stack's heatmaps, for intermediate supervision.
    pub all_heatmaps: Vec<Var>,
    pub f_c: Var,
    pub f_e: Var,
    pub attn: Option<Var>,
}

/// Crop each component from the coarse face, refine it with its touch-up
/// net, and stitch the results onto the masked template.
pub fn build_prior<F: Scalar>(
    g: &mut Graph<F>,
    coarse_hr: Var,
    landmarks: &Landmarks,
    touchup: &TouchupVars,
    template: &StitchTemplate,
) -> Result<(Var, Vec<(ComponentId, Var)>)> {
    let mut refined = Vec::new();
    for &(comp, _) in &template.placements {
        let patch = crop_component_var(g, coarse_hr, landmarks, comp, &touchup.crop_spec);
        let out = touchup_forward(g, touchup, comp, patch)?;
        refined.push((comp, out));
    }
    let prior = stitch_components(g, &refined, template)?;
    Ok((prior, refined))
}

/// Full fine-level forward: encoder over [coarse | prior], heatmap
/// estimation, attention integration, decode to the fine face.
pub fn fine_forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &FineVars,
    coarse_hr: Var,
    prior: Var,
) -> Result<FineOutput> {
    fine_forward_mode(g, vars, coarse_hr, prior, true)
}

/// As [`fine_forward`], with the component-aware module optionally bypassed
/// (ablation configs): F_E = F_C, no heatmaps predicted.
pub fn fine_forward_mode<F: Scalar>(
    g: &mut Graph<F>,
    vars: &FineVars,
    coarse_hr: Var,
    prior: Var,
    use_component_module: bool,
) -> Result<FineOutput> {
    for (name, v) in [("coarse_hr", coarse_hr), ("prior", prior)] {
        let s = g.value(v).shape().to_vec();
        if s != [3, 128, 128] {
            return Err(Error::invalid(format!(
                "fine_forward: {name} must be 3x128x128, got {s:?}"
            )));
        }
    }
    let x = g.concat_channels(coarse_hr, prior);
    let x = vars.e1.apply(g, x);
    let x = g.relu(x);
    let x = vars.e2.apply(g, x);
    let x = g.relu(x);
    let x = vars.e3.apply(g, x);
    let x = g.relu(x);
    let x = vars.e4.apply(g, x);
    let f_c = g.relu(x);

    let (f_e, all_heatmaps, attn) = if use_component_module {
        let mut inter = vars.hg_pre.apply(g, f_c);
        inter = g.relu(inter);
        let mut all_heatmaps = Vec::with_capacity(vars.stacks.len());
        for stack in &vars.stacks {
            let feats = hg_recurse(g, stack, 0, inter);
            let feats = stack.post.apply(g, feats);
            let feats = g.relu(feats);
            let hm = stack.head.apply(g, feats);
            all_heatmaps.push(hm);
            if let Some((rf, rh)) = &stack.remap {
                let a = rf.apply(g, feats);
                let b = rh.apply(g, hm);
                let s = g.add(a, b);
                inter = g.add(inter, s);
            }
        }
        let f_h = *all_heatmaps.last().expect("at least one stack");
        let integ = integration_block(g, f_c, f_h, &vars.proj)?;
        (integ.out, all_heatmaps, Some(integ.attn))
    } else {
        (f_c, Vec::new(), None)
    };

    let y = vars.d1.apply(g, f_e);
    let y = g.relu(y);
    let y = vars.d2.apply(g, y);
    let y = g.relu(y);
    let y = vars.d3.apply(g, y);
    let y = g.relu(y);
    let y = vars.d4.apply(g, y);
    let fine_hr = g.sigmoid(y);
    Ok(FineOutput {
        fine_hr,
        pred_heatmaps: all_heatmaps.last().copied(),
        all_heatmaps,
        f_c,
        f_e,
        attn,
    })
}
