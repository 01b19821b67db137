//! The five loss families and the composite objectives.
//!
//! All squared-norm losses are element-count normalized (means), so the
//! trade-off weights are resolution independent. Adversarial terms follow
//! the non-saturating direction: the generator minimizes -log D(fake).

use crate::error::{Error, Result};
use crate::face::NUM_LANDMARKS;
use crate::graph::{Graph, Var};
use crate::nets::embedder::{embed, EmbedderVars};
use crate::scalar::Scalar;

/// Trade-off weights of the composite objectives. All default to 0.01.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub psi1: f64,
    pub alpha2: f64,
    pub gamma2: f64,
    pub psi2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.01,
            psi1: 0.01,
            alpha2: 0.01,
            gamma2: 0.01,
            psi2: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.psi1, self.alpha2, self.gamma2, self.psi2];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Mean squared difference over every element.
pub fn loss_mse<F: Scalar>(g: &mut Graph<F>, pred: Var, gt: Var) -> Result<Var> {
    if g.value(pred).shape() != g.value(gt).shape() {
        return Err(Error::invalid(format!(
            "loss_mse: shape mismatch {:?} vs {:?}",
            g.value(pred).shape(),
            g.value(gt).shape()
        )));
    }
    let d = g.sub(pred, gt);
    let sq = g.mul(d, d);
    Ok(g.mean_all(sq))
}

/// Mirror symmetry loss: MSE between an image and its horizontal flip.
pub fn loss_sym<F: Scalar>(g: &mut Graph<F>, pred: Var) -> Var {
    let flipped = g.hflip(pred);
    let d = g.sub(flipped, pred);
    let sq = g.mul(d, d);
    g.mean_all(sq)
}

/// Identity similarity: mean squared distance between frozen-embedder
/// features of prediction and ground truth.
pub fn loss_id<F: Scalar>(
    g: &mut Graph<F>,
    pred: Var,
    gt: Var,
    emb: &EmbedderVars,
) -> Result<Var> {
    if g.value(pred).shape() != g.value(gt).shape() {
        return Err(Error::invalid("loss_id: shape mismatch"));
    }
    let ep = embed(g, emb, pred);
    let eg = embed(g, emb, gt);
    let d = g.sub(ep, eg);
    let sq = g.mul(d, d);
    Ok(g.mean_all(sq))
}

/// Structure loss over a P-channel heatmap stack:
/// (1/P) sum_k mean squared difference of channel k.
pub fn loss_heatmap_with_channels<F: Scalar>(
    g: &mut Graph<F>,
    pred: Var,
    gt: Var,
    channels: usize,
) -> Result<Var> {
    let ps = g.value(pred).shape().to_vec();
    let gs = g.value(gt).shape().to_vec();
    if ps != gs {
        return Err(Error::invalid(format!(
            "loss_heatmap: shape mismatch {ps:?} vs {gs:?}"
        )));
    }
    if ps.len() != 3 || ps[0] != channels {
        return Err(Error::invalid(format!(
            "loss_heatmap: expected {channels} channels, got {ps:?}"
        )));
    }
    // Channels share spatial dims, so the per-channel mean of means equals
    // the overall mean.
    let d = g.sub(pred, gt);
    let sq = g.mul(d, d);
    Ok(g.mean_all(sq))
}

pub fn loss_heatmap<F: Scalar>(g: &mut Graph<F>, pred: Var, gt: Var) -> Result<Var> {
    loss_heatmap_with_channels(g, pred, gt, NUM_LANDMARKS)
}

fn mean_of<F: Scalar>(g: &mut Graph<F>, terms: &[Var]) -> Var {
    assert!(!terms.is_empty());
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.scale(acc, F::one() / F::from_f64(terms.len() as f64))
}

/// Critic objective: -mean[log D(real) + log(1 - D(fake))].
/// Scores must already lie strictly inside (0,1) (clamped logits upstream).
pub fn loss_d<F: Scalar>(g: &mut Graph<F>, real_scores: &[Var], fake_scores: &[Var]) -> Var {
    assert_eq!(real_scores.len(), fake_scores.len());
    let terms: Vec<Var> = real_scores
        .iter()
        .zip(fake_scores.iter())
        .map(|(&r, &f)| {
            let lr = g.log(r);
            let nf = g.neg(f);
            let one_minus = g.add_scalar(nf, F::one());
            let lf = g.log(one_minus);
            g.add(lr, lf)
        })
        .collect();
    let m = mean_of(g, &terms);
    g.neg(m)
}

/// Generator adversarial objective: -mean[log D(fake)].
pub fn loss_adv<F: Scalar>(g: &mut Graph<F>, fake_scores: &[Var]) -> Var {
    let terms: Vec<Var> = fake_scores.iter().map(|&f| g.log(f)).collect();
    let m = mean_of(g, &terms);
    g.neg(m)
}

/// Coarse objective: L_mse + L_sym + alpha1 L_id + psi1 L_adv.
/// Optional terms drop out under ablation configs.
pub fn compose_lc<F: Scalar>(
    g: &mut Graph<F>,
    mse: Var,
    sym: Option<Var>,
    id: Option<Var>,
    adv: Option<Var>,
    w: &LossWeights,
) -> Var {
    let mut acc = mse;
    if let Some(s) = sym {
        acc = g.add(acc, s);
    }
    if let Some(i) = id {
        let t = g.scale(i, F::from_f64(w.alpha1));
        acc = g.add(acc, t);
    }
    if let Some(a) = adv {
        let t = g.scale(a, F::from_f64(w.psi1));
        acc = g.add(acc, t);
    }
    acc
}

/// Touch-up objective: the component MSE alone.
pub fn compose_lt<F: Scalar>(_g: &mut Graph<F>, mse_t: Var) -> Var {
    mse_t
}

/// Fine objective: L_mse + alpha2 L_id + gamma2 L_h + psi2 L_adv.
pub fn compose_lf<F: Scalar>(
    g: &mut Graph<F>,
    mse: Var,
    id: Option<Var>,
    heatmap: Option<Var>,
    adv: Option<Var>,
    w: &LossWeights,
) -> Var {
    let mut acc = mse;
    if let Some(i) = id {
        let t = g.scale(i, F::from_f64(w.alpha2));
        acc = g.add(acc, t);
    }
    if let Some(h) = heatmap {
        let t = g.scale(h, F::from_f64(w.gamma2));
        acc = g.add(acc, t);
    }
    if let Some(a) = adv {
        let t = g.scale(a, F::from_f64(w.psi2));
        acc = g.add(acc, t);
    }
    acc
}

/// Total generator objective: L_C + L_T + L_F.
pub fn compose_lg<F: Scalar>(g: &mut Graph<F>, lc: Var, lt: Var, lf: Var) -> Var {
    let a = g.add(lc, lt);
    g.add(a, lf)
}

/// Scalar-side mirrors of the composite formulas, for logging and tests.
pub fn compose_lc_value(mse: f64, sym: f64, id: f64, adv: f64, w: &LossWeights) -> f64 {
    mse + sym + w.alpha1 * id + w.psi1 * adv
}

pub fn compose_lf_value(mse: f64, id: f64, heatmap: f64, adv: f64, w: &LossWeights) -> f64 {
    mse + w.alpha2 * id + w.gamma2 * heatmap + w.psi2 * adv
}

pub fn compose_lg_value(lc: f64, lt: f64, lf: f64) -> f64 {
    lc + lt + lf
}
