//! Aggregate model state and the forward inference pipeline
//! (coarse -> component prior -> fine).

use crate::error::Result;
use crate::face::{CropSpec, FaceImage, Landmarks, HR_SIZE};
use crate::geometry::{to_image3, StitchTemplate};
use crate::graph::Graph;
use crate::nets::coarse::{coarse_forward, CoarseNet};
use crate::nets::critic::{Critic, CriticLevel};
use crate::nets::embedder::Embedder;
use crate::nets::fine::{build_prior, fine_forward, FineNet};
use crate::nets::touchup::TouchupNet;
use crate::nets::BindCtx;
use crate::scalar::Scalar;
use crate::toyface::mean_layout;
use ndarray::Array3;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Parameter trees for all five networks plus the frozen embedder, the
/// crop geometry, and the landmark layout used when inputs arrive without
/// annotations.
#[derive(Clone, Debug)]
pub struct ModelState<F: Scalar> {
    pub coarse: CoarseNet<F>,
    pub touchup: TouchupNet<F>,
    pub fine: FineNet<F>,
    pub critic_coarse: Critic<F>,
    pub critic_fine: Critic<F>,
    pub embedder: Embedder<F>,
    pub crop_spec: CropSpec,
    pub mean_landmarks: Landmarks,
    pub seed: u64,
}

impl<F: Scalar> ModelState<F> {
    pub fn init(seed: u64, embedder_seed: u64, crop_spec: CropSpec) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ModelState {
            coarse: CoarseNet::new(&mut rng),
            touchup: TouchupNet::new(&mut rng, crop_spec),
            fine: FineNet::new(&mut rng),
            critic_coarse: Critic::new(&mut rng, CriticLevel::Coarse),
            critic_fine: Critic::new(&mut rng, CriticLevel::Fine),
            embedder: Embedder::from_seed(embedder_seed),
            crop_spec,
            mean_landmarks: mean_layout(HR_SIZE),
            seed,
        }
    }

    /// Landmarks to use for an input: supplied annotations, or the stored
    /// mean layout.
    pub fn landmarks_or_mean<'a>(&'a self, lm: Option<&'a Landmarks>) -> &'a Landmarks {
        lm.unwrap_or(&self.mean_landmarks)
    }
}

/// The three pipeline artifacts of one inference.
pub struct InferOutputs<F: Scalar> {
    pub coarse_hr: FaceImage<F>,
    pub prior: FaceImage<F>,
    pub fine_hr: FaceImage<F>,
    pub pred_heatmaps: Array3<F>,
}

/// Forward-only pipeline on frozen parameters.
pub fn infer_one<F: Scalar>(
    model: &ModelState<F>,
    lr: &FaceImage<F>,
    landmarks: Option<&Landmarks>,
) -> Result<InferOutputs<F>> {
    let lm = model.landmarks_or_mean(landmarks);
    let template = StitchTemplate::from_landmarks(lm, &model.crop_spec, (HR_SIZE, HR_SIZE));
    let mut g = Graph::<F>::new();
    let input = g.constant(lr.clone().into_dyn());

    let coarse_vars = {
        let mut ctx = BindCtx::new(&mut g, false);
        model.coarse.bind(&mut ctx)
    };
    let (coarse_hr, _thetas) = coarse_forward(&mut g, &coarse_vars, input)?;

    let touchup_vars = {
        let mut ctx = BindCtx::new(&mut g, false);
        model.touchup.bind(&mut ctx)
    };
    let (prior, _patches) = build_prior(&mut g, coarse_hr, lm, &touchup_vars, &template)?;

    let fine_vars = {
        let mut ctx = BindCtx::new(&mut g, false);
        model.fine.bind(&mut ctx)
    };
    let out = fine_forward(&mut g, &fine_vars, coarse_hr, prior)?;

    Ok(InferOutputs {
        coarse_hr: to_image3(g.value(coarse_hr)),
        prior: to_image3(g.value(prior)),
        fine_hr: to_image3(g.value(out.fine_hr)),
        pred_heatmaps: to_image3(g.value(out.pred_heatmaps.expect("full pipeline predicts heatmaps"))),
    })
}
