//! Flat sectioned run configuration. Unknown keys are rejected; missing
//! keys fall back to the documented defaults; the fully-resolved config is
//! echoed into every output directory.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use vivid_core::error::{Error, Result};
use vivid_core::face::CropSpec;
use vivid_core::losses::LossWeights;
use vivid_core::trainer::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset root (hr/, lr/, landmarks/, manifest.json).
    pub root: PathBuf,
    pub scale: usize,
    pub max_rotation: f64,
    pub max_shift: f64,
    pub max_shear: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: PathBuf::from("data"),
            scale: 8,
            max_rotation: 15.0,
            max_shift: 0.04,
            max_shear: 0.05,
            blur_sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub crop_left_eye: [usize; 2],
    pub crop_right_eye: [usize; 2],
    pub crop_nose: [usize; 2],
    pub crop_mouth: [usize; 2],
    /// Heatmap Gaussian sigma at 128x128 (scaled proportionally elsewhere).
    pub heatmap_sigma: f64,
    pub embedder_seed: u64,
    pub sigma_tradeoff: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let spec = CropSpec::default();
        ModelSection {
            crop_left_eye: [spec.left_eye.0, spec.left_eye.1],
            crop_right_eye: [spec.right_eye.0, spec.right_eye.1],
            crop_nose: [spec.nose.0, spec.nose.1],
            crop_mouth: [spec.mouth.0, spec.mouth.1],
            heatmap_sigma: 2.0,
            embedder_seed: vivid_core::nets::embedder::DEFAULT_EMBEDDER_SEED,
            sigma_tradeoff: 1.0,
        }
    }
}

impl ModelSection {
    pub fn crop_spec(&self) -> CropSpec {
        CropSpec {
            left_eye: (self.crop_left_eye[0], self.crop_left_eye[1]),
            right_eye: (self.crop_right_eye[0], self.crop_right_eye[1]),
            nose: (self.crop_nose[0], self.crop_nose[1]),
            mouth: (self.crop_mouth[0], self.crop_mouth[1]),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_fine_integration: f64,
    pub lr_other: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub alpha1: f64,
    pub psi1: f64,
    pub alpha2: f64,
    pub gamma2: f64,
    pub psi2: f64,
    pub use_sym_loss: bool,
    pub use_id_loss: bool,
    pub use_coarse_d: bool,
    pub use_fine_d: bool,
    pub use_component_module: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr_fine_integration: 1e-3,
            lr_other: 1e-4,
            batch_size: 8,
            steps: 1000,
            seed: 0,
            checkpoint_every: 0,
            alpha1: 0.01,
            psi1: 0.01,
            alpha2: 0.01,
            gamma2: 0.01,
            psi2: 0.01,
            use_sym_loss: true,
            use_id_loss: true,
            use_coarse_d: true,
            use_fine_d: true,
            use_component_module: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub group_by_pose: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { group_by_pose: true }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn train_config(&self, stage: u8) -> TrainConfig {
        TrainConfig {
            stage,
            lr_fine_integration: self.train.lr_fine_integration,
            lr_other: self.train.lr_other,
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            seed: self.train.seed,
            weights: LossWeights {
                alpha1: self.train.alpha1,
                psi1: self.train.psi1,
                alpha2: self.train.alpha2,
                gamma2: self.train.gamma2,
                psi2: self.train.psi2,
            },
            checkpoint_every: self.train.checkpoint_every,
            use_sym_loss: self.train.use_sym_loss,
            use_id_loss: self.train.use_id_loss,
            use_coarse_d: self.train.use_coarse_d,
            use_fine_d: self.train.use_fine_d,
            use_component_module: self.train.use_component_module,
            embedder_seed: self.model.embedder_seed,
        }
    }

    pub fn degradation(&self) -> vivid_core::datapipe::DegradationConfig {
        vivid_core::datapipe::DegradationConfig {
            scale: self.data.scale,
            max_rotation: self.data.max_rotation,
            max_shift: self.data.max_shift,
            max_shear: self.data.max_shear,
            blur_sigma: self.data.blur_sigma,
            seed: self.data.seed,
        }
    }

    /// Write the fully-resolved configuration into an output directory.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization: {e}")))?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
