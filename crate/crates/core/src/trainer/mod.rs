//! Three-stage training.
//!
//! Stage 1 pretrains the coarse network (with its critic when enabled),
//! stage 2 pretrains the touch-up subnetwork on component sets, stage 3
//! trains the whole generator against both critics, alternating one critic
//! step and one generator step per batch. Gradients are computed on one
//! tape per sample (batch-parallel via rayon) and summed in index order, so
//! training is bit-deterministic for a fixed config and dataset.

pub mod checkpoint;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use report::{StepLog, TrainReport, REPORT_COLUMNS};

use crate::datapipe::{
    block_downsample, heatmap_sigma_for, nearest_upsample, render_heatmaps, ComponentSet, Dataset,
};
use crate::error::{Error, Result};
use crate::face::{ComponentId, CropSpec, HR_SIZE};
use crate::geometry::{crop_component, StitchTemplate};
use crate::graph::{Graph, Var};
use crate::losses::{
    compose_lc, compose_lc_value, compose_lf, compose_lf_value, compose_lg_value, loss_adv,
    loss_d, loss_heatmap, loss_id, loss_mse, loss_sym, LossWeights,
};
use crate::model::ModelState;
use crate::nets::coarse::coarse_forward;
use crate::nets::critic::discriminate;
use crate::nets::embedder::DEFAULT_EMBEDDER_SEED;
use crate::nets::fine::{build_prior, fine_forward_mode};
use crate::nets::touchup::touchup_forward;
use crate::nets::{BindCtx, ParamSet};
use crate::optim::AdamState;
use crate::scalar::Scalar;
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Spatial size of the predicted heatmaps (the fine net's feature grid).
pub const HEATMAP_SIZE: usize = 32;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr_fine_integration: f64,
    pub lr_other: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub weights: LossWeights,
    pub checkpoint_every: u64,
    pub use_sym_loss: bool,
    pub use_id_loss: bool,
    pub use_coarse_d: bool,
    pub use_fine_d: bool,
    pub use_component_module: bool,
    pub embedder_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            lr_fine_integration: 1e-3,
            lr_other: 1e-4,
            batch_size: 8,
            steps: 0,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            use_sym_loss: true,
            use_id_loss: true,
            use_coarse_d: true,
            use_fine_d: true,
            use_component_module: true,
            embedder_seed: DEFAULT_EMBEDDER_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::config(format!("stage must be 1..3, got {}", self.stage)));
        }
        if self.lr_fine_integration <= 0.0 || self.lr_other <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.weights.validate()
    }

    pub fn hash(&self) -> [u8; 32] {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CriticLosses {
    pub l_d_coarse: Option<f64>,
    pub l_d_fine: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GenLosses {
    pub l_mse_c: Option<f64>,
    pub l_sys: Option<f64>,
    pub l_id_c: Option<f64>,
    pub l_adv_c: Option<f64>,
    pub l_t: Option<f64>,
    pub l_mse_f: Option<f64>,
    pub l_id_f: Option<f64>,
    pub l_h: Option<f64>,
    pub l_adv_f: Option<f64>,
    pub l_g: Option<f64>,
}

struct SampleGrads<F: Scalar> {
    per_net: Vec<Vec<ArrayD<F>>>,
    losses: Vec<Option<f64>>,
}

/// Deterministic epoch-shuffled batch order.
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            n,
            batch,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9E3779B97F4A7C15));
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

fn mean_opt(samples: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = samples.iter().flatten().copied().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Extract per-net gradient lists in bind order, zeros where no gradient
/// reached a parameter.
fn take_grads<F: Scalar>(
    g: &Graph<F>,
    grads: &crate::graph::Grads<F>,
    nets: &[&[Var]],
) -> Vec<Vec<ArrayD<F>>> {
    nets.iter()
        .map(|vars| {
            vars.iter()
                .map(|&v| grads.get_or_zeros(v, g.value(v).shape()))
                .collect()
        })
        .collect()
}

fn sum_sample_grads<F: Scalar>(samples: Vec<SampleGrads<F>>) -> (Vec<Vec<ArrayD<F>>>, Vec<Vec<Option<f64>>>) {
    let mut iter = samples.into_iter();
    let first = iter.next().expect("non-empty batch");
    let mut sums = first.per_net;
    let mut losses: Vec<Vec<Option<f64>>> = first.losses.iter().map(|&l| vec![l]).collect();
    let mut count = 1usize;
    for s in iter {
        for (acc_net, net) in sums.iter_mut().zip(s.per_net.into_iter()) {
            for (acc, g) in acc_net.iter_mut().zip(net.into_iter()) {
                *acc += &g;
            }
        }
        for (col, l) in losses.iter_mut().zip(s.losses.iter()) {
            col.push(*l);
        }
        count += 1;
    }
    let scale = F::from_f64(1.0 / count as f64);
    for net in sums.iter_mut() {
        for g in net.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    (sums, losses)
}

pub struct TrainLoop<'d, F: Scalar> {
    pub cfg: TrainConfig,
    pub model: ModelState<F>,
    pub optim: BTreeMap<String, AdamState<F>>,
    pub data: &'d Dataset<F>,
    pub comps: &'d ComponentSet<F>,
    pub start_step: u64,
    pub stages_done: u8,
    sampler: BatchSampler,
}

impl<'d, F: Scalar> TrainLoop<'d, F> {
    pub fn new(
        cfg: TrainConfig,
        data: &'d Dataset<F>,
        comps: &'d ComponentSet<F>,
        init: Option<Checkpoint<F>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage == 3 {
            let ck = init
                .as_ref()
                .ok_or_else(|| Error::config("stage 3 requires a stage-1+2 checkpoint"))?;
            for stage in [1u8, 2] {
                if !ck.has_stage(stage) {
                    return Err(Error::config(format!(
                        "stage 3 requires a completed stage-{stage} checkpoint"
                    )));
                }
            }
        }
        if (cfg.stage == 1 || cfg.stage == 3) && data.is_empty() {
            return Err(Error::config("training dataset is empty"));
        }
        if cfg.stage == 2 {
            if comps.is_empty() {
                return Err(Error::config("stage 2 requires a non-empty component set"));
            }
            if !data.is_empty() && comps.len() != data.len() {
                return Err(Error::config(format!(
                    "stage 2: component set ({}) and dataset ({}) sizes differ",
                    comps.len(),
                    data.len()
                )));
            }
        }

        let (mut model, stages_done, resume_step, mut optim) = match init {
            Some(ck) => {
                let resume = ck.last_stage == cfg.stage && ck.step > 0;
                if resume && ck.config_hash != cfg.hash() {
                    eprintln!(
                        "warning: resuming stage {} from a checkpoint trained with a different config (hash mismatch)",
                        cfg.stage
                    );
                }
                if resume {
                    (ck.model, ck.stages_done, ck.step, ck.optim)
                } else {
                    (ck.model, ck.stages_done, 0, BTreeMap::new())
                }
            }
            None => (
                ModelState::init(cfg.seed, cfg.embedder_seed, CropSpec::default()),
                0,
                0,
                BTreeMap::new(),
            ),
        };
        if let Some(mean) = data.mean_landmarks() {
            if resume_step == 0 {
                model.mean_landmarks = mean;
            }
        }

        let trainable: Vec<(&str, f64)> = match cfg.stage {
            1 => vec![("coarse", cfg.lr_other), ("critic_coarse", cfg.lr_other)],
            2 => vec![("touchup", cfg.lr_other)],
            _ => vec![
                ("coarse", cfg.lr_other),
                ("touchup", cfg.lr_other),
                ("fine", cfg.lr_fine_integration),
                ("critic_coarse", cfg.lr_other),
                ("critic_fine", cfg.lr_other),
            ],
        };
        for (name, lr) in trainable {
            optim.entry(name.to_string()).or_insert_with(|| {
                let net: &dyn ParamSet<F> = match name {
                    "coarse" => &model.coarse,
                    "touchup" => &model.touchup,
                    "fine" => &model.fine,
                    "critic_coarse" => &model.critic_coarse,
                    "critic_fine" => &model.critic_fine,
                    _ => unreachable!(),
                };
                AdamState::new(net, lr)
            });
        }

        let n = if cfg.stage == 2 { comps.len() } else { data.len() };
        let sampler = BatchSampler::new(n, cfg.batch_size, cfg.seed);
        Ok(TrainLoop {
            cfg,
            model,
            optim,
            data,
            comps,
            start_step: resume_step,
            stages_done,
            sampler,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        self.sampler.next_batch()
    }

    fn check_finite(&self, log: &StepLog) -> Result<()> {
        if let Some(term) = log.non_finite_term() {
            return Err(Error::Numeric(format!(
                "non-finite loss in term {term} at step {}",
                log.step
            )));
        }
        Ok(())
    }

    /// One critic update on a batch: real images vs detached generator
    /// outputs, both active critics together.
    pub fn critic_step(&mut self, batch: &[usize]) -> Result<CriticLosses> {
        let use_cd = self.cfg.use_coarse_d;
        let use_fd = self.cfg.use_fine_d && self.cfg.stage == 3;
        if !use_cd && !use_fd {
            return Ok(CriticLosses::default());
        }
        let stage3 = self.cfg.stage == 3;
        let model = &self.model;
        let cfg = &self.cfg;
        let data = self.data;
        let samples: Result<Vec<SampleGrads<F>>> = batch
            .par_iter()
            .map(|&idx| {
                let pair = &data.pairs[idx];
                let mut g = Graph::<F>::new();
                let lr_in = g.constant(pair.lr.clone().into_dyn());
                let hr = g.constant(pair.hr.clone().into_dyn());

                // Generator forward with frozen parameters.
                let coarse_vars = {
                    let mut ctx = BindCtx::new(&mut g, false);
                    model.coarse.bind(&mut ctx)
                };
                let (coarse_img, _) = coarse_forward(&mut g, &coarse_vars, lr_in)?;
                let fine_img = if stage3 && use_fd {
                    let touchup_vars = {
                        let mut ctx = BindCtx::new(&mut g, false);
                        model.touchup.bind(&mut ctx)
                    };
                    let template = StitchTemplate::from_landmarks(
                        &pair.landmarks,
                        &model.crop_spec,
                        (HR_SIZE, HR_SIZE),
                    );
                    let (prior, _) =
                        build_prior(&mut g, coarse_img, &pair.landmarks, &touchup_vars, &template)?;
                    let fine_vars = {
                        let mut ctx = BindCtx::new(&mut g, false);
                        model.fine.bind(&mut ctx)
                    };
                    let out = fine_forward_mode(
                        &mut g,
                        &fine_vars,
                        coarse_img,
                        prior,
                        cfg.use_component_module,
                    )?;
                    Some(out.fine_hr)
                } else {
                    None
                };

                let mut per_net = Vec::new();
                let mut net_vars: Vec<Vec<Var>> = Vec::new();
                let mut l_d_coarse = None;
                let mut l_d_fine = None;
                let mut total: Option<Var> = None;

                if use_cd {
                    let fake = g.detach(coarse_img);
                    let cd_vars;
                    let bound;
                    {
                        let mut ctx = BindCtx::new(&mut g, true);
                        cd_vars = model.critic_coarse.bind(&mut ctx);
                        bound = ctx.vars;
                    }
                    let p_real = discriminate(&mut g, &cd_vars, hr)?;
                    let p_fake = discriminate(&mut g, &cd_vars, fake)?;
                    let ld = loss_d(&mut g, &[p_real], &[p_fake]);
                    l_d_coarse = Some(g.scalar_value(ld).to_f64());
                    net_vars.push(bound);
                    total = Some(ld);
                }
                if let Some(fine) = fine_img {
                    let fake = g.detach(fine);
                    let fd_vars;
                    let bound;
                    {
                        let mut ctx = BindCtx::new(&mut g, true);
                        fd_vars = model.critic_fine.bind(&mut ctx);
                        bound = ctx.vars;
                    }
                    let p_real = discriminate(&mut g, &fd_vars, hr)?;
                    let p_fake = discriminate(&mut g, &fd_vars, fake)?;
                    let ld = loss_d(&mut g, &[p_real], &[p_fake]);
                    l_d_fine = Some(g.scalar_value(ld).to_f64());
                    net_vars.push(bound);
                    total = Some(match total {
                        Some(t) => g.add(t, ld),
                        None => ld,
                    });
                }

                let grads = g.backward(total.expect("at least one critic active"));
                let views: Vec<&[Var]> = net_vars.iter().map(|v| v.as_slice()).collect();
                per_net.extend(take_grads(&g, &grads, &views));
                Ok(SampleGrads {
                    per_net,
                    losses: vec![l_d_coarse, l_d_fine],
                })
            })
            .collect();
        let (grad_sums, losses) = sum_sample_grads(samples?);

        let mut gi = 0;
        if use_cd {
            let opt = self.optim.get_mut("critic_coarse").expect("optimizer");
            opt.step(&mut self.model.critic_coarse, &grad_sums[gi]);
            gi += 1;
        }
        if use_fd {
            let opt = self.optim.get_mut("critic_fine").expect("optimizer");
            opt.step(&mut self.model.critic_fine, &grad_sums[gi]);
        }
        Ok(CriticLosses {
            l_d_coarse: mean_opt(&losses[0]),
            l_d_fine: mean_opt(&losses[1]),
        })
    }

    /// One generator update on a batch (stages 1 and 3).
    pub fn generator_step(&mut self, batch: &[usize]) -> Result<GenLosses> {
        let stage3 = self.cfg.stage == 3;
        let model = &self.model;
        let cfg = &self.cfg;
        let data = self.data;
        let samples: Result<Vec<SampleGrads<F>>> = batch
            .par_iter()
            .map(|&idx| {
                let pair = &data.pairs[idx];
                let mut g = Graph::<F>::new();
                let lr_in = g.constant(pair.lr.clone().into_dyn());
                let hr = g.constant(pair.hr.clone().into_dyn());
                let emb_vars = model.embedder.bind(&mut g);

                let (coarse_vars, coarse_bound) = {
                    let mut ctx = BindCtx::new(&mut g, true);
                    let v = model.coarse.bind(&mut ctx);
                    (v, ctx.vars)
                };
                let (coarse_img, _) = coarse_forward(&mut g, &coarse_vars, lr_in)?;

                // Coarse-level losses.
                let mse_c = loss_mse(&mut g, coarse_img, hr)?;
                let sym = cfg.use_sym_loss.then(|| loss_sym(&mut g, coarse_img));
                let id_c = if cfg.use_id_loss {
                    Some(loss_id(&mut g, coarse_img, hr, &emb_vars)?)
                } else {
                    None
                };
                let adv_c = if cfg.use_coarse_d {
                    let cd_vars = {
                        let mut ctx = BindCtx::new(&mut g, false);
                        model.critic_coarse.bind(&mut ctx)
                    };
                    let p = discriminate(&mut g, &cd_vars, coarse_img)?;
                    Some(loss_adv(&mut g, &[p]))
                } else {
                    None
                };
                let lc = compose_lc(&mut g, mse_c, sym, id_c, adv_c, &cfg.weights);

                let mut losses: Vec<Option<f64>> = vec![
                    Some(g.scalar_value(mse_c).to_f64()),
                    sym.map(|v| g.scalar_value(v).to_f64()),
                    id_c.map(|v| g.scalar_value(v).to_f64()),
                    adv_c.map(|v| g.scalar_value(v).to_f64()),
                ];

                let mut net_vars: Vec<Vec<Var>> = vec![coarse_bound];
                let root;
                if stage3 {
                    let (touchup_vars, touchup_bound) = {
                        let mut ctx = BindCtx::new(&mut g, true);
                        let v = model.touchup.bind(&mut ctx);
                        (v, ctx.vars)
                    };
                    let template = StitchTemplate::from_landmarks(
                        &pair.landmarks,
                        &model.crop_spec,
                        (HR_SIZE, HR_SIZE),
                    );
                    let (prior, refined) =
                        build_prior(&mut g, coarse_img, &pair.landmarks, &touchup_vars, &template)?;

                    // Touch-up loss: refined components vs ground-truth crops.
                    let mut comp_losses = Vec::new();
                    for (comp, refined_var) in &refined {
                        let gt_patch =
                            crop_component(&pair.hr, &pair.landmarks, *comp, &model.crop_spec);
                        let gt = g.constant(gt_patch.into_dyn());
                        comp_losses.push(loss_mse(&mut g, *refined_var, gt)?);
                    }
                    let mut lt = comp_losses[0];
                    for &l in &comp_losses[1..] {
                        lt = g.add(lt, l);
                    }
                    let lt = g.scale(lt, F::from_f64(1.0 / comp_losses.len() as f64));

                    let (fine_vars, fine_bound) = {
                        let mut ctx = BindCtx::new(&mut g, true);
                        let v = model.fine.bind(&mut ctx);
                        (v, ctx.vars)
                    };
                    let out = fine_forward_mode(
                        &mut g,
                        &fine_vars,
                        coarse_img,
                        prior,
                        cfg.use_component_module,
                    )?;

                    let mse_f = loss_mse(&mut g, out.fine_hr, hr)?;
                    let id_f = if cfg.use_id_loss {
                        Some(loss_id(&mut g, out.fine_hr, hr, &emb_vars)?)
                    } else {
                        None
                    };
                    let l_h = if cfg.use_component_module {
                        let gt_hm = render_heatmaps::<F>(
                            &pair
                                .landmarks
                                .scaled(HEATMAP_SIZE as f64 / HR_SIZE as f64),
                            (HEATMAP_SIZE, HEATMAP_SIZE),
                            heatmap_sigma_for(HEATMAP_SIZE),
                        )?;
                        let gt = g.constant(gt_hm.into_dyn());
                        // Intermediate supervision: both stacks, summed.
                        let mut acc: Option<Var> = None;
                        for &hm in &out.all_heatmaps {
                            let l = loss_heatmap(&mut g, hm, gt)?;
                            acc = Some(match acc {
                                Some(a) => g.add(a, l),
                                None => l,
                            });
                        }
                        acc
                    } else {
                        None
                    };
                    let adv_f = if cfg.use_fine_d {
                        let fd_vars = {
                            let mut ctx = BindCtx::new(&mut g, false);
                            model.critic_fine.bind(&mut ctx)
                        };
                        let p = discriminate(&mut g, &fd_vars, out.fine_hr)?;
                        Some(loss_adv(&mut g, &[p]))
                    } else {
                        None
                    };
                    let lf = compose_lf(&mut g, mse_f, id_f, l_h, adv_f, &cfg.weights);
                    let a = g.add(lc, lt);
                    let lg = g.add(a, lf);

                    losses.push(Some(g.scalar_value(lt).to_f64()));
                    losses.push(Some(g.scalar_value(mse_f).to_f64()));
                    losses.push(id_f.map(|v| g.scalar_value(v).to_f64()));
                    losses.push(l_h.map(|v| g.scalar_value(v).to_f64()));
                    losses.push(adv_f.map(|v| g.scalar_value(v).to_f64()));
                    net_vars.push(touchup_bound);
                    net_vars.push(fine_bound);
                    root = lg;
                } else {
                    losses.extend([None, None, None, None, None]);
                    root = lc;
                }

                let grads = g.backward(root);
                let views: Vec<&[Var]> = net_vars.iter().map(|v| v.as_slice()).collect();
                let per_net = take_grads(&g, &grads, &views);
                Ok(SampleGrads { per_net, losses })
            })
            .collect();
        let (grad_sums, losses) = sum_sample_grads(samples?);

        let opt = self.optim.get_mut("coarse").expect("optimizer");
        opt.step(&mut self.model.coarse, &grad_sums[0]);
        if stage3 {
            let opt = self.optim.get_mut("touchup").expect("optimizer");
            opt.step(&mut self.model.touchup, &grad_sums[1]);
            let opt = self.optim.get_mut("fine").expect("optimizer");
            opt.step(&mut self.model.fine, &grad_sums[2]);
        }

        let l_mse_c = mean_opt(&losses[0]);
        let l_sys = mean_opt(&losses[1]);
        let l_id_c = mean_opt(&losses[2]);
        let l_adv_c = mean_opt(&losses[3]);
        let l_t = mean_opt(&losses[4]);
        let l_mse_f = mean_opt(&losses[5]);
        let l_id_f = mean_opt(&losses[6]);
        let l_h = mean_opt(&losses[7]);
        let l_adv_f = mean_opt(&losses[8]);
        let l_g = if stage3 {
            let lc = compose_lc_value(
                l_mse_c.unwrap_or(0.0),
                l_sys.unwrap_or(0.0),
                l_id_c.unwrap_or(0.0),
                l_adv_c.unwrap_or(0.0),
                &self.cfg.weights,
            );
            let lf = compose_lf_value(
                l_mse_f.unwrap_or(0.0),
                l_id_f.unwrap_or(0.0),
                l_h.unwrap_or(0.0),
                l_adv_f.unwrap_or(0.0),
                &self.cfg.weights,
            );
            Some(compose_lg_value(lc, l_t.unwrap_or(0.0), lf))
        } else {
            None
        };
        Ok(GenLosses {
            l_mse_c,
            l_sys,
            l_id_c,
            l_adv_c,
            l_t,
            l_mse_f,
            l_id_f,
            l_h,
            l_adv_f,
            l_g,
        })
    }

    /// One touch-up pretraining update (stage 2): refine degraded component
    /// patches toward the component-set targets.
    pub fn touchup_step(&mut self, batch: &[usize]) -> Result<f64> {
        let have_coarse = self.stages_done & checkpoint::STAGE1_DONE != 0 && !self.data.is_empty();
        let model = &self.model;
        let comps = self.comps;
        let data = self.data;
        let samples: Result<Vec<SampleGrads<F>>> = batch
            .par_iter()
            .map(|&idx| {
                let mut g = Graph::<F>::new();
                let (touchup_vars, bound) = {
                    let mut ctx = BindCtx::new(&mut g, true);
                    let v = model.touchup.bind(&mut ctx);
                    (v, ctx.vars)
                };

                // Inputs: crops of the stage-1 coarse output when available,
                // otherwise a blockwise degradation of the target itself.
                let coarse_img = if have_coarse {
                    let pair = &data.pairs[idx];
                    let lr_in = g.constant(pair.lr.clone().into_dyn());
                    let coarse_vars = {
                        let mut ctx = BindCtx::new(&mut g, false);
                        model.coarse.bind(&mut ctx)
                    };
                    let (img, _) = coarse_forward(&mut g, &coarse_vars, lr_in)?;
                    Some((img, pair))
                } else {
                    None
                };

                let mut comp_losses = Vec::new();
                for comp in ComponentId::ALL {
                    let target = &comps.patches[&comp][idx];
                    let input_var = match &coarse_img {
                        Some((img, pair)) => {
                            let detached = g.detach(*img);
                            crate::geometry::crop_component_var(
                                &mut g,
                                detached,
                                &pair.landmarks,
                                comp,
                                &model.crop_spec,
                            )
                        }
                        None => {
                            let degraded = nearest_upsample(&block_downsample(target, 8), 8);
                            g.constant(degraded.into_dyn())
                        }
                    };
                    let refined = touchup_forward(&mut g, &touchup_vars, comp, input_var)?;
                    let gt = g.constant(target.clone().into_dyn());
                    comp_losses.push(loss_mse(&mut g, refined, gt)?);
                }
                let mut lt = comp_losses[0];
                for &l in &comp_losses[1..] {
                    lt = g.add(lt, l);
                }
                let lt = g.scale(lt, F::from_f64(0.25));
                let grads = g.backward(lt);
                let per_net = take_grads(&g, &grads, &[bound.as_slice()]);
                Ok(SampleGrads {
                    per_net,
                    losses: vec![Some(g.scalar_value(lt).to_f64())],
                })
            })
            .collect();
        let (grad_sums, losses) = sum_sample_grads(samples?);
        let opt = self.optim.get_mut("touchup").expect("optimizer");
        opt.step(&mut self.model.touchup, &grad_sums[0]);
        Ok(mean_opt(&losses[0]).expect("stage-2 loss present"))
    }

    /// Assemble the checkpoint for the current state.
    pub fn to_checkpoint(&self, steps_run: u64, completed: bool) -> Checkpoint<F> {
        let mut ck = Checkpoint {
            config_hash: self.cfg.hash(),
            stages_done: self.stages_done,
            last_stage: self.cfg.stage,
            step: self.start_step + steps_run,
            model: self.model.clone(),
            optim: self.optim.clone(),
        };
        if completed {
            ck.mark_stage(self.cfg.stage);
        }
        ck
    }
}

/// Run one full training stage and return the resulting checkpoint and the
/// per-step loss report.
pub fn run_stage<F: Scalar>(
    cfg: TrainConfig,
    data: &Dataset<F>,
    comps: &ComponentSet<F>,
    init: Option<Checkpoint<F>>,
    run_dir: Option<&Path>,
) -> Result<(Checkpoint<F>, TrainReport)> {
    let stage = cfg.stage;
    let checkpoint_every = cfg.checkpoint_every;
    let mut lp = TrainLoop::new(cfg, data, comps, init)?;
    let mut report = TrainReport::default();
    let steps = lp.cfg.steps;
    for s in 0..steps {
        let batch = lp.next_batch();
        let step = lp.start_step + s;
        let mut row = StepLog {
            step,
            ..StepLog::default()
        };
        match stage {
            1 => {
                let cl = lp.critic_step(&batch)?;
                let gl = lp.generator_step(&batch)?;
                row.l_d_coarse = cl.l_d_coarse;
                row.l_mse_c = gl.l_mse_c;
                row.l_sys = gl.l_sys;
                row.l_id_c = gl.l_id_c;
                row.l_adv_c = gl.l_adv_c;
            }
            2 => {
                row.l_t = Some(lp.touchup_step(&batch)?);
            }
            _ => {
                let cl = lp.critic_step(&batch)?;
                let gl = lp.generator_step(&batch)?;
                row.l_d_coarse = cl.l_d_coarse;
                row.l_d_fine = cl.l_d_fine;
                row.l_mse_c = gl.l_mse_c;
                row.l_sys = gl.l_sys;
                row.l_id_c = gl.l_id_c;
                row.l_adv_c = gl.l_adv_c;
                row.l_t = gl.l_t;
                row.l_mse_f = gl.l_mse_f;
                row.l_id_f = gl.l_id_f;
                row.l_h = gl.l_h;
                row.l_adv_f = gl.l_adv_f;
                row.l_g = gl.l_g;
            }
        }
        lp.check_finite(&row)?;
        report.rows.push(row);
        if checkpoint_every > 0 && (s + 1) % checkpoint_every == 0 {
            if let Some(dir) = run_dir {
                let ck = lp.to_checkpoint(s + 1, false);
                save_checkpoint(&ck, &dir.join(format!("stage{stage}_step{}.ckpt", lp.start_step + s + 1)))?;
            }
        }
    }
    let ck = lp.to_checkpoint(steps, true);
    Ok((ck, report))
}
