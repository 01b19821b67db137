//! Quantitative evaluation: PSNR, SSIM, identity-embedding distance, and
//! dataset-level reports with per-pose aggregation.
//!
//! Metrics are computed in f64 regardless of the model's scalar type. PSNR
//! runs over RGB jointly, full frame. SSIM uses the standard 11x11 Gaussian
//! window (sigma 1.5) with C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range,
//! per channel, averaged over valid window positions.

use crate::datapipe::Dataset;
use crate::error::{Error, Result};
use crate::face::FaceImage;
use crate::graph::Graph;
use crate::losses::loss_id;
use crate::model::{infer_one, ModelState};
use crate::scalar::Scalar;
use ndarray::Array3;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn to_f64<F: Scalar>(img: &FaceImage<F>) -> Array3<f64> {
    img.mapv(|v| v.to_f64())
}

/// Peak signal-to-noise ratio in dB over all channels; +inf for identical
/// images. Inputs must share dims and lie in [0,1].
pub fn psnr<F: Scalar>(a: &FaceImage<F>, b: &FaceImage<F>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "psnr: dims {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut mse = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x.to_f64() - y.to_f64();
        mse += d * d;
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let half = (n - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Structural similarity with a custom window size (odd, >= 2).
pub fn ssim_with_window<F: Scalar>(
    a: &FaceImage<F>,
    b: &FaceImage<F>,
    window: usize,
    sigma: f64,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "ssim: dims {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (c, h, w) = a.dim();
    if h < window || w < window {
        return Err(Error::invalid(format!(
            "ssim: image {h}x{w} smaller than the {window}x{window} window"
        )));
    }
    let af = to_f64(a);
    let bf = to_f64(b);
    let kernel = gaussian_window(window, sigma);
    let mut total = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(h - window) {
            for x0 in 0..=(w - window) {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..window {
                    let wy = kernel[dy];
                    for dx in 0..window {
                        let wgt = wy * kernel[dx];
                        let va = af[[ch, y0 + dy, x0 + dx]];
                        let vb = bf[[ch, y0 + dy, x0 + dx]];
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                let val = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
                acc += val;
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / c as f64)
}

/// SSIM at the standard 11x11, sigma 1.5 configuration.
pub fn ssim<F: Scalar>(a: &FaceImage<F>, b: &FaceImage<F>) -> Result<f64> {
    ssim_with_window(a, b, SSIM_WINDOW, SSIM_SIGMA)
}

fn catmull_rom(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t < 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic (Catmull-Rom) upsampling by an integer factor, clamped borders.
/// The reference baseline for super-resolution comparisons.
pub fn bicubic_upsample<F: Scalar>(img: &FaceImage<F>, scale: usize) -> FaceImage<F> {
    let (c, h, w) = img.dim();
    let (oh, ow) = (h * scale, w * scale);
    let mut out = Array3::<F>::zeros((c, oh, ow));
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) / scale as f64 - 0.5;
        let y0 = sy.floor() as isize;
        let fy = sy - y0 as f64;
        let wy: Vec<f64> = (-1..=2).map(|k| catmull_rom(fy - k as f64)).collect();
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) / scale as f64 - 0.5;
            let x0 = sx.floor() as isize;
            let fx = sx - x0 as f64;
            let wx: Vec<f64> = (-1..=2).map(|k| catmull_rom(fx - k as f64)).collect();
            for ch in 0..c {
                let mut acc = 0.0;
                for (ky, wyv) in wy.iter().enumerate() {
                    let yy = clamp(y0 + ky as isize - 1, h);
                    for (kx, wxv) in wx.iter().enumerate() {
                        let xx = clamp(x0 + kx as isize - 1, w);
                        acc += wyv * wxv * img[[ch, yy, xx]].to_f64();
                    }
                }
                out[[ch, oy, ox]] = F::from_f64(acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Identity-embedding distance between two images under the model's frozen
/// embedder (the same quantity as the identity loss).
pub fn id_distance<F: Scalar>(model: &ModelState<F>, a: &FaceImage<F>, b: &FaceImage<F>) -> Result<f64> {
    let mut g = Graph::<F>::new();
    let av = g.constant(a.clone().into_dyn());
    let bv = g.constant(b.clone().into_dyn());
    let ev = model.embedder.bind(&mut g);
    let l = loss_id(&mut g, av, bv, &ev)?;
    Ok(g.scalar_value(l).to_f64())
}

/// What to evaluate: the real pipeline, or an identity stub whose output is
/// the ground truth itself (report-plumbing checks).
pub enum EvalModel<'a, F: Scalar> {
    Model(&'a ModelState<F>),
    IdentityStub(&'a ModelState<F>),
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricRow {
    pub id: String,
    pub pose_tag: f64,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub id_dist: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PoseAggregate {
    pub count: usize,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Aggregate {
    /// Mean over finite PSNR rows; infinite rows are excluded and counted.
    pub mean_psnr_db: Option<f64>,
    pub n_psnr_inf: usize,
    pub mean_ssim: Option<f64>,
    pub mean_id_dist: Option<f64>,
    pub n_errors: usize,
    pub per_pose: BTreeMap<String, PoseAggregate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub per_image: Vec<MetricRow>,
    pub aggregate: Aggregate,
}

fn mean(vals: &[f64]) -> Option<f64> {
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn aggregate_rows(rows: &[MetricRow]) -> Aggregate {
    let finite_psnr: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.psnr_db)
        .filter(|v| v.is_finite())
        .collect();
    let n_inf = rows
        .iter()
        .filter(|r| r.psnr_db.is_some_and(|v| v.is_infinite()))
        .count();
    let ssims: Vec<f64> = rows.iter().filter_map(|r| r.ssim).collect();
    let ids: Vec<f64> = rows.iter().filter_map(|r| r.id_dist).collect();
    let mut per_pose: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if r.error.is_some() {
            continue;
        }
        let key = format!("{}", r.pose_tag);
        let entry = per_pose.entry(key).or_default();
        if let Some(p) = r.psnr_db {
            if p.is_finite() {
                entry.0.push(p);
            }
        }
        if let Some(s) = r.ssim {
            entry.1.push(s);
        }
    }
    Aggregate {
        mean_psnr_db: mean(&finite_psnr),
        n_psnr_inf: n_inf,
        mean_ssim: mean(&ssims),
        mean_id_dist: mean(&ids),
        n_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        per_pose: per_pose
            .into_iter()
            .map(|(k, (p, s))| {
                (
                    k,
                    PoseAggregate {
                        count: s.len().max(p.len()),
                        mean_psnr_db: mean(&p),
                        mean_ssim: mean(&s),
                    },
                )
            })
            .collect(),
    }
}

/// Run the pipeline (or stub) on every pair and report PSNR / SSIM /
/// identity distance against the HR ground truth. Per-image failures
/// become error rows; evaluation continues.
pub fn evaluate<F: Scalar>(model: &EvalModel<'_, F>, data: &Dataset<F>) -> MetricsReport {
    let rows: Vec<MetricRow> = data
        .pairs
        .par_iter()
        .zip(data.ids.par_iter())
        .map(|(pair, id)| {
            let produced: Result<FaceImage<F>> = match model {
                EvalModel::Model(m) => {
                    infer_one(m, &pair.lr, Some(&pair.landmarks)).map(|o| o.fine_hr)
                }
                EvalModel::IdentityStub(_) => Ok(pair.hr.clone()),
            };
            let m = match model {
                EvalModel::Model(m) | EvalModel::IdentityStub(m) => m,
            };
            match produced.and_then(|out| {
                let p = psnr(&out, &pair.hr)?;
                let s = ssim(&out, &pair.hr)?;
                let d = id_distance(m, &out, &pair.hr)?;
                Ok((p, s, d))
            }) {
                Ok((p, s, d)) => MetricRow {
                    id: id.clone(),
                    pose_tag: pair.pose_tag,
                    psnr_db: Some(p),
                    ssim: Some(s),
                    id_dist: Some(d),
                    error: None,
                },
                Err(e) => MetricRow {
                    id: id.clone(),
                    pose_tag: pair.pose_tag,
                    psnr_db: None,
                    ssim: None,
                    id_dist: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let aggregate = aggregate_rows(&rows);
    MetricsReport {
        per_image: rows,
        aggregate,
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl MetricsReport {
    /// CSV: id, pose_tag, psnr_db, ssim, id_dist. Infinite PSNR serializes
    /// as "inf"; error rows leave metric cells empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("id,pose_tag,psnr_db,ssim,id_dist\n");
        for r in &self.per_image {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id,
                r.pose_tag,
                fmt_metric(r.psnr_db),
                fmt_metric(r.ssim),
                fmt_metric(r.id_dist),
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_aggregate_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.aggregate)
            .map_err(|e| Error::Checkpoint(format!("aggregate serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
