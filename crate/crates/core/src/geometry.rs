//! Image-geometry kernels: affine spatial-transform sampling, flips,
//! landmark-driven cropping and masked-template stitching with max-out
//! fusion. The differentiable paths run on a [`Graph`]; plain-array variants
//! back the data pipeline and evaluation.

use crate::error::{Error, Result};
use crate::face::{ComponentId, CropSpec, FaceImage, Landmarks};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use ndarray::{Array2, Array3, ArrayD, IxDyn};

/// 2x3 affine map from normalized output coordinates to normalized input
/// coordinates; -1/+1 address the first/last pixel centers on each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams<F: Scalar>(pub Array2<F>);

impl<F: Scalar> AffineParams<F> {
    pub fn identity() -> Self {
        let mut t = Array2::zeros((2, 3));
        t[[0, 0]] = F::one();
        t[[1, 1]] = F::one();
        AffineParams(t)
    }

    pub fn hflip() -> Self {
        let mut t = Array2::zeros((2, 3));
        t[[0, 0]] = -F::one();
        t[[1, 1]] = F::one();
        AffineParams(t)
    }

    pub fn from_rows(r0: [F; 3], r1: [F; 3]) -> Self {
        let mut t = Array2::zeros((2, 3));
        for j in 0..3 {
            t[[0, j]] = r0[j];
            t[[1, j]] = r1[j];
        }
        AffineParams(t)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Composition such that sampling with `self` then `next` equals one
    /// sampling with the returned parameters.
    pub fn compose(&self, next: &AffineParams<F>) -> AffineParams<F> {
        let a = &self.0;
        let b = &next.0;
        let mut out = Array2::zeros((2, 3));
        for i in 0..2 {
            for j in 0..2 {
                out[[i, j]] = a[[i, 0]] * b[[0, j]] + a[[i, 1]] * b[[1, j]];
            }
            out[[i, 2]] = a[[i, 0]] * b[[0, 2]] + a[[i, 1]] * b[[1, 2]] + a[[i, 2]];
        }
        AffineParams(out)
    }
}

/// Differentiable bilinear sampling at theta-mapped coordinates, zero
/// padding outside the source frame.
pub fn affine_grid_sample<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    theta: Var,
    out_hw: (usize, usize),
) -> Result<Var> {
    if !g.value(theta).iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("affine_grid_sample: non-finite theta"));
    }
    if !g.value(x).iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("affine_grid_sample: non-finite input"));
    }
    Ok(g.grid_sample_affine(x, theta, out_hw))
}

/// Plain-array flip of the width axis.
pub fn hflip_image<F: Scalar>(img: &FaceImage<F>) -> FaceImage<F> {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| img[[ci, y, w - 1 - x]])
}

/// Plain-array affine warp with border replication (bilinear). Used by the
/// data synthesizer, where constant images must stay constant under any
/// affine; the differentiable graph op keeps zero padding instead.
pub fn warp_affine_replicate<F: Scalar>(
    img: &FaceImage<F>,
    theta: &AffineParams<F>,
    out_hw: (usize, usize),
) -> FaceImage<F> {
    let (c, hi, wi) = img.dim();
    let (ho, wo) = out_hw;
    let t = &theta.0;
    let half = F::from_f64(0.5);
    let sx = F::from_f64((wi - 1) as f64) * half;
    let sy = F::from_f64((hi - 1) as f64) * half;
    let mut out = Array3::zeros((c, ho, wo));
    for i in 0..ho {
        let yo = crate::graph::norm_coord::<F>(i, ho);
        for j in 0..wo {
            let xo = crate::graph::norm_coord::<F>(j, wo);
            let xs = t[[0, 0]] * xo + t[[0, 1]] * yo + t[[0, 2]];
            let ys = t[[1, 0]] * xo + t[[1, 1]] * yo + t[[1, 2]];
            let px = ((xs + F::one()) * sx)
                .max(F::zero())
                .min(F::from_f64((wi - 1) as f64));
            let py = ((ys + F::one()) * sy)
                .max(F::zero())
                .min(F::from_f64((hi - 1) as f64));
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let x0i = (x0.to_f64() as usize).min(wi - 1);
            let y0i = (y0.to_f64() as usize).min(hi - 1);
            let x1i = (x0i + 1).min(wi - 1);
            let y1i = (y0i + 1).min(hi - 1);
            let one = F::one();
            for ci in 0..c {
                let v00 = img[[ci, y0i, x0i]];
                let v01 = img[[ci, y0i, x1i]];
                let v10 = img[[ci, y1i, x0i]];
                let v11 = img[[ci, y1i, x1i]];
                out[[ci, i, j]] = (one - fy) * ((one - fx) * v00 + fx * v01)
                    + fy * ((one - fx) * v10 + fx * v11);
            }
        }
    }
    out
}

/// Top-left corner of a window of `size` centered at `(cx, cy)`.
pub fn window_top_left(cx: f64, cy: f64, size: (usize, usize)) -> (isize, isize) {
    let top = cy.round() as isize - (size.0 / 2) as isize;
    let left = cx.round() as isize - (size.1 / 2) as isize;
    (top, left)
}

/// Window of `crop_spec` dims centered at the component landmark centroid,
/// clamped to image bounds with zero padding outside.
pub fn crop_component<F: Scalar>(
    img: &FaceImage<F>,
    landmarks: &Landmarks,
    comp: ComponentId,
    spec: &CropSpec,
) -> FaceImage<F> {
    let (c, hi, wi) = img.dim();
    let (h, w) = spec.get(comp);
    let (cx, cy) = landmarks.centroid(comp);
    let (top, left) = window_top_left(cx, cy, (h, w));
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for py in 0..h {
            let iy = top + py as isize;
            if iy < 0 || iy >= hi as isize {
                continue;
            }
            for px in 0..w {
                let ix = left + px as isize;
                if ix < 0 || ix >= wi as isize {
                    continue;
                }
                out[[ci, py, px]] = img[[ci, iy as usize, ix as usize]];
            }
        }
    }
    out
}

/// Graph variant of [`crop_component`], differentiable wrt the image.
pub fn crop_component_var<F: Scalar>(
    g: &mut Graph<F>,
    img: Var,
    landmarks: &Landmarks,
    comp: ComponentId,
    spec: &CropSpec,
) -> Var {
    let (h, w) = spec.get(comp);
    let (cx, cy) = landmarks.centroid(comp);
    let (top, left) = window_top_left(cx, cy, (h, w));
    g.extract_patch(img, top, left, h, w)
}

/// Masked stitching template: per-component placements on a canvas plus the
/// union mask of all placement windows.
#[derive(Clone, Debug)]
pub struct StitchTemplate {
    pub canvas: (usize, usize),
    pub placements: Vec<(ComponentId, (usize, usize))>,
    pub sizes: Vec<(usize, usize)>,
    pub mask: Array2<u8>,
}

impl StitchTemplate {
    /// Build from landmarks: each window is centered on its component
    /// centroid and shifted (if needed) to lie fully inside the canvas.
    pub fn from_landmarks(landmarks: &Landmarks, spec: &CropSpec, canvas: (usize, usize)) -> Self {
        let mut placements = Vec::new();
        let mut sizes = Vec::new();
        let mut mask = Array2::<u8>::zeros(canvas);
        for comp in ComponentId::ALL {
            let (h, w) = spec.get(comp);
            let (cx, cy) = landmarks.centroid(comp);
            let (top, left) = window_top_left(cx, cy, (h, w));
            let top = top.clamp(0, canvas.0 as isize - h as isize) as usize;
            let left = left.clamp(0, canvas.1 as isize - w as isize) as usize;
            placements.push((comp, (top, left)));
            sizes.push((h, w));
            for y in top..top + h {
                for x in left..left + w {
                    mask[[y, x]] = 1;
                }
            }
        }
        StitchTemplate {
            canvas,
            placements,
            sizes,
            mask,
        }
    }

    pub fn without(&self, comp: ComponentId) -> StitchTemplate {
        let mut t = self.clone();
        let keep: Vec<usize> = (0..t.placements.len())
            .filter(|&i| t.placements[i].0 != comp)
            .collect();
        t.placements = keep.iter().map(|&i| self.placements[i]).collect();
        t.sizes = keep.iter().map(|&i| self.sizes[i]).collect();
        let mut mask = Array2::<u8>::zeros(self.canvas);
        for (i, &(_, (top, left))) in t.placements.iter().enumerate() {
            let (h, w) = t.sizes[i];
            for y in top..top + h {
                for x in left..left + w {
                    mask[[y, x]] = 1;
                }
            }
        }
        t.mask = mask;
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.placements.len() != self.sizes.len() {
            return Err(Error::invalid("template: placements/sizes length mismatch"));
        }
        let mut union = Array2::<u8>::zeros(self.canvas);
        for (&(comp, (top, left)), &(h, w)) in self.placements.iter().zip(self.sizes.iter()) {
            if top + h > self.canvas.0 || left + w > self.canvas.1 {
                return Err(Error::invalid(format!(
                    "template: {} window exceeds canvas",
                    comp.name()
                )));
            }
            for y in top..top + h {
                for x in left..left + w {
                    union[[y, x]] = 1;
                }
            }
        }
        if union != self.mask {
            return Err(Error::invalid("template: mask is not the placement union"));
        }
        Ok(())
    }
}

/// Stitch per-component patches onto the template canvas with max-out
/// fusion. Patches are consumed in canonical component order regardless of
/// the order given, so overlap tie-breaking is placement-order independent.
pub fn stitch_components<F: Scalar>(
    g: &mut Graph<F>,
    patches: &[(ComponentId, Var)],
    template: &StitchTemplate,
) -> Result<Var> {
    template.validate()?;
    let mut ordered: Vec<(ComponentId, Var)> = patches.to_vec();
    ordered.sort_by_key(|(c, _)| *c);
    let mut vars = Vec::new();
    let mut places = Vec::new();
    for (comp, var) in &ordered {
        let Some(idx) = template.placements.iter().position(|(c, _)| c == comp) else {
            return Err(Error::invalid(format!(
                "stitch: component {} not in template",
                comp.name()
            )));
        };
        let (h, w) = template.sizes[idx];
        let shape = g.value(*var).shape().to_vec();
        if shape.len() != 3 || shape[1] != h || shape[2] != w {
            return Err(Error::invalid(format!(
                "stitch: {} patch is {:?}, window is {h}x{w}",
                comp.name(),
                shape
            )));
        }
        vars.push(*var);
        places.push(template.placements[idx].1);
    }
    if vars.len() != template.placements.len() {
        return Err(Error::invalid(
            "stitch: patches do not cover every template component",
        ));
    }
    Ok(g.stitch_max(&vars, &places, template.canvas))
}

/// Plain-array convenience wrapper around [`stitch_components`].
pub fn stitch_components_arrays<F: Scalar>(
    patches: &[(ComponentId, FaceImage<F>)],
    template: &StitchTemplate,
) -> Result<FaceImage<F>> {
    let mut g = Graph::<F>::new();
    let vars: Vec<(ComponentId, Var)> = patches
        .iter()
        .map(|(c, p)| (*c, g.constant(p.clone().into_dyn())))
        .collect();
    let out = stitch_components(&mut g, &vars, template)?;
    Ok(to_image3(g.value(out)))
}

pub(crate) fn to_image3<F: Scalar>(a: &ArrayD<F>) -> Array3<F> {
    a.view()
        .into_dimensionality::<ndarray::Ix3>()
        .expect("CxHxW value")
        .to_owned()
}

/// Plain forward-only affine sample (zero padding), matching the graph op.
pub fn sample_affine_array<F: Scalar>(
    img: &FaceImage<F>,
    theta: &AffineParams<F>,
    out_hw: (usize, usize),
) -> FaceImage<F> {
    let mut g = Graph::<F>::new();
    let x = g.constant(img.clone().into_dyn());
    let t = g.constant(theta.0.clone().into_dyn());
    let y = g.grid_sample_affine(x, t, out_hw);
    to_image3(g.value(y))
}

#[allow(unused)]
fn zeros_like<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(shape))
}
