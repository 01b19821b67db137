//! Differentiable affine grid sampling (bilinear, zero padding outside,
//! align-corners semantics: normalized -1/+1 map to the first/last pixel
//! centers).
//!
//! Sample positions that land within a few ulps of an exact pixel center are
//! snapped onto it, so structurally exact transforms (identity, pure flips)
//! reproduce pixels bit-for-bit instead of leaking one-ulp bilinear blends.

use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, Ix2, Ix3, IxDyn};

/// Snap tolerance used by the sampler, in source-pixel units.
pub fn grid_snap_eps<F: Scalar>(h: usize, w: usize) -> F {
    F::epsilon() * F::from_f64(16.0 * h.max(w) as f64)
}

/// Normalized coordinate of pixel center `idx` on an axis of length `n`.
/// Built from an integer numerator so that mirrored indices negate exactly.
pub(crate) fn normalized_coord<F: Scalar>(idx: usize, n: usize) -> F {
    if n <= 1 {
        return F::zero();
    }
    let num = F::from_f64((2 * idx) as f64 - (n - 1) as f64);
    num / F::from_f64((n - 1) as f64)
}

struct GridSampleBack {
    x: Var,
    theta: Var,
    out_hw: (usize, usize),
}

struct SamplePoint<F> {
    px: F,
    py: F,
    xo: F,
    yo: F,
}

fn sample_points<F: Scalar>(
    theta: &ArrayD<F>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
) -> Vec<SamplePoint<F>> {
    let t = theta.view().into_dimensionality::<Ix2>().expect("2x3 theta");
    let (hi, wi) = in_hw;
    let (ho, wo) = out_hw;
    let half = F::from_f64(0.5);
    let sx = F::from_f64((wi - 1) as f64) * half;
    let sy = F::from_f64((hi - 1) as f64) * half;
    let eps = grid_snap_eps::<F>(hi, wi);
    let mut pts = Vec::with_capacity(ho * wo);
    for i in 0..ho {
        let yo = normalized_coord::<F>(i, ho);
        for j in 0..wo {
            let xo = normalized_coord::<F>(j, wo);
            let xs = t[[0, 0]] * xo + t[[0, 1]] * yo + t[[0, 2]];
            let ys = t[[1, 0]] * xo + t[[1, 1]] * yo + t[[1, 2]];
            let mut px = (xs + F::one()) * sx;
            let mut py = (ys + F::one()) * sy;
            let rx = px.round();
            if (px - rx).abs() < eps {
                px = rx;
            }
            let ry = py.round();
            if (py - ry).abs() < eps {
                py = ry;
            }
            pts.push(SamplePoint { px, py, xo, yo });
        }
    }
    pts
}

#[inline]
fn read_or_zero<F: Scalar>(x: &ArrayD<F>, c: usize, y: isize, xcol: isize) -> F {
    let (h, w) = (x.shape()[1] as isize, x.shape()[2] as isize);
    if y < 0 || y >= h || xcol < 0 || xcol >= w {
        F::zero()
    } else {
        x[[c, y as usize, xcol as usize]]
    }
}

impl<F: Scalar> Backward<F> for GridSampleBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let x = &values[self.x.0];
        let theta = &values[self.theta.0];
        let (c, hi, wi) = {
            let s = x.shape();
            (s[0], s[1], s[2])
        };
        let (ho, wo) = self.out_hw;
        let pts = sample_points(theta, (hi, wi), (ho, wo));
        let half = F::from_f64(0.5);
        let sx = F::from_f64((wi - 1) as f64) * half;
        let sy = F::from_f64((hi - 1) as f64) * half;

        let mut gx = ArrayD::<F>::zeros(IxDyn(&[c, hi, wi]));
        let mut gt = ArrayD::<F>::zeros(IxDyn(&[2, 3]));
        for i in 0..ho {
            for j in 0..wo {
                let p = &pts[i * wo + j];
                let x0 = p.px.floor();
                let y0 = p.py.floor();
                let fx = p.px - x0;
                let fy = p.py - y0;
                let (x0i, y0i) = (x0.to_f64() as isize, y0.to_f64() as isize);
                let one = F::one();
                let mut gpx = F::zero();
                let mut gpy = F::zero();
                for ci in 0..c {
                    let gv = g[[ci, i, j]];
                    if gv == F::zero() {
                        continue;
                    }
                    let v00 = read_or_zero(x, ci, y0i, x0i);
                    let v01 = read_or_zero(x, ci, y0i, x0i + 1);
                    let v10 = read_or_zero(x, ci, y0i + 1, x0i);
                    let v11 = read_or_zero(x, ci, y0i + 1, x0i + 1);
                    // Scatter into input gradient.
                    let w00 = (one - fy) * (one - fx);
                    let w01 = (one - fy) * fx;
                    let w10 = fy * (one - fx);
                    let w11 = fy * fx;
                    accumulate(&mut gx, ci, y0i, x0i, gv * w00);
                    accumulate(&mut gx, ci, y0i, x0i + 1, gv * w01);
                    accumulate(&mut gx, ci, y0i + 1, x0i, gv * w10);
                    accumulate(&mut gx, ci, y0i + 1, x0i + 1, gv * w11);
                    // Position derivatives of the bilinear read.
                    gpx += gv * ((one - fy) * (v01 - v00) + fy * (v11 - v10));
                    gpy += gv * ((one - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                let gxs = gpx * sx;
                let gys = gpy * sy;
                gt[[0, 0]] += gxs * p.xo;
                gt[[0, 1]] += gxs * p.yo;
                gt[[0, 2]] += gxs;
                gt[[1, 0]] += gys * p.xo;
                gt[[1, 1]] += gys * p.yo;
                gt[[1, 2]] += gys;
            }
        }
        sink.add(self.x, gx);
        sink.add(self.theta, gt);
    }
}

#[inline]
fn accumulate<F: Scalar>(gx: &mut ArrayD<F>, c: usize, y: isize, x: isize, v: F) {
    let (h, w) = (gx.shape()[1] as isize, gx.shape()[2] as isize);
    if y >= 0 && y < h && x >= 0 && x < w {
        gx[[c, y as usize, x as usize]] += v;
    }
}

impl<F: Scalar> Graph<F> {
    /// Bilinear sampling of `x` (CxHxW) at positions given by the affine map
    /// `theta` (2x3, normalized output coords -> normalized input coords).
    pub fn grid_sample_affine(&mut self, x: Var, theta: Var, out_hw: (usize, usize)) -> Var {
        let xv = self.values[x.0]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("CxHxW input");
        let tv = &self.values[theta.0];
        assert_eq!(tv.shape(), &[2, 3], "theta must be 2x3");
        let (c, hi, wi) = xv.dim();
        let (ho, wo) = out_hw;
        let pts = sample_points(tv, (hi, wi), (ho, wo));
        let mut v = ArrayD::<F>::zeros(IxDyn(&[c, ho, wo]));
        let xd = &self.values[x.0];
        let one = F::one();
        for i in 0..ho {
            for j in 0..wo {
                let p = &pts[i * wo + j];
                let x0 = p.px.floor();
                let y0 = p.py.floor();
                let fx = p.px - x0;
                let fy = p.py - y0;
                let (x0i, y0i) = (x0.to_f64() as isize, y0.to_f64() as isize);
                for ci in 0..c {
                    let v00 = read_or_zero(xd, ci, y0i, x0i);
                    let v01 = read_or_zero(xd, ci, y0i, x0i + 1);
                    let v10 = read_or_zero(xd, ci, y0i + 1, x0i);
                    let v11 = read_or_zero(xd, ci, y0i + 1, x0i + 1);
                    v[[ci, i, j]] = (one - fy) * ((one - fx) * v00 + fx * v01)
                        + fy * ((one - fx) * v10 + fx * v11);
                }
            }
        }
        let needs = self.needs(x) || self.needs(theta);
        self.push(
            v,
            Some(Box::new(GridSampleBack { x, theta, out_hw })),
            needs,
        )
    }
}
