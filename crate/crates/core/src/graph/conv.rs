//! 2-D convolution and transposed convolution via im2col + matmul.
//!
//! Kernel orientation follows the usual convention: conv weights are
//! (c_out, c_in, kh, kw); transposed-conv weights are (c_in, c_out, kh, kw).
//! The transposed convolution is implemented exactly as the data-gradient of
//! the corresponding convolution, so the three raw kernels below serve both
//! directions.

use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{Array2, Array3, ArrayD, ArrayView2, ArrayView3, Ix3, Ix4, IxDyn};

pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn im2col<F: Scalar>(
    x: ArrayView3<'_, F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<F> {
    let (ci, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let n = ho * wo;
    let mut cols = Array2::<F>::zeros((ci * kh * kw, n));
    let cs = cols.as_slice_mut().expect("standard layout");
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (c * kh + ki) * kw + kj;
                let row = &mut cs[r * n..(r + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xs[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    let orow = &mut row[oy * wo..(oy + 1) * wo];
                    for (ox, cell) in orow.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *cell = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(
    cols: ArrayView2<'_, F>,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array3<F> {
    let n = ho * wo;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = Array3::<F>::zeros((ci, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (c * kh + ki) * kw + kj;
                let row = &cs[r * n..(r + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut xs[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    let orow = &row[oy * wo..(oy + 1) * wo];
                    for (ox, &cell) in orow.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xrow[ix as usize] += cell;
                        }
                    }
                }
            }
        }
    }
    x
}

/// y = w * x, weights (co, ci, kh, kw).
pub(crate) fn conv_fw<F: Scalar>(
    x: ArrayView3<'_, F>,
    w: &ArrayD<F>,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let wd = w.view().into_dimensionality::<Ix4>().expect("conv weight");
    let (co, ci, kh, kw) = wd.dim();
    let (xci, h, wth) = x.dim();
    assert_eq!(ci, xci, "conv_fw channel mismatch");
    let ho = conv_out_dim(h, kh, stride, pad);
    let wo = conv_out_dim(wth, kw, stride, pad);
    let cols = im2col(x, kh, kw, stride, pad, ho, wo);
    let wmat = wd
        .to_shape((co, ci * kh * kw))
        .expect("contiguous weight")
        .to_owned();
    let y = wmat.dot(&cols);
    y.as_standard_layout()
        .into_owned()
        .into_shape_with_order((co, ho, wo))
        .expect("conv output")
}

/// Gradient of conv_fw wrt its input (also the forward of a transposed conv).
pub(crate) fn conv_bw_data<F: Scalar>(
    gy: ArrayView3<'_, F>,
    w: &ArrayD<F>,
    in_hw: (usize, usize),
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let wd = w.view().into_dimensionality::<Ix4>().expect("conv weight");
    let (co, ci, kh, kw) = wd.dim();
    let (gco, ho, wo) = gy.dim();
    assert_eq!(co, gco, "conv_bw_data channel mismatch");
    let gmat = gy
        .as_standard_layout()
        .to_shape((co, ho * wo))
        .expect("gy mat")
        .to_owned();
    let wmat = wd
        .to_shape((co, ci * kh * kw))
        .expect("contiguous weight")
        .to_owned();
    let cols = wmat.t().dot(&gmat);
    col2im(
        cols.view(),
        ci,
        in_hw.0,
        in_hw.1,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    )
}

/// Gradient of conv_fw wrt its weights.
pub(crate) fn conv_bw_weight<F: Scalar>(
    x: ArrayView3<'_, F>,
    gy: ArrayView3<'_, F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ArrayD<F> {
    let (ci, _, _) = x.dim();
    let (co, ho, wo) = gy.dim();
    let cols = im2col(x, kh, kw, stride, pad, ho, wo);
    let gmat = gy
        .as_standard_layout()
        .to_shape((co, ho * wo))
        .expect("gy mat")
        .to_owned();
    let gw = gmat.dot(&cols.t());
    gw.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(&[co, ci, kh, kw]))
        .expect("gw shape")
}

fn as3<F: Scalar>(a: &ArrayD<F>) -> ArrayView3<'_, F> {
    a.view().into_dimensionality::<Ix3>().expect("CxHxW node")
}

struct Conv2dBack {
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
}

impl<F: Scalar> Backward<F> for Conv2dBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let x = as3(&values[self.x.0]);
        let w = &values[self.w.0];
        let gy = as3(g);
        let (kh, kw) = (w.shape()[2], w.shape()[3]);
        let gx = conv_bw_data(gy, w, (x.dim().1, x.dim().2), self.stride, self.pad);
        sink.add(self.x, gx.into_dyn());
        let gw = conv_bw_weight(x, gy, kh, kw, self.stride, self.pad);
        sink.add(self.w, gw);
    }
}

struct ConvT2dBack {
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
}

impl<F: Scalar> Backward<F> for ConvT2dBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let x = as3(&values[self.x.0]);
        let w = &values[self.w.0];
        let gy = as3(g);
        let (kh, kw) = (w.shape()[2], w.shape()[3]);
        // Forward was conv_bw_data, so the roles swap back here.
        let gx = conv_fw(gy, w, self.stride, self.pad);
        sink.add(self.x, gx.into_dyn());
        let gw = conv_bw_weight(gy, x, kh, kw, self.stride, self.pad);
        sink.add(self.w, gw);
    }
}

struct BiasAddChwBack {
    x: Var,
    b: Var,
}

impl<F: Scalar> Backward<F> for BiasAddChwBack {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.x, g.clone());
        let c = g.shape()[0];
        let mut gb = ArrayD::zeros(IxDyn(&[c]));
        for ci in 0..c {
            gb[[ci]] = g.slice(ndarray::s![ci, .., ..]).sum();
        }
        sink.add(self.b, gb);
    }
}

impl<F: Scalar> Graph<F> {
    /// 2-D convolution, weights (co, ci, kh, kw), zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let v = conv_fw(as3(&self.values[x.0]), &self.values[w.0], stride, pad);
        let needs = self.needs(x) || self.needs(w);
        self.push(
            v.into_dyn(),
            Some(Box::new(Conv2dBack { x, w, stride, pad })),
            needs,
        )
    }

    /// Transposed 2-D convolution, weights (ci, co, kh, kw).
    /// Output spatial size: (h-1)*stride - 2*pad + k.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xv = as3(&self.values[x.0]);
        let w_arr = &self.values[w.0];
        let (ci, h, wth) = xv.dim();
        assert_eq!(w_arr.shape()[0], ci, "conv_transpose2d channel mismatch");
        let (kh, kw) = (w_arr.shape()[2], w_arr.shape()[3]);
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (wth - 1) * stride + kw - 2 * pad;
        // Consistency: the matching conv must map (ho, wo) back to (h, wth).
        assert_eq!(conv_out_dim(ho, kh, stride, pad), h);
        assert_eq!(conv_out_dim(wo, kw, stride, pad), wth);
        let v = conv_bw_data(xv, w_arr, (ho, wo), stride, pad);
        let needs = self.needs(x) || self.needs(w);
        self.push(
            v.into_dyn(),
            Some(Box::new(ConvT2dBack { x, w, stride, pad })),
            needs,
        )
    }

    /// Per-channel bias over a CxHxW map.
    pub fn bias_add_chw(&mut self, x: Var, b: Var) -> Var {
        let xv = &self.values[x.0];
        let bv = &self.values[b.0];
        assert_eq!(xv.ndim(), 3);
        assert_eq!(bv.len(), xv.shape()[0], "bias length");
        let mut v = xv.clone();
        for (ci, mut plane) in v.outer_iter_mut().enumerate() {
            let bc = bv[[ci]];
            plane.mapv_inplace(|e| e + bc);
        }
        let needs = self.needs(x) || self.needs(b);
        self.push(v, Some(Box::new(BiasAddChwBack { x, b })), needs)
    }
}
