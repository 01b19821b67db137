//! Max-out stitching of patches onto a zero canvas. Overlaps resolve to the
//! pixel-wise maximum; the gradient routes to the first patch (in the given
//! order) that attains the maximum. Callers pass patches in a canonical order
//! so tie-breaking does not depend on argument shuffling.

use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};

struct StitchMaxBack {
    patches: Vec<Var>,
    placements: Vec<(usize, usize)>,
    /// Winner patch index per canvas cell, canvas-shaped; -1 means uncovered.
    winners: Vec<i32>,
}

impl<F: Scalar> Backward<F> for StitchMaxBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let (c, ch, cw) = (g.shape()[0], g.shape()[1], g.shape()[2]);
        for (pi, (&patch, &(top, left))) in
            self.patches.iter().zip(self.placements.iter()).enumerate()
        {
            let ps = values[patch.0].shape();
            let (ph, pw) = (ps[1], ps[2]);
            let mut gp = ArrayD::<F>::zeros(IxDyn(&[c, ph, pw]));
            let mut any = false;
            for ci in 0..c {
                for py in 0..ph {
                    for px in 0..pw {
                        let (y, x) = (top + py, left + px);
                        let w = self.winners[(ci * ch + y) * cw + x];
                        if w == pi as i32 {
                            gp[[ci, py, px]] = g[[ci, y, x]];
                            any = true;
                        }
                    }
                }
            }
            if any {
                sink.add(patch, gp);
            }
        }
    }
}

impl<F: Scalar> Graph<F> {
    /// Write each patch into its (top, left) window of a zero canvas, taking
    /// the pixel-wise maximum where windows overlap.
    pub fn stitch_max(
        &mut self,
        patches: &[Var],
        placements: &[(usize, usize)],
        canvas_hw: (usize, usize),
    ) -> Var {
        assert_eq!(patches.len(), placements.len());
        assert!(!patches.is_empty(), "stitch_max needs at least one patch");
        let c = self.values[patches[0].0].shape()[0];
        let (ch, cw) = canvas_hw;
        let mut v = ArrayD::<F>::zeros(IxDyn(&[c, ch, cw]));
        let mut winners = vec![-1i32; c * ch * cw];
        for (pi, (&patch, &(top, left))) in patches.iter().zip(placements.iter()).enumerate() {
            let pv = &self.values[patch.0];
            assert_eq!(pv.ndim(), 3, "patches must be CxHxW");
            assert_eq!(pv.shape()[0], c, "patch channel mismatch");
            let (ph, pw) = (pv.shape()[1], pv.shape()[2]);
            assert!(
                top + ph <= ch && left + pw <= cw,
                "patch window exceeds canvas"
            );
            for ci in 0..c {
                for py in 0..ph {
                    for px in 0..pw {
                        let (y, x) = (top + py, left + px);
                        let val = pv[[ci, py, px]];
                        let slot = &mut winners[(ci * ch + y) * cw + x];
                        if *slot < 0 || val > v[[ci, y, x]] {
                            v[[ci, y, x]] = val;
                            *slot = pi as i32;
                        }
                    }
                }
            }
        }
        let needs = patches.iter().any(|&p| self.needs(p));
        self.push(
            v,
            Some(Box::new(StitchMaxBack {
                patches: patches.to_vec(),
                placements: placements.to_vec(),
                winners,
            })),
            needs,
        )
    }
}
