use super::{Backward, GradSink, Graph, Var};
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, Slice, Zip};

struct AddBack {
    a: Var,
    b: Var,
}

impl<F: Scalar> Backward<F> for AddBack {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, g.clone());
        sink.add(self.b, g.clone());
    }
}

struct SubBack {
    a: Var,
    b: Var,
}

impl<F: Scalar> Backward<F> for SubBack {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, g.clone());
        sink.add(self.b, g.mapv(|v| -v));
    }
}

struct MulBack {
    a: Var,
    b: Var,
}

impl<F: Scalar> Backward<F> for MulBack {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, g * &values[self.b.0]);
        sink.add(self.b, g * &values[self.a.0]);
    }
}

struct ScaleBack<F> {
    a: Var,
    c: F,
}

impl<F: Scalar> Backward<F> for ScaleBack<F> {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, g.mapv(|v| v * self.c));
    }
}

struct ShiftBack {
    a: Var,
}

impl<F: Scalar> Backward<F> for ShiftBack {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, g.clone());
    }
}

/// Local gradient computed from the *input* value: grad = g * df(x, param).
struct UnaryXBack<F> {
    a: Var,
    param: F,
    df: fn(F, F) -> F,
}

impl<F: Scalar> Backward<F> for UnaryXBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let x = &values[self.a.0];
        let grad = Zip::from(g)
            .and(x)
            .map_collect(|&gv, &xv| gv * (self.df)(xv, self.param));
        sink.add(self.a, grad);
    }
}

/// Local gradient computed from the *output* value: grad = g * df(y).
struct UnaryYBack<F> {
    a: Var,
    out: Var,
    df: fn(F) -> F,
}

impl<F: Scalar> Backward<F> for UnaryYBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let y = &values[self.out.0];
        let grad = Zip::from(g).and(y).map_collect(|&gv, &yv| gv * (self.df)(yv));
        sink.add(self.a, grad);
    }
}

struct ClampBack<F> {
    a: Var,
    lo: F,
    hi: F,
}

impl<F: Scalar> Backward<F> for ClampBack<F> {
    fn backward(&self, values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        let x = &values[self.a.0];
        let grad = Zip::from(g).and(x).map_collect(|&gv, &xv| {
            if xv > self.lo && xv < self.hi {
                gv
            } else {
                F::zero()
            }
        });
        sink.add(self.a, grad);
    }
}

struct HflipBack {
    a: Var,
}

impl<F: Scalar> Backward<F> for HflipBack {
    fn backward(&self, _values: &[ArrayD<F>], g: &ArrayD<F>, sink: &mut GradSink<'_, F>) {
        sink.add(self.a, flip_last_axis(g));
    }
}

pub(crate) fn flip_last_axis<F: Scalar>(a: &ArrayD<F>) -> ArrayD<F> {
    let last = Axis(a.ndim() - 1);
    a.slice_axis(last, Slice::new(0, None, -1))
        .as_standard_layout()
        .into_owned()
}

impl<F: Scalar> Graph<F> {
    fn assert_same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{op}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let v = &self.values[a.0] + &self.values[b.0];
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Some(Box::new(AddBack { a, b })), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let v = &self.values[a.0] - &self.values[b.0];
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Some(Box::new(SubBack { a, b })), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let v = &self.values[a.0] * &self.values[b.0];
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Some(Box::new(MulBack { a, b })), needs)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.values[a.0].mapv(|x| x * c);
        let needs = self.needs(a);
        self.push(v, Some(Box::new(ScaleBack { a, c })), needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let v = self.values[a.0].mapv(|x| x + c);
        let needs = self.needs(a);
        self.push(v, Some(Box::new(ShiftBack { a })), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|x| if x > F::zero() { x } else { F::zero() });
        let needs = self.needs(a);
        self.push(
            v,
            Some(Box::new(UnaryXBack {
                a,
                param: F::zero(),
                df: |x, _| if x > F::zero() { F::one() } else { F::zero() },
            })),
            needs,
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let v = self.values[a.0].mapv(|x| if x > F::zero() { x } else { x * slope });
        let needs = self.needs(a);
        self.push(
            v,
            Some(Box::new(UnaryXBack {
                a,
                param: slope,
                df: |x, s| if x > F::zero() { F::one() } else { s },
            })),
            needs,
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|x| F::one() / (F::one() + (-x).exp()));
        let needs = self.needs(a);
        let out = Var(self.values.len());
        self.push(
            v,
            Some(Box::new(UnaryYBack {
                a,
                out,
                df: |y| y * (F::one() - y),
            })),
            needs,
        )
    }

    /// Natural log; caller guarantees positive inputs (clamp upstream).
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|x| x.ln());
        let needs = self.needs(a);
        self.push(
            v,
            Some(Box::new(UnaryXBack {
                a,
                param: F::zero(),
                df: |x, _| F::one() / x,
            })),
            needs,
        )
    }

    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        let v = self.values[a.0].mapv(|x| x.max(lo).min(hi));
        let needs = self.needs(a);
        self.push(v, Some(Box::new(ClampBack { a, lo, hi })), needs)
    }

    /// Reverse the last (width) axis.
    pub fn hflip(&mut self, a: Var) -> Var {
        let v = flip_last_axis(&self.values[a.0]);
        let needs = self.needs(a);
        self.push(v, Some(Box::new(HflipBack { a })), needs)
    }
}
