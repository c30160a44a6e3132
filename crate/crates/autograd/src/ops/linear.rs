use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::graph::{BackwardOp, Graph, Var};
use crate::tensor::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a_view = if trans_a {
        ArrayView2::from_shape((k, m), a).expect("gemm: a shape").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm: a shape")
    };
    let b_view = if trans_b {
        ArrayView2::from_shape((n, k), b).expect("gemm: b shape").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm: b shape")
    };
    let mut c_view = ArrayViewMut2::from_shape((m, n), c).expect("gemm: c shape");
    general_mat_mul(alpha, &a_view, &b_view, beta, &mut c_view);
}

struct LinearOp {
    has_bias: bool,
}

impl BackwardOp for LinearOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
        let fan_out = w.shape()[0];
        let mut dx = Tensor::zeros(x.shape());
        gemm(batch, fan_out, fan_in, 1.0, grad.data(), false, w.data(), false, 0.0, dx.data_mut());
        let mut dw = Tensor::zeros(w.shape());
        gemm(fan_out, batch, fan_in, 1.0, grad.data(), true, x.data(), false, 0.0, dw.data_mut());
        let mut out = vec![Some(dx), Some(dw)];
        if self.has_bias {
            let mut db = vec![0.0; fan_out];
            for r in 0..batch {
                for (acc, g) in db.iter_mut().zip(grad.row(r)) {
                    *acc += g;
                }
            }
            out.push(Some(Tensor::new(&[fan_out], db)));
        }
        out
    }
}

struct GlobalAvgPoolOp;

impl BackwardOp for GlobalAvgPoolOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let spatial: usize = x.shape()[2..].iter().product();
        let inv = 1.0 / spatial as f64;
        let mut dx = Tensor::zeros(x.shape());
        for (plane, &g) in dx.data_mut().chunks_mut(spatial).zip(grad.data()) {
            plane.fill(g * inv);
        }
        vec![Some(dx)]
    }
}

struct L2NormalizeOp {
    eps: f64,
}

impl BackwardOp for L2NormalizeOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let mut dx = Tensor::zeros(x.shape());
        for r in 0..x.shape()[0] {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let (y, g) = (output.row(r), grad.row(r));
            let out = dx.row_mut(r);
            if norm > self.eps {
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(g) {
                    *o = (gi - yi * dot) / norm;
                }
            } else {
                for (o, &gi) in out.iter_mut().zip(g) {
                    *o = gi / self.eps;
                }
            }
        }
        vec![Some(dx)]
    }
}

impl Graph {
    /// `y = x w^T + b` for `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.ndim(), 2, "linear: input must be [B, in]");
        assert_eq!(wv.ndim(), 2, "linear: weight must be [out, in]");
        let (batch, fan_in) = (xv.shape()[0], xv.shape()[1]);
        let fan_out = wv.shape()[0];
        assert_eq!(wv.shape()[1], fan_in, "linear: fan-in mismatch");
        let mut out = Tensor::zeros(&[batch, fan_out]);
        gemm(batch, fan_in, fan_out, 1.0, xv.data(), false, wv.data(), true, 0.0, out.data_mut());
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), &[fan_out], "linear: bias shape");
            for r in 0..batch {
                for (o, bias) in out.row_mut(r).iter_mut().zip(bv.data()) {
                    *o += bias;
                }
            }
            inputs.push(b);
        }
        self.push_op(out, inputs, Box::new(LinearOp { has_bias: b.is_some() }))
    }

    /// Mean over every axis after the channel axis: `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(xv.ndim() >= 3, "global_avg_pool: expected [B, C, ...]");
        let (batch, channels) = (xv.shape()[0], xv.shape()[1]);
        let spatial: usize = xv.shape()[2..].iter().product();
        let data = xv
            .data()
            .chunks(spatial)
            .map(|plane| plane.iter().sum::<f64>() / spatial as f64)
            .collect();
        let out = Tensor::new(&[batch, channels], data);
        self.push_op(out, vec![x], Box::new(GlobalAvgPoolOp))
    }

    /// Row-wise `x / max(||x||, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 2, "l2_normalize_rows: expected [B, D]");
        let mut out = xv.clone();
        for r in 0..xv.shape()[0] {
            let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
        }
        self.push_op(out, vec![x], Box::new(L2NormalizeOp { eps }))
    }
}
