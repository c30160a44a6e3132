use crate::graph::{BackwardOp, Graph, Var};
use crate::tensor::Tensor;

/// Per-position layer norm across the channel axis of `[B, C, ...]`.
struct ChannelNormOp {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    batch: usize,
    channels: usize,
    spatial: usize,
}

impl BackwardOp for ChannelNormOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (c, s) = (self.channels, self.spatial);
        let gamma = inputs[1].data();
        let mut dx = Tensor::zeros(inputs[0].shape());
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut mean_d = vec![0.0; s];
        let mut mean_dx = vec![0.0; s];
        for b in 0..self.batch {
            let off = b * c * s;
            let xhat = &self.xhat[off..off + c * s];
            let dy = &grad.data()[off..off + c * s];
            let rstd = &self.rstd[b * s..(b + 1) * s];
            mean_d.fill(0.0);
            mean_dx.fill(0.0);
            for ch in 0..c {
                let (xh, g) = (&xhat[ch * s..(ch + 1) * s], &dy[ch * s..(ch + 1) * s]);
                let gm = gamma[ch];
                for p in 0..s {
                    let d = g[p] * gm;
                    mean_d[p] += d;
                    mean_dx[p] += d * xh[p];
                    dgamma[ch] += g[p] * xh[p];
                    dbeta[ch] += g[p];
                }
            }
            let inv_c = 1.0 / c as f64;
            let out = &mut dx.data_mut()[off..off + c * s];
            for ch in 0..c {
                let (xh, g) = (&xhat[ch * s..(ch + 1) * s], &dy[ch * s..(ch + 1) * s]);
                let gm = gamma[ch];
                let o = &mut out[ch * s..(ch + 1) * s];
                for p in 0..s {
                    o[p] = rstd[p] * (g[p] * gm - mean_d[p] * inv_c - xh[p] * mean_dx[p] * inv_c);
                }
            }
        }
        vec![Some(dx), Some(Tensor::new(&[c], dgamma)), Some(Tensor::new(&[c], dbeta))]
    }
}

impl Graph {
    /// Normalise over the channel axis at every position, then apply a
    /// per-channel affine transform. Works for `[B, C]` and `[B, C, T, H, W]`.
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        assert!(xv.ndim() >= 2, "channel_norm: expected [B, C, ...]");
        let (batch, c) = (xv.shape()[0], xv.shape()[1]);
        let s: usize = xv.shape()[2..].iter().product();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        assert_eq!(gv.shape(), &[c], "channel_norm: gamma shape");
        assert_eq!(bv.shape(), &[c], "channel_norm: beta shape");

        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; batch * s];
        let mut out = Tensor::zeros(xv.shape());
        let mut mean = vec![0.0; s];
        let mut var = vec![0.0; s];
        let inv_c = 1.0 / c as f64;
        for b in 0..batch {
            let off = b * c * s;
            let xb = &xv.data()[off..off + c * s];
            mean.fill(0.0);
            var.fill(0.0);
            for plane in xb.chunks(s) {
                for (m, v) in mean.iter_mut().zip(plane) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            for plane in xb.chunks(s) {
                for ((acc, v), m) in var.iter_mut().zip(plane).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            let r = &mut rstd[b * s..(b + 1) * s];
            for (ri, v) in r.iter_mut().zip(&var) {
                *ri = 1.0 / (v * inv_c + eps).sqrt();
            }
            let yb = &mut out.data_mut()[off..off + c * s];
            for ch in 0..c {
                let (g, be) = (gv.data()[ch], bv.data()[ch]);
                for p in 0..s {
                    let xh = (xb[ch * s + p] - mean[p]) * r[p];
                    xhat[off + ch * s + p] = xh;
                    yb[ch * s + p] = xh * g + be;
                }
            }
        }
        let op = ChannelNormOp { xhat, rstd, batch, channels: c, spatial: s };
        self.push_op(out, vec![x, gamma, beta], Box::new(op))
    }
}
