use crate::graph::{BackwardOp, Graph, Var};
use crate::ops::linear::gemm;
use crate::tensor::Tensor;

/// Row-softmax of `scale * q^T k` for channel-major `q, k: [d, N]`.
///
/// Row `i` holds the weights token `i` assigns to every token.
pub fn attention_weights(q: &[f64], k: &[f64], dim: usize, tokens: usize, scale: f64) -> Vec<f64> {
    let mut scores = vec![0.0; tokens * tokens];
    gemm(tokens, dim, tokens, scale, q, true, k, false, 0.0, &mut scores);
    for row in scores.chunks_mut(tokens) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    scores
}

struct AttentionOp {
    heads: usize,
    /// Softmax weights per (batch, head), each `[N, N]`.
    weights: Vec<Vec<f64>>,
}

impl BackwardOp for AttentionOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let qkv = inputs[0];
        let (batch, c3, n) = (qkv.shape()[0], qkv.shape()[1], qkv.shape()[2]);
        let c = c3 / 3;
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dqkv = Tensor::zeros(qkv.shape());
        let mut da = vec![0.0; n * n];
        for b in 0..batch {
            let src = &qkv.data()[b * c3 * n..(b + 1) * c3 * n];
            let g = &grad.data()[b * c * n..(b + 1) * c * n];
            let dst = &mut dqkv.data_mut()[b * c3 * n..(b + 1) * c3 * n];
            for h in 0..self.heads {
                let a = &self.weights[b * self.heads + h];
                let (qo, ko, vo) = (h * dh * n, (c + h * dh) * n, (2 * c + h * dh) * n);
                let q = &src[qo..qo + dh * n];
                let k = &src[ko..ko + dh * n];
                let v = &src[vo..vo + dh * n];
                let dout = &g[h * dh * n..(h + 1) * dh * n];

                // out = v a^T  =>  dv = dout a,  da = dout^T v
                gemm(dh, n, n, 1.0, dout, false, a, false, 0.0, &mut dst[vo..vo + dh * n]);
                gemm(n, dh, n, 1.0, dout, true, v, false, 0.0, &mut da);
                // softmax backward, in place: ds = a * (da - <da, a>_row)
                for (da_row, a_row) in da.chunks_mut(n).zip(a.chunks(n)) {
                    let dot: f64 = da_row.iter().zip(a_row).map(|(x, y)| x * y).sum();
                    for (x, y) in da_row.iter_mut().zip(a_row) {
                        *x = y * (*x - dot);
                    }
                }
                // s = scale q^T k  =>  dq = scale k ds^T,  dk = scale q ds
                gemm(dh, n, n, scale, k, false, &da, true, 0.0, &mut dst[qo..qo + dh * n]);
                gemm(dh, n, n, scale, q, false, &da, false, 0.0, &mut dst[ko..ko + dh * n]);
            }
        }
        vec![Some(dqkv)]
    }
}

impl Graph {
    /// Multi-head scaled dot-product self-attention over a packed
    /// `[B, 3C, N]` query/key/value tensor. Returns `[B, C, N]`.
    pub fn multi_head_attention(&mut self, qkv: Var, heads: usize) -> Var {
        let xv = self.value(qkv);
        assert_eq!(xv.ndim(), 3, "attention: expected [B, 3C, N]");
        let (batch, c3, n) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert_eq!(c3 % 3, 0, "attention: channel axis must pack q, k and v");
        let c = c3 / 3;
        assert!(heads >= 1 && c % heads == 0, "attention: heads must divide channels");
        let dh = c / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(&[batch, c, n]);
        let mut weights = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let src = &xv.data()[b * c3 * n..(b + 1) * c3 * n];
            let dst = &mut out.data_mut()[b * c * n..(b + 1) * c * n];
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh * n, (c + h * dh) * n, (2 * c + h * dh) * n);
                let a = attention_weights(&src[qo..qo + dh * n], &src[ko..ko + dh * n], dh, n, scale);
                gemm(dh, n, n, 1.0, &src[vo..vo + dh * n], false, &a, true, 0.0, &mut dst[h * dh * n..(h + 1) * dh * n]);
                weights.push(a);
            }
        }
        self.push_op(out, vec![qkv], Box::new(AttentionOp { heads, weights }))
    }
}
