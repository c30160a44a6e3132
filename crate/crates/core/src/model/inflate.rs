use cmc_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflateMode {
    /// 2D kernel at temporal index `T_k / 2`, zeros elsewhere.
    Center,
    /// `w2d / T_k` at every temporal index; preserves the response to
    /// temporally constant input.
    Repeat,
}

/// `[Cout, Cin, kh, kw] -> [Cout, Cin, T_k, kh, kw]`.
pub fn inflate_2d_weights(w2d: &Tensor, t_k: usize, mode: InflateMode) -> Result<Tensor> {
    if w2d.ndim() != 4 {
        return Err(Error::invalid(format!("2D kernel must be [Cout, Cin, kh, kw], got {:?}", w2d.shape())));
    }
    if t_k == 0 {
        return Err(Error::invalid("temporal kernel size must be at least 1"));
    }
    let s = w2d.shape();
    let (pairs, plane) = (s[0] * s[1], s[2] * s[3]);
    let mut out = Tensor::zeros(&[s[0], s[1], t_k, s[2], s[3]]);
    let src = w2d.data();
    let dst = out.data_mut();
    for pair in 0..pairs {
        let kernel = &src[pair * plane..(pair + 1) * plane];
        for t in 0..t_k {
            let o = (pair * t_k + t) * plane;
            match mode {
                InflateMode::Center if t == t_k / 2 => dst[o..o + plane].copy_from_slice(kernel),
                InflateMode::Center => {}
                InflateMode::Repeat => {
                    for (d, &v) in dst[o..o + plane].iter_mut().zip(kernel) {
                        *d = v / t_k as f64;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_modes_agree() {
        let w = Tensor::new(&[2, 1, 2, 2], (0..8).map(|v| v as f64 - 3.5).collect());
        let c = inflate_2d_weights(&w, 1, InflateMode::Center).unwrap();
        let r = inflate_2d_weights(&w, 1, InflateMode::Repeat).unwrap();
        assert_eq!(c, r);
        assert_eq!(c.data(), w.data());
        assert_eq!(c.shape(), &[2, 1, 1, 2, 2]);
    }

    #[test]
    fn center_places_kernel_in_middle() {
        let w = Tensor::new(&[1, 1, 1, 2], vec![1.5, -2.0]);
        let c = inflate_2d_weights(&w, 4, InflateMode::Center).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0, 0.0, 0.0, 1.5, -2.0, 0.0, 0.0]);
        assert!(inflate_2d_weights(&w, 0, InflateMode::Center).is_err());
    }
}
