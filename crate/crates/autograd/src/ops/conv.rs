use crate::graph::{BackwardOp, Graph, Var};
use crate::ops::linear::gemm;
use crate::tensor::Tensor;

/// Geometry of a 3D convolution over `[B, C, T, H, W]` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Default for Conv3dSpec {
    fn default() -> Self {
        Self { stride: [1; 3], padding: [0; 3], groups: 1 }
    }
}

impl Conv3dSpec {
    pub fn same(kernel: [usize; 3]) -> Self {
        Self { stride: [1; 3], padding: kernel.map(|k| k / 2), groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    /// Output extent along each spatial axis, or `None` when the kernel does
    /// not fit the padded input.
    pub fn output_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for d in 0..3 {
            let padded = input[d] + 2 * self.padding[d];
            if padded < kernel[d] || self.stride[d] == 0 {
                return None;
            }
            out[d] = (padded - kernel[d]) / self.stride[d] + 1;
        }
        Some(out)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    spec: Conv3dSpec,
}

impl Geometry {
    fn in_group(&self) -> usize {
        self.in_channels / self.spec.groups
    }

    fn out_group(&self) -> usize {
        self.out_channels / self.spec.groups
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.spec.stride == [1; 3] && self.spec.padding == [0; 3]
    }

    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.in_channels
            && self.in_channels == self.out_channels
            && self.spec.stride == [1; 3]
    }
}

/// Source index along one axis for output position `o` and kernel tap `k`.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k) as isize - pad as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

/// Unfold the channels of one group into `[C_g * taps, L]` columns.
fn im2col(x: &[f64], geo: &Geometry, cols: &mut [f64]) {
    let [it, ih, iw] = geo.input;
    let [kt, kh, kw] = geo.kernel;
    let [ot, oh, ow] = geo.output;
    let [st, sh, sw] = geo.spec.stride;
    let [pt, ph, pw] = geo.spec.padding;
    let l = ot * oh * ow;
    for ci in 0..geo.in_group() {
        let plane = &x[ci * it * ih * iw..(ci + 1) * it * ih * iw];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let row = ((ci * kt + a) * kh + b) * kw + c;
                    let dst = &mut cols[row * l..(row + 1) * l];
                    for to in 0..ot {
                        let Some(ti) = source(to, a, st, pt, it) else {
                            dst[to * oh * ow..(to + 1) * oh * ow].fill(0.0);
                            continue;
                        };
                        for ho in 0..oh {
                            let base = (to * oh + ho) * ow;
                            let Some(hi) = source(ho, b, sh, ph, ih) else {
                                dst[base..base + ow].fill(0.0);
                                continue;
                            };
                            let src = &plane[(ti * ih + hi) * iw..(ti * ih + hi + 1) * iw];
                            for wo in 0..ow {
                                dst[base + wo] = match source(wo, c, sw, pw, iw) {
                                    Some(wi) => src[wi],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
fn col2im(cols: &[f64], geo: &Geometry, dx: &mut [f64]) {
    let [it, ih, iw] = geo.input;
    let [kt, kh, kw] = geo.kernel;
    let [ot, oh, ow] = geo.output;
    let [st, sh, sw] = geo.spec.stride;
    let [pt, ph, pw] = geo.spec.padding;
    let l = ot * oh * ow;
    for ci in 0..geo.in_group() {
        let plane = &mut dx[ci * it * ih * iw..(ci + 1) * it * ih * iw];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let row = ((ci * kt + a) * kh + b) * kw + c;
                    let src = &cols[row * l..(row + 1) * l];
                    for to in 0..ot {
                        let Some(ti) = source(to, a, st, pt, it) else { continue };
                        for ho in 0..oh {
                            let Some(hi) = source(ho, b, sh, ph, ih) else { continue };
                            let base = (to * oh + ho) * ow;
                            let dst = &mut plane[(ti * ih + hi) * iw..(ti * ih + hi + 1) * iw];
                            for wo in 0..ow {
                                if let Some(wi) = source(wo, c, sw, pw, iw) {
                                    dst[wi] += src[base + wo];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for a stride-1 tap offset.
#[inline]
fn valid_range(tap: usize, pad: usize, extent_in: usize, extent_out: usize) -> (usize, usize) {
    // source = o + tap - pad must lie in [0, extent_in)
    let lo = pad.saturating_sub(tap);
    let hi = (extent_in + pad).saturating_sub(tap).min(extent_out);
    (lo, hi.max(lo))
}

/// Enumerate contiguous runs of a stride-1 depthwise kernel as
/// `visit(tap, out_offset, in_offset, run_length)` within one channel plane.
fn depthwise_taps(geo: &Geometry, mut visit: impl FnMut(usize, usize, usize, usize)) {
    let [it, ih, iw] = geo.input;
    let [kt, kh, kw] = geo.kernel;
    let [ot, oh, ow] = geo.output;
    let [pt, ph, pw] = geo.spec.padding;
    for a in 0..kt {
        let (t0, t1) = valid_range(a, pt, it, ot);
        for b in 0..kh {
            let (h0, h1) = valid_range(b, ph, ih, oh);
            for c in 0..kw {
                let (w0, w1) = valid_range(c, pw, iw, ow);
                if w0 >= w1 {
                    continue;
                }
                let tap = (a * kh + b) * kw + c;
                for to in t0..t1 {
                    let ti = to + a - pt;
                    for ho in h0..h1 {
                        let hi = ho + b - ph;
                        let out_row = (to * oh + ho) * ow;
                        let in_row = (ti * ih + hi) * iw;
                        visit(tap, out_row + w0, in_row + w0 + c - pw, w1 - w0);
                    }
                }
            }
        }
    }
}

fn depthwise_forward(x: &[f64], w: &[f64], geo: &Geometry, out: &mut [f64]) {
    let (iv, ov, taps) = (geo.in_volume(), geo.out_volume(), geo.taps());
    for ch in 0..geo.in_channels {
        let xp = &x[ch * iv..(ch + 1) * iv];
        let op = &mut out[ch * ov..(ch + 1) * ov];
        let wk = &w[ch * taps..(ch + 1) * taps];
        depthwise_taps(geo, |tap, o, i, n| {
            let wv = wk[tap];
            for (dst, src) in op[o..o + n].iter_mut().zip(&xp[i..i + n]) {
                *dst += wv * src;
            }
        });
    }
}

fn depthwise_backward(x: &[f64], w: &[f64], dy: &[f64], geo: &Geometry, dx: &mut [f64], dw: &mut [f64]) {
    let (iv, ov, taps) = (geo.in_volume(), geo.out_volume(), geo.taps());
    for ch in 0..geo.in_channels {
        let xp = &x[ch * iv..(ch + 1) * iv];
        let gp = &dy[ch * ov..(ch + 1) * ov];
        let dxp = &mut dx[ch * iv..(ch + 1) * iv];
        let wk = &w[ch * taps..(ch + 1) * taps];
        let dwk = &mut dw[ch * taps..(ch + 1) * taps];
        depthwise_taps(geo, |tap, o, i, n| {
            let wv = wk[tap];
            let mut acc = 0.0;
            for ((g, src), dst) in gp[o..o + n].iter().zip(&xp[i..i + n]).zip(&mut dxp[i..i + n]) {
                acc += g * src;
                *dst += wv * g;
            }
            dwk[tap] += acc;
        });
    }
}

struct Conv3dOp {
    geo: Geometry,
    has_bias: bool,
}

impl BackwardOp for Conv3dOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let geo = &self.geo;
        let (x, w) = (inputs[0], inputs[1]);
        let mut dx = Tensor::zeros(x.shape());
        let mut dw = Tensor::zeros(w.shape());
        let (iv, ov) = (geo.in_volume(), geo.out_volume());
        let in_stride = geo.in_channels * iv;
        let out_stride = geo.out_channels * ov;

        if geo.is_depthwise() {
            for b in 0..geo.batch {
                depthwise_backward(
                    &x.data()[b * in_stride..(b + 1) * in_stride],
                    w.data(),
                    &grad.data()[b * out_stride..(b + 1) * out_stride],
                    geo,
                    &mut dx.data_mut()[b * in_stride..(b + 1) * in_stride],
                    dw.data_mut(),
                );
            }
        } else {
            let (cin_g, cout_g) = (geo.in_group(), geo.out_group());
            let k = cin_g * geo.taps();
            let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { k * ov }];
            let mut dcols = vec![0.0; if geo.is_pointwise() { 0 } else { k * ov }];
            for b in 0..geo.batch {
                for g in 0..geo.spec.groups {
                    let x_g = &x.data()[b * in_stride + g * cin_g * iv..b * in_stride + (g + 1) * cin_g * iv];
                    let dy_g =
                        &grad.data()[b * out_stride + g * cout_g * ov..b * out_stride + (g + 1) * cout_g * ov];
                    let w_g = &w.data()[g * cout_g * k..(g + 1) * cout_g * k];
                    let dw_g = &mut dw.data_mut()[g * cout_g * k..(g + 1) * cout_g * k];
                    let dx_g = &mut dx.data_mut()
                        [b * in_stride + g * cin_g * iv..b * in_stride + (g + 1) * cin_g * iv];
                    if geo.is_pointwise() {
                        gemm(cout_g, ov, k, 1.0, dy_g, false, x_g, true, 1.0, dw_g);
                        gemm(k, cout_g, ov, 1.0, w_g, true, dy_g, false, 1.0, dx_g);
                    } else {
                        im2col(x_g, geo, &mut cols);
                        gemm(cout_g, ov, k, 1.0, dy_g, false, &cols, true, 1.0, dw_g);
                        gemm(k, cout_g, ov, 1.0, w_g, true, dy_g, false, 0.0, &mut dcols);
                        col2im(&dcols, geo, dx_g);
                    }
                }
            }
        }

        let mut out = vec![Some(dx), Some(dw)];
        if self.has_bias {
            let mut db = vec![0.0; geo.out_channels];
            for (i, plane) in grad.data().chunks(ov).enumerate() {
                db[i % geo.out_channels] += plane.iter().sum::<f64>();
            }
            out.push(Some(Tensor::new(&[geo.out_channels], db)));
        }
        out
    }
}

/// Panics on inconsistent shapes; callers validate configuration up front.
fn geometry(x: &Tensor, w: &Tensor, spec: Conv3dSpec) -> Geometry {
    assert_eq!(x.ndim(), 5, "conv3d: input must be [B, C, T, H, W], got {:?}", x.shape());
    assert_eq!(w.ndim(), 5, "conv3d: weight must be [Cout, Cin/g, kt, kh, kw], got {:?}", w.shape());
    let s = x.shape();
    let ws = w.shape();
    assert!(spec.groups >= 1, "conv3d: groups must be >= 1");
    assert_eq!(s[1] % spec.groups, 0, "conv3d: groups must divide input channels");
    assert_eq!(ws[0] % spec.groups, 0, "conv3d: groups must divide output channels");
    assert_eq!(ws[1], s[1] / spec.groups, "conv3d: weight in-channels mismatch");
    let input = [s[2], s[3], s[4]];
    let kernel = [ws[2], ws[3], ws[4]];
    let output = spec
        .output_dims(input, kernel)
        .unwrap_or_else(|| panic!("conv3d: kernel {kernel:?} does not fit input {input:?}"));
    Geometry { batch: s[0], in_channels: s[1], out_channels: ws[0], input, kernel, output, spec }
}

impl Graph {
    /// 3D cross-correlation with optional bias, stride, zero padding and groups.
    pub fn conv3d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: Conv3dSpec) -> Var {
        let geo = geometry(self.value(x), self.value(w), spec);
        let out = conv3d_forward(self.value(x), self.value(w), bias.map(|b| self.value(b)), &geo);
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push_op(out, inputs, Box::new(Conv3dOp { geo, has_bias: bias.is_some() }))
    }
}

/// Forward convolution without recording; used by tests and inflation checks.
pub fn conv3d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: Conv3dSpec) -> Tensor {
    let geo = geometry(x, w, spec);
    conv3d_forward(x, w, bias, &geo)
}

fn conv3d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, geo: &Geometry) -> Tensor {
    let [ot, oh, ow] = geo.output;
    let mut out = Tensor::zeros(&[geo.batch, geo.out_channels, ot, oh, ow]);
    let (iv, ov) = (geo.in_volume(), geo.out_volume());
    let in_stride = geo.in_channels * iv;
    let out_stride = geo.out_channels * ov;
    if geo.is_depthwise() {
        for b in 0..geo.batch {
            depthwise_forward(
                &x.data()[b * in_stride..(b + 1) * in_stride],
                w.data(),
                geo,
                &mut out.data_mut()[b * out_stride..(b + 1) * out_stride],
            );
        }
    } else {
        let (cin_g, cout_g) = (geo.in_group(), geo.out_group());
        let k = cin_g * geo.taps();
        let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { k * ov }];
        for b in 0..geo.batch {
            for g in 0..geo.spec.groups {
                let x_g = &x.data()[b * in_stride + g * cin_g * iv..b * in_stride + (g + 1) * cin_g * iv];
                let w_g = &w.data()[g * cout_g * k..(g + 1) * cout_g * k];
                let y_g = &mut out.data_mut()
                    [b * out_stride + g * cout_g * ov..b * out_stride + (g + 1) * cout_g * ov];
                if geo.is_pointwise() {
                    gemm(cout_g, k, ov, 1.0, w_g, false, x_g, false, 0.0, y_g);
                } else {
                    im2col(x_g, geo, &mut cols);
                    gemm(cout_g, k, ov, 1.0, w_g, false, &cols, false, 0.0, y_g);
                }
            }
        }
    }
    if let Some(bias) = bias {
        assert_eq!(bias.shape(), &[geo.out_channels], "conv3d: bias shape");
        for (i, plane) in out.data_mut().chunks_mut(ov).enumerate() {
            let bv = bias.data()[i % geo.out_channels];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}
