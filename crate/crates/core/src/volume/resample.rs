use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2};

use super::CTVolume;
use crate::error::{Error, Result};

/// Axis-aligned source window `(y0, x0, height, width)` in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropWindow {
    pub y0: f64,
    pub x0: f64,
    pub height: f64,
    pub width: f64,
}

impl CropWindow {
    pub fn full(height: usize, width: usize) -> Self {
        Self { y0: 0.0, x0: 0.0, height: height as f64, width: width as f64 }
    }
}

/// `a + (b - a) t`, kept inside `[min(a, b), max(a, b)]`.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    if a <= b {
        v.clamp(a, b)
    } else {
        v.clamp(b, a)
    }
}

/// Half-pixel-centred source coordinate for output index `i`, clamped to the
/// valid sample range; returns `(lower index, upper index, fraction)`.
#[inline]
fn source_coord(pos: f64, extent: usize) -> (usize, usize, f64) {
    let p = pos.clamp(0.0, (extent - 1) as f64);
    let lo = p.floor() as usize;
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, p - lo as f64)
}

/// Bilinearly resample `window` of `src` (optionally rotated by `angle`
/// radians about the window centre) into `dst`. Samples outside the plane
/// clamp to the nearest edge.
pub fn sample_plane(src: ArrayView2<f32>, window: CropWindow, angle: f64, mut dst: ArrayViewMut2<f32>) {
    let (h, w) = src.dim();
    let (oh, ow) = dst.dim();
    let (sy, sx) = (window.height / oh as f64, window.width / ow as f64);
    let (cy, cx) = (window.y0 + window.height / 2.0 - 0.5, window.x0 + window.width / 2.0 - 0.5);
    let (sin, cos) = angle.sin_cos();
    for oy in 0..oh {
        let py = window.y0 + (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..ow {
            let px = window.x0 + (ox as f64 + 0.5) * sx - 0.5;
            let (y, x) = if angle == 0.0 {
                (py, px)
            } else {
                let (dy, dx) = (py - cy, px - cx);
                (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
            };
            let (y0, y1, fy) = source_coord(y, h);
            let (x0, x1, fx) = source_coord(x, w);
            let top = lerp(src[[y0, x0]] as f64, src[[y0, x1]] as f64, fx);
            let bottom = lerp(src[[y1, x0]] as f64, src[[y1, x1]] as f64, fx);
            dst[[oy, ox]] = lerp(top, bottom, fy) as f32;
        }
    }
}

/// Trilinear, half-pixel-centred resampling without clamping of values.
/// Depth is interpolated first, then each plane bilinearly.
pub fn resample(src: ArrayView3<f32>, target: [usize; 3]) -> Array3<f32> {
    let (t, h, w) = src.dim();
    let [tt, th, tw] = target;
    let mut out = Array3::<f32>::zeros((tt, th, tw));
    let mut plane = Array2::<f32>::zeros((h, w));
    let scale = t as f64 / tt as f64;
    for ot in 0..tt {
        let (t0, t1, ft) = source_coord((ot as f64 + 0.5) * scale - 0.5, t);
        let (a, b) = (src.slice(s![t0, .., ..]), src.slice(s![t1, .., ..]));
        ndarray::Zip::from(&mut plane)
            .and(&a)
            .and(&b)
            .for_each(|p, &x, &y| *p = lerp(x as f64, y as f64, ft) as f32);
        sample_plane(plane.view(), CropWindow::full(h, w), 0.0, out.slice_mut(s![ot, .., ..]));
    }
    out
}

/// Trilinear resize to `target`, values clamped to `[0, 1]`.
pub fn resize_volume(v: &CTVolume, target: [usize; 3]) -> Result<CTVolume> {
    if target.contains(&0) {
        return Err(Error::invalid(format!("resize target {target:?} has a zero dimension")));
    }
    if v.shape() == target {
        return Ok(v.clone());
    }
    let mut out = resample(v.voxels().view(), target);
    out.mapv_inplace(|x| x.clamp(0.0, 1.0));
    Ok(CTVolume::from_trusted(v.scan_id.clone(), out))
}
