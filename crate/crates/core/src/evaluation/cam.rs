use std::path::{Path, PathBuf};

use cmc_autograd::{Graph, Tensor};
use image::{Rgb, RgbImage};
use ndarray::{Array3, Axis};

use crate::error::{Error, Result};
use crate::model::{volumes_to_tensor, Model};
use crate::volume::{resample, CTVolume};

pub const OVERLAY_ALPHA: f32 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct CamVolume {
    /// Input-shaped map in `[0, 1]`; all zeros when the raw map is constant.
    pub heatmap: Array3<f32>,
    pub class: usize,
}

/// `minmax(upsample(relu(sum_c w_c F_c)))` for one grid `F: [C, t, h, w]`.
pub fn cam_from_grid(grid: &Tensor, weights: &[f64], out_shape: [usize; 3]) -> Result<Array3<f32>> {
    let s = grid.shape();
    if s.len() != 4 || s[0] != weights.len() {
        return Err(Error::invalid(format!("grid {:?} does not match {} channel weights", s, weights.len())));
    }
    let plane = s[1] * s[2] * s[3];
    let mut raw = vec![0.0f64; plane];
    for (c, &w) in weights.iter().enumerate() {
        for (r, f) in raw.iter_mut().zip(&grid.data()[c * plane..(c + 1) * plane]) {
            *r += w * f;
        }
    }
    let coarse = Array3::from_shape_vec((s[1], s[2], s[3]), raw.into_iter().map(|v| v.max(0.0) as f32).collect())
        .expect("plane size matches");
    let mut up = resample(coarse.view(), out_shape);
    let (lo, hi) = up.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        up.mapv_inplace(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
    } else {
        up.fill(0.0);
    }
    Ok(up)
}

/// Class activation map of `class` for an already transformed volume.
pub fn compute_cam(model: &Model, volume: &CTVolume, class: usize) -> Result<CamVolume> {
    if class >= crate::volume::NUM_CLASSES {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let mut g = Graph::new();
    let x = g.constant(volumes_to_tensor([volume.voxels()])?);
    let out = model.forward(&mut g, x, false)?;
    let grid = g.value(out.grid);
    let s = grid.shape().to_vec();
    let grid = grid.clone().reshape(&s[1..]);
    let w = model.params.get("classifier.weight").expect("classifier weight");
    let d_e = w.shape()[1];
    let weights = &w.data()[class * d_e..(class + 1) * d_e];
    Ok(CamVolume { heatmap: cam_from_grid(&grid, weights, volume.shape())?, class })
}

/// Black through red and yellow to white.
pub fn fire_colormap(h: f32) -> [f32; 3] {
    let h = h.clamp(0.0, 1.0);
    [(3.0 * h).min(1.0), (3.0 * h - 1.0).clamp(0.0, 1.0), (3.0 * h - 2.0).clamp(0.0, 1.0)]
}

/// One PNG per slice at `<out_dir>/<scan_id>/cam_<idx>.png`, the heatmap
/// alpha-blended over the grayscale slice.
pub fn write_cam_overlays(volume: &CTVolume, cam: &CamVolume, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if cam.heatmap.dim() != volume.voxels().dim() {
        return Err(Error::invalid("heatmap and volume shapes differ"));
    }
    let dir = out_dir.join(&volume.scan_id);
    std::fs::create_dir_all(&dir)?;
    let [t, h, w] = volume.shape();
    let width = t.to_string().len().max(3);
    let mut paths = Vec::with_capacity(t);
    for (idx, (slice, heat)) in volume.voxels().axis_iter(Axis(0)).zip(cam.heatmap.axis_iter(Axis(0))).enumerate() {
        let mut img = RgbImage::new(w as u32, h as u32);
        for ((y, x), &v) in slice.indexed_iter() {
            let color = fire_colormap(heat[[y, x]]);
            let px = color.map(|c| ((1.0 - OVERLAY_ALPHA) * v + OVERLAY_ALPHA * c).clamp(0.0, 1.0) * 255.0);
            img.put_pixel(x as u32, y as u32, Rgb(px.map(|c| c.round() as u8)));
        }
        let path = dir.join(format!("cam_{idx:0width$}.png"));
        img.save(&path).map_err(|e| Error::invalid(format!("writing {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}
