//! Stochastic two-view augmentation: contiguous depth crop, random resized
//! crop, in-plane rotation and brightness/contrast jitter, applied either
//! once per volume or independently per slice.

use ndarray::{s, Array3, ArrayViewMut, ArrayViewMut2, Dimension};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{sample_plane, CTVolume, CropWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// One geometric and photometric draw shared by every slice.
    Volume3d,
    /// Independent draws per slice.
    Slicewise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub mode: AugmentMode,
    /// Crop area as a fraction of the plane.
    pub crop_scale: [f64; 2],
    /// Crop aspect ratio relative to the plane's own aspect ratio.
    pub crop_ratio: [f64; 2],
    /// Contiguous depth window kept from each volume.
    pub depth_crop: usize,
    /// Rotation angle drawn uniformly from `[-deg, deg]`.
    pub rotation_degrees: f64,
    /// Additive brightness shift drawn from `[-b, b]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - c, 1 + c]`.
    pub contrast: f64,
    pub train_resolution: usize,
    pub eval_resolution: usize,
    /// Eval planes are resized to `eval_resolution / eval_crop_fraction`
    /// and centre-cropped to `eval_resolution`.
    pub eval_crop_fraction: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            mode: AugmentMode::Volume3d,
            crop_scale: [0.7, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
            depth_crop: 64,
            rotation_degrees: 10.0,
            brightness: 0.2,
            contrast: 0.2,
            train_resolution: 224,
            eval_resolution: 224,
            eval_crop_fraction: 1.0,
        }
    }
}

impl AugmentationPolicy {
    /// Policy whose random draws are all identities.
    pub fn degenerate(mode: AugmentMode, depth_crop: usize, resolution: usize) -> Self {
        Self {
            mode,
            crop_scale: [1.0, 1.0],
            crop_ratio: [1.0, 1.0],
            depth_crop,
            rotation_degrees: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            train_resolution: resolution,
            eval_resolution: resolution,
            eval_crop_fraction: 1.0,
        }
    }

    /// Test-time views: eval resolution, halved photometric ranges.
    pub fn tta(&self) -> Self {
        Self {
            train_resolution: self.eval_resolution,
            brightness: self.brightness / 2.0,
            contrast: self.contrast / 2.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let range_ok = |r: [f64; 2], lo: f64| r[0] > lo && r[0] <= r[1];
        if !range_ok(self.crop_scale, 0.0) || self.crop_scale[1] > 1.0 {
            return bad(format!("augmentation.crop_scale {:?} must satisfy 0 < lo <= hi <= 1", self.crop_scale));
        }
        if !range_ok(self.crop_ratio, 0.0) {
            return bad(format!("augmentation.crop_ratio {:?} must be positive and ordered", self.crop_ratio));
        }
        if self.depth_crop == 0 || self.train_resolution == 0 || self.eval_resolution == 0 {
            return bad("augmentation depth_crop and resolutions must be positive".into());
        }
        if !(0.0..=180.0).contains(&self.rotation_degrees)
            || !(0.0..=1.0).contains(&self.brightness)
            || !(0.0..1.0).contains(&self.contrast)
        {
            return bad("augmentation rotation/brightness/contrast out of range".into());
        }
        if !(self.eval_crop_fraction > 0.0 && self.eval_crop_fraction <= 1.0) {
            return bad("augmentation.eval_crop_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn train_shape(&self) -> [usize; 3] {
        [self.depth_crop, self.train_resolution, self.train_resolution]
    }

    pub fn eval_shape(&self) -> [usize; 3] {
        [self.depth_crop, self.eval_resolution, self.eval_resolution]
    }
}

/// One set of random transform parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceDraw {
    pub window: CropWindow,
    pub angle: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl SliceDraw {
    fn is_photometric_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 1.0
    }
}

/// Everything drawn for one augmented volume; one draw in 3D mode, one per
/// output slice in slice-wise mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentRecord {
    pub depth_start: usize,
    pub draws: Vec<SliceDraw>,
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

fn draw(policy: &AugmentationPolicy, rng: &mut impl Rng, h: usize, w: usize) -> SliceDraw {
    let (hf, wf) = (h as f64, w as f64);
    let [s0, s1] = policy.crop_scale;
    let [r0, r1] = policy.crop_ratio;
    let mut window = CropWindow::full(h, w);
    for _ in 0..10 {
        let scale = if s0 == s1 { s0 } else { rng.random_range(s0..=s1) };
        let ratio = if r0 == r1 { r0 } else { rng.random_range(r0.ln()..=r1.ln()).exp() };
        let (ch, cw) = (hf * (scale / ratio).sqrt(), wf * (scale * ratio).sqrt());
        if ch <= hf && cw <= wf {
            let y0 = if ch < hf { rng.random_range(0.0..=hf - ch) } else { 0.0 };
            let x0 = if cw < wf { rng.random_range(0.0..=wf - cw) } else { 0.0 };
            window = CropWindow { y0, x0, height: ch, width: cw };
            break;
        }
    }
    SliceDraw {
        window,
        angle: symmetric(rng, policy.rotation_degrees).to_radians(),
        brightness: symmetric(rng, policy.brightness),
        contrast: 1.0 + symmetric(rng, policy.contrast),
    }
}

/// `clamp((v - mean) * contrast + mean + brightness)` with the mean taken
/// over `region`.
fn jitter<D: Dimension>(mut region: ArrayViewMut<f32, D>, d: &SliceDraw) {
    if d.is_photometric_identity() {
        return;
    }
    let mean = region.iter().map(|&v| v as f64).sum::<f64>() / region.len().max(1) as f64;
    for v in region.iter_mut() {
        *v = ((*v as f64 - mean) * d.contrast + mean + d.brightness).clamp(0.0, 1.0) as f32;
    }
}

fn check_depth(v: &CTVolume, policy: &AugmentationPolicy) -> Result<()> {
    if v.depth() < policy.depth_crop {
        return Err(Error::invalid(format!(
            "volume depth {} is smaller than depth_crop {}",
            v.depth(),
            policy.depth_crop
        )));
    }
    Ok(())
}

/// Augment one volume according to `policy.mode`, returning the draws used.
pub fn augment_recorded(
    v: &CTVolume,
    policy: &AugmentationPolicy,
    rng: &mut impl Rng,
) -> Result<(CTVolume, AugmentRecord)> {
    check_depth(v, policy)?;
    let [_, h, w] = v.shape();
    let res = policy.train_resolution;
    let depth_start = rng.random_range(0..=v.depth() - policy.depth_crop);
    let mut out = Array3::<f32>::zeros((policy.depth_crop, res, res));

    let draws = match policy.mode {
        AugmentMode::Volume3d => {
            let d = draw(policy, rng, h, w);
            for t in 0..policy.depth_crop {
                let src = v.voxels().slice(s![depth_start + t, .., ..]);
                sample_plane(src, d.window, d.angle, out.slice_mut(s![t, .., ..]));
            }
            jitter(out.view_mut(), &d);
            vec![d]
        }
        AugmentMode::Slicewise => (0..policy.depth_crop)
            .map(|t| {
                let d = draw(policy, rng, h, w);
                let src = v.voxels().slice(s![depth_start + t, .., ..]);
                let mut dst: ArrayViewMut2<f32> = out.slice_mut(s![t, .., ..]);
                sample_plane(src, d.window, d.angle, dst.view_mut());
                jitter(dst, &d);
                d
            })
            .collect(),
    };
    Ok((CTVolume::from_trusted(v.scan_id.clone(), out), AugmentRecord { depth_start, draws }))
}

/// One geometric/photometric draw shared across all slices.
pub fn augment_3d(v: &CTVolume, policy: &AugmentationPolicy, rng: &mut impl Rng) -> Result<CTVolume> {
    let policy = AugmentationPolicy { mode: AugmentMode::Volume3d, ..policy.clone() };
    augment_recorded(v, &policy, rng).map(|r| r.0)
}

/// Independent 2D draws for every slice.
pub fn augment_slicewise(v: &CTVolume, policy: &AugmentationPolicy, rng: &mut impl Rng) -> Result<CTVolume> {
    let policy = AugmentationPolicy { mode: AugmentMode::Slicewise, ..policy.clone() };
    augment_recorded(v, &policy, rng).map(|r| r.0)
}

/// Two independently augmented views of one scan sharing its label.
#[derive(Clone, Debug)]
pub struct ViewPair {
    pub view_a: CTVolume,
    pub view_b: CTVolume,
    pub label: usize,
}

pub fn make_views(v: &CTVolume, label: usize, policy: &AugmentationPolicy, rng: &mut impl Rng) -> Result<ViewPair> {
    let view_a = augment_recorded(v, policy, rng)?.0;
    let view_b = augment_recorded(v, policy, rng)?.0;
    Ok(ViewPair { view_a, view_b, label })
}

/// Deterministic evaluation geometry: centre depth window, resize, centre crop.
pub fn eval_transform(v: &CTVolume, policy: &AugmentationPolicy) -> Result<CTVolume> {
    check_depth(v, policy)?;
    let [t, h, w] = v.shape();
    let res = policy.eval_resolution;
    let resized = (res as f64 / policy.eval_crop_fraction).round().max(res as f64);
    let keep = res as f64 / resized;
    let (ch, cw) = (h as f64 * keep, w as f64 * keep);
    let window = CropWindow { y0: (h as f64 - ch) / 2.0, x0: (w as f64 - cw) / 2.0, height: ch, width: cw };
    let start = (t - policy.depth_crop) / 2;
    let mut out = Array3::<f32>::zeros((policy.depth_crop, res, res));
    for i in 0..policy.depth_crop {
        sample_plane(v.voxels().slice(s![start + i, .., ..]), window, 0.0, out.slice_mut(s![i, .., ..]));
    }
    Ok(CTVolume::from_trusted(v.scan_id.clone(), out))
}
