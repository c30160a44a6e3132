use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CTVolume, ScanRecord, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

/// Two axis-aligned lung ellipsoids inside an elliptic body cross-section.
/// Lengths are fractions of the volume extent along the same axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LungGeometry {
    /// Distance from the mid-line to each lung centre, fraction of width.
    pub offset: f64,
    /// Lung semi-axes `(depth, height, width)`.
    pub radii: [f64; 3],
    /// Maximum relative perturbation of centre and semi-axes per scan.
    pub jitter: f64,
    /// Lung tissue intensity band.
    pub tissue: [f32; 2],
    pub body_intensity: f32,
}

impl Default for LungGeometry {
    fn default() -> Self {
        Self { offset: 0.24, radii: [0.42, 0.30, 0.2], jitter: 0.05, tissue: [0.10, 0.20], body_intensity: 0.55 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub size: [usize; 3],
    /// Inclusive range of lesion counts for class-1 scans.
    pub lesion_count: [usize; 2],
    /// Peak brightness added on top of lung tissue.
    pub lesion_intensity: [f32; 2],
    /// In-plane lesion semi-axis, fraction of height.
    pub lesion_radius: [f64; 2],
    /// Lesion semi-axis along depth, fraction of depth.
    pub lesion_depth_radius: [f64; 2],
    pub lungs: LungGeometry,
    /// Uniform noise amplitude on body tissue.
    pub noise: f32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: [16, 64, 64],
            lesion_count: [2, 3],
            lesion_intensity: [0.45, 0.75],
            lesion_radius: [0.08, 0.12],
            lesion_depth_radius: [0.2, 0.3],
            lungs: LungGeometry::default(),
            noise: 0.03,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.size.iter().any(|&d| d < 4) {
            return bad(format!("phantom size {:?} must be at least 4 along every axis", self.size));
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0] > 0.0;
        if self.lesion_count[0] > self.lesion_count[1] || self.lesion_count[0] == 0 {
            return bad(format!("lesion_count {:?} must be a non-empty range starting at >= 1", self.lesion_count));
        }
        if !ordered(self.lesion_radius) || !ordered(self.lesion_depth_radius) {
            return bad("lesion radius ranges must be positive and ordered".into());
        }
        let [lo, hi] = self.lesion_intensity;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("lesion_intensity {:?} must lie in (0, 1]", self.lesion_intensity));
        }
        let [t0, t1] = self.lungs.tissue;
        if !(0.0 <= t0 && t0 <= t1 && t1 < 1.0) || !(0.0..=1.0).contains(&self.lungs.body_intensity) {
            return bad("lung tissue band and body intensity must lie in [0, 1]".into());
        }
        if self.lungs.radii.iter().any(|r| *r <= 0.0 || *r >= 0.5) || self.lungs.offset <= 0.0 {
            return bad("lung semi-axes must lie in (0, 0.5)".into());
        }
        if self.lungs.offset + self.lungs.radii[2] >= 0.5 {
            return bad("lungs extend past the volume width".into());
        }
        Ok(())
    }
}

/// Generated scan with its ground-truth lesion mask.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: CTVolume,
    pub record: ScanRecord,
    pub lesion_mask: Array3<bool>,
}

#[derive(Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn radius2(&self, p: [usize; 3]) -> f64 {
        (0..3).map(|d| ((p[d] as f64 - self.center[d]) / self.radii[d]).powi(2)).sum()
    }

    fn contains(&self, p: [usize; 3]) -> bool {
        self.radius2(p) <= 1.0
    }

    /// Voxel-index bounding box clipped to `size`.
    fn bounds(&self, size: [usize; 3]) -> [(usize, usize); 3] {
        std::array::from_fn(|d| {
            let lo = (self.center[d] - self.radii[d]).floor().max(0.0) as usize;
            let hi = ((self.center[d] + self.radii[d]).ceil() as usize + 1).min(size[d]);
            (lo, hi)
        })
    }

    fn voxels(&self, size: [usize; 3]) -> Vec<[usize; 3]> {
        let [bt, by, bx] = self.bounds(size);
        let mut out = Vec::new();
        for t in bt.0..bt.1 {
            for y in by.0..by.1 {
                for x in bx.0..bx.1 {
                    if self.contains([t, y, x]) {
                        out.push([t, y, x]);
                    }
                }
            }
        }
        out
    }
}

const PLACEMENT_ATTEMPTS: usize = 500;
const LAYOUT_ATTEMPTS: usize = 20;

/// Deterministic synthetic chest phantom; class-1 scans carry bright lesion
/// blobs fully inside the lungs.
pub fn generate_phantom(cfg: &PhantomConfig, class: usize) -> Result<Phantom> {
    cfg.validate()?;
    if class >= NUM_CLASSES {
        return Err(Error::invalid(format!("class {class} is not a class index")));
    }
    let size = cfg.size;
    let dims = size.map(|d| d as f64);
    let mut rng = rng_for(Stream::Phantom, &[cfg.seed, class as u64]);
    let g = &cfg.lungs;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| 1.0 + g.jitter * rng.random_range(-1.0..=1.0);

    let mid = dims.map(|d| d / 2.0 - 0.5);
    let lungs: Vec<Ellipsoid> = [-1.0, 1.0]
        .into_iter()
        .map(|side| {
            let center = [mid[0], mid[1] * jitter(&mut rng), mid[2] + side * g.offset * dims[2] * jitter(&mut rng)];
            let radii = std::array::from_fn(|d| g.radii[d] * dims[d] * jitter(&mut rng));
            Ellipsoid { center, radii }
        })
        .collect();

    let mut mask = Array3::from_elem(size, false);
    let mut lesions: Vec<(Ellipsoid, f32)> = Vec::new();
    if class == 1 {
        // a crowded layout is redrawn from scratch; earlier draws are unchanged
        let count = rng.random_range(cfg.lesion_count[0]..=cfg.lesion_count[1]);
        let mut last_radii = [0.0; 3];
        let complete = (0..LAYOUT_ATTEMPTS).any(|_| {
            mask.fill(false);
            lesions.clear();
            for _ in 0..count {
                let r_plane = rng.random_range(cfg.lesion_radius[0]..=cfg.lesion_radius[1]) * dims[1];
                let r_depth = rng.random_range(cfg.lesion_depth_radius[0]..=cfg.lesion_depth_radius[1]) * dims[0];
                let radii = [r_depth, r_plane, r_plane];
                last_radii = radii;
                let intensity = rng.random_range(cfg.lesion_intensity[0]..=cfg.lesion_intensity[1]);
                let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
                    let lung = lungs[rng.random_range(0..lungs.len())];
                    let center = std::array::from_fn(|d| {
                        let span = (lung.radii[d] - radii[d]).max(0.0);
                        lung.center[d] + rng.random_range(-span..=span)
                    });
                    let candidate = Ellipsoid { center, radii };
                    let voxels = candidate.voxels(size);
                    let fits = !voxels.is_empty() && voxels.iter().all(|&p| lung.contains(p) && !touches(&mask, p));
                    fits.then_some((candidate, voxels))
                });
                let Some((lesion, voxels)) = placed else {
                    return false;
                };
                for p in voxels {
                    mask[p] = true;
                }
                lesions.push((lesion, intensity));
            }
            true
        });
        if !complete {
            return Err(Error::InvalidConfig(format!(
                "could not place a lesion with semi-axes {last_radii:?} inside lungs of size {size:?}"
            )));
        }
    }

    let body = Ellipsoid { center: [mid[0], mid[1], mid[2]], radii: [f64::INFINITY, 0.46 * dims[1], 0.46 * dims[2]] };
    let mut voxels = Array3::<f32>::zeros(size);
    for ((t, y, x), v) in voxels.indexed_iter_mut() {
        let p = [t, y, x];
        let value = if lungs.iter().any(|l| l.contains(p)) {
            let mut tissue = rng.random_range(g.tissue[0]..=g.tissue[1]);
            if mask[p] {
                for (lesion, intensity) in &lesions {
                    let r2 = lesion.radius2(p);
                    if r2 <= 1.0 {
                        tissue += intensity * (-r2 as f32).exp();
                    }
                }
            }
            tissue
        } else if body.contains(p) {
            g.body_intensity + cfg.noise * rng.random_range(-1.0f32..=1.0)
        } else {
            0.0
        };
        *v = quantise(value);
    }

    let scan_id = format!("phantom-{}-{:016x}", class, cfg.seed);
    let record = ScanRecord::new(scan_id.clone(), class, &scan_id)?;
    Ok(Phantom { volume: CTVolume::from_trusted(scan_id, voxels), record, lesion_mask: mask })
}

/// Whether `p` or any of its 26 neighbours is already a lesion voxel.
fn touches(mask: &Array3<bool>, p: [usize; 3]) -> bool {
    let (t, h, w) = mask.dim();
    let dims = [t, h, w];
    let range = |d: usize| p[d].saturating_sub(1)..(p[d] + 2).min(dims[d]);
    range(0).any(|a| range(1).any(|b| range(2).any(|c| mask[[a, b, c]])))
}

/// Snap to the 8-bit grid so slice images round-trip exactly.
fn quantise(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}
