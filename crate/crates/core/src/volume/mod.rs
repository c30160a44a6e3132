//! Volumetric scans: data model, resampling, slice-image IO, synthetic
//! phantoms and dataset manifests.

mod io;
mod manifest;
mod phantom;
mod resample;

use std::path::PathBuf;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{decode_slice, load_scan, parse_labels_csv, read_labels_csv, write_labels_csv, write_scan};
pub use manifest::{split_manifest, Manifest, ManifestEntry, Split};
pub use phantom::{generate_phantom, LungGeometry, Phantom, PhantomConfig};
pub use resample::{resample, resize_volume, sample_plane, CropWindow};

/// Binary class index: `0` non-COVID, `1` COVID.
pub const NUM_CLASSES: usize = 2;

/// One scan as a `(depth, height, width)` grid of intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CTVolume {
    pub scan_id: String,
    voxels: Array3<f32>,
}

impl CTVolume {
    pub fn new(scan_id: impl Into<String>, voxels: Array3<f32>) -> Result<Self> {
        if voxels.is_empty() {
            return Err(Error::invalid(format!("volume has an empty axis: {:?}", voxels.dim())));
        }
        if let Some(v) = voxels.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("voxel value {v} outside [0, 1]")));
        }
        Ok(Self { scan_id: scan_id.into(), voxels })
    }

    /// Caller guarantees the voxel invariants.
    pub(crate) fn from_trusted(scan_id: impl Into<String>, voxels: Array3<f32>) -> Self {
        debug_assert!(voxels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { scan_id: scan_id.into(), voxels }
    }

    pub fn shape(&self) -> [usize; 3] {
        let (t, h, w) = self.voxels.dim();
        [t, h, w]
    }

    pub fn depth(&self) -> usize {
        self.voxels.dim().0
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn into_voxels(self) -> Array3<f32> {
        self.voxels
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub label: usize,
    pub path: PathBuf,
}

impl ScanRecord {
    pub fn new(scan_id: impl Into<String>, label: usize, path: impl Into<PathBuf>) -> Result<Self> {
        if label >= NUM_CLASSES {
            return Err(Error::invalid(format!("label {label} is not a class index")));
        }
        Ok(Self { scan_id: scan_id.into(), label, path: path.into() })
    }
}
