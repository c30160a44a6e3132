use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use ndarray::{s, Array2, Array3};

use super::{CTVolume, ScanRecord};
use crate::error::{Error, Result};

const SLICE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_slice_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| SLICE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decode one slice image into 8-bit grey levels.
pub fn decode_slice(bytes: &[u8]) -> Result<Array2<u8>> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::parse("slice image", e))?;
    let grey = img.into_luma8();
    let (w, h) = grey.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), grey.into_raw()).map_err(|e| Error::parse("slice image", e))
}

/// Read every slice image under `record.path` in lexicographic file-name
/// order and stack them into a volume normalised by `1/255`.
pub fn load_scan(record: &ScanRecord) -> Result<CTVolume> {
    let dir = &record.path;
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.clone()));
    }
    let malformed = |reason: String| Error::MalformedScan { path: dir.clone(), reason };

    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_slice_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(malformed("no slice images".into()));
    }

    let mut slices = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = fs::read(f)?;
        let slice = decode_slice(&bytes).map_err(|e| malformed(format!("{}: {e}", f.display())))?;
        if let Some(first) = slices.first() {
            let first: &Array2<u8> = first;
            if first.dim() != slice.dim() {
                return Err(malformed(format!(
                    "slice {} has shape {:?}, expected {:?}",
                    f.display(),
                    slice.dim(),
                    first.dim()
                )));
            }
        }
        slices.push(slice);
    }

    let (h, w) = slices[0].dim();
    let mut voxels = Array3::<f32>::zeros((slices.len(), h, w));
    for (t, slice) in slices.iter().enumerate() {
        voxels.slice_mut(s![t, .., ..]).assign(&slice.mapv(|v| v as f32 / 255.0));
    }
    Ok(CTVolume::from_trusted(record.scan_id.clone(), voxels))
}

/// Write each slice as an 8-bit PNG named by zero-padded index.
pub fn write_scan(volume: &CTVolume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let [t, h, w] = volume.shape();
    let width = (t.max(2) - 1).to_string().len().max(4);
    for i in 0..t {
        let plane = volume.voxels().slice(s![i, .., ..]);
        let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([(plane[[y as usize, x as usize]] * 255.0).round().clamp(0.0, 255.0) as u8])
        });
        let path = dir.join(format!("{i:0width$}.png"));
        img.save_with_format(&path, ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

#[derive(serde::Deserialize, serde::Serialize)]
struct LabelRow {
    scan_id: String,
    label: usize,
}

/// Parse `labels.csv` (`scan_id,label`); record paths are `root/<scan_id>`.
pub fn parse_labels_csv(text: &str, root: &Path) -> Result<Vec<ScanRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse("labels.csv", e))?;
    if headers.iter().collect::<Vec<_>>() != ["scan_id", "label"] {
        return Err(Error::parse("labels.csv", format!("expected header scan_id,label, got {headers:?}")));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::parse("labels.csv", e))?;
        if row.scan_id.is_empty() || row.scan_id.contains(['/', '\\']) || row.scan_id == ".." {
            return Err(Error::parse("labels.csv", format!("invalid scan_id {:?}", row.scan_id)));
        }
        if !seen.insert(row.scan_id.clone()) {
            return Err(Error::parse("labels.csv", format!("duplicate scan_id {}", row.scan_id)));
        }
        let path = root.join(&row.scan_id);
        records.push(ScanRecord::new(row.scan_id, row.label, path).map_err(|e| Error::parse("labels.csv", e))?);
    }
    Ok(records)
}

pub fn read_labels_csv(root: &Path) -> Result<Vec<ScanRecord>> {
    let path = root.join("labels.csv");
    if !path.is_file() {
        return Err(Error::NotFound(path));
    }
    parse_labels_csv(&fs::read_to_string(path)?, root)
}

pub fn write_labels_csv(records: &[ScanRecord], root: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(root.join("labels.csv")).map_err(|e| Error::parse("labels.csv", e))?;
    for r in records {
        writer
            .serialize(LabelRow { scan_id: r.scan_id.clone(), label: r.label })
            .map_err(|e| Error::parse("labels.csv", e))?;
    }
    writer.flush()?;
    Ok(())
}
