use std::path::Path;

use log::warn;

use super::{inflate_2d_weights, read_checkpoint, Checkpoint, InflateMode, MappingSpec, Model, ModelConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// Fail unless every model tensor is loaded and every checkpoint tensor used.
    pub strict: bool,
    /// How 2D kernels are inflated when the model expects 3D ones.
    pub inflate: InflateMode,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { strict: false, inflate: InflateMode::Center }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Model names copied verbatim.
    pub loaded: Vec<String>,
    /// Model names filled by inflating a 2D kernel.
    pub inflated: Vec<String>,
    /// Model names absent from the checkpoint; they keep their initial value.
    pub missing: Vec<String>,
    /// Checkpoint names (after mapping) the model does not have.
    pub unexpected: Vec<String>,
}

/// Copy mapped checkpoint tensors into `model`. Shape mismatches always
/// fail; missing and unexpected names fail only in strict mode.
pub fn apply_pretrained(model: &mut Model, ckpt: &Checkpoint, mapping: &MappingSpec, opts: LoadOptions) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut mismatched = Vec::new();
    let mut updates = Vec::new();
    for (src, t) in &ckpt.tensors {
        let name = mapping.apply(src);
        let Some(target) = model.params.get(&name) else {
            report.unexpected.push(name);
            continue;
        };
        let (ts, ws) = (target.shape(), t.shape());
        if ts == ws {
            updates.push((name.clone(), t.clone()));
            report.loaded.push(name);
        } else if ws.len() == 4 && ts.len() == 5 && ws[..2] == ts[..2] && ws[2..] == ts[3..] {
            updates.push((name.clone(), inflate_2d_weights(t, ts[2], opts.inflate)?));
            report.inflated.push(name);
        } else {
            mismatched.push(format!("{src} -> {name}: checkpoint {ws:?} vs model {ts:?}"));
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Checkpoint(format!("shape mismatch: {}", mismatched.join("; "))));
    }
    let mut seen: Vec<&String> = report.loaded.iter().chain(&report.inflated).collect();
    seen.sort();
    if let Some(dup) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Checkpoint(format!("several checkpoint tensors map to {}", dup[0])));
    }
    report.missing = model.params.names().filter(|n| seen.binary_search(n).is_err()).cloned().collect();
    if opts.strict && !(report.missing.is_empty() && report.unexpected.is_empty()) {
        return Err(Error::Checkpoint(format!(
            "strict load: missing [{}], unexpected [{}]",
            report.missing.join(", "),
            report.unexpected.join(", ")
        )));
    }
    if !report.missing.is_empty() {
        warn!("pretrained load left {} tensors at their initial value: {}", report.missing.len(), report.missing.join(", "));
    }
    if !report.unexpected.is_empty() {
        warn!("pretrained load ignored {} checkpoint tensors: {}", report.unexpected.len(), report.unexpected.join(", "));
    }
    for (name, t) in updates {
        model.params.tensors.insert(name, t);
    }
    Ok(report)
}

/// Fresh model from `(config, seed)` with mapped checkpoint weights applied.
pub fn load_pretrained(
    path: &Path,
    mapping: &MappingSpec,
    config: ModelConfig,
    seed: u64,
    opts: LoadOptions,
) -> Result<(Model, LoadReport)> {
    let ckpt = read_checkpoint(path)?;
    let mut model = Model::new(config, seed)?;
    let report = apply_pretrained(&mut model, &ckpt, mapping, opts)?;
    Ok((model, report))
}
