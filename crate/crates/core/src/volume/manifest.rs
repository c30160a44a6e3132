use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ScanRecord, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::parse("manifest", format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub label: usize,
    pub split: Split,
}

/// `manifest.csv`: one `scan_id,label,split` row per scan.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_splits(train: &[ScanRecord], val: &[ScanRecord]) -> Self {
        let entry = |r: &ScanRecord, split| ManifestEntry { scan_id: r.scan_id.clone(), label: r.label, split };
        let entries = train.iter().map(|r| entry(r, Split::Train)).chain(val.iter().map(|r| entry(r, Split::Val))).collect();
        Self { entries }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::parse("manifest", e))?;
        if headers.iter().collect::<Vec<_>>() != ["scan_id", "label", "split"] {
            return Err(Error::parse("manifest", format!("expected header scan_id,label,split, got {headers:?}")));
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::parse("manifest", e))?;
            if row.len() != 3 {
                return Err(Error::parse("manifest", format!("expected 3 fields, got {}", row.len())));
            }
            let scan_id = row[0].to_string();
            if scan_id.is_empty() || !seen.insert(scan_id.clone()) {
                return Err(Error::parse("manifest", format!("empty or duplicate scan_id {scan_id:?}")));
            }
            let label: usize = row[1].parse().map_err(|e| Error::parse("manifest", e))?;
            if label >= NUM_CLASSES {
                return Err(Error::parse("manifest", format!("label {label} out of range")));
            }
            entries.push(ManifestEntry { scan_id, label, split: row[2].parse()? });
        }
        Ok(Self { entries })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scan_id,label,split\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.scan_id, e.label, e.split));
        }
        out
    }

    /// Records of one split, with paths resolved under `root`.
    pub fn records(&self, split: Split, root: &Path) -> Vec<ScanRecord> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| ScanRecord { scan_id: e.scan_id.clone(), label: e.label, path: root.join(&e.scan_id) })
            .collect()
    }
}

/// Stratified, seeded split into `(train, val)` by `fractions = [train, val]`.
///
/// Totals are allocated by largest remainder so the train count is exactly
/// `round(fractions[0] * n)`; each class contributes proportionally.
pub fn split_manifest(
    records: &[ScanRecord],
    fractions: [f64; 2],
    seed: u64,
) -> Result<(Vec<ScanRecord>, Vec<ScanRecord>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions[0] + fractions[1] - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = records.iter().find(|r| !ids.insert(&r.scan_id)) {
        return Err(Error::invalid(format!("duplicate scan_id {}", dup.scan_id)));
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::Stratification(format!("class {class} has {} record(s); at least 2 needed", members.len())));
    }

    let target = (fractions[0] * records.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&c, m)| {
            let exact = fractions[0] * m.len() as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        quotas[i].1 += 1;
    }

    let mut in_train = vec![false; records.len()];
    for (class, quota, _) in quotas {
        let mut members = by_class[&class].clone();
        members.shuffle(&mut rng_for(Stream::Split, &[seed, class as u64]));
        for &i in members.iter().take(quota) {
            in_train[i] = true;
        }
    }
    let (train, val): (Vec<_>, Vec<_>) = records.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|p| p.0).collect(), val.into_iter().map(|p| p.0).collect()))
}
