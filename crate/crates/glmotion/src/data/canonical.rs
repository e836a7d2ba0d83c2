//! Canonical on-disk sequence format and dataset directories.
//!
//! One JSON object per sequence with a strict schema; a dataset is a
//! directory of such files plus a `manifest.txt` listing relative paths.

use super::{DataError, RawSequence};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalFile {
    version: u32,
    id: String,
    label: Option<u64>,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "P")]
    p: usize,
    #[serde(rename = "K")]
    k: usize,
    center_joint: usize,
    coords: Vec<f64>,
}

pub fn write_canonical(seq: &RawSequence) -> String {
    let file = CanonicalFile {
        version: 1,
        id: seq.id.clone(),
        label: seq.label.map(|l| l as u64),
        t: seq.frames,
        p: seq.persons,
        k: seq.joints,
        center_joint: seq.center_joint,
        coords: seq.coords.clone(),
    };
    serde_json::to_string(&file).expect("canonical serialization cannot fail")
}

pub fn parse_canonical(text: &str) -> Result<RawSequence, DataError> {
    let file: CanonicalFile = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if file.version != 1 {
        return Err(DataError::Format(format!(
            "unsupported canonical version {}",
            file.version
        )));
    }
    RawSequence::new(
        file.id,
        file.label.map(|l| l as usize),
        file.t,
        file.p,
        file.k,
        file.center_joint,
        file.coords,
    )
}

/// Writes every sequence as `<id>.json` plus a manifest, replacing any
/// existing manifest.
pub fn save_dataset(dir: &Path, seqs: &[RawSequence]) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for seq in seqs {
        let name = format!("{}.json", seq.id);
        fs::write(dir.join(&name), write_canonical(seq))?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Loads a dataset in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<RawSequence>, DataError> {
    let manifest_path = dir.join("manifest.txt");
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| {
        DataError::Data(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let mut seqs = Vec::new();
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let text = fs::read_to_string(dir.join(line))
            .map_err(|e| DataError::Data(format!("cannot read {line}: {e}")))?;
        seqs.push(parse_canonical(&text)?);
    }
    if seqs.is_empty() {
        return Err(DataError::Data(format!(
            "dataset at {} is empty",
            dir.display()
        )));
    }
    Ok(seqs)
}
