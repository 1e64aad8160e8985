//! Checkpoint directories: `manifest.json` (shapes, seeds, config echo,
//! format version) plus `weights.bin` (little-endian f32, concatenated in
//! manifest order).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// What kind of model this directory holds.
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    /// Model-specific metadata: specs, seeds, normalization stats, config echo.
    pub extra: serde_json::Value,
}

pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

pub fn save(
    dir: &Path,
    kind: &str,
    tensors: &[(&str, &Tensor<f32>)],
    extra: serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry { name: name.to_string(), rows: t.rows, cols: t.cols })
            .collect(),
        extra,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("weights.bin"))?);
    for (_, t) in tensors {
        for v in &t.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut bytes = Vec::new();
    std::fs::File::open(dir.join("weights.bin"))?.read_to_end(&mut bytes)?;
    let expected: usize = manifest.tensors.iter().map(|t| t.rows * t.cols * 4).sum();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "weights.bin holds {} bytes, manifest expects {expected}",
            bytes.len()
        )));
    }
    let mut tensors = BTreeMap::new();
    let mut at = 0;
    for entry in &manifest.tensors {
        let n = entry.rows * entry.cols;
        let data: Vec<f32> = bytes[at..at + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        at += n * 4;
        tensors.insert(entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data)?);
    }
    Ok(Checkpoint { manifest, tensors })
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }
}
