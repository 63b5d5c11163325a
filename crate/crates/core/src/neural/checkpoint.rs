//! Checkpoint directory layout: `manifest.json` describing the sections
//! plus `weights.bin`, all state vectors flattened to little-endian f32
//! in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{HeadKind, NormStats, TwoTowerCnn};
use super::tensor::Scalar;
use super::train::TrainConfig;
use super::NeuralError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub head: HeadKind,
    pub seed: u64,
    pub norm: NormStats,
    pub sections: Vec<SectionInfo>,
    pub train_config: Option<TrainConfig>,
}

pub fn save_checkpoint<S: Scalar>(
    dir: &Path,
    model: &TwoTowerCnn<S>,
    train_config: Option<&TrainConfig>,
) -> Result<(), NeuralError> {
    fs::create_dir_all(dir)?;
    let state = model.state();
    let manifest = CheckpointManifest {
        version: 1,
        head: model.head,
        seed: model.seed,
        norm: model.norm,
        sections: state
            .iter()
            .map(|(name, v)| SectionInfo { name: name.clone(), len: v.len() })
            .collect(),
        train_config: train_config.cloned(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut bytes = Vec::new();
    for (_, values) in &state {
        for v in values {
            bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(TwoTowerCnn<f32>, CheckpointManifest), NeuralError> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != 1 {
        return Err(NeuralError::BadCheckpoint(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    let bytes = fs::read(dir.join("weights.bin"))?;
    let expected: usize = manifest.sections.iter().map(|s| s.len).sum();
    if bytes.len() != expected * 4 {
        return Err(NeuralError::BadCheckpoint(format!(
            "weights.bin holds {} bytes, manifest expects {}",
            bytes.len(),
            expected * 4
        )));
    }
    let mut model = TwoTowerCnn::<f32>::new(manifest.head, manifest.seed);
    model.norm = manifest.norm;
    let mut state = Vec::new();
    let mut offset = 0;
    for section in &manifest.sections {
        let mut values = Vec::with_capacity(section.len);
        for _ in 0..section.len {
            values.push(f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()));
            offset += 4;
        }
        state.push((section.name.clone(), values));
    }
    model.set_state(&state)?;
    Ok((model, manifest))
}
