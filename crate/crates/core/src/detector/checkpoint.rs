//! Checkpoint files: a raw little-endian parameter blob plus a JSON sidecar
//! (`<blob>.json`) describing architecture, anchors and training lineage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DetectorConfig, DetectorModel, TrainingMetadata};
use crate::datamodel::{read_json, write_json};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SCDT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub checkpoint_id: String,
    pub param_count: usize,
    pub config: DetectorConfig,
    #[serde(flatten)]
    pub training: TrainingMetadata,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn params_digest(params: &[f32]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

pub fn save(model: &DetectorModel, path: &Path) -> Result<()> {
    let params = model.network.params();
    let mut blob = Vec::with_capacity(16 + params.len() * 4);
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    blob.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, &blob).map_err(|e| Error::io(path, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        checkpoint_id: model.checkpoint_id(),
        param_count: params.len(),
        config: model.config.clone(),
        training: model.metadata.clone(),
    };
    write_json(sidecar_path(path), &meta)
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let meta: CheckpointMeta = read_json(sidecar_path(path))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: meta.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(meta)
}

pub fn load(path: &Path) -> Result<DetectorModel> {
    let meta = load_meta(path)?;
    let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        line: 0,
        message: msg.to_string(),
    };
    if blob.len() < 16 || &blob[..4] != MAGIC {
        return Err(bad("not a checkpoint blob"));
    }
    let version = u32::from_le_bytes(blob[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = u64::from_le_bytes(blob[8..16].try_into().unwrap()) as usize;
    if blob.len() != 16 + count * 4 || count != meta.param_count {
        return Err(bad("parameter count mismatch"));
    }
    let params: Vec<f32> = blob[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = DetectorModel::new(meta.config, meta.training.seed)?;
    model.network.set_params(params)?;
    model.metadata = meta.training;
    if model.checkpoint_id() != meta.checkpoint_id {
        return Err(bad("checkpoint id does not match parameters"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = DetectorModel::new(DetectorConfig::default(), 11).unwrap();
        model.metadata.round = 2;
        model.metadata.parent_checkpoint = Some("abc".into());
        let p = dir.path().join("m.ckpt");
        model.save(&p).unwrap();
        let back = DetectorModel::load(&p).unwrap();
        assert_eq!(back.network.params(), model.network.params());
        assert_eq!(back.metadata, model.metadata);
        assert_eq!(back.config, model.config);
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = DetectorModel::new(DetectorConfig::default(), 1).unwrap();
        let p = dir.path().join("m.ckpt");
        model.save(&p).unwrap();
        let side = sidecar_path(&p);
        let text = std::fs::read_to_string(&side).unwrap();
        std::fs::write(&side, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(
            DetectorModel::load(&p),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
