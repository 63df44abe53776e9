//! Backend checkpoints: one TSR tensor per named parameter plus a JSON
//! manifest with the backend kind, schedule config, shapes, and param hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{load_tensor, save_tensor, Tensor};
use crate::diffusion::backend::DiffusionBackend;
use crate::diffusion::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::diffusion::toy::{ToyBackend, ToyBackendConfig};
use crate::error::DiffusionError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Serializable schedule description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub n_steps: usize,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, DiffusionError> {
        make_schedule(self.n_steps, self.kind)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    backend_kind: String,
    backend: ToyBackendConfig,
    schedule: ScheduleConfig,
    params: Vec<ParamEntry>,
    param_hash: String,
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> DiffusionError {
    DiffusionError::Checkpoint {
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

/// Writes the backend's parameters and manifest under `dir`; returns the
/// param hash recorded in the manifest.
pub fn save_checkpoint(
    dir: &Path,
    backend: &ToyBackend,
    schedule: &ScheduleConfig,
) -> Result<String, DiffusionError> {
    fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e.to_string()))?;
    let mut params = Vec::new();
    for (name, shape, values) in backend.named_parameters() {
        let file = format!("{name}.tsr");
        let tensor =
            Tensor::new(shape.clone(), values).map_err(|e| ckpt_err(dir, e.to_string()))?;
        save_tensor(&dir.join(&file), &tensor)?;
        params.push(ParamEntry { name, shape, file });
    }
    let param_hash = backend.param_hash();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        backend_kind: backend.kind().to_string(),
        backend: *backend.config(),
        schedule: *schedule,
        params,
        param_hash: param_hash.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(dir.join("manifest.json"), json).map_err(|e| ckpt_err(dir, e.to_string()))?;
    Ok(param_hash)
}

/// Loads a checkpoint, reconstructing the backend and verifying the recorded
/// param hash.
pub fn load_checkpoint(dir: &Path) -> Result<(ToyBackend, ScheduleConfig), DiffusionError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| ckpt_err(&manifest_path, e.to_string()))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| ckpt_err(&manifest_path, e.to_string()))?;
    if manifest.format_version > CHECKPOINT_FORMAT_VERSION {
        return Err(ckpt_err(
            &manifest_path,
            format!(
                "format version {} is newer than supported {}",
                manifest.format_version, CHECKPOINT_FORMAT_VERSION
            ),
        ));
    }
    if manifest.backend_kind != "toy" {
        return Err(ckpt_err(
            &manifest_path,
            format!("unsupported backend kind {:?}", manifest.backend_kind),
        ));
    }
    let mut backend = ToyBackend::new(manifest.backend);
    let mut flat: Vec<f32> = Vec::new();
    for entry in &manifest.params {
        let tensor = load_tensor(&dir.join(&entry.file))?;
        if tensor.shape() != entry.shape.as_slice() {
            return Err(ckpt_err(
                dir,
                format!(
                    "parameter {} has shape {:?}, manifest says {:?}",
                    entry.name,
                    tensor.shape(),
                    entry.shape
                ),
            ));
        }
        flat.extend_from_slice(tensor.data());
    }
    backend.set_parameters(&flat)?;
    if backend.param_hash() != manifest.param_hash {
        return Err(ckpt_err(
            dir,
            "parameter hash mismatch: checkpoint contents do not match manifest",
        ));
    }
    Ok((backend, manifest.schedule))
}
