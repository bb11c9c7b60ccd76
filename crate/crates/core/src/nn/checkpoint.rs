//! `model.json` + `model.f32` checkpoint layout, with optional ADAM state in
//! `adam.json` + `adam.f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, NnError, ParamStore, Tensor};
use crate::fsutil::{f32_to_le_bytes, le_bytes_to_f32, write_atomic};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
    /// Architecture and training hyper-parameters, owned by the caller.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamManifest {
    format_version: u32,
    step: u64,
    config: AdamConfig,
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore<f32>,
    meta: serde_json::Value,
) -> Result<(), NnError> {
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: "f32".into(),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let mut payload = Vec::with_capacity(params.numel());
    for p in params.iter() {
        payload.extend_from_slice(p.value.data());
    }
    write_atomic(&dir.join("model.f32"), &f32_to_le_bytes(&payload))?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
    write_atomic(&dir.join("model.json"), &json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore<f32>, CheckpointManifest), NnError> {
    let text = fs::read(dir.join("model.json"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text)
        .map_err(|e| NnError::Format(format!("model.json: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported checkpoint format_version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(NnError::Format(format!(
            "unsupported checkpoint dtype {}",
            manifest.dtype
        )));
    }
    let bytes = fs::read(dir.join("model.f32"))?;
    let values = le_bytes_to_f32(&bytes)
        .ok_or_else(|| NnError::Format("model.f32 length is not a multiple of 4".into()))?;
    let want: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if want != values.len() {
        return Err(NnError::Format(format!(
            "model.f32 holds {} values, manifest describes {}",
            values.len(),
            want
        )));
    }
    let mut store = ParamStore::new();
    let mut off = 0;
    for p in &manifest.params {
        let n: usize = p.shape.iter().product();
        store.add(&p.name, Tensor::from_vec(&p.shape, values[off..off + n].to_vec())?)?;
        off += n;
    }
    Ok((store, manifest))
}

pub fn save_adam(dir: &Path, state: &AdamState<f32>) -> Result<(), NnError> {
    let mut payload = Vec::new();
    for m in &state.first {
        payload.extend_from_slice(m);
    }
    for v in &state.second {
        payload.extend_from_slice(v);
    }
    write_atomic(&dir.join("adam.f32"), &f32_to_le_bytes(&payload))?;
    let manifest = AdamManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        step: state.step,
        config: state.config,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
    write_atomic(&dir.join("adam.json"), &json)?;
    Ok(())
}

/// Load ADAM state saved for a store with the same layout as `params`.
pub fn load_adam(dir: &Path, params: &ParamStore<f32>) -> Result<AdamState<f32>, NnError> {
    let manifest: AdamManifest = serde_json::from_slice(&fs::read(dir.join("adam.json"))?)
        .map_err(|e| NnError::Format(format!("adam.json: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported optimizer format_version {}",
            manifest.format_version
        )));
    }
    let values = le_bytes_to_f32(&fs::read(dir.join("adam.f32"))?)
        .ok_or_else(|| NnError::Format("adam.f32 length is not a multiple of 4".into()))?;
    let n = params.numel();
    if values.len() != 2 * n {
        return Err(NnError::Format(format!(
            "adam.f32 holds {} values, expected {}",
            values.len(),
            2 * n
        )));
    }
    let mut state = AdamState::new(manifest.config, params);
    state.step = manifest.step;
    let mut off = 0;
    for m in state.first.iter_mut() {
        let k = m.len();
        m.copy_from_slice(&values[off..off + k]);
        off += k;
    }
    for v in state.second.iter_mut() {
        let k = v.len();
        v.copy_from_slice(&values[off..off + k]);
        off += k;
    }
    Ok(state)
}
