//! Checkpoints: `model.bin` (little-endian f32 tensors back to back),
//! `model.json` (names, shapes, offsets, dtype, hashes, grid) and
//! `model_card.json` (hyperparameters and training summary).

use std::fs;
use std::path::{Path, PathBuf};

use dopfn_core::digest_hex;
use dopfn_core::model::bar::BinGrid;
use dopfn_core::model::{ModelConfig, PfnModel};
use dopfn_core::numerics::{ParamStore, Tensor};
use dopfn_core::training::{prior_hash, Objective, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_json, write_file};

pub const FORMAT: &str = "dopfn-checkpoint/1";
pub const DTYPE: &str = "f32-le";
pub const BIN_FILE: &str = "model.bin";
pub const MANIFEST_FILE: &str = "model.json";
pub const CARD_FILE: &str = "model_card.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of `model.bin`.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub bin_sha256: String,
    pub model: ModelConfig,
    pub grid_edges: Vec<f64>,
    pub train_config: TrainConfig,
    pub config_hash: String,
    pub prior_hash: String,
    pub steps_done: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub hyperparameters: TrainConfig,
    pub objective: Objective,
    pub prior_hash: String,
    pub config_hash: String,
    pub training_steps: u64,
    pub param_count: usize,
    pub final_loss: Option<f64>,
}

pub fn weights_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.n_scalars() * 4);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn replace(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| CliError::unwritable(path, e))
}

/// Writes all three files; each is replaced atomically, so an interrupted
/// save leaves the previous complete checkpoint's files readable.
pub fn save(dir: &Path, model: &PfnModel, cfg: &TrainConfig, steps_done: u64, final_loss: Option<f64>) -> Result<()> {
    crate::io::create_dir(dir)?;
    let bin = weights_bytes(model.params());
    let mut offset = 0;
    let tensors = model
        .params()
        .names()
        .iter()
        .zip(model.params().tensors())
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset, len: t.len() };
            offset += t.len();
            e
        })
        .collect();
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        dtype: DTYPE.into(),
        tensors,
        bin_sha256: digest_hex(&bin),
        model: model.config().clone(),
        grid_edges: model.grid().edges().to_vec(),
        train_config: cfg.clone(),
        config_hash: cfg.hash(),
        prior_hash: prior_hash(&cfg.prior),
        steps_done,
    };
    let card = ModelCard {
        hyperparameters: cfg.clone(),
        objective: cfg.objective,
        prior_hash: manifest.prior_hash.clone(),
        config_hash: manifest.config_hash.clone(),
        training_steps: steps_done,
        param_count: model.param_count(),
        final_loss,
    };
    replace(&dir.join(BIN_FILE), &bin)?;
    replace(&dir.join(MANIFEST_FILE), pretty(&manifest).as_bytes())?;
    replace(&dir.join(CARD_FILE), pretty(&card).as_bytes())
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("checkpoint metadata serializes");
    s.push('\n');
    s
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub model: PfnModel,
    pub manifest: CheckpointManifest,
    pub dir: PathBuf,
}

/// Accepts the checkpoint directory or its `model.json`.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

/// Loads and verifies a checkpoint. Recorded hashes that disagree with the
/// recomputed ones are `HashMismatch` unless `force`; malformed files always fail.
pub fn load(path: &Path, force: bool) -> Result<Loaded> {
    let dir = resolve(path);
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: CheckpointManifest = read_json(&mpath)?;
    if manifest.format != FORMAT || manifest.dtype != DTYPE {
        return Err(CliError::format(&mpath, format!("unsupported format {} / {}", manifest.format, manifest.dtype)));
    }
    let bpath = dir.join(BIN_FILE);
    let bin = fs::read(&bpath).map_err(|e| CliError::read(&bpath, e))?;
    let mut problems = Vec::new();
    if digest_hex(&bin) != manifest.bin_sha256 {
        problems.push("weights hash differs from model.json".to_string());
    }
    if manifest.train_config.hash() != manifest.config_hash {
        problems.push("config hash differs from the recorded training config".to_string());
    }
    if prior_hash(&manifest.train_config.prior) != manifest.prior_hash {
        problems.push("prior hash differs from the recorded prior".to_string());
    }
    if manifest.train_config.model != manifest.model {
        problems.push("model section differs from the recorded training config".to_string());
    }
    if !problems.is_empty() && !force {
        return Err(CliError::HashMismatch(format!("checkpoint {}: {}", dir.display(), problems.join("; "))));
    }

    if bin.len() % 4 != 0 {
        return Err(CliError::format(&bpath, "length is not a multiple of 4"));
    }
    let values: Vec<f32> = bin.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut params = ParamStore::new();
    for e in &manifest.tensors {
        let end = e.offset.checked_add(e.len).filter(|&end| end <= values.len());
        let Some(end) = end else {
            return Err(CliError::format(&mpath, format!("tensor {} lies outside model.bin", e.name)));
        };
        let t = Tensor::new(e.shape.clone(), values[e.offset..end].to_vec())
            .map_err(|err| CliError::format(&mpath, err))?;
        params.add(&e.name, t);
    }
    let grid = BinGrid::new(manifest.grid_edges.clone()).map_err(|err| CliError::format(&mpath, err))?;
    let model =
        PfnModel::from_parts(manifest.model.clone(), grid, params).map_err(|err| CliError::format(&mpath, err))?;
    Ok(Loaded { model, manifest, dir })
}

pub fn load_card(dir: &Path) -> Result<ModelCard> {
    read_json(&dir.join(CARD_FILE))
}
