//! Checkpoint serialization: every parameter with its optimizer moments,
//! the step counter, the config digest and the sampler RNG position.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GoldError, Result};
use crate::tensor::params::{ParamGroup, ParamStore};
use crate::trainer::TrainState;

fn group_tag(g: ParamGroup) -> &'static str {
    match g {
        ParamGroup::ObjectModel => "object_model",
        ParamGroup::CodecEncoder => "codec_encoder",
        ParamGroup::CodecDecoder => "codec_decoder",
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub group: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq)]
pub struct RngState {
    pub step: u64,
    pub sample_counter: u64,
    pub order_word_pos_hi: u64,
    pub order_word_pos_lo: u64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub rng: RngState,
    pub params: Vec<ParamBlob>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, state: TrainState, config_hash: &str) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ParamBlob {
                name: p.name.clone(),
                group: group_tag(p.group).to_string(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
                value: p.value.iter().copied().collect(),
                m: p.m.iter().copied().collect(),
                v: p.v.iter().copied().collect(),
                t: p.t,
            })
            .collect();
        Checkpoint {
            config_hash: config_hash.to_string(),
            rng: RngState {
                step: state.step,
                sample_counter: state.sample_counter,
                order_word_pos_hi: (state.order_word_pos >> 64) as u64,
                order_word_pos_lo: state.order_word_pos as u64,
            },
            params,
        }
    }

    /// Restore into a store built from the same config: names, groups and
    /// shapes must match exactly, in registration order.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(GoldError::invalid(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, blob) in ids.iter().zip(&self.params) {
            let p = store.param(*id);
            if p.name != blob.name
                || group_tag(p.group) != blob.group
                || p.value.dim() != (blob.rows, blob.cols)
            {
                return Err(GoldError::invalid(format!(
                    "checkpoint parameter '{}' does not match model parameter '{}'",
                    blob.name, p.name
                )));
            }
        }
        for (id, blob) in ids.iter().zip(&self.params) {
            let dim = (blob.rows, blob.cols);
            let p = store.param_mut(*id);
            p.value = Array2::from_shape_vec(dim, blob.value.clone()).unwrap();
            p.m = Array2::from_shape_vec(dim, blob.m.clone()).unwrap();
            p.v = Array2::from_shape_vec(dim, blob.v.clone()).unwrap();
            p.t = blob.t;
        }
        Ok(())
    }

    pub fn train_state(&self) -> TrainState {
        TrainState {
            step: self.rng.step,
            sample_counter: self.rng.sample_counter,
            order_word_pos: ((self.rng.order_word_pos_hi as u128) << 64)
                | self.rng.order_word_pos_lo as u128,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)
            .map_err(|e| GoldError::invalid(format!("serialize checkpoint: {e}")))?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GoldError::load(path, e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| GoldError::load(path, e.to_string()))
    }
}
