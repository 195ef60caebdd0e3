//! Checkpoint directory: `manifest.json` plus one DAUG file per tensor under
//! `params/` and, when present, Adam moments under `adam/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor, DType};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{AdamState, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "augseg-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub name: String,
    pub m: String,
    pub v: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    pub moments: Vec<MomentEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: DType,
    pub network: NetworkConfig,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<OptimizerEntry>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
    pub few_shot_ids: Vec<String>,
    pub encoder_checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub network: Network<T>,
    pub adam: Option<AdamState<T>>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
    pub few_shot_ids: Vec<String>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_network(network: Network<T>) -> Self {
        Checkpoint { network, adam: None, train: None, seed: 0, epoch: 0, few_shot_ids: Vec::new() }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
        let dir = dir.as_ref();
        mkdir(&dir.join("params"))?;
        let store = &self.network.params;
        let mut params = Vec::new();
        for (name, t) in store.iter() {
            let file = format!("params/{name}.daug");
            save_tensor(dir.join(&file), t)?;
            params.push(ParamEntry { name: name.to_string(), shape: t.shape().to_vec(), file });
        }
        let optimizer = match &self.adam {
            None => None,
            Some(st) => {
                mkdir(&dir.join("adam"))?;
                let mut moments = Vec::new();
                for ((name, m), v) in store.names().iter().zip(&st.m).zip(&st.v) {
                    let e = MomentEntry { name: name.clone(), m: format!("adam/{name}.m.daug"), v: format!("adam/{name}.v.daug") };
                    save_tensor(dir.join(&e.m), m)?;
                    save_tensor(dir.join(&e.v), v)?;
                    moments.push(e);
                }
                Some(OptimizerEntry { step: st.t, moments })
            }
        };
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            dtype: T::DTYPE,
            network: self.network.config.clone(),
            params,
            optimizer,
            train: self.train.clone(),
            seed: self.seed,
            epoch: self.epoch,
            few_shot_ids: self.few_shot_ids.clone(),
            encoder_checksum: self.network.encoder.checksum(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
        let path = dir.as_ref().join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: CheckpointManifest = serde_json::from_str(&text)?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("{}: unknown checkpoint format {:?}", path.display(), m.format)));
        }
        Ok(m)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Self::read_manifest(dir)?;
        if m.dtype != T::DTYPE {
            return Err(Error::Input(format!("checkpoint stores {:?}, expected {:?}", m.dtype, T::DTYPE)));
        }
        let mut network = Network::<T>::new(m.network.clone(), 0)?;
        if network.encoder.checksum() != m.encoder_checksum {
            return Err(Error::Input("encoder checksum differs from the one recorded at save time".into()));
        }
        let names: Vec<&str> = m.params.iter().map(|p| p.name.as_str()).collect();
        if names != network.params.names().iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Input("checkpoint parameter names do not match the network layout".into()));
        }
        let load = |file: &str, shape: &[usize], name: &str| -> Result<Tensor<T>> {
            let t = load_tensor::<T>(dir.join(file))?;
            if t.shape() != shape {
                return Err(Error::Input(format!("{name}: stored shape {:?}, expected {:?}", t.shape(), shape)));
            }
            Ok(t)
        };
        for p in &m.params {
            let slot = network.params.get_mut(&p.name)?;
            let shape = slot.shape().to_vec();
            *slot = load(&p.file, &shape, &p.name)?;
        }
        let adam = match &m.optimizer {
            None => None,
            Some(o) => {
                if o.moments.len() != network.params.len() {
                    return Err(Error::Input("optimizer state does not cover every parameter".into()));
                }
                let mut st = AdamState::new(&network.params);
                st.t = o.step;
                for (i, e) in o.moments.iter().enumerate() {
                    let shape = network.params.tensors()[i].shape().to_vec();
                    st.m[i] = load(&e.m, &shape, &e.name)?;
                    st.v[i] = load(&e.v, &shape, &e.name)?;
                }
                Some(st)
            }
        };
        Ok(Checkpoint { network, adam, train: m.train, seed: m.seed, epoch: m.epoch, few_shot_ids: m.few_shot_ids })
    }
}
