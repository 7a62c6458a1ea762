//! JSON checkpoints: every layer's shape, activation and row-major values, plus the run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::heads::{KeyHead, QueryHead};
use crate::model::{Decoder, Encoder, Model, NET_NAMES};
use crate::nn::{Activation, Dense, Mlp};

pub const FORMAT: &str = "snce-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub name: String,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub obs_len: usize,
    pub pred_len: usize,
    pub epoch: usize,
    pub nets: Vec<NetRecord>,
    pub config: RunConfig,
}

fn net_record(net: &Mlp) -> NetRecord {
    NetRecord {
        name: net.name().to_string(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerRecord {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
                weights: l.weights().to_vec(),
                bias: l.bias().to_vec(),
            })
            .collect(),
    }
}

fn net_from_record(r: &NetRecord) -> Result<Mlp> {
    let layers = r
        .layers
        .iter()
        .map(|l| Dense::new(l.in_dim, l.out_dim, l.weights.clone(), l.bias.clone(), l.activation))
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(r.name.clone(), layers)
}

impl Checkpoint {
    pub fn new(model: &Model, config: &RunConfig, epoch: usize) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            obs_len: model.obs_len(),
            pred_len: model.pred_len(),
            epoch,
            nets: model.nets().iter().map(|n| net_record(n)).collect(),
            config: config.clone(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} version {}",
                self.format, self.version
            )));
        }
        let names: Vec<&str> = self.nets.iter().map(|n| n.name.as_str()).collect();
        if names != NET_NAMES {
            return Err(Error::Checkpoint(format!(
                "expected networks {NET_NAMES:?}, found {names:?}"
            )));
        }
        let mut nets = self
            .nets
            .iter()
            .map(net_from_record)
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || nets.next().expect("six networks checked above");
        let encoder = Encoder::from_parts(next(), next(), next(), self.obs_len)?;
        let decoder = Decoder::from_mlp(next(), self.pred_len)?;
        let query = QueryHead::from_mlp(next())?;
        let key = KeyHead::from_mlp(next())?;
        if query.mlp().input_dim() != encoder.output_dim() || decoder.net.input_dim() != encoder.output_dim() {
            return Err(Error::Checkpoint("head input widths do not match the encoder".into()));
        }
        Ok(Model {
            encoder,
            decoder,
            query,
            key,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}
